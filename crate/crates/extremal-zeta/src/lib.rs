//! GCD quadratic forms, near-extremal multiplicative weight constructions,
//! and resonance-guided searches for large values of |ζ(1/2+it)|.
//!
//! The crate is organized around a pipeline:
//!
//! 1. [`arith`] — exact arithmetic over a fixed prime basis: sieving,
//!    squarefree integers as bit masks, divisors, GCDs.
//! 2. [`gcdsum`] — GCD quadratic forms gcd(n_k,n_ℓ)/√(n_k n_ℓ), the uniform
//!    density Γ, Rayleigh quotients, top eigenvalues, brute-force oracles.
//! 3. [`construction`] — a prime window P, a multiplicative weight f
//!    supported on it, and a divisor-closed set 𝓜 of squarefree products
//!    whose weighted GCD form is near-extremal; the divisor-gain quantity
//!    with its Euler-product and enumeration routes.
//! 4. [`zeta`] — ζ(1/2+it) via a truncated Dirichlet sum with correction
//!    term, and an independent Euler–Maclaurin reference evaluator.
//! 5. [`resonance`] — the resonator Dirichlet polynomial R(t) built from 𝓜,
//!    smoothed moments M₁/M₂ under a Gaussian kernel, low-band leakage
//!    diagnostics, and resonance-guided scans for large |ζ(1/2+it)|.
//! 6. [`experiment`] — reproducible experiment configs (content hashing),
//!    records, cache layout, and scan logs.
//!
//! Everything is deterministic: fixed summation orders, seeded RNG, and
//! content-addressed caching. See `examples/` for one runnable program per
//! capability and [`acceptance`] for the verification suite.

pub mod acceptance;
pub mod arith;
pub mod construction;
pub mod experiment;
pub mod gcdsum;
pub mod numeric;
pub mod quad;
pub mod resonance;
pub mod zeta;

/// Version tag recorded next to every scalar an experiment emits.
pub const MODULE_VERSION: &str = env!("CARGO_PKG_VERSION");
