//! GCD quadratic forms and their spectral quantities.
//!
//! For distinct positive integers n_1 < … < n_N and positive weights c_k,
//! the form is Σ_{k,ℓ} c_k c_ℓ · gcd(n_k,n_ℓ)/√(n_k n_ℓ). Its Gram matrix
//! has unit diagonal and, on squarefree nodes over a shared prime basis,
//! entry (k,ℓ) = Π_{p ∈ supp(n_k) Δ supp(n_ℓ)} p^(-1/2) — the gcd cancels
//! against the common part of the square root, so each entry is a short
//! product over the support symmetric difference.
//!
//! The module provides the float evaluator (compensated, deterministic, with
//! a Walsh–Hadamard fast path on small bases), the uniform density Γ with a
//! brute-force oracle, Rayleigh quotients, and a power-iteration top
//! eigenvalue.

use rayon::prelude::*;
use thiserror::Error;

use crate::arith::FactoredInteger;
use crate::numeric::{fixed_chunks, pairwise_sum, Accumulator};

#[derive(Debug, Error)]
pub enum GcdSumError {
    #[error("form is empty")]
    Empty,
    #[error("node and weight counts differ ({nodes} vs {weights})")]
    LengthMismatch { nodes: usize, weights: usize },
    #[error("nodes must share a prime basis")]
    BasisMismatch,
    #[error("nodes must be pairwise distinct")]
    DuplicateNode,
    #[error("weights must be strictly positive")]
    NonPositiveWeight,
    #[error("power iteration did not converge in {iterations} iterations; last estimate {last_estimate}")]
    NonConverged {
        iterations: usize,
        last_estimate: f64,
        last_iterate: Vec<f64>,
    },
    #[error("enumeration of {subsets} subsets exceeds budget {budget}")]
    EnumerationBudget { subsets: u128, budget: u128 },
}

/// A GCD quadratic form: distinct squarefree nodes with positive weights.
pub struct GcdForm {
    nodes: Vec<FactoredInteger>,
    weights: Vec<f64>,
}

impl GcdForm {
    pub fn new(nodes: Vec<FactoredInteger>, weights: Vec<f64>) -> Result<Self, GcdSumError> {
        if nodes.is_empty() {
            return Err(GcdSumError::Empty);
        }
        if nodes.len() != weights.len() {
            return Err(GcdSumError::LengthMismatch {
                nodes: nodes.len(),
                weights: weights.len(),
            });
        }
        if !nodes.iter().all(|n| n.same_basis(&nodes[0])) {
            return Err(GcdSumError::BasisMismatch);
        }
        let mut seen = std::collections::HashSet::with_capacity(nodes.len());
        for n in &nodes {
            if !seen.insert(n.mask().clone()) {
                return Err(GcdSumError::DuplicateNode);
            }
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(GcdSumError::NonPositiveWeight);
        }
        Ok(Self { nodes, weights })
    }

    pub fn uniform(nodes: Vec<FactoredInteger>) -> Result<Self, GcdSumError> {
        let w = vec![1.0; nodes.len()];
        Self::new(nodes, w)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[FactoredInteger] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Gram matrix entry gcd(n_k,n_ℓ)/√(n_k n_ℓ).
    pub fn gram_entry(&self, k: usize, l: usize) -> f64 {
        let basis = self.nodes[0].basis();
        let diff = self.nodes[k].mask().symmetric_difference(self.nodes[l].mask());
        let mut prod = 1.0;
        for i in diff.iter_ones() {
            prod *= 1.0 / (basis.prime(i) as f64).sqrt();
        }
        prod
    }
}

/// Preprocessed node table for the pair kernels.
struct NodeTable {
    words: usize,
    masks: Vec<u64>,
    weights: Vec<f64>,
    rsqrt: Vec<f64>,
}

impl NodeTable {
    fn build(nodes: &[FactoredInteger], weights: &[f64]) -> Self {
        let basis = nodes[0].basis();
        let words = basis.mask_words();
        let mut masks = Vec::with_capacity(nodes.len() * words);
        for n in nodes {
            masks.extend_from_slice(n.mask().words());
        }
        let rsqrt = basis
            .primes()
            .iter()
            .map(|&p| 1.0 / (p as f64).sqrt())
            .collect();
        Self {
            words,
            masks,
            weights: weights.to_vec(),
            rsqrt,
        }
    }

    /// Π p^(-1/2) over the support symmetric difference of nodes k and l.
    #[inline]
    fn entry(&self, k: usize, l: usize) -> f64 {
        let mut prod = 1.0;
        let wk = &self.masks[k * self.words..(k + 1) * self.words];
        let wl = &self.masks[l * self.words..(l + 1) * self.words];
        for wi in 0..self.words {
            let mut x = wk[wi] ^ wl[wi];
            let base = wi * 64;
            while x != 0 {
                let i = x.trailing_zeros() as usize;
                prod *= self.rsqrt[base + i];
                x &= x - 1;
            }
        }
        prod
    }
}

/// Largest basis for which the Walsh–Hadamard fast path may engage.
const WHT_MAX_BASIS: usize = 20;
/// Node count above which the O(n²) pair loop loses to the lattice transform.
const WHT_MIN_NODES: usize = 4096;

/// Evaluates the quadratic form Σ c_k c_ℓ gcd(n_k,n_ℓ)/√(n_k n_ℓ).
///
/// Compensated summation throughout; on bases of at most 20 primes with many
/// nodes the XOR-convolution structure of the Gram matrix is exploited via a
/// Walsh–Hadamard transform over the full subset lattice.
pub fn quadratic_form(form: &GcdForm) -> f64 {
    let basis_len = form.nodes[0].basis().len();
    if basis_len <= WHT_MAX_BASIS && form.len() >= WHT_MIN_NODES {
        return quadratic_form_wht(form);
    }
    quadratic_form_pairs(form)
}

fn quadratic_form_pairs(form: &GcdForm) -> f64 {
    let table = NodeTable::build(&form.nodes, &form.weights);
    let n = form.len();
    let diag: f64 = {
        let mut acc = Accumulator::new();
        for &w in &table.weights {
            acc.add(w * w);
        }
        acc.value()
    };
    let chunks = fixed_chunks(n, 256);
    let partials: Vec<f64> = chunks
        .par_iter()
        .map(|range| {
            let mut acc = Accumulator::new();
            for k in range.clone() {
                let wk = table.weights[k];
                let mut row = Accumulator::new();
                for l in 0..k {
                    row.add(table.weights[l] * table.entry(k, l));
                }
                acc.add(2.0 * wk * row.value());
            }
            acc.value()
        })
        .collect();
    diag + pairwise_sum(&partials)
}

/// XOR-convolution route: with a[mask] the node weight and
/// w(s) = Π_{p∈s} p^(-1/2), the form equals Σ_s w(s)·(a ⋆_xor a)(s),
/// and the convolution diagonalizes under the Walsh–Hadamard transform.
fn quadratic_form_wht(form: &GcdForm) -> f64 {
    let basis = form.nodes[0].basis();
    let ln = basis.len();
    let size = 1usize << ln;
    let mut a = vec![0.0f64; size];
    for (node, &w) in form.nodes.iter().zip(&form.weights) {
        a[node.mask().words()[0] as usize] = w;
    }
    // In-place WHT
    let mut h = 1;
    while h < size {
        for i in (0..size).step_by(h * 2) {
            for j in i..i + h {
                let x = a[j];
                let y = a[j + h];
                a[j] = x + y;
                a[j + h] = x - y;
            }
        }
        h *= 2;
    }
    for v in a.iter_mut() {
        *v = *v * *v;
    }
    let mut h = 1;
    while h < size {
        for i in (0..size).step_by(h * 2) {
            for j in i..i + h {
                let x = a[j];
                let y = a[j + h];
                a[j] = x + y;
                a[j + h] = x - y;
            }
        }
        h *= 2;
    }
    // rsqrt over each subset via lowest-set-bit recurrence
    let mut rs = vec![1.0f64; size];
    let inv: Vec<f64> = basis.primes().iter().map(|&p| 1.0 / (p as f64).sqrt()).collect();
    for s in 1..size {
        let low = s & s.wrapping_neg();
        rs[s] = rs[s ^ low] * inv[low.trailing_zeros() as usize];
    }
    let scale = 1.0 / size as f64;
    let mut acc = Accumulator::new();
    for s in 0..size {
        acc.add(rs[s] * a[s]);
    }
    acc.value() * scale
}

/// Uniform-weight form value divided by the node count: the density whose
/// supremum over N-element sets is Γ(N).
pub fn uniform_gamma(nodes: &[FactoredInteger]) -> Result<f64, GcdSumError> {
    let form = GcdForm::uniform(nodes.to_vec())?;
    Ok(quadratic_form(&form) / nodes.len() as f64)
}

/// Rayleigh quotient of the form: value / Σ c_j².
pub fn rayleigh_quotient(form: &GcdForm) -> f64 {
    let mut denom = Accumulator::new();
    for &w in form.weights() {
        denom.add(w * w);
    }
    quadratic_form(form) / denom.value()
}

/// Uniform gamma of an arbitrary small integer set (not necessarily
/// squarefree). Terms gcd/√(mn) are reduced to 1/(q√s) with s squarefree by
/// trial division, so the only rounding is one sqrt per pair.
pub fn uniform_gamma_u64(values: &[u64]) -> Result<f64, GcdSumError> {
    if values.is_empty() {
        return Err(GcdSumError::Empty);
    }
    let n = values.len();
    let mut acc = Accumulator::new();
    acc.add(n as f64);
    for k in 0..n {
        for l in 0..k {
            acc.add(2.0 * gram_entry_u64(values[k], values[l]));
        }
    }
    Ok(acc.value() / n as f64)
}

/// gcd(a,b)/√(ab) = 1/(q√s) with ab/gcd² = q²·s, s squarefree.
fn gram_entry_u64(a: u64, b: u64) -> f64 {
    let g = gcd_u64(a, b);
    let s = (a / g) as u128 * (b / g) as u128;
    let (q, s) = split_square(s);
    1.0 / (q as f64 * (s as f64).sqrt())
}

fn gcd_u64(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Factors n = q²·s with s squarefree, by trial division.
fn split_square(n: u128) -> (u128, u128) {
    let mut q = 1u128;
    let mut m = n;
    let mut d = 2u128;
    while d * d <= m {
        while m % (d * d) == 0 {
            q *= d;
            m /= d * d;
        }
        d += 1;
    }
    (q, m)
}

/// Result of an exhaustive Γ search.
#[derive(Clone, Debug)]
pub struct BruteForceGamma {
    pub value: f64,
    pub witness: Vec<u64>,
    pub subsets: u64,
}

/// Default cap on the number of subsets the brute force will enumerate;
/// admits (N, bound) up to (4, 50).
pub const BRUTE_FORCE_BUDGET: u128 = 300_000;

/// Exact supremum of the uniform gamma over all `n`-element subsets of
/// [1, bound], with one maximizing witness.
///
/// For n = 2 the optimum is found by exact integer comparison: the pair
/// value is 1 + 1/√(ab) for coprime a·g, b·g, so maximizing means
/// minimizing a·b over exact integers.
pub fn brute_force_gamma(n: usize, bound: u64) -> Result<BruteForceGamma, GcdSumError> {
    brute_force_gamma_with_budget(n, bound, BRUTE_FORCE_BUDGET)
}

pub fn brute_force_gamma_with_budget(
    n: usize,
    bound: u64,
    budget: u128,
) -> Result<BruteForceGamma, GcdSumError> {
    if n == 0 || bound < n as u64 {
        return Err(GcdSumError::Empty);
    }
    let total = binomial(bound as u128, n as u128);
    if total > budget {
        return Err(GcdSumError::EnumerationBudget {
            subsets: total,
            budget,
        });
    }
    if n == 1 {
        return Ok(BruteForceGamma {
            value: 1.0,
            witness: vec![1],
            subsets: bound,
        });
    }
    if n == 2 {
        // minimize (a/g)*(b/g) exactly
        let mut best: Option<(u64, (u64, u64))> = None;
        let mut count = 0u64;
        for a in 1..=bound {
            for b in (a + 1)..=bound {
                count += 1;
                let g = gcd_u64(a, b);
                let ab = (a / g) * (b / g);
                if best.map_or(true, |(prod, _)| ab < prod) {
                    best = Some((ab, (a, b)));
                }
            }
        }
        let (prod, (a, b)) = best.unwrap();
        return Ok(BruteForceGamma {
            value: 1.0 + 1.0 / (prod as f64).sqrt(),
            witness: vec![a, b],
            subsets: count,
        });
    }

    let mut subset: Vec<u64> = (1..=n as u64).collect();
    let mut best_value = f64::NEG_INFINITY;
    let mut best_witness = subset.clone();
    let mut count = 0u64;
    loop {
        count += 1;
        let v = uniform_gamma_u64(&subset)?;
        if v > best_value {
            best_value = v;
            best_witness = subset.clone();
        }
        // next lexicographic combination
        let mut i = n;
        loop {
            if i == 0 {
                return Ok(BruteForceGamma {
                    value: best_value,
                    witness: best_witness,
                    subsets: count,
                });
            }
            i -= 1;
            if subset[i] < bound - (n - 1 - i) as u64 {
                subset[i] += 1;
                for j in i + 1..n {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut out = 1u128;
    for i in 0..k {
        out = out * (n - i) / (i + 1);
    }
    out
}

/// Default relative tolerance for the power iteration.
pub const EIGEN_TOL: f64 = 1e-10;
const EIGEN_MAX_ITER: usize = 100_000;
/// Above this node count the Gram matrix is applied matrix-free.
const DENSE_LIMIT: usize = 2048;

/// Largest eigenvalue of the Gram matrix of `nodes`, by power iteration
/// started from the normalized all-ones vector (the matrix is entrywise
/// positive, so the top eigenvector is positive and not orthogonal to it).
pub fn top_eigenvalue(nodes: &[FactoredInteger], tol: f64) -> Result<f64, GcdSumError> {
    if nodes.is_empty() {
        return Err(GcdSumError::Empty);
    }
    let n = nodes.len();
    let uniform = vec![1.0; n];
    let table = NodeTable::build(nodes, &uniform);
    let dense: Option<Vec<f64>> = if n <= DENSE_LIMIT {
        let mut m = vec![0.0; n * n];
        for k in 0..n {
            m[k * n + k] = 1.0;
            for l in 0..k {
                let e = table.entry(k, l);
                m[k * n + l] = e;
                m[l * n + k] = e;
            }
        }
        Some(m)
    } else {
        None
    };

    let matvec = |x: &[f64], y: &mut [f64]| match &dense {
        Some(m) => {
            let chunks = fixed_chunks(n, 64);
            let rows: Vec<(usize, Vec<f64>)> = chunks
                .par_iter()
                .map(|r| {
                    let vals = r
                        .clone()
                        .map(|k| {
                            let mut acc = Accumulator::new();
                            for l in 0..n {
                                acc.add(m[k * n + l] * x[l]);
                            }
                            acc.value()
                        })
                        .collect();
                    (r.start, vals)
                })
                .collect();
            for (start, vals) in rows {
                y[start..start + vals.len()].copy_from_slice(&vals);
            }
        }
        None => {
            let chunks = fixed_chunks(n, 256);
            let rows: Vec<(usize, Vec<f64>)> = chunks
                .par_iter()
                .map(|r| {
                    let vals = r
                        .clone()
                        .map(|k| {
                            let mut acc = Accumulator::new();
                            acc.add(x[k]);
                            for l in 0..n {
                                if l != k {
                                    acc.add(table.entry(k, l) * x[l]);
                                }
                            }
                            acc.value()
                        })
                        .collect();
                    (r.start, vals)
                })
                .collect();
            for (start, vals) in rows {
                y[start..start + vals.len()].copy_from_slice(&vals);
            }
        }
    };

    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut y = vec![0.0; n];
    let mut prev: Option<Vec<f64>> = None;
    let mut lambda_prev = f64::NAN;
    let mut stable = 0u32;
    for iter in 0..EIGEN_MAX_ITER {
        matvec(&v, &mut y);
        let lambda: f64 = v.iter().zip(&y).map(|(a, b)| a * b).sum();
        let norm = y.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        for a in y.iter_mut() {
            *a /= norm;
        }
        // Oscillation between two iterates (possible with a dominant
        // negative eigenvalue; the Gram matrix should not have one, but the
        // guard costs little): average successive iterates.
        if let Some(p) = &prev {
            let with_prev: f64 = p.iter().zip(&y).map(|(a, b)| a * b).sum();
            let with_cur: f64 = v.iter().zip(&y).map(|(a, b)| a * b).sum();
            if with_prev.abs() > 1.0 - 1e-12 && with_cur.abs() < 1.0 - 1e-9 {
                let mut avg: Vec<f64> = v.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
                let an = avg.iter().map(|a| a * a).sum::<f64>().sqrt();
                for a in avg.iter_mut() {
                    *a /= an;
                }
                y.copy_from_slice(&avg);
            }
        }
        if !lambda_prev.is_nan() && (lambda - lambda_prev).abs() <= tol * lambda.abs().max(1.0) {
            stable += 1;
            if stable >= 2 {
                return Ok(lambda);
            }
        } else {
            stable = 0;
        }
        lambda_prev = lambda;
        prev = Some(std::mem::replace(&mut v, y.clone()));
        let _ = iter;
    }
    Err(GcdSumError::NonConverged {
        iterations: EIGEN_MAX_ITER,
        last_estimate: lambda_prev,
        last_iterate: v,
    })
}

/// Exact-rational oracle for the quadratic form.
pub mod exact {
    use std::collections::BTreeMap;

    use num_bigint::BigUint;
    use num_rational::BigRational;
    use num_traits::{One, ToPrimitive, Zero};

    use crate::numeric::Accumulator;

    /// Evaluates Σ c_k c_ℓ gcd/√(n_k n_ℓ) for squarefree values with exact
    /// rational bookkeeping.
    ///
    /// Writing n_k = g·a, n_ℓ = g·b with gcd(a,b) = 1, each term equals
    /// c_k c_ℓ / √(ab) where ab is squarefree. Coefficients are summed as
    /// exact rationals keyed by the kernel ab; the only floating-point steps
    /// are one conversion, one square root, and one multiply per distinct
    /// kernel, followed by a compensated sum in deterministic key order.
    pub fn quadratic_form_squarefree(values: &[BigUint], weights: &[BigRational]) -> f64 {
        assert_eq!(values.len(), weights.len());
        let mut groups: BTreeMap<BigUint, BigRational> = BTreeMap::new();
        let mut diag = BigRational::zero();
        for (k, (vk, wk)) in values.iter().zip(weights).enumerate() {
            diag += wk * wk;
            for (vl, wl) in values.iter().zip(weights).take(k) {
                let g = num_integer::Integer::gcd(vk, vl);
                let kernel = (vk / &g) * (vl / &g);
                let coeff = BigRational::from_integer(2.into()) * wk * wl;
                groups
                    .entry(kernel)
                    .and_modify(|c| *c += &coeff)
                    .or_insert(coeff);
            }
        }
        let mut acc = Accumulator::new();
        acc.add(diag.to_f64().expect("rational fits f64"));
        for (kernel, coeff) in &groups {
            if kernel.is_one() {
                acc.add(coeff.to_f64().expect("rational fits f64"));
            } else {
                let s = kernel.to_f64().expect("kernel fits f64");
                acc.add(coeff.to_f64().expect("rational fits f64") / s.sqrt());
            }
        }
        acc.value()
    }
}
