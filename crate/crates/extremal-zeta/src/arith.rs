//! Exact arithmetic over a fixed prime basis.
//!
//! A [`PrimeTable`] holds the primes in a half-open interval (lo, hi]. A
//! [`FactoredInteger`] is a squarefree integer represented canonically as a
//! subset of the table's primes: exponents are 0/1, the exact value is an
//! arbitrary-size integer computed lazily, and a cached log-value supports
//! cheap comparisons with an exact fallback inside a guard band.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use num_bigint::BigUint;
use num_traits::One;
use thiserror::Error;

use crate::numeric::Accumulator;

/// Largest sieve upper bound accepted by default. The prime windows used by
/// the weight construction stay below 10⁴ even at N = 10¹⁰; the larger
/// default leaves room for experiments against longer Dirichlet sums.
pub const DEFAULT_SIEVE_BUDGET: u64 = 1_000_000_000;

const SEGMENT_SIZE: u64 = 1 << 16;

/// Log-difference below which value comparisons fall back to exact
/// big-integer arithmetic.
pub const LOG_GUARD_BAND: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ArithError {
    #[error("sieve bound {hi} exceeds budget {budget}")]
    SieveBudget { hi: u64, budget: u64 },
    #[error("invalid sieve interval ({lo}, {hi}]")]
    BadInterval { lo: u64, hi: u64 },
    #[error("operands come from different prime bases")]
    BasisMismatch,
}

/// The primes in a half-open interval (lo, hi], strictly increasing, with an
/// index map and precomputed logarithms.
#[derive(Debug)]
pub struct PrimeTable {
    lo: u64,
    hi: u64,
    primes: Vec<u64>,
    logs: Vec<f64>,
    index: HashMap<u64, usize>,
}

impl PrimeTable {
    pub fn lo(&self) -> u64 {
        self.lo
    }

    pub fn hi(&self) -> u64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.primes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primes.is_empty()
    }

    pub fn primes(&self) -> &[u64] {
        &self.primes
    }

    pub fn prime(&self, idx: usize) -> u64 {
        self.primes[idx]
    }

    /// Natural log of the prime at `idx`.
    pub fn log(&self, idx: usize) -> f64 {
        self.logs[idx]
    }

    pub fn logs(&self) -> &[f64] {
        &self.logs
    }

    /// Position of `p` in the table, if present.
    pub fn position(&self, p: u64) -> Option<usize> {
        self.index.get(&p).copied()
    }

    pub fn contains(&self, p: u64) -> bool {
        self.index.contains_key(&p)
    }

    /// Number of u64 words needed for masks over this basis.
    pub fn mask_words(&self) -> usize {
        self.primes.len().div_ceil(64).max(1)
    }

    /// Two tables are interchangeable as bases iff they describe the same
    /// interval (the prime content is then identical by construction).
    pub fn same_basis(&self, other: &PrimeTable) -> bool {
        self.lo == other.lo && self.hi == other.hi
    }
}

/// Sieves the primes in (lo, hi] with the default budget.
pub fn sieve(lo: u64, hi: u64) -> Result<Arc<PrimeTable>, ArithError> {
    sieve_with_budget(lo, hi, DEFAULT_SIEVE_BUDGET)
}

/// Segmented sieve of Eratosthenes over (lo, hi]. Memory use is bounded by
/// the segment size plus the base primes up to √hi.
pub fn sieve_with_budget(lo: u64, hi: u64, budget: u64) -> Result<Arc<PrimeTable>, ArithError> {
    if lo >= hi {
        return Err(ArithError::BadInterval { lo, hi });
    }
    if hi > budget {
        return Err(ArithError::SieveBudget { hi, budget });
    }

    // Base primes up to sqrt(hi) by a plain sieve.
    let root = (hi as f64).sqrt() as u64 + 1;
    let mut base_composite = vec![false; (root + 1) as usize];
    let mut base_primes = Vec::new();
    for p in 2..=root {
        if !base_composite[p as usize] {
            base_primes.push(p);
            let mut q = p * p;
            while q <= root {
                base_composite[q as usize] = true;
                q += p;
            }
        }
    }

    let mut primes = Vec::new();
    let mut segment = vec![false; SEGMENT_SIZE as usize];
    let mut start = lo + 1;
    while start <= hi {
        let end = (start + SEGMENT_SIZE - 1).min(hi);
        let len = (end - start + 1) as usize;
        segment[..len].fill(false);
        for &p in &base_primes {
            if p * p > end {
                break;
            }
            let mut q = start.div_ceil(p) * p;
            if q < p * p {
                q = p * p;
            }
            while q <= end {
                segment[(q - start) as usize] = true;
                q += p;
            }
        }
        for i in 0..len {
            let n = start + i as u64;
            if n >= 2 && !segment[i] {
                primes.push(n);
            }
        }
        start = end + 1;
    }

    let logs = primes.iter().map(|&p| (p as f64).ln()).collect();
    let index = primes
        .iter()
        .enumerate()
        .map(|(i, &p)| (p, i))
        .collect();
    Ok(Arc::new(PrimeTable {
        lo,
        hi,
        primes,
        logs,
        index,
    }))
}

/// Subset of prime-table positions, packed into u64 words.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PrimeMask {
    words: Box<[u64]>,
}

impl PrimeMask {
    pub fn empty(words: usize) -> Self {
        Self {
            words: vec![0; words.max(1)].into_boxed_slice(),
        }
    }

    pub fn from_indices(words: usize, indices: &[usize]) -> Self {
        let mut m = Self::empty(words);
        for &i in indices {
            m.set(i);
        }
        m
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1u64 << (i % 64);
    }

    #[inline]
    pub fn clear(&mut self, i: usize) {
        self.words[i / 64] &= !(1u64 << (i % 64));
    }

    #[inline]
    pub fn test(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn is_empty_mask(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn intersection(&self, other: &Self) -> Self {
        Self {
            words: self
                .words
                .iter()
                .zip(other.words.iter())
                .map(|(a, b)| a & b)
                .collect(),
        }
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            words: self
                .words
                .iter()
                .zip(other.words.iter())
                .map(|(a, b)| a | b)
                .collect(),
        }
    }

    pub fn symmetric_difference(&self, other: &Self) -> Self {
        Self {
            words: self
                .words
                .iter()
                .zip(other.words.iter())
                .map(|(a, b)| a ^ b)
                .collect(),
        }
    }

    /// True when every bit of `self` is set in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.words
            .iter()
            .zip(other.words.iter())
            .all(|(a, b)| a & !b == 0)
    }

    /// Iterates set-bit positions in ascending order.
    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    None
                } else {
                    let b = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some(wi * 64 + b)
                }
            })
        })
    }

    /// Index of the highest set bit, if any.
    pub fn highest_bit(&self) -> Option<usize> {
        for (wi, &w) in self.words.iter().enumerate().rev() {
            if w != 0 {
                return Some(wi * 64 + 63 - w.leading_zeros() as usize);
            }
        }
        None
    }

    pub fn to_hex(&self) -> String {
        // Little-endian word order, fixed width, so documents are canonical.
        self.words
            .iter()
            .map(|w| format!("{w:016x}"))
            .collect::<Vec<_>>()
            .join("")
    }

    pub fn from_hex(s: &str, words: usize) -> Option<Self> {
        if s.len() != words * 16 {
            return None;
        }
        let mut out = Vec::with_capacity(words);
        for i in 0..words {
            out.push(u64::from_str_radix(&s[i * 16..(i + 1) * 16], 16).ok()?);
        }
        Some(Self {
            words: out.into_boxed_slice(),
        })
    }
}

impl fmt::Debug for PrimeMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PrimeMask[{}]", self.to_hex())
    }
}

/// A squarefree integer supported on a [`PrimeTable`], stored as the subset
/// of primes dividing it. The exact value is computed on first use; the
/// log-value is kept eagerly for cheap comparisons.
#[derive(Clone)]
pub struct FactoredInteger {
    basis: Arc<PrimeTable>,
    mask: PrimeMask,
    logv: f64,
    value: OnceLock<BigUint>,
}

impl FactoredInteger {
    /// The integer 1 (empty product).
    pub fn one(basis: Arc<PrimeTable>) -> Self {
        let words = basis.mask_words();
        Self {
            basis,
            mask: PrimeMask::empty(words),
            logv: 0.0,
            value: OnceLock::new(),
        }
    }

    pub fn from_mask(basis: Arc<PrimeTable>, mask: PrimeMask) -> Self {
        let mut acc = Accumulator::new();
        for i in mask.iter_ones() {
            acc.add(basis.log(i));
        }
        Self {
            basis,
            mask,
            logv: acc.value(),
            value: OnceLock::new(),
        }
    }

    pub fn from_indices(basis: Arc<PrimeTable>, indices: &[usize]) -> Self {
        let mask = PrimeMask::from_indices(basis.mask_words(), indices);
        Self::from_mask(basis, mask)
    }

    pub fn basis(&self) -> &Arc<PrimeTable> {
        &self.basis
    }

    pub fn mask(&self) -> &PrimeMask {
        &self.mask
    }

    /// Σ log p over the support.
    pub fn log_value(&self) -> f64 {
        self.logv
    }

    /// Number of prime factors ω(n).
    pub fn omega(&self) -> u32 {
        self.mask.count_ones()
    }

    /// Exact value Π p, computed once and cached.
    pub fn value(&self) -> &BigUint {
        self.value.get_or_init(|| {
            let mut v = BigUint::one();
            for i in self.mask.iter_ones() {
                v *= self.basis.prime(i);
            }
            v
        })
    }

    /// Value as u64 when it fits.
    pub fn value_u64(&self) -> Option<u64> {
        use num_traits::ToPrimitive;
        self.value().to_u64()
    }

    pub fn is_one(&self) -> bool {
        self.mask.is_empty_mask()
    }

    /// Compares by numeric value: log-domain when the gap is outside the
    /// guard band, exact big-integer comparison otherwise.
    pub fn cmp_value(&self, other: &Self) -> Ordering {
        let d = self.logv - other.logv;
        if d > LOG_GUARD_BAND {
            Ordering::Greater
        } else if d < -LOG_GUARD_BAND {
            Ordering::Less
        } else {
            self.value().cmp(other.value())
        }
    }

    pub fn same_basis(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.basis, &other.basis) || self.basis.same_basis(&other.basis)
    }

    /// All 2^ω(n) squarefree divisors, including 1 and n itself.
    pub fn divisors(&self) -> Divisors<'_> {
        Divisors {
            parent: self,
            indices: self.mask.iter_ones().collect(),
            counter: 0,
            done: false,
        }
    }
}

impl PartialEq for FactoredInteger {
    fn eq(&self, other: &Self) -> bool {
        self.same_basis(other) && self.mask == other.mask
    }
}

impl Eq for FactoredInteger {}

impl std::hash::Hash for FactoredInteger {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.mask.hash(state);
    }
}

impl fmt::Debug for FactoredInteger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ps: Vec<u64> = self.mask.iter_ones().map(|i| self.basis.prime(i)).collect();
        write!(f, "FactoredInteger({ps:?})")
    }
}

/// Iterator over the squarefree divisors of a [`FactoredInteger`].
pub struct Divisors<'a> {
    parent: &'a FactoredInteger,
    indices: Vec<usize>,
    counter: u64,
    done: bool,
}

impl Iterator for Divisors<'_> {
    type Item = FactoredInteger;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let subset: Vec<usize> = self
            .indices
            .iter()
            .enumerate()
            .filter(|(bit, _)| self.counter >> bit & 1 == 1)
            .map(|(_, &idx)| idx)
            .collect();
        let d = FactoredInteger::from_indices(self.parent.basis.clone(), &subset);
        if self.counter == (1u64 << self.indices.len()) - 1 {
            self.done = true;
        } else {
            self.counter += 1;
        }
        Some(d)
    }
}

/// Exact gcd of two squarefree integers over the same basis:
/// Π p over the intersection of their supports.
pub fn gcd_exact(a: &FactoredInteger, b: &FactoredInteger) -> Result<BigUint, ArithError> {
    if !a.same_basis(b) {
        return Err(ArithError::BasisMismatch);
    }
    let inter = a.mask.intersection(&b.mask);
    let mut v = BigUint::one();
    for i in inter.iter_ones() {
        v *= a.basis.prime(i);
    }
    Ok(v)
}

/// gcd as a [`FactoredInteger`] (support intersection).
pub fn gcd_factored(a: &FactoredInteger, b: &FactoredInteger) -> Result<FactoredInteger, ArithError> {
    if !a.same_basis(b) {
        return Err(ArithError::BasisMismatch);
    }
    Ok(FactoredInteger::from_mask(
        a.basis.clone(),
        a.mask.intersection(&b.mask),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::ToPrimitive;

    fn trial_division_primes(lo: u64, hi: u64) -> Vec<u64> {
        (lo + 1..=hi)
            .filter(|&n| n >= 2 && (2..n).take_while(|d| d * d <= n).all(|d| n % d != 0))
            .collect()
    }

    #[test]
    fn sieve_smallest_prime() {
        let t = sieve(1, 2).unwrap();
        assert_eq!(t.primes(), &[2]);
    }

    #[test]
    fn sieve_matches_trial_division() {
        for (lo, hi) in [(10, 20), (24, 28), (0, 100), (95, 183), (9990, 10100)] {
            let t = sieve(lo, hi).unwrap();
            assert_eq!(t.primes(), trial_division_primes(lo, hi).as_slice(), "({lo},{hi}]");
        }
        let t = sieve(10, 20).unwrap();
        assert_eq!(t.primes(), &[11, 13, 17, 19]);
        assert!(sieve(24, 28).unwrap().is_empty());
    }

    #[test]
    fn sieve_budget_is_enforced() {
        let err = sieve_with_budget(0, 100, 50).unwrap_err();
        assert!(matches!(err, ArithError::SieveBudget { .. }));
        let err = sieve(7, 7).unwrap_err();
        assert!(matches!(err, ArithError::BadInterval { .. }));
    }

    #[test]
    fn sieve_segments_agree_with_single_run() {
        // Crosses several segment boundaries.
        let whole = sieve(0, 300_000).unwrap();
        let part = sieve(131_000, 140_000).unwrap();
        let expect: Vec<u64> = whole
            .primes()
            .iter()
            .copied()
            .filter(|&p| p > 131_000 && p <= 140_000)
            .collect();
        assert_eq!(part.primes(), expect.as_slice());
    }

    #[test]
    fn factored_value_matches_mask() {
        let t = sieve(1, 200).unwrap();
        let n = FactoredInteger::from_indices(
            t.clone(),
            &[t.position(101).unwrap(), t.position(103).unwrap()],
        );
        assert_eq!(n.value().to_u64().unwrap(), 101 * 103);
        assert!((n.log_value() - ((101u64 * 103) as f64).ln()).abs() < 1e-12 * (1.0 + n.log_value()));
        assert_eq!(n.omega(), 2);
    }

    #[test]
    fn gcd_is_support_intersection() {
        let t = sieve(1, 200).unwrap();
        let pos = |p: u64| t.position(p).unwrap();
        let a = FactoredInteger::from_indices(t.clone(), &[pos(101), pos(103)]);
        let b = FactoredInteger::from_indices(t.clone(), &[pos(103), pos(107)]);
        assert_eq!(gcd_exact(&a, &b).unwrap().to_u64().unwrap(), 103);
        let one = FactoredInteger::one(t.clone());
        assert_eq!(gcd_exact(&a, &one).unwrap().to_u64().unwrap(), 1);
        // p*q vs q*r -> q
        let p = FactoredInteger::from_indices(t.clone(), &[pos(2), pos(3)]);
        let q = FactoredInteger::from_indices(t.clone(), &[pos(3), pos(5)]);
        assert_eq!(gcd_exact(&p, &q).unwrap().to_u64().unwrap(), 3);
    }

    #[test]
    fn gcd_rejects_mismatched_bases() {
        let t1 = sieve(1, 100).unwrap();
        let t2 = sieve(1, 200).unwrap();
        let a = FactoredInteger::one(t1);
        let b = FactoredInteger::one(t2);
        assert!(matches!(gcd_exact(&a, &b), Err(ArithError::BasisMismatch)));
    }

    #[test]
    fn divisors_enumerate_exactly_once() {
        let t = sieve(1, 200).unwrap();
        let pos = |p: u64| t.position(p).unwrap();
        let n = FactoredInteger::from_indices(t.clone(), &[pos(101), pos(103)]);
        let mut vals: Vec<u64> = n.divisors().map(|d| d.value_u64().unwrap()).collect();
        vals.sort_unstable();
        assert_eq!(vals, vec![1, 101, 103, 101 * 103]);

        let one = FactoredInteger::one(t.clone());
        assert_eq!(one.divisors().count(), 1);

        let m = FactoredInteger::from_indices(t.clone(), &[pos(2), pos(7), pos(11)]);
        assert_eq!(m.divisors().count(), 8);
    }

    #[test]
    fn divisors_closed_under_gcd() {
        let t = sieve(1, 100).unwrap();
        let pos = |p: u64| t.position(p).unwrap();
        let n = FactoredInteger::from_indices(t.clone(), &[pos(2), pos(3), pos(5), pos(7)]);
        let divs: Vec<FactoredInteger> = n.divisors().collect();
        assert_eq!(divs.len(), 16);
        for a in &divs {
            for b in &divs {
                let g = gcd_factored(a, b).unwrap();
                assert!(divs.contains(&g));
            }
        }
    }

    #[test]
    fn log_ordering_agrees_with_exact() {
        let t = sieve(1, 100).unwrap();
        let pos = |p: u64| t.position(p).unwrap();
        let a = FactoredInteger::from_indices(t.clone(), &[pos(2), pos(3), pos(5)]); // 30
        let b = FactoredInteger::from_indices(t.clone(), &[pos(31)]); // 31
        assert_eq!(a.cmp_value(&b), Ordering::Less);
        // 210 = 2*3*5*7 vs 209 = 11*19: log gap ~0.5%, decided in log domain
        let c = FactoredInteger::from_indices(t.clone(), &[pos(2), pos(3), pos(5), pos(7)]);
        let d = FactoredInteger::from_indices(t.clone(), &[pos(11), pos(19)]);
        assert_eq!(c.cmp_value(&d), Ordering::Greater);
        // identical support falls inside the guard band, resolved exactly
        let e = FactoredInteger::from_indices(t.clone(), &[pos(2), pos(3), pos(5), pos(7)]);
        assert_eq!(c.cmp_value(&e), Ordering::Equal);
    }
}
