//! Compensated summation, deterministic reductions, and scalar special
//! functions shared across modules.
//!
//! All reductions here have a fixed evaluation order independent of thread
//! count, so results are reproducible to the last bit.

use num_complex::Complex64;

/// Neumaier (improved Kahan) compensated accumulator.
///
/// Exact to ~2 ulp for sums of positive terms and robust when terms exceed
/// the running sum in magnitude.
#[derive(Clone, Copy, Debug, Default)]
pub struct Accumulator {
    sum: f64,
    comp: f64,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated complex accumulator (independent Neumaier per component).
#[derive(Clone, Copy, Debug, Default)]
pub struct ComplexAccumulator {
    re: Accumulator,
    im: Accumulator,
}

impl ComplexAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, z: Complex64) {
        self.re.add(z.re);
        self.im.add(z.im);
    }

    #[inline]
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re.value(), self.im.value())
    }
}

/// Sums a slice by pairwise tree reduction. Deterministic and O(log n) error
/// growth, used to merge per-block partial sums.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Pairwise tree reduction for complex partials.
pub fn pairwise_sum_complex(xs: &[Complex64]) -> Complex64 {
    match xs.len() {
        0 => Complex64::new(0.0, 0.0),
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum_complex(&xs[..mid]) + pairwise_sum_complex(&xs[mid..])
        }
    }
}

/// Compensated sum of a slice.
pub fn compensated_sum(xs: &[f64]) -> f64 {
    let mut acc = Accumulator::new();
    for &x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Error function, accurate to ~1e-15 over the real line.
///
/// Power series for |x| ≤ 2.5, Lentz continued fraction for erfc beyond.
pub fn erf(x: f64) -> f64 {
    if x < 0.0 {
        return -erf(-x);
    }
    if x == 0.0 {
        return 0.0;
    }
    if x > 6.5 {
        return 1.0;
    }
    if x <= 2.5 {
        // erf(x) = 2/sqrt(pi) * sum (-1)^n x^(2n+1) / (n! (2n+1))
        let x2 = x * x;
        let mut term = x;
        let mut acc = Accumulator::new();
        acc.add(x);
        let mut n = 0u32;
        loop {
            n += 1;
            term *= -x2 / n as f64;
            let contrib = term / (2 * n + 1) as f64;
            acc.add(contrib);
            if contrib.abs() < 1e-18 * acc.value().abs() {
                break;
            }
        }
        2.0 / std::f64::consts::PI.sqrt() * acc.value()
    } else {
        1.0 - erfc_cf(x)
    }
}

/// Complementary error function via the Lentz continued fraction
/// erfc(x) = e^(-x²)/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))),
/// valid for x ≥ 2.5 where the expansion converges quickly.
fn erfc_cf(x: f64) -> f64 {
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..=300u32 {
        let a = k as f64 / 2.0;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    (-x * x).exp() / std::f64::consts::PI.sqrt() / f
}

/// Splits `0..len` into fixed-size chunks for data-parallel work with a
/// deterministic merge order. Chunk size does not depend on thread count.
pub fn fixed_chunks(len: usize, target_chunks: usize) -> Vec<std::ops::Range<usize>> {
    if len == 0 {
        return Vec::new();
    }
    let chunk = len.div_ceil(target_chunks.max(1)).max(1);
    (0..len)
        .step_by(chunk)
        .map(|start| start..(start + chunk).min(len))
        .collect()
}
