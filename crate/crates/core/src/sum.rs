//! Correctly rounded floating-point summation.
//!
//! Moment identities are checked at 1e-10..1e-12 relative tolerance, and the
//! duplicate-merge step of canonicalization must produce the same bits no
//! matter in which order equal-location atoms were emitted. Both needs are met
//! by Shewchuk's exact partials summation with a final round-half-even fixup.

/// Running exact sum of `f64` terms; `value()` is the correctly rounded total.
#[derive(Debug, Clone, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let n = self.partials.len();
        self.partials.push(0.0);
        let m = grow(&mut self.partials, n, x);
        self.partials.truncate(m);
    }

    pub fn value(&self) -> f64 {
        round_partials(&self.partials)
    }
}

/// Adds x to the non-overlapping partials p[..n] in increasing magnitude;
/// returns the new count, at most n + 1.
fn grow(p: &mut [f64], n: usize, mut x: f64) -> usize {
    let mut i = 0;
    for j in 0..n {
        let mut y = p[j];
        if x.abs() < y.abs() {
            std::mem::swap(&mut x, &mut y);
        }
        let hi = x + y;
        let lo = y - (hi - x);
        if lo != 0.0 {
            p[i] = lo;
            i += 1;
        }
        x = hi;
    }
    p[i] = x;
    i + 1
}

fn round_partials(p: &[f64]) -> f64 {
    let mut n = p.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = p[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = p[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        let yr = x - hi;
        if y == yr {
            hi = x;
        }
    }
    hi
}

impl Extend<f64> for ExactSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.add(x);
        }
    }
}

/// Correctly rounded sum of an iterator of terms.
pub fn exact_sum<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    let mut acc = ExactSum::new();
    acc.extend(terms);
    acc.value()
}

/// Correctly rounded sum of a fixed number of terms, without allocating.
pub fn exact_sum_array<const N: usize>(terms: [f64; N]) -> f64 {
    let mut p = [0.0; N];
    let mut n = 0;
    for x in terms {
        n = grow(&mut p, n, x);
    }
    round_partials(&p[..n])
}
