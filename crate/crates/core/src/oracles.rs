//! Independent references for the transfer operator and its moments.
//!
//! Nothing here calls into `transfer`, `fixedpoint` or `cauchy`: the
//! enumeration oracle accumulates with exact big-integer arithmetic and the
//! moment oracle integrates the closed moment system with RK4.

use std::collections::BTreeMap;

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{Float, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Result, XferError};
use crate::kernels::TransferKernel;
use crate::measures::{AtomicMeasure, ZERO_SNAP};

pub const ENUMERATION_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentOdeState {
    pub t: f64,
    pub m0: f64,
    pub m1: f64,
    pub m2: f64,
}

impl MomentOdeState {
    pub fn mean(&self) -> f64 {
        self.m1 / self.m0
    }

    pub fn variance(&self) -> f64 {
        self.m2 / self.m0 - self.mean() * self.mean()
    }
}

/// Integrates the closed moment system of ∂ₜn = hn + 𝕋_B[n, n]/‖n‖ for
/// g = 0 and h ≡ c:
///
/// ```text
/// M₀' = (c+1) M₀
/// M₁' = (c+1) M₁
/// M₂' = c M₂ + (1 − 2λ₁ + 2λ₂) M₂ + 2λ₁(1 − λ₁) M₁²/M₀
/// ```
///
/// Returns the state at t = 0, dt, 2dt, …, with a final partial step
/// landing exactly on `t_end`.
pub fn moment_ode_solve(
    kernel: &TransferKernel,
    m0: f64,
    m1: f64,
    m2: f64,
    c: f64,
    t_end: f64,
    dt: f64,
) -> Result<Vec<MomentOdeState>> {
    if !(m0 > 0.0) {
        return Err(XferError::DegenerateMass { t: 0.0, mass: m0 });
    }
    if !(dt > 0.0 && t_end >= 0.0) {
        return Err(XferError::InvalidArgument(format!(
            "need dt > 0 and t_end ≥ 0, got dt = {dt}, t_end = {t_end}"
        )));
    }
    let (l1, l2) = (kernel.lambda1(), kernel.lambda2());
    let rhs = |y: [f64; 3]| -> [f64; 3] {
        [
            (c + 1.0) * y[0],
            (c + 1.0) * y[1],
            c * y[2] + (1.0 - 2.0 * l1 + 2.0 * l2) * y[2] + 2.0 * l1 * (1.0 - l1) * y[1] * y[1] / y[0],
        ]
    };
    let axpy = |y: [f64; 3], k: [f64; 3], h: f64| [y[0] + h * k[0], y[1] + h * k[1], y[2] + h * k[2]];

    let steps = (t_end / dt).ceil() as usize;
    let mut y = [m0, m1, m2];
    let mut out = Vec::with_capacity(steps + 1);
    out.push(MomentOdeState { t: 0.0, m0, m1, m2 });
    for i in 0..steps {
        let t0 = i as f64 * dt;
        let t1 = ((i + 1) as f64 * dt).min(t_end);
        let h = t1 - t0;
        let k1 = rhs(y);
        let k2 = rhs(axpy(y, k1, h / 2.0));
        let k3 = rhs(axpy(y, k2, h / 2.0));
        let k4 = rhs(axpy(y, k3, h));
        for j in 0..3 {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if !(y[0] > 0.0) {
            return Err(XferError::DegenerateMass { t: t1, mass: y[0] });
        }
        out.push(MomentOdeState {
            t: t1,
            m0: y[0],
            m1: y[1],
            m2: y[2],
        });
    }
    Ok(out)
}

/// Exact signed sum of doubles and products of two doubles, held as big
/// integers times powers of two.
#[derive(Default)]
struct BigSum {
    terms: Vec<(BigInt, i32)>,
}

impl BigSum {
    fn push(&mut self, x: f64) {
        let (mant, exp, sign) = x.integer_decode();
        self.terms.push((BigInt::from(sign) * BigInt::from(mant), exp as i32));
    }

    fn push_product(&mut self, a: f64, b: f64, negate: bool) {
        let (ma, ea, sa) = a.integer_decode();
        let (mb, eb, sb) = b.integer_decode();
        let sign = if negate { -sa * sb } else { sa * sb };
        let mant = BigInt::from(sign) * BigInt::from(ma) * BigInt::from(mb);
        self.terms.push((mant, ea as i32 + eb as i32));
    }

    /// Rounded to nearest, ties to even.
    fn value(&self) -> f64 {
        let Some(emin) = self.terms.iter().map(|t| t.1).min() else {
            return 0.0;
        };
        let mut total = BigInt::zero();
        for (mant, exp) in &self.terms {
            total += mant << ((exp - emin) as usize);
        }
        let negative = total.sign() == Sign::Minus;
        let total = total.magnitude().clone();
        let bits = total.bits();
        let x = if bits <= 53 {
            ldexp(total.to_f64().expect("fits in 53 bits"), emin)
        } else {
            let shift = bits - 53;
            let mut q = &total >> shift;
            let rem = &total - (&q << shift);
            let half = BigUint::from(1u8) << (shift - 1);
            if rem > half || (rem == half && q.bit(0)) {
                q += 1u8;
            }
            ldexp(q.to_f64().expect("fits in 54 bits"), emin + shift as i32)
        };
        if negative {
            -x
        } else {
            x
        }
    }
}

/// x₁ − x₁z₁ + x₂z₂, exactly, then rounded once.
fn exact_location(x1: f64, z1: f64, x2: f64, z2: f64) -> f64 {
    let mut s = BigSum::default();
    s.push(x1);
    s.push_product(x1, z1, true);
    s.push_product(x2, z2, false);
    s.value()
}

fn ldexp(x: f64, e: i32) -> f64 {
    let mut x = x;
    let mut e = e;
    while e > 1000 {
        x *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        x *= 2f64.powi(-1000);
        e += 1000;
    }
    x * 2f64.powi(e)
}

/// Brute-force 𝕋_B[u, v]: four nested loops, every atom accumulated
/// exactly at its computed location.
pub fn enumerate_t_b(
    kernel: &TransferKernel,
    u: &AtomicMeasure,
    v: &AtomicMeasure,
) -> Result<AtomicMeasure> {
    let b: Vec<(f64, f64)> = kernel.atoms().iter().collect();
    let size = b.len() * b.len() * u.len() * v.len();
    if size > ENUMERATION_CAP {
        return Err(XferError::Capacity {
            atoms: size as u128,
            cap: ENUMERATION_CAP,
        });
    }
    let mut buckets: BTreeMap<u64, BigSum> = BTreeMap::new();
    for &(z1, wz1) in &b {
        for &(z2, wz2) in &b {
            for (x1, w1) in u.iter() {
                for (x2, w2) in v.iter() {
                    let mut x = exact_location(x1, z1, x2, z2);
                    if x.abs() < ZERO_SNAP {
                        x = 0.0;
                    }
                    let w = wz1 * wz2 * w1 * w2;
                    if w > 0.0 {
                        // non-negative doubles order like their bit patterns
                        buckets.entry(x.to_bits()).or_default().push(w);
                    }
                }
            }
        }
    }
    AtomicMeasure::new(
        buckets
            .into_iter()
            .map(|(bits, sum)| (f64::from_bits(bits), sum.value())),
    )
}
