//! The focal post-transfer law 𝕂_B[x₁, x₂] and the bilinear operator
//! 𝕋_B[u, v], computed exactly on atomic inputs.
//!
//! For atomic B, u and v the operator is a finite pushforward: every
//! combination (z₁, z₂, x₁, x₂) contributes an atom at x₁(1−z₁) + x₂z₂ with
//! weight B(z₁)B(z₂)u(x₁)v(x₂).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, XferError};
use crate::kernels::TransferKernel;
use crate::measures::{w1_normalized, Atom, AtomicMeasure, Compression, CompressionReport};
use crate::sum::exact_sum_array;

pub const DEFAULT_HARD_CAP: usize = 10_000_000;

/// Execution limits for the exact product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    /// Maximum number of product atoms enumerated before compression.
    pub hard_cap: usize,
    /// Number of partitions of u's atoms enumerated in parallel.
    pub partitions: usize,
    #[serde(default)]
    pub compression: Compression,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            hard_cap: DEFAULT_HARD_CAP,
            partitions: 1,
            compression: Compression::Greedy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedMoments {
    pub m0: f64,
    pub m1: f64,
    pub m2: f64,
}

/// x₁(1−z₁) + x₂z₂ rounded once from its exact value, so a trait that
/// receives back exactly the fraction it sent is returned unchanged.
pub fn post_transfer(x1: f64, z1: f64, x2: f64, z2: f64) -> f64 {
    let p1 = x1 * z1;
    let e1 = x1.mul_add(z1, -p1);
    let p2 = x2 * z2;
    let e2 = x2.mul_add(z2, -p2);
    let (a, ea) = two_sum(x1, -p1);
    let (b, eb) = two_sum(a, p2);
    let tail = ea + eb - e1 + e2;
    // the tail is off by far less than err; rounding is monotone, so agreeing
    // endpoints pin down the correctly rounded value
    let err = 8.0 * f64::EPSILON * (ea.abs() + eb.abs() + e1.abs() + e2.abs()) + f64::MIN_POSITIVE;
    let r = b + tail;
    if b + (tail - err) == r && b + (tail + err) == r {
        return r;
    }
    exact_sum_array([x1, -p1, -e1, p2, e2])
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Law of x₁(1−Z₁) + x₂Z₂ with Z₁, Z₂ i.i.d. ∼ B.
pub fn k_b(kernel: &TransferKernel, x1: f64, x2: f64) -> Result<AtomicMeasure> {
    if !(x1 >= 0.0 && x2 >= 0.0) {
        return Err(XferError::InvalidArgument(format!(
            "traits ({x1}, {x2}) must be non-negative"
        )));
    }
    let b = kernel.atoms().atoms();
    let mut atoms = Vec::with_capacity(b.len() * b.len());
    for z1 in b {
        for z2 in b {
            atoms.push(Atom {
                location: post_transfer(x1, z1.location, x2, z2.location),
                weight: z1.weight * z2.weight,
            });
        }
    }
    Ok(AtomicMeasure::canonicalize(atoms))
}

/// 𝕋_B[u, v] compressed to `max_atoms`, with the default configuration.
pub fn t_b(
    kernel: &TransferKernel,
    u: &AtomicMeasure,
    v: &AtomicMeasure,
    max_atoms: usize,
) -> Result<(AtomicMeasure, CompressionReport)> {
    t_b_with(kernel, u, v, max_atoms, &TransferConfig::default())
}

pub fn t_b_with(
    kernel: &TransferKernel,
    u: &AtomicMeasure,
    v: &AtomicMeasure,
    max_atoms: usize,
    config: &TransferConfig,
) -> Result<(AtomicMeasure, CompressionReport)> {
    t_b_exact(kernel, u, v, config)?.compress_with(max_atoms, config.compression)
}

fn product_size(kernel: &TransferKernel, u: &AtomicMeasure, v: &AtomicMeasure) -> u128 {
    let m = kernel.atoms().len() as u128;
    m * m * u.len() as u128 * v.len() as u128
}

/// Uncompressed 𝕋_B[u, v]. The result is bitwise independent of
/// `config.partitions`.
pub fn t_b_exact(
    kernel: &TransferKernel,
    u: &AtomicMeasure,
    v: &AtomicMeasure,
    config: &TransferConfig,
) -> Result<AtomicMeasure> {
    let size = product_size(kernel, u, v);
    if size > config.hard_cap as u128 {
        return Err(XferError::Capacity {
            atoms: size,
            cap: config.hard_cap,
        });
    }
    let b = kernel.atoms().atoms();
    let us = u.atoms();
    let vs = v.atoms();
    let enumerate = |chunk: &[Atom]| {
        let mut buf = Vec::with_capacity(b.len() * b.len() * chunk.len() * vs.len());
        for z1 in b {
            for z2 in b {
                let wz = z1.weight * z2.weight;
                for a1 in chunk {
                    let w1 = wz * a1.weight;
                    for a2 in vs {
                        buf.push(Atom {
                            location: post_transfer(a1.location, z1.location, a2.location, z2.location),
                            weight: w1 * a2.weight,
                        });
                    }
                }
            }
        }
        buf
    };
    let parts = config.partitions.max(1);
    let atoms = if parts == 1 || us.len() < 2 {
        enumerate(us)
    } else {
        let chunk = us.len().div_ceil(parts);
        let buffers: Vec<Vec<Atom>> = us.par_chunks(chunk).map(enumerate).collect();
        buffers.concat()
    };
    Ok(AtomicMeasure::canonicalize(atoms))
}

/// 𝕋_B[u, v] through its factorization as the law of a sum of two
/// independent terms: A = x₁(1−Z₁) under u⊗B and C = x₂Z₂ under v⊗B.
///
/// A and C are compressed to `max_atoms` before their sum-convolution, so
/// this scales to kernels and iterates with many atoms. Without
/// intermediate compression the result equals [`t_b_exact`] up to rounding
/// of the weights.
pub fn t_b_factored(
    kernel: &TransferKernel,
    u: &AtomicMeasure,
    v: &AtomicMeasure,
    max_atoms: usize,
    config: &TransferConfig,
) -> Result<(AtomicMeasure, CompressionReport)> {
    let b = kernel.atoms().atoms();
    let push = |m: &AtomicMeasure, f: &(dyn Fn(f64, f64) -> f64 + Sync)| -> Result<AtomicMeasure> {
        let size = m.len() as u128 * b.len() as u128;
        if size > config.hard_cap as u128 {
            return Err(XferError::Capacity {
                atoms: size,
                cap: config.hard_cap,
            });
        }
        let mut atoms = Vec::with_capacity(size as usize);
        for z in b {
            for a in m.atoms() {
                atoms.push(Atom {
                    location: f(a.location, z.location),
                    weight: z.weight * a.weight,
                });
            }
        }
        Ok(AtomicMeasure::canonicalize(atoms))
    };
    let (kept, sent) = rayon::join(
        || push(u, &|x, z| x * (1.0 - z))?.compress_with(max_atoms, config.compression),
        || push(v, &|x, z| x * z)?.compress_with(max_atoms, config.compression),
    );
    let (kept, rep_a) = kept?;
    let (sent, rep_c) = sent?;

    let size = kept.len() as u128 * sent.len() as u128;
    if size > config.hard_cap as u128 {
        return Err(XferError::Capacity {
            atoms: size,
            cap: config.hard_cap,
        });
    }
    let ks = kept.atoms();
    let ss = sent.atoms();
    let convolve = |chunk: &[Atom]| {
        let mut buf = Vec::with_capacity(chunk.len() * ss.len());
        for a in chunk {
            for c in ss {
                buf.push(Atom {
                    location: a.location + c.location,
                    weight: a.weight * c.weight,
                });
            }
        }
        buf
    };
    let parts = config.partitions.max(1);
    let atoms = if parts == 1 || ks.len() < 2 {
        convolve(ks)
    } else {
        let chunk = ks.len().div_ceil(parts);
        let buffers: Vec<Vec<Atom>> = ks.par_chunks(chunk).map(convolve).collect();
        buffers.concat()
    };
    let (out, rep) = AtomicMeasure::canonicalize(atoms).compress_with(max_atoms, config.compression)?;
    // W₁(A∗C, A'∗C') ≤ ‖C‖·W₁(A, A') + ‖A'‖·W₁(C, C')
    let bound = rep_a.w1_error_bound * sent.mass()
        + rep_c.w1_error_bound * kept.mass()
        + rep.w1_error_bound;
    Ok((
        out,
        CompressionReport {
            merges_performed: rep_a.merges_performed + rep_c.merges_performed + rep.merges_performed,
            w1_error_bound: bound,
        },
    ))
}

/// Exact product when it fits under the hard cap, factored otherwise.
pub fn t_b_auto(
    kernel: &TransferKernel,
    u: &AtomicMeasure,
    v: &AtomicMeasure,
    max_atoms: usize,
    config: &TransferConfig,
) -> Result<(AtomicMeasure, CompressionReport)> {
    if product_size(kernel, u, v) <= config.hard_cap as u128 {
        t_b_with(kernel, u, v, max_atoms, config)
    } else {
        t_b_factored(kernel, u, v, max_atoms, config)
    }
}

/// Moments of 𝕋_B[u, v] from the moments of u, v and B alone.
pub fn predicted_moments(
    kernel: &TransferKernel,
    u: &AtomicMeasure,
    v: &AtomicMeasure,
) -> PredictedMoments {
    let (l1, l2) = (kernel.lambda1(), kernel.lambda2());
    let (u0, u1, u2) = moments3(u);
    let (v0, v1, v2) = moments3(v);
    PredictedMoments {
        m0: u0 * v0,
        m1: (1.0 - l1) * v0 * u1 + l1 * u0 * v1,
        m2: (1.0 - 2.0 * l1 + l2) * v0 * u2 + l2 * u0 * v2 + 2.0 * (1.0 - l1) * l1 * u1 * v1,
    }
}

fn moments3(u: &AtomicMeasure) -> (f64, f64, f64) {
    (
        u.mass(),
        u.moment(1).expect("order 1"),
        u.moment(2).expect("order 2"),
    )
}

/// Monte Carlo estimate of 𝕋_B[u, v]: the empirical law of `n_samples`
/// draws of x₁(1−Z₁) + x₂Z₂, each weighted ‖u‖‖v‖/n_samples.
pub fn t_b_mc<R: Rng + ?Sized>(
    kernel: &TransferKernel,
    u: &AtomicMeasure,
    v: &AtomicMeasure,
    n_samples: usize,
    rng: &mut R,
) -> Result<AtomicMeasure> {
    let su = u.sampler()?;
    let sv = v.sampler()?;
    let sb = kernel.sampler();
    let weight = u.mass() * v.mass() / n_samples as f64;
    let mut atoms = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let x1 = su.draw(rng);
        let x2 = sv.draw(rng);
        let z1 = sb.draw(rng);
        let z2 = sb.draw(rng);
        atoms.push(Atom {
            location: x1 * (1.0 - z1) + x2 * z2,
            weight,
        });
    }
    Ok(AtomicMeasure::canonicalize(atoms))
}

/// Mean normalized W₁ distance of [`t_b_mc`] to a reference at one sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McErrorRow {
    pub n_samples: usize,
    pub w1: f64,
}

/// Runs [`t_b_mc`] `reps` times at each sample size and averages the
/// normalized W₁ distance to `reference`. Run i draws from stream i of a
/// ChaCha8 generator seeded with `seed`, so the result does not depend on
/// the thread count.
pub fn mc_error_study(
    kernel: &TransferKernel,
    u: &AtomicMeasure,
    v: &AtomicMeasure,
    reference: &AtomicMeasure,
    sizes: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<McErrorRow>> {
    if reps == 0 || sizes.contains(&0) {
        return Err(XferError::InvalidArgument(
            "sample sizes and repetitions must be positive".into(),
        ));
    }
    let jobs: Vec<(usize, usize)> = sizes
        .iter()
        .flat_map(|&n| (0..reps).map(move |r| (n, r)))
        .collect();
    let errors = jobs
        .par_iter()
        .enumerate()
        .map(|(i, &(n, _))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            w1_normalized(&t_b_mc(kernel, u, v, n, &mut rng)?, reference)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(sizes
        .iter()
        .zip(errors.chunks(reps))
        .map(|(&n_samples, e)| McErrorRow {
            n_samples,
            w1: e.iter().sum::<f64>() / reps as f64,
        })
        .collect())
}

/// Least-squares slope of log w1 against log n_samples.
pub fn loglog_slope(rows: &[McErrorRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| ((r.n_samples as f64).ln(), r.w1.ln()))
        .collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::w1_distance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(pairs: &[(f64, f64)]) -> AtomicMeasure {
        AtomicMeasure::new(pairs.iter().copied()).unwrap()
    }

    fn coin() -> TransferKernel {
        TransferKernel::from_atoms(&[(0.0, 0.5), (1.0, 0.5)]).unwrap()
    }

    #[test]
    fn k_b_examples() {
        let k = TransferKernel::dirac(0.3).unwrap();
        assert_eq!(k_b(&k, 1.0, 0.0).unwrap(), m(&[(0.7, 1.0)]));
        assert_eq!(
            k_b(&coin(), 1.0, 1.0).unwrap(),
            m(&[(0.0, 0.25), (1.0, 0.5), (2.0, 0.25)])
        );
        assert_eq!(k_b(&coin(), 0.0, 0.0).unwrap(), m(&[(0.0, 1.0)]));
        assert!(k_b(&coin(), -1.0, 0.0).is_err());
    }

    #[test]
    fn t_b_examples() {
        let k = TransferKernel::dirac(0.4).unwrap();
        let u = m(&[(1.0, 1.0), (2.0, 1.0)]);
        let v = m(&[(0.5, 3.0)]);
        let (t, _) = t_b(&k, &u, &v, 100).unwrap();
        assert_eq!(t.mass(), 6.0);

        let d0 = m(&[(0.0, 1.0)]);
        let (t, _) = t_b(&coin(), &d0, &d0, 100).unwrap();
        assert_eq!(t, d0);

        let d1 = m(&[(1.0, 1.0)]);
        let (t, _) = t_b(&coin(), &d1, &d1, 100).unwrap();
        assert_eq!(t.moment(1).unwrap(), 1.0);
        assert_eq!(t.moment(2).unwrap(), 1.5);
    }

    #[test]
    fn capacity_error() {
        let k = crate::kernels::make_kernel(crate::kernels::KernelSpec::uniform(100)).unwrap();
        let u = AtomicMeasure::new((1..=40).map(|i| (i as f64, 1.0))).unwrap();
        let cfg = TransferConfig {
            hard_cap: 1_000_000,
            ..Default::default()
        };
        assert!(matches!(
            t_b_exact(&k, &u, &u, &cfg),
            Err(XferError::Capacity { .. })
        ));
        // the factored route handles it
        let (t, _) = t_b_auto(&k, &u, &u, 256, &cfg).unwrap();
        let p = predicted_moments(&k, &u, &u);
        assert!((t.mass() - p.m0).abs() / p.m0 < 1e-12);
        assert!((t.moment(1).unwrap() - p.m1).abs() / p.m1 < 1e-12);
    }

    #[test]
    fn partitions_are_bitwise_identical() {
        let k = TransferKernel::from_atoms(&[(0.0, 0.25), (0.5, 0.5), (1.0, 0.25)]).unwrap();
        let u = m(&[(0.3, 0.2), (1.1, 0.5), (2.0, 0.3), (2.5, 0.1), (3.7, 0.9)]);
        let serial = t_b_exact(&k, &u, &u, &TransferConfig::default()).unwrap();
        for parts in 2..6 {
            let cfg = TransferConfig {
                partitions: parts,
                ..Default::default()
            };
            assert_eq!(t_b_exact(&k, &u, &u, &cfg).unwrap(), serial);
        }
    }

    #[test]
    fn factored_matches_exact_without_compression() {
        let k = TransferKernel::from_atoms(&[(0.1, 0.25), (0.5, 0.5), (0.9, 0.25)]).unwrap();
        let u = m(&[(0.3, 0.2), (1.1, 0.5), (2.0, 0.3)]);
        let v = m(&[(0.7, 1.0), (1.9, 2.0)]);
        let exact = t_b_exact(&k, &u, &v, &TransferConfig::default()).unwrap();
        let (fact, rep) = t_b_factored(&k, &u, &v, 10_000, &TransferConfig::default()).unwrap();
        assert_eq!(rep.merges_performed, 0);
        // the factored sum kept + sent is rounded twice and the exact path
        // once, so atoms may sit an ulp apart
        assert!((exact.mass() - fact.mass()).abs() < 1e-15);
        assert!(w1_distance(&exact, &fact).unwrap() < 1e-14);
    }

    #[test]
    fn predicted_moment_examples() {
        let d1 = m(&[(1.0, 1.0)]);
        let p = predicted_moments(&TransferKernel::dirac(0.3).unwrap(), &d1, &d1);
        assert_eq!(p.m0, 1.0);
        assert!((p.m1 - 1.0).abs() < 1e-15);
        assert!((p.m2 - 1.0).abs() < 1e-15);
        let d0 = m(&[(0.0, 2.0)]);
        let p = predicted_moments(&coin(), &d0, &d0);
        assert_eq!((p.m0, p.m1, p.m2), (4.0, 0.0, 0.0));
        assert_eq!(predicted_moments(&coin(), &d1, &d1).m2, 1.5);
    }

    #[test]
    fn monte_carlo_estimator() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d1 = m(&[(1.0, 1.0)]);
        let det = TransferKernel::dirac(0.3).unwrap();
        let est = t_b_mc(&det, &d1, &d1, 1000, &mut rng).unwrap();
        assert_eq!(est.len(), 1);
        assert!((est.atoms()[0].location - 1.0).abs() < 1e-15);

        let est = t_b_mc(&coin(), &d1, &d1, 100_000, &mut rng).unwrap();
        let exact = t_b_exact(&coin(), &d1, &d1, &TransferConfig::default()).unwrap();
        assert!(w1_distance(&est, &exact).unwrap() <= 0.02);

        let u = m(&[(1.0, 2.0), (3.0, 0.5)]);
        let v = m(&[(2.0, 3.0)]);
        let est = t_b_mc(&coin(), &u, &v, 777, &mut rng).unwrap();
        assert!((est.mass() - 7.5).abs() < 1e-12);
        assert!(matches!(
            t_b_mc(&coin(), &AtomicMeasure::empty(), &v, 10, &mut rng),
            Err(XferError::EmptyMeasure)
        ));
    }

    #[test]
    fn mc_error_shrinks_like_inverse_sqrt() {
        let u = m(&[(1.0, 0.5), (3.0, 0.5)]);
        let k = coin();
        let exact = t_b_exact(&k, &u, &u, &TransferConfig::default()).unwrap();
        let rows = mc_error_study(&k, &u, &u, &exact, &[1000, 10_000, 100_000], 4, 7).unwrap();
        assert_eq!(rows.len(), 3);
        let slope = loglog_slope(&rows);
        assert!((-0.7..-0.3).contains(&slope), "{slope} {rows:?}");
        let again = mc_error_study(&k, &u, &u, &exact, &[1000, 10_000, 100_000], 4, 7).unwrap();
        assert_eq!(rows, again);
    }

}
