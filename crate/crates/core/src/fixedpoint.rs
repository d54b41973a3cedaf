//! Fixed distributions ū = 𝕋_B[ū, ū] and the structural diagnostics around
//! them: mass at the origin, Dirac fixed points and diffuseness.

use serde::{Deserialize, Serialize};

use crate::error::{Result, XferError};
use crate::kernels::TransferKernel;
use crate::measures::{w1_distance, AtomicMeasure, Compression};
use crate::transfer::{t_b_auto, t_b_exact, TransferConfig};

/// Largest single-atom weight for a converged iterate to count as diffuse.
pub const DIFFUSE_MAX_WEIGHT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointSettings {
    pub max_iter: usize,
    pub tol: f64,
    pub max_atoms: usize,
    #[serde(default)]
    pub transfer: TransferConfig,
}

impl Default for FixedPointSettings {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            tol: 1e-8,
            max_atoms: 1024,
            transfer: TransferConfig {
                compression: Compression::Lattice,
                ..TransferConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    DiracAtZero,
    DiffuseCandidate,
    DiracAtZ,
    NotConverged,
}

/// One row of the per-iteration diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iter: usize,
    pub mass: f64,
    pub mean: f64,
    pub variance: f64,
    pub mass_at_zero: f64,
    pub w1_step: f64,
    pub n_atoms: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FixedPointReport {
    pub iterate: AtomicMeasure,
    pub iterations: usize,
    pub w1_step: f64,
    pub mass_at_zero: f64,
    pub mean: f64,
    pub variance: f64,
    pub predicted_variance: Option<f64>,
    pub converged: bool,
    pub classification: Classification,
    /// Largest |mean(u_k) − mean(u_0)| seen along the iteration.
    pub max_mean_drift: f64,
    #[serde(skip)]
    pub history: Vec<IterationRow>,
}

/// Stationary variance Var(B)·M₁²/(λ₁−λ₂) of the moment recursion, when
/// λ₁ > λ₂.
pub fn predicted_fixed_variance(kernel: &TransferKernel, mean: f64) -> Option<f64> {
    let gap = kernel.lambda1() - kernel.lambda2();
    (gap > 0.0).then(|| kernel.variance() * mean * mean / gap)
}

/// Plain Picard iteration u ← compress(𝕋_B[u, u]) from a probability
/// measure until the W₁ step drops to `tol` or `max_iter` is reached.
///
/// The default settings compress with [`Compression::Lattice`]: greedy
/// merging makes the iteration map discontinuous and the W₁ step then
/// stalls around the compression error instead of reaching `tol`.
pub fn iterate_fixed_point(
    kernel: &TransferKernel,
    u0: &AtomicMeasure,
    settings: &FixedPointSettings,
) -> Result<FixedPointReport> {
    let mass0 = u0.mass();
    if (mass0 - 1.0).abs() > 1e-9 {
        return Err(XferError::InvalidArgument(format!(
            "initial measure must be a probability measure, has mass {mass0}"
        )));
    }
    if !(settings.tol > 0.0) {
        return Err(XferError::InvalidArgument("tol must be positive".into()));
    }
    let mean0 = u0.mean();
    let mut u = u0.clone();
    let mut history = Vec::new();
    let mut w1_step = f64::INFINITY;
    let mut iterations = 0;
    let mut max_mean_drift = 0.0f64;
    let mut converged = false;
    while iterations < settings.max_iter {
        let (next, _) = t_b_auto(kernel, &u, &u, settings.max_atoms, &settings.transfer)?;
        // mass is an unstable direction of u ↦ 𝕋_B[u, u] (‖T‖ = ‖u‖²), so
        // rounding is projected back onto the probability simplex
        let next = next.normalized()?;
        iterations += 1;
        w1_step = w1_distance(&next, &u)?;
        u = next;
        let mean = u.mean();
        max_mean_drift = max_mean_drift.max((mean - mean0).abs());
        history.push(IterationRow {
            iter: iterations,
            mass: u.mass(),
            mean,
            variance: u.variance(),
            mass_at_zero: u.mass_at_zero(),
            w1_step,
            n_atoms: u.len(),
        });
        if w1_step <= settings.tol {
            converged = true;
            break;
        }
    }
    let mean = u.mean();
    let variance = u.variance();
    let mass_at_zero = u.mass_at_zero();
    let classification = classify(&u, converged, settings.tol);
    Ok(FixedPointReport {
        predicted_variance: predicted_fixed_variance(kernel, mean0),
        iterate: u,
        iterations,
        w1_step,
        mass_at_zero,
        mean,
        variance,
        converged,
        classification,
        max_mean_drift,
        history,
    })
}

fn classify(u: &AtomicMeasure, converged: bool, tol: f64) -> Classification {
    let mean = u.mean();
    if u.mass_at_zero() > 1.0 - tol {
        Classification::DiracAtZero
    } else if u.variance() < tol * mean * mean {
        Classification::DiracAtZ
    } else if converged && u.max_weight() < DIFFUSE_MAX_WEIGHT {
        Classification::DiffuseCandidate
    } else {
        Classification::NotConverged
    }
}

/// W₁(𝕋_B[δ_Z, δ_Z], δ_Z): zero exactly when B is a single atom.
pub fn dirac_displacement(kernel: &TransferKernel, z: f64) -> Result<f64> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(XferError::InvalidArgument(format!(
            "Z = {z} must be positive"
        )));
    }
    let dz = AtomicMeasure::dirac(z)?;
    let out = t_b_exact(kernel, &dz, &dz, &TransferConfig::default())?;
    w1_distance(&out, &dz)
}

/// 𝕋_B[u, u]({0}), the mass the transfer sends to the origin.
pub fn zero_mass_flow(kernel: &TransferKernel, u: &AtomicMeasure) -> Result<f64> {
    // zero atoms never merge, so compression leaves this weight untouched
    let (out, _) = t_b_auto(kernel, u, u, 1024, &TransferConfig::default())?;
    Ok(out.mass_at_zero())
}
