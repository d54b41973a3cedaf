use serde::{Deserialize, Serialize};

use crate::error::{Result, XferError};
use crate::measures::AtomicMeasure;
use crate::transfer::{t_b_auto, TransferConfig};

use super::scenario::Scenario;
use super::Trajectory;

/// Built-in test functions, all bounded by C(1 + x²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    One,
    X,
    X2,
    ExpNeg,
    MinK(f64),
}

impl TestFunction {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            TestFunction::One => 1.0,
            TestFunction::X => x,
            TestFunction::X2 => x * x,
            TestFunction::ExpNeg => (-x).exp(),
            TestFunction::MinK(k) => x.min(k),
        }
    }

    pub fn name(self) -> String {
        match self {
            TestFunction::One => "1".into(),
            TestFunction::X => "x".into(),
            TestFunction::X2 => "x^2".into(),
            TestFunction::ExpNeg => "exp(-x)".into(),
            TestFunction::MinK(k) => format!("min(x,{k})"),
        }
    }

    pub fn builtins() -> Vec<TestFunction> {
        vec![
            TestFunction::One,
            TestFunction::X,
            TestFunction::X2,
            TestFunction::ExpNeg,
            TestFunction::MinK(1.0),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residual {
    pub phi: TestFunction,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// Both sides of the mild identity
///
/// ```text
/// ∫φ dn_t = ∫ e^{∫₀ᵗh} φ dn^ini + ∫₀ᵗ ∫ e^{∫ₛᵗh} φ d(g_s + 𝕋_B[n_s, n_s]/‖n_s‖) ds
/// ```
///
/// at every snapshot time, with the s-integral taken by the trapezoid rule
/// over the snapshots.
pub fn mild_residual(
    traj: &Trajectory,
    scenario: &Scenario,
    test_functions: &[TestFunction],
) -> Result<Vec<Residual>> {
    if traj.snapshots.len() < 3 {
        return Err(XferError::InsufficientData(format!(
            "mild residual needs at least 3 snapshots, got {}",
            traj.snapshots.len()
        )));
    }
    let kernel = scenario.validate()?;
    let growth = &scenario.growth;
    let config = TransferConfig::default();
    let max_atoms = scenario.solver.max_atoms.max(1024);

    // integrand measures g_s + 𝕋_B[n_s, n_s]/‖n_s‖ at each snapshot
    let forcing: Vec<AtomicMeasure> = traj
        .snapshots
        .iter()
        .map(|s| {
            let mass = s.measure.mass();
            if !(mass > 0.0) {
                return Err(XferError::DegenerateMass { t: s.t, mass });
            }
            let (tr, _) = t_b_auto(&kernel, &s.measure, &s.measure, max_atoms, &config)?;
            let mut f = tr.scaled(1.0 / mass)?;
            if let Some(g) = scenario.source.at(s.t) {
                f = f.plus(g);
            }
            Ok(f)
        })
        .collect::<Result<_>>()?;

    let times: Vec<f64> = traj.snapshots.iter().map(|s| s.t).collect();
    let mut out = Vec::new();
    for &phi in test_functions {
        for (k, snap) in traj.snapshots.iter().enumerate() {
            let t = times[k];
            let lhs = snap.measure.integrate(|x| phi.eval(x));
            let mut rhs = scenario
                .initial
                .integrate(|x| growth.integral(0.0, t, x).exp() * phi.eval(x));
            let values: Vec<f64> = (0..=k)
                .map(|j| {
                    let s = times[j];
                    forcing[j].integrate(|x| growth.integral(s, t, x).exp() * phi.eval(x))
                })
                .collect();
            for j in 0..k {
                rhs += 0.5 * (times[j + 1] - times[j]) * (values[j] + values[j + 1]);
            }
            out.push(Residual {
                phi,
                t,
                lhs,
                rhs,
                residual: (lhs - rhs).abs(),
            });
        }
    }
    Ok(out)
}
