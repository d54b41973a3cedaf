//! Time integration of ∂ₜn = g + hn + 𝕋_B[n, n]/‖n‖.
//!
//! Three independent schemes share the [`Scenario`] input and the
//! [`Trajectory`] output: an atomic exponential-Euler scheme on the mild
//! form, a Picard scheme for the mollified and truncated problem on a grid,
//! and a stochastic particle system.

mod atomic;
mod grid;
mod particles;
mod residual;
mod scenario;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, XferError};
use crate::measures::{binned, tv_distance, AtomicMeasure};

pub use atomic::evolve_atomic;
pub use grid::{evolve_grid_picard, mollifier_cdf};
pub use particles::{evolve_particles, ParticleSystem};
pub use residual::{mild_residual, Residual, TestFunction};
pub use scenario::{
    GrowthSpec, Mode, Orientation, Scenario, SolverSettings, SourcePiece, SourceSpec,
};

/// Exact header of the trajectory CSV.
pub const CSV_HEADER: &str = "t,mass,mean,variance,mass_at_zero,tv_rate,n_atoms";

/// Below this mass a trajectory is declared degenerate.
pub const MIN_MASS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub measure: AtomicMeasure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub mass: f64,
    pub mean: f64,
    pub variance: f64,
    pub mass_at_zero: f64,
    /// TV distance to the previous snapshot after binning both, divided by
    /// the time between them; 0 on the first row.
    pub tv_rate: f64,
    pub n_atoms: usize,
}

/// Counters reported by the schemes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverStats {
    pub steps: usize,
    pub picard_iterations: usize,
    pub windows: usize,
    pub window_halvings: usize,
    /// Windows that hit `picard_max` before reaching `picard_tol`.
    pub unconverged_windows: usize,
    /// Grid mode: final window length after halvings.
    pub window: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub mode: Mode,
    pub seed: u64,
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: Vec<DiagnosticsRow>,
    pub stats: SolverStats,
}

impl Trajectory {
    pub(crate) fn new(
        mode: Mode,
        seed: u64,
        snapshots: Vec<Snapshot>,
        tv_bin: f64,
        stats: SolverStats,
    ) -> Result<Self> {
        let mut diagnostics = Vec::with_capacity(snapshots.len());
        let mut prev: Option<(f64, AtomicMeasure)> = None;
        for s in &snapshots {
            let b = binned(&s.measure, tv_bin)?;
            let tv_rate = match &prev {
                Some((t0, b0)) => tv_distance(b0, &b) / (s.t - t0),
                None => 0.0,
            };
            diagnostics.push(DiagnosticsRow {
                t: s.t,
                mass: s.measure.mass(),
                mean: s.measure.mean(),
                variance: s.measure.variance(),
                mass_at_zero: s.measure.mass_at_zero(),
                tv_rate,
                n_atoms: s.measure.len(),
            });
            prev = Some((s.t, b));
        }
        Ok(Self {
            mode,
            seed,
            snapshots,
            diagnostics,
            stats,
        })
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("a trajectory has a snapshot at t = 0")
    }

    /// Snapshot whose time is closest to t.
    pub fn at(&self, t: f64) -> &Snapshot {
        self.snapshots
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .expect("a trajectory has a snapshot at t = 0")
    }

    pub fn max_tv_rate(&self) -> f64 {
        self.diagnostics.iter().map(|r| r.tv_rate).fold(0.0, f64::max)
    }

    /// Maximum over the run of ae^{bt}, fitted to the positive tv_rate rows
    /// by least squares on ln tv_rate. Single rows where a heavy atom crosses
    /// a bin edge barely move it. `None` with fewer than two such rows.
    pub fn fitted_max_tv_rate(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .diagnostics
            .iter()
            .filter(|r| r.tv_rate > 0.0 && r.tv_rate.is_finite())
            .map(|r| (r.t, r.tv_rate.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
        let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
        let b = if stt > 0.0 { sty / stt } else { 0.0 };
        let a = my - b * mt;
        let (t0, t1) = (pts[0].0, pts[pts.len() - 1].0);
        Some((a + b * t0).exp().max((a + b * t1).exp()))
    }

    /// Smallest C such that C⁻¹e^{−Ct} ≤ M₀(t) ≤ Ce^{Ct} and
    /// M₂(t) ≤ Ce^{Ct} along the snapshots.
    pub fn moment_envelope(&self) -> f64 {
        let needed = |m: f64, t: f64, upper: bool| -> f64 {
            // find C with ln m ≤ ln C + Ct (upper) or −ln m ≤ ln C + Ct
            let target = if upper { m.ln() } else { -m.ln() };
            let (mut lo, mut hi) = (1.0f64, 2.0f64);
            while hi.ln() + hi * t < target {
                hi *= 2.0;
            }
            if lo.ln() + lo * t >= target {
                return lo;
            }
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if mid.ln() + mid * t >= target {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            hi
        };
        self.snapshots
            .iter()
            .map(|s| {
                let m0 = s.measure.mass();
                let m2 = s.measure.integrate(|x| x * x);
                let mut c = needed(m0, s.t, true).max(needed(m0, s.t, false));
                if m2 > 0.0 {
                    c = c.max(needed(m2, s.t, true));
                }
                c
            })
            .fold(1.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for row in &self.diagnostics {
            wr.serialize(row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| XferError::InvalidArgument(e.to_string()))
    }
}

/// Runs the scheme selected by `scenario.solver.mode`.
pub fn evolve(scenario: &Scenario) -> Result<Trajectory> {
    match scenario.solver.mode {
        Mode::AtomicEuler => evolve_atomic(scenario),
        Mode::GridPicard => evolve_grid_picard(scenario),
        Mode::Particles => evolve_particles(scenario),
    }
}

pub(crate) fn require_mode(scenario: &Scenario, mode: Mode) -> Result<()> {
    if scenario.solver.mode != mode {
        return Err(XferError::InvalidArgument(format!(
            "scenario is set up for {}, not {}",
            scenario.solver.mode.name(),
            mode.name()
        )));
    }
    Ok(())
}

/// Steps after which a snapshot is recorded: every `snapshot_every`-th and
/// the last one.
pub(crate) fn is_snapshot_step(step: usize, total: usize, every: usize) -> bool {
    step.is_multiple_of(every) || step == total
}
