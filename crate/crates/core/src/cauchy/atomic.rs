use crate::error::{Result, XferError};
use crate::measures::AtomicMeasure;
use crate::transfer::{t_b_auto, TransferConfig};

use super::scenario::{GrowthSpec, Mode, Scenario};
use super::{is_snapshot_step, require_mode, Snapshot, SolverStats, Trajectory, MIN_MASS};

/// Exponential Euler on the mild form.
///
/// Over a step [t, t+dt] the transfer term 𝕋_B[n_t, n_t]/‖n_t‖ and the
/// source are frozen at time t, and the linear part is integrated exactly:
///
/// ```text
/// n_{t+dt} = e^{∫h} n_t + φ·(g_t + 𝕋_B[n_t, n_t]/‖n_t‖),   φ(x) = ∫ₜ^{t+dt} e^{∫ₛ^{t+dt} h} ds
/// ```
///
/// followed by compression to `max_atoms`. For h ≡ −1 this keeps the mass
/// exactly constant.
pub fn evolve_atomic(scenario: &Scenario) -> Result<Trajectory> {
    require_mode(scenario, Mode::AtomicEuler)?;
    let kernel = scenario.validate()?;
    let settings = &scenario.solver;
    let config = TransferConfig {
        partitions: settings.partitions,
        compression: settings.compression,
        ..TransferConfig::default()
    };
    let growth = &scenario.growth;
    let c_bar = scenario.c_bar;

    let times = settings.step_times();
    let mut n = scenario
        .initial
        .compress_with(settings.max_atoms, settings.compression)?
        .0;
    let mut snapshots = vec![Snapshot {
        t: 0.0,
        measure: n.clone(),
    }];
    let mut t = 0.0;
    for (k, &t_next) in times.iter().enumerate() {
        let dt = t_next - t;
        let mass = n.mass();
        if !(mass >= MIN_MASS) {
            return Err(XferError::DegenerateMass { t, mass });
        }
        check_growth(growth, c_bar, t, &n)?;
        let decayed = n.reweighted(|x| growth.integral(t, t_next, x).exp());
        let phi = |x: f64| growth.duhamel_weight(t, dt, x);
        let (transferred, _) = t_b_auto(&kernel, &n, &n, settings.max_atoms, &config)?;
        let mut next = decayed.plus(&transferred.reweighted(|x| phi(x) / mass));
        if let Some(g) = scenario.source.at(t) {
            next = next.plus(&g.reweighted(phi));
        }
        n = next.compress_with(settings.max_atoms, settings.compression)?.0;
        t = t_next;
        if is_snapshot_step(k + 1, times.len(), settings.snapshot_every) {
            snapshots.push(Snapshot {
                t,
                measure: n.clone(),
            });
        }
    }
    let mass = n.mass();
    if !(mass >= MIN_MASS) {
        return Err(XferError::DegenerateMass { t, mass });
    }
    let stats = SolverStats {
        steps: times.len(),
        ..SolverStats::default()
    };
    Trajectory::new(Mode::AtomicEuler, settings.seed, snapshots, settings.tv_bin, stats)
}

fn check_growth(growth: &GrowthSpec, c_bar: f64, t: f64, n: &AtomicMeasure) -> Result<()> {
    for (x, _) in n.iter() {
        let h = growth.value(t, x);
        if !(h <= c_bar) {
            return Err(XferError::Config(format!(
                "growth bound h ≤ C̄_A violated at t = {t}, x = {x}: h = {h}"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cauchy::scenario::{SolverSettings, SourcePiece, SourceSpec};
    use crate::kernels::KernelSpec;

    fn scenario(kernel: KernelSpec, initial: &[(f64, f64)], dt: f64, t_end: f64) -> Scenario {
        Scenario {
            kernel,
            initial: AtomicMeasure::new(initial.iter().copied()).unwrap(),
            growth: GrowthSpec::Constant { c: -1.0 },
            source: SourceSpec::default(),
            solver: SolverSettings::new(Mode::AtomicEuler, dt, t_end),
            c_bar: 10.0,
        }
    }

    #[test]
    fn dirac_at_zero_stays_put() {
        let s = scenario(KernelSpec::Dirac { p: 0.3 }, &[(0.0, 1.0)], 0.01, 1.0);
        let traj = evolve_atomic(&s).unwrap();
        for snap in &traj.snapshots {
            assert_eq!(snap.measure.len(), 1);
            assert_eq!(snap.measure.mass_at_zero(), snap.measure.mass());
            assert!((snap.measure.mass() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn mass_and_mean_conserved() {
        let mut s = scenario(KernelSpec::Dirac { p: 0.3 }, &[(1.0, 0.5), (3.0, 0.5)], 0.01, 2.0);
        s.solver.max_atoms = 64;
        let traj = evolve_atomic(&s).unwrap();
        assert_eq!(traj.snapshots.len(), 201);
        for row in &traj.diagnostics {
            assert!((row.mass - 1.0).abs() < 1e-12);
            assert!((row.mean - 2.0).abs() < 1e-12);
            assert!(row.n_atoms <= 64);
        }
        let v = traj.last().measure.variance();
        assert!((v / (-0.84f64).exp() - 1.0).abs() < 0.02, "{v}");
    }

    #[test]
    fn identity_kernel_is_pure_growth() {
        // T_B[n, n] = ‖n‖n, so ∂ₜn = (h + 1)n
        let mut s = scenario(KernelSpec::Dirac { p: 0.0 }, &[(1.0, 1.0), (2.0, 1.0)], 1e-3, 1.0);
        s.growth = GrowthSpec::AffineCapped { a: -1.0, b: 0.5, xcap: 5.0 };
        let traj = evolve_atomic(&s).unwrap();
        let last = &traj.last().measure;
        assert!((last.weight_at(1.0) - 0.5f64.exp()).abs() < 2e-3);
        assert!((last.weight_at(2.0) - 1.0f64.exp()).abs() < 5e-3);
    }

    #[test]
    fn source_adds_mass() {
        let mut s = scenario(KernelSpec::Dirac { p: 0.3 }, &[(1.0, 1.0)], 0.01, 1.0);
        s.growth = GrowthSpec::Constant { c: -1.0 };
        s.source = SourceSpec {
            pieces: vec![SourcePiece {
                t_start: 0.0,
                t_end: 0.5,
                measure: AtomicMeasure::dirac(2.0).unwrap(),
            }],
        };
        let traj = evolve_atomic(&s).unwrap();
        // with the transfer term frozen over each step the mass gains
        // 1 − e^{−dt} per step while the source is on (dM/dt = 1 exactly)
        let expected = 1.0 + 50.0 * -(-0.01f64).exp_m1();
        assert!((traj.at(0.5).measure.mass() - expected).abs() < 1e-12);
        assert!((traj.last().measure.mass() - expected).abs() < 1e-12);
        assert!((expected - 1.5).abs() < 3e-3);
    }

    #[test]
    fn degenerate_mass_is_reported() {
        let mut s = scenario(KernelSpec::Dirac { p: 0.3 }, &[(1.0, 1.0)], 0.5, 20.0);
        s.growth = GrowthSpec::Constant { c: -5.0 };
        assert!(matches!(
            evolve_atomic(&s),
            Err(XferError::DegenerateMass { .. })
        ));
    }

    #[test]
    fn wrong_mode_is_rejected() {
        let s = scenario(KernelSpec::Dirac { p: 0.3 }, &[(1.0, 1.0)], 0.1, 1.0);
        assert!(evolve_atomic(&s.with_mode(Mode::Particles)).is_err());
    }
}
