use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, XferError};
use crate::kernels::TransferKernel;
use crate::measures::{AtomicMeasure, MeasureSampler};

use super::scenario::{Mode, Scenario};
use super::{is_snapshot_step, require_mode, Snapshot, SolverStats, Trajectory};

/// N exchangeable agents carrying traits xᵢ, all with weight M(t)/N where
/// M(t) = M(0)e^{(c+1)t} for the constant growth rate c.
pub struct ParticleSystem<'k> {
    traits: Vec<f64>,
    scratch: Vec<f64>,
    sampler: MeasureSampler<'k>,
    rng: ChaCha8Rng,
    symmetric: bool,
    mass0: f64,
    rate: f64,
}

impl<'k> ParticleSystem<'k> {
    /// Draws `n` agents from the normalized initial measure.
    pub fn new(
        kernel: &'k TransferKernel,
        initial: &AtomicMeasure,
        n: usize,
        growth_rate: f64,
        symmetric: bool,
        seed: u64,
    ) -> Result<Self> {
        if n < 2 {
            return Err(XferError::InvalidArgument(
                "at least two particles are needed".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let traits = initial.sample(n, &mut rng)?;
        Ok(Self {
            scratch: traits.clone(),
            traits,
            sampler: kernel.sampler(),
            rng,
            symmetric,
            mass0: initial.mass(),
            rate: growth_rate + 1.0,
        })
    }

    pub fn traits(&self) -> &[f64] {
        &self.traits
    }

    pub fn total_mass(&self, t: f64) -> f64 {
        self.mass0 * (self.rate * t).exp()
    }

    fn partner(&mut self, i: usize) -> usize {
        let j = self.rng.random_range(0..self.traits.len() - 1);
        if j >= i {
            j + 1
        } else {
            j
        }
    }

    /// Advances by `dt` ≤ 1.
    ///
    /// One-sided: each agent independently, with probability dt, meets a
    /// uniform partner j ≠ i and becomes xᵢ(1−Z₁) + xⱼZ₂, with all agents
    /// read from the state at the start of the step. Symmetric: each agent
    /// initiates with probability dt/2, so every agent takes part at rate 1,
    /// and both members of the pair are updated in place; their sum is
    /// unchanged.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt <= 1.0) {
            return Err(XferError::InvalidArgument(format!(
                "particle step needs 0 < dt ≤ 1, got {dt}"
            )));
        }
        let n = self.traits.len();
        if self.symmetric {
            let p = 0.5 * dt;
            for i in 0..n {
                if self.rng.random::<f64>() < p {
                    let j = self.partner(i);
                    let z1 = self.sampler.draw(&mut self.rng);
                    let z2 = self.sampler.draw(&mut self.rng);
                    let (xi, xj) = (self.traits[i], self.traits[j]);
                    let (gi, gj) = (xi * z1, xj * z2);
                    self.traits[i] = xi - gi + gj;
                    self.traits[j] = xj - gj + gi;
                }
            }
        } else {
            self.scratch.copy_from_slice(&self.traits);
            for i in 0..n {
                if self.rng.random::<f64>() < dt {
                    let j = self.partner(i);
                    let z1 = self.sampler.draw(&mut self.rng);
                    let z2 = self.sampler.draw(&mut self.rng);
                    self.traits[i] = self.scratch[i] * (1.0 - z1) + self.scratch[j] * z2;
                }
            }
        }
        Ok(())
    }

    /// Empirical measure of the agents, carrying the total mass at time t.
    pub fn measure(&self, t: f64) -> Result<AtomicMeasure> {
        let w = self.total_mass(t) / self.traits.len() as f64;
        AtomicMeasure::new(self.traits.iter().map(|&x| (x.max(0.0), w)))
    }
}

/// Stochastic particle scheme; requires g ≡ 0 and a constant growth rate.
pub fn evolve_particles(scenario: &Scenario) -> Result<Trajectory> {
    require_mode(scenario, Mode::Particles)?;
    let kernel = scenario.validate()?;
    let settings = &scenario.solver;
    let c = scenario
        .growth
        .constant()
        .ok_or_else(|| XferError::Unsupported("particle mode needs a constant growth rate".into()))?;
    let mut system = ParticleSystem::new(
        &kernel,
        &scenario.initial,
        settings.n_particles,
        c,
        settings.symmetric,
        settings.seed,
    )?;
    let times = settings.step_times();
    let mut snapshots = vec![Snapshot {
        t: 0.0,
        measure: system.measure(0.0)?,
    }];
    let mut t = 0.0;
    for (k, &t_next) in times.iter().enumerate() {
        system.step(t_next - t)?;
        t = t_next;
        if is_snapshot_step(k + 1, times.len(), settings.snapshot_every) {
            snapshots.push(Snapshot {
                t,
                measure: system.measure(t)?,
            });
        }
    }
    let stats = SolverStats {
        steps: times.len(),
        ..SolverStats::default()
    };
    Trajectory::new(Mode::Particles, settings.seed, snapshots, settings.tv_bin, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cauchy::scenario::{GrowthSpec, SolverSettings, SourceSpec};
    use crate::kernels::KernelSpec;

    fn scenario(kernel: KernelSpec, n: usize, dt: f64, t_end: f64) -> Scenario {
        Scenario {
            kernel,
            initial: AtomicMeasure::new([(1.0, 0.5), (3.0, 0.5)]).unwrap(),
            growth: GrowthSpec::Constant { c: -1.0 },
            source: SourceSpec::default(),
            solver: SolverSettings {
                n_particles: n,
                snapshot_every: 10,
                ..SolverSettings::new(Mode::Particles, dt, t_end)
            },
            c_bar: 10.0,
        }
    }

    #[test]
    fn identity_kernel_never_moves() {
        let k = TransferKernel::dirac(0.0).unwrap();
        let init = AtomicMeasure::new([(1.0, 0.5), (3.0, 0.5)]).unwrap();
        let mut sys = ParticleSystem::new(&k, &init, 1000, -1.0, false, 3).unwrap();
        let before = sys.traits().to_vec();
        for _ in 0..50 {
            sys.step(0.1).unwrap();
        }
        assert_eq!(sys.traits(), &before[..]);
    }

    #[test]
    fn symmetric_mode_conserves_sum() {
        let k = TransferKernel::from_atoms(&[(0.1, 0.3), (0.45, 0.4), (0.9, 0.3)]).unwrap();
        let init = AtomicMeasure::new([(1.0, 0.5), (3.0, 0.5)]).unwrap();
        let mut sys = ParticleSystem::new(&k, &init, 2000, -1.0, true, 9).unwrap();
        let s0: f64 = sys.traits().iter().sum();
        for _ in 0..200 {
            sys.step(0.05).unwrap();
            let s: f64 = sys.traits().iter().sum();
            assert!((s - s0).abs() <= 1e-12 * s0, "{s} vs {s0}");
        }
    }

    #[test]
    fn variance_decay_matches_moment_equation() {
        let s = scenario(KernelSpec::Dirac { p: 0.3 }, 100_000, 0.01, 5.0);
        let traj = evolve_particles(&s).unwrap();
        let last = traj.last();
        assert!((last.t - 5.0).abs() < 1e-12);
        let v = last.measure.variance();
        assert!((v / (-2.1f64).exp() - 1.0).abs() < 0.05, "{v}");
        assert!((last.measure.mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn seeded_runs_repeat() {
        let s = scenario(KernelSpec::uniform(16), 500, 0.05, 1.0);
        let a = evolve_particles(&s).unwrap();
        let b = evolve_particles(&s).unwrap();
        assert_eq!(a.csv_string().unwrap(), b.csv_string().unwrap());
        let mut other = s.clone();
        other.solver.seed = 1;
        assert_ne!(a.csv_string().unwrap(), evolve_particles(&other).unwrap().csv_string().unwrap());
    }

    #[test]
    fn restrictions() {
        let mut s = scenario(KernelSpec::Dirac { p: 0.3 }, 10, 0.01, 1.0);
        s.growth = GrowthSpec::AffineCapped { a: 0.0, b: 1.0, xcap: 1.0 };
        assert!(matches!(evolve_particles(&s), Err(XferError::Unsupported(_))));
        let mut s = scenario(KernelSpec::Dirac { p: 0.3 }, 10, 1.5, 3.0);
        s.solver.dt = 1.5;
        assert!(matches!(evolve_particles(&s), Err(XferError::InvalidArgument(_))));
    }
}
