//! Picard scheme for the mollified, truncated problem on a uniform grid.

use crate::error::{Result, XferError};
use crate::kernels::TransferKernel;
use crate::measures::{AtomicMeasure, Compression};
use crate::transfer::{t_b_auto, TransferConfig};

use super::scenario::{Mode, Orientation, Scenario};
use super::{is_snapshot_step, require_mode, Snapshot, SolverStats, Trajectory, MIN_MASS};

/// CDF of the mollifier Γ₁: the triangular bump on (1, 2) peaking at 1.5
/// with height 2.
pub fn mollifier_cdf(s: f64) -> f64 {
    if s <= 1.0 {
        0.0
    } else if s <= 1.5 {
        2.0 * (s - 1.0) * (s - 1.0)
    } else if s < 2.0 {
        1.0 - 2.0 * (2.0 - s) * (2.0 - s)
    } else {
        1.0
    }
}

/// Cells of width `hx` covering [ε, 1/ε].
struct Grid {
    eps: f64,
    lo: f64,
    hx: f64,
    nx: usize,
    orientation: Orientation,
}

impl Grid {
    fn edge(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.hx
    }

    fn mid(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.hx
    }

    /// Adds the density of (Γ_ε ∗ μ)·1_{[ε, 1/ε]} to `out`. Cell masses are
    /// exact integrals of the mollified atoms, so ε may be smaller than a
    /// cell.
    fn deposit(&self, atoms: impl Iterator<Item = (f64, f64)>, out: &mut [f64]) {
        let eps = self.eps;
        for (y, w) in atoms {
            let (a, b) = match self.orientation {
                Orientation::AsWritten => (y - 2.0 * eps, y - eps),
                Orientation::Mirrored => (y + eps, y + 2.0 * eps),
            };
            let hi = self.edge(self.nx);
            if b <= self.lo || a >= hi {
                continue;
            }
            let first = (((a - self.lo) / self.hx).floor().max(0.0)) as usize;
            let last = ((((b - self.lo) / self.hx).floor()) as usize).min(self.nx - 1);
            for i in first..=last {
                let (e0, e1) = (self.edge(i), self.edge(i + 1));
                let cell = match self.orientation {
                    Orientation::AsWritten => {
                        mollifier_cdf((y - e0) / eps) - mollifier_cdf((y - e1) / eps)
                    }
                    Orientation::Mirrored => {
                        mollifier_cdf((e1 - y) / eps) - mollifier_cdf((e0 - y) / eps)
                    }
                };
                if cell > 0.0 {
                    out[i] += w * cell / self.hx;
                }
            }
        }
    }

    fn mass(&self, density: &[f64]) -> f64 {
        density.iter().sum::<f64>() * self.hx
    }

    /// One atom per non-empty cell, at the cell midpoint.
    fn to_measure(&self, density: &[f64]) -> Result<AtomicMeasure> {
        AtomicMeasure::new(
            density
                .iter()
                .enumerate()
                .filter(|(_, &d)| d > 0.0)
                .map(|(i, &d)| (self.mid(i), d * self.hx)),
        )
    }
}

struct Transfer<'a> {
    grid: &'a Grid,
    kernel: &'a TransferKernel,
    max_atoms: usize,
    config: TransferConfig,
}

impl Transfer<'_> {
    /// Density of (Γ_ε ∗ 𝕋_B[n, n])·1/‖n‖ on the grid.
    fn apply(&self, density: &[f64], t: f64) -> Result<Vec<f64>> {
        let n = self.grid.to_measure(density)?;
        let mass = n.mass();
        if !(mass >= MIN_MASS) {
            return Err(XferError::DegenerateMass { t, mass });
        }
        // lattice compression keeps the sweep map continuous; with greedy
        // merging Picard sweeps stall instead of contracting
        let (tr, _) = t_b_auto(self.kernel, &n, &n, self.max_atoms, &self.config)?;
        let mut out = vec![0.0; density.len()];
        self.grid
            .deposit(tr.iter().map(|(x, w)| (x, w / mass)), &mut out);
        Ok(out)
    }
}

/// Picard iteration on the mild form of the truncated problem, window by
/// window.
///
/// On a window starting from the density n₀ at time T₀ with nodes
/// T₀ = t₀ < … < t_K, the iterate is updated through the exact recursion
///
/// ```text
/// n_{i+1} = e^{∫_{t_i}^{t_{i+1}} h} n_i + Δt_i · e^{∫_{m_i}^{t_{i+1}} h} (G(m_i) + F((n_i + n_{i+1})/2))
/// ```
///
/// which is the midpoint rule for the time integral, where m_i is the
/// midpoint of the step, G the mollified source and F the mollified
/// transfer term normalized by the mass. Iteration stops when the relative
/// sup-norm change is at most `picard_tol` or after `picard_max` sweeps. If
/// the change grows three sweeps in a row the window is halved and
/// restarted.
pub fn evolve_grid_picard(scenario: &Scenario) -> Result<Trajectory> {
    require_mode(scenario, Mode::GridPicard)?;
    let kernel = scenario.validate()?;
    let settings = &scenario.solver;
    let eps = settings.eps;
    let grid = Grid {
        eps,
        lo: eps,
        hx: (1.0 / eps - eps) / settings.nx as f64,
        nx: settings.nx,
        orientation: settings.orientation,
    };
    let transfer = Transfer {
        grid: &grid,
        kernel: &kernel,
        max_atoms: settings.max_atoms.max(settings.nx),
        config: TransferConfig {
            partitions: settings.partitions,
            compression: Compression::Lattice,
            ..TransferConfig::default()
        },
    };
    // mollified source pieces
    let sources: Vec<Vec<f64>> = scenario
        .source
        .pieces
        .iter()
        .map(|p| {
            let mut d = vec![0.0; grid.nx];
            grid.deposit(p.measure.iter(), &mut d);
            d
        })
        .collect();
    let source_at = |t: f64| scenario.source.active(t).map(|i| &sources[i]);

    let mut state = vec![0.0; grid.nx];
    grid.deposit(scenario.initial.iter(), &mut state);
    if !(grid.mass(&state) >= MIN_MASS) {
        return Err(XferError::DegenerateMass {
            t: 0.0,
            mass: grid.mass(&state),
        });
    }

    let times = settings.step_times();
    let mut snapshots = vec![Snapshot {
        t: 0.0,
        measure: grid.to_measure(&state)?,
    }];
    let mut stats = SolverStats {
        steps: times.len(),
        ..SolverStats::default()
    };
    let mut window = settings.window;
    let mut done = 0;
    while done < times.len() {
        let t0 = if done == 0 { 0.0 } else { times[done - 1] };
        let nodes = loop {
            let k = ((window / settings.dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
            let end = (done + k).min(times.len());
            let mut node_times = vec![t0];
            node_times.extend_from_slice(&times[done..end]);
            match solve_window(&grid, &transfer, scenario, &state, &node_times, &source_at, &mut stats)? {
                Some(nodes) => break nodes,
                None => {
                    window *= 0.5;
                    stats.window_halvings += 1;
                    if window < settings.dt {
                        return Err(XferError::WindowTooLarge { window: window * 2.0 });
                    }
                }
            }
        };
        stats.windows += 1;
        for (i, density) in nodes.iter().enumerate().skip(1) {
            let step = done + i;
            if is_snapshot_step(step, times.len(), settings.snapshot_every) {
                snapshots.push(Snapshot {
                    t: times[step - 1],
                    measure: grid.to_measure(density)?,
                });
            }
        }
        done += nodes.len() - 1;
        state = nodes.into_iter().last().expect("window has nodes");
        let mass = grid.mass(&state);
        if !(mass >= MIN_MASS) {
            return Err(XferError::DegenerateMass {
                t: times[done - 1],
                mass,
            });
        }
    }
    stats.window = window;
    Trajectory::new(Mode::GridPicard, settings.seed, snapshots, settings.tv_bin, stats)
}

/// Runs the Picard sweeps on one window. `None` signals non-contraction.
fn solve_window<'s>(
    grid: &Grid,
    transfer: &Transfer,
    scenario: &Scenario,
    start: &[f64],
    times: &[f64],
    source_at: &dyn Fn(f64) -> Option<&'s Vec<f64>>,
    stats: &mut SolverStats,
) -> Result<Option<Vec<Vec<f64>>>> {
    let settings = &scenario.solver;
    let growth = &scenario.growth;
    let k = times.len() - 1;
    let mids: Vec<f64> = times.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    // per-step propagators e^{∫h} over the whole step and its second half
    let (full, half): (Vec<Vec<f64>>, Vec<Vec<f64>>) = (0..k)
        .map(|i| {
            let f = (0..grid.nx)
                .map(|c| growth.integral(times[i], times[i + 1], grid.mid(c)).exp())
                .collect();
            let h = (0..grid.nx)
                .map(|c| growth.integral(mids[i], times[i + 1], grid.mid(c)).exp())
                .collect();
            (f, h)
        })
        .unzip();

    let mut nodes: Vec<Vec<f64>> = vec![start.to_vec(); k + 1];
    let mut last_change = f64::INFINITY;
    let mut growing = 0;
    for _ in 0..settings.picard_max {
        stats.picard_iterations += 1;
        let forcing: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                let mid: Vec<f64> = nodes[i]
                    .iter()
                    .zip(&nodes[i + 1])
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect();
                let mut f = transfer.apply(&mid, mids[i])?;
                if let Some(g) = source_at(mids[i]) {
                    f.iter_mut().zip(g).for_each(|(f, g)| *f += g);
                }
                Ok(f)
            })
            .collect::<Result<_>>()?;
        let mut next = Vec::with_capacity(k + 1);
        next.push(start.to_vec());
        for i in 0..k {
            let dt = times[i + 1] - times[i];
            let prev = &next[i];
            let n: Vec<f64> = (0..grid.nx)
                .map(|c| full[i][c] * prev[c] + dt * half[i][c] * forcing[i][c])
                .collect();
            next.push(n);
        }
        let scale = next
            .iter()
            .flat_map(|n| n.iter())
            .fold(0.0f64, |m, &x| m.max(x.abs()));
        let change = next
            .iter()
            .zip(&nodes)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0f64, f64::max)
            / scale.max(f64::MIN_POSITIVE);
        nodes = next;
        if change <= settings.picard_tol {
            return Ok(Some(nodes));
        }
        if change > last_change {
            growing += 1;
            if growing >= 3 {
                return Ok(None);
            }
        } else {
            growing = 0;
        }
        last_change = change;
    }
    stats.unconverged_windows += 1;
    Ok(Some(nodes))
}
