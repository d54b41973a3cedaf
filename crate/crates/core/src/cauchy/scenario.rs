//! Scenario description: kernel, initial data, growth rate h, source g and
//! solver settings, with validation of the standing bounds on h and g.

use serde::{Deserialize, Serialize};

use crate::error::{Result, XferError};
use crate::kernels::{make_kernel, KernelSpec, TransferKernel};
use crate::measures::{AtomicMeasure, Compression};

/// Growth rate h(t, x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GrowthSpec {
    Constant { c: f64 },
    /// h(t, x) = a + b·min(x, xcap).
    AffineCapped { a: f64, b: f64, xcap: f64 },
    /// Bilinear interpolation of `values[i][j]` = h(times[i], locations[j]),
    /// extended by constants outside the table.
    Table {
        times: Vec<f64>,
        locations: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

fn interp(knots: &[f64], x: f64) -> (usize, f64) {
    if knots.len() == 1 || x <= knots[0] {
        return (0, 0.0);
    }
    let last = knots.len() - 1;
    if x >= knots[last] {
        return (last - 1, 1.0);
    }
    let i = knots.partition_point(|&k| k <= x) - 1;
    (i, (x - knots[i]) / (knots[i + 1] - knots[i]))
}

impl GrowthSpec {
    pub fn value(&self, t: f64, x: f64) -> f64 {
        match self {
            GrowthSpec::Constant { c } => *c,
            GrowthSpec::AffineCapped { a, b, xcap } => a + b * x.min(*xcap),
            GrowthSpec::Table {
                times,
                locations,
                values,
            } => {
                let at_time = |row: &[f64]| {
                    if locations.len() == 1 {
                        return row[0];
                    }
                    let (j, q) = interp(locations, x);
                    row[j] * (1.0 - q) + row[j + 1] * q
                };
                if times.len() == 1 {
                    return at_time(&values[0]);
                }
                let (i, p) = interp(times, t);
                at_time(&values[i]) * (1.0 - p) + at_time(&values[i + 1]) * p
            }
        }
    }

    /// The constant value when h does not depend on (t, x).
    pub fn constant(&self) -> Option<f64> {
        match self {
            GrowthSpec::Constant { c } => Some(*c),
            GrowthSpec::AffineCapped { a, b, .. } if *b == 0.0 => Some(*a),
            _ => None,
        }
    }

    pub fn is_time_independent(&self) -> bool {
        match self {
            GrowthSpec::Table { times, .. } => times.len() == 1,
            _ => true,
        }
    }

    /// ∫ₛᵗ h(σ, x) dσ, exact for every family (h is piecewise linear in σ).
    pub fn integral(&self, s: f64, t: f64, x: f64) -> f64 {
        match self {
            GrowthSpec::Table { times, .. } if times.len() > 1 => {
                let mut knots = vec![s];
                knots.extend(times.iter().copied().filter(|&k| k > s && k < t));
                knots.push(t);
                knots
                    .windows(2)
                    .map(|w| 0.5 * (w[1] - w[0]) * (self.value(w[0], x) + self.value(w[1], x)))
                    .sum()
            }
            _ => (t - s) * self.value(s, x),
        }
    }

    /// ∫ₜ^{t+dt} exp(∫ₛ^{t+dt} h(σ, x) dσ) ds, the weight a constant source
    /// switched on over one step accumulates by its end.
    pub fn duhamel_weight(&self, t: f64, dt: f64, x: f64) -> f64 {
        if self.is_time_independent() {
            let h = self.value(t, x);
            if h == 0.0 {
                dt
            } else {
                (h * dt).exp_m1() / h
            }
        } else {
            dt * self.integral(t + 0.5 * dt, t + dt, x).exp()
        }
    }

    /// Checks h ≤ C̄_A and |∂ₓh| ≤ C̄_A. Every family is finite on bounded
    /// sets once its parameters are, which gives the local lower bound.
    pub fn validate(&self, c_bar: f64) -> Result<()> {
        let bad = |msg: String| Err(XferError::Config(msg));
        match self {
            GrowthSpec::Constant { c } => {
                if !c.is_finite() {
                    return bad(format!("growth constant c = {c} is not finite"));
                }
                if *c > c_bar {
                    return bad(format!("growth bound h ≤ C̄_A violated: c = {c} > C̄_A = {c_bar}"));
                }
            }
            GrowthSpec::AffineCapped { a, b, xcap } => {
                if !(a.is_finite() && b.is_finite() && xcap.is_finite()) {
                    return bad("affine growth parameters must be finite".into());
                }
                if !(*xcap > 0.0) {
                    return bad(format!("xcap = {xcap} must be positive"));
                }
                if b.abs() > c_bar {
                    return bad(format!(
                        "growth slope bound |∂ₓh| ≤ C̄_A violated: |b| = {} > C̄_A = {c_bar}",
                        b.abs()
                    ));
                }
                let top = a + (b * xcap).max(0.0);
                if top > c_bar {
                    return bad(format!(
                        "growth bound h ≤ C̄_A violated: sup h = {top} > C̄_A = {c_bar}"
                    ));
                }
            }
            GrowthSpec::Table {
                times,
                locations,
                values,
            } => {
                let increasing = |v: &[f64]| {
                    !v.is_empty()
                        && v.iter().all(|x| x.is_finite())
                        && v.windows(2).all(|w| w[0] < w[1])
                };
                if !increasing(times) || !increasing(locations) {
                    return bad("growth table times and locations must be finite and strictly increasing".into());
                }
                if values.len() != times.len() || values.iter().any(|r| r.len() != locations.len()) {
                    return bad(format!(
                        "growth table values must be {} rows of {} entries",
                        times.len(),
                        locations.len()
                    ));
                }
                for row in values {
                    if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                        return bad(format!("growth table value {v} is not finite"));
                    }
                    if let Some(v) = row.iter().find(|&&v| v > c_bar) {
                        return bad(format!(
                            "growth bound h ≤ C̄_A violated: table value {v} > C̄_A = {c_bar}"
                        ));
                    }
                    for (w, x) in row.windows(2).zip(locations.windows(2)) {
                        let q = (w[1] - w[0]).abs() / (x[1] - x[0]);
                        if q > c_bar {
                            return bad(format!(
                                "growth slope bound |∂ₓh| ≤ C̄_A violated: table difference quotient {q} > C̄_A = {c_bar} between x = {} and x = {}",
                                x[0], x[1]
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// g restricted to [t_start, t_end).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourcePiece {
    pub t_start: f64,
    pub t_end: f64,
    pub measure: AtomicMeasure,
}

/// Piecewise-constant-in-time source g.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SourceSpec {
    #[serde(default)]
    pub pieces: Vec<SourcePiece>,
}

impl SourceSpec {
    pub fn is_zero(&self) -> bool {
        self.pieces.iter().all(|p| p.measure.is_empty())
    }

    /// Index of the piece active at time t.
    pub fn active(&self, t: f64) -> Option<usize> {
        self.pieces
            .iter()
            .position(|p| p.t_start <= t && t < p.t_end)
    }

    pub fn at(&self, t: f64) -> Option<&AtomicMeasure> {
        self.active(t).map(|i| &self.pieces[i].measure)
    }

    /// Checks ∫(1 + y²) dg ≤ C̄_A per piece and that pieces do not overlap.
    pub fn validate(&self, c_bar: f64) -> Result<()> {
        let mut spans: Vec<(f64, f64)> = Vec::new();
        for p in &self.pieces {
            if !(p.t_start.is_finite() && p.t_end.is_finite() && p.t_start < p.t_end) {
                return Err(XferError::Config(format!(
                    "source piece [{}, {}) is not a valid time interval",
                    p.t_start, p.t_end
                )));
            }
            let weight = p.measure.integrate(|y| 1.0 + y * y);
            if weight > c_bar {
                return Err(XferError::Config(format!(
                    "source bound ∫(1+y²)dg ≤ C̄_A violated on [{}, {}): {weight} > C̄_A = {c_bar}",
                    p.t_start, p.t_end
                )));
            }
            spans.push((p.t_start, p.t_end));
        }
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = spans.windows(2).find(|w| w[1].0 < w[0].1) {
            return Err(XferError::Config(format!(
                "source pieces [{}, {}) and [{}, {}) overlap",
                w[0].0, w[0].1, w[1].0, w[1].1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    AtomicEuler,
    GridPicard,
    Particles,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::AtomicEuler => "atomic_euler",
            Mode::GridPicard => "grid_picard",
            Mode::Particles => "particles",
        }
    }
}

/// Convolution orientation of the grid mollifier: Γ_ε(y − x) as in the
/// truncated problem, or the mirrored Γ_ε(x − y).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    #[default]
    AsWritten,
    Mirrored,
}

fn default_max_atoms() -> usize {
    256
}
fn default_n_particles() -> usize {
    10_000
}
fn default_eps() -> f64 {
    0.01
}
fn default_nx() -> usize {
    2048
}
fn default_picard_tol() -> f64 {
    1e-9
}
fn default_picard_max() -> usize {
    50
}
fn default_window() -> f64 {
    0.1
}
fn default_snapshot_every() -> usize {
    1
}
fn default_tv_bin() -> f64 {
    0.05
}
fn default_c_bar() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub mode: Mode,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_max_atoms")]
    pub max_atoms: usize,
    #[serde(default)]
    pub compression: Compression,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_particles")]
    pub n_particles: usize,
    /// Particle mode: apply the exchange to both agents of a pair.
    #[serde(default)]
    pub symmetric: bool,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_nx")]
    pub nx: usize,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_picard_max")]
    pub picard_max: usize,
    #[serde(default = "default_window")]
    pub window: f64,
    #[serde(default)]
    pub orientation: Orientation,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: usize,
    /// Bin width used before taking TV between snapshots.
    #[serde(default = "default_tv_bin")]
    pub tv_bin: f64,
    #[serde(default = "default_partitions")]
    pub partitions: usize,
}

fn default_partitions() -> usize {
    1
}

impl SolverSettings {
    pub fn new(mode: Mode, dt: f64, t_end: f64) -> Self {
        Self {
            mode,
            dt,
            t_end,
            max_atoms: default_max_atoms(),
            compression: Compression::Greedy,
            seed: 0,
            n_particles: default_n_particles(),
            symmetric: false,
            eps: default_eps(),
            nx: default_nx(),
            picard_tol: default_picard_tol(),
            picard_max: default_picard_max(),
            window: default_window(),
            orientation: Orientation::AsWritten,
            snapshot_every: default_snapshot_every(),
            tv_bin: default_tv_bin(),
            partitions: default_partitions(),
        }
    }

    /// Step end times 0 < t₁ < … < t_end; the last step is shortened when
    /// t_end is not a multiple of dt.
    pub fn step_times(&self) -> Vec<f64> {
        let n = ((self.t_end / self.dt) * (1.0 - 1e-12)).ceil().max(0.0) as usize;
        (1..=n).map(|k| (k as f64 * self.dt).min(self.t_end)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(XferError::Config(msg.into()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad("t_end must be non-negative");
        }
        if self.t_end / self.dt > 1e8 {
            return bad("t_end / dt exceeds 10⁸ steps");
        }
        if self.max_atoms < 2 {
            return bad("max_atoms must be at least 2");
        }
        if self.snapshot_every < 1 {
            return bad("snapshot_every must be at least 1");
        }
        if !(self.tv_bin > 0.0 && self.tv_bin.is_finite()) {
            return bad("tv_bin must be positive");
        }
        if self.partitions < 1 {
            return bad("partitions must be at least 1");
        }
        match self.mode {
            Mode::GridPicard => {
                if !(self.eps > 0.0 && self.eps < 1.0) {
                    return bad("eps must lie in (0, 1)");
                }
                if self.nx < 16 {
                    return bad("nx must be at least 16");
                }
                if !(self.window > 0.0 && self.window.is_finite()) {
                    return bad("window must be positive");
                }
                if !(self.picard_tol > 0.0) || self.picard_max < 1 {
                    return bad("picard_tol must be positive and picard_max at least 1");
                }
            }
            Mode::Particles => {
                if self.n_particles < 2 {
                    return bad("n_particles must be at least 2");
                }
            }
            Mode::AtomicEuler => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kernel: KernelSpec,
    pub initial: AtomicMeasure,
    pub growth: GrowthSpec,
    #[serde(default)]
    pub source: SourceSpec,
    pub solver: SolverSettings,
    /// The constant C̄_A bounding h, ∂ₓh and the source.
    #[serde(default = "default_c_bar")]
    pub c_bar: f64,
}

impl Scenario {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| XferError::Config(format!("scenario: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        let mut s = self.clone();
        s.solver.mode = mode;
        s
    }

    /// Lints the scenario against every declared invariant and builds the
    /// kernel.
    pub fn validate(&self) -> Result<TransferKernel> {
        if !(self.c_bar > 0.0 && self.c_bar.is_finite()) {
            return Err(XferError::Config(format!(
                "C̄_A = {} must be positive",
                self.c_bar
            )));
        }
        let kernel = make_kernel(self.kernel.clone())
            .map_err(|e| XferError::Config(e.to_string()))?;
        if !(self.initial.mass() > 0.0) {
            return Err(XferError::Config("initial measure has zero mass".into()));
        }
        self.solver.validate()?;
        self.growth.validate(self.c_bar)?;
        self.source.validate(self.c_bar)?;
        if self.solver.mode == Mode::Particles {
            if self.growth.constant().is_none() {
                return Err(XferError::Unsupported(
                    "particle mode needs a constant growth rate".into(),
                ));
            }
            if !self.source.is_zero() {
                return Err(XferError::Unsupported(
                    "particle mode needs a zero source".into(),
                ));
            }
            if self.solver.dt > 1.0 {
                return Err(XferError::InvalidArgument(format!(
                    "particle mode needs dt ≤ 1, got {}",
                    self.solver.dt
                )));
            }
        }
        Ok(kernel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_interpolation_and_integral() {
        let g = GrowthSpec::Table {
            times: vec![0.0, 1.0],
            locations: vec![0.0, 2.0],
            values: vec![vec![0.0, 2.0], vec![1.0, 3.0]],
        };
        assert_eq!(g.value(0.0, 1.0), 1.0);
        assert_eq!(g.value(0.5, 1.0), 1.5);
        assert_eq!(g.value(5.0, 10.0), 3.0);
        assert_eq!(g.value(-1.0, -1.0), 0.0);
        // h(σ, 0) = σ on [0, 1], 1 afterwards
        assert!((g.integral(0.0, 2.0, 0.0) - 1.5).abs() < 1e-15);
        assert!((g.integral(0.5, 1.0, 0.0) - 0.375).abs() < 1e-15);
    }

    #[test]
    fn duhamel_weight_limits() {
        let zero = GrowthSpec::Constant { c: 0.0 };
        assert_eq!(zero.duhamel_weight(0.0, 0.1, 1.0), 0.1);
        let decay = GrowthSpec::Constant { c: -1.0 };
        let w = decay.duhamel_weight(0.0, 0.1, 1.0);
        assert!((w - (1.0 - (-0.1f64).exp())).abs() < 1e-16);
    }

    #[test]
    fn growth_bounds() {
        let ok = GrowthSpec::AffineCapped { a: -1.0, b: 0.5, xcap: 4.0 };
        assert!(ok.validate(10.0).is_ok());
        let steep = GrowthSpec::AffineCapped { a: -1.0, b: 12.0, xcap: 0.5 };
        let err = steep.validate(10.0).unwrap_err().to_string();
        assert!(err.contains("|∂ₓh| ≤ C̄_A"), "{err}");
        let high = GrowthSpec::Constant { c: 11.0 };
        assert!(high.validate(10.0).is_err());
        let table = GrowthSpec::Table {
            times: vec![0.0],
            locations: vec![0.0, 0.1],
            values: vec![vec![0.0, 2.0]],
        };
        assert!(table.validate(10.0).is_err());
    }

    #[test]
    fn source_bounds() {
        let piece = |a: f64, b: f64, y: f64| SourcePiece {
            t_start: a,
            t_end: b,
            measure: AtomicMeasure::new([(y, 1.0)]).unwrap(),
        };
        let ok = SourceSpec { pieces: vec![piece(0.0, 1.0, 1.0), piece(1.0, 2.0, 2.0)] };
        assert!(ok.validate(10.0).is_ok());
        assert_eq!(ok.active(1.0), Some(1));
        assert_eq!(ok.active(2.0), None);
        let heavy = SourceSpec { pieces: vec![piece(0.0, 1.0, 5.0)] };
        assert!(heavy.validate(10.0).is_err());
        let overlap = SourceSpec { pieces: vec![piece(0.0, 1.0, 1.0), piece(0.5, 2.0, 1.0)] };
        assert!(overlap.validate(10.0).is_err());
    }

    #[test]
    fn scenario_json_round_trip() {
        let json = r#"{
            "kernel": {"type": "dirac", "p": 0.3},
            "initial": {"atoms": [[1.0, 0.5], [3.0, 0.5]]},
            "growth": {"type": "constant", "c": -1.0},
            "solver": {"mode": "atomic_euler", "dt": 0.001, "t_end": 5.0}
        }"#;
        let s = Scenario::from_json(json).unwrap();
        assert_eq!(s.solver.max_atoms, 256);
        assert!(s.source.is_zero());
        s.validate().unwrap();
        let back = Scenario::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
        assert_eq!(s.solver.step_times().len(), 5000);
        assert_eq!(*s.solver.step_times().last().unwrap(), 5.0);
    }

    #[test]
    fn particle_restrictions() {
        let mut s = Scenario {
            kernel: KernelSpec::Dirac { p: 0.3 },
            initial: AtomicMeasure::dirac(1.0).unwrap(),
            growth: GrowthSpec::AffineCapped { a: -1.0, b: 0.1, xcap: 1.0 },
            source: SourceSpec::default(),
            solver: SolverSettings::new(Mode::Particles, 0.01, 1.0),
            c_bar: 10.0,
        };
        assert!(matches!(s.validate(), Err(XferError::Unsupported(_))));
        s.growth = GrowthSpec::Constant { c: -1.0 };
        s.solver.dt = 2.0;
        assert!(matches!(s.validate(), Err(XferError::InvalidArgument(_))));
    }
}
