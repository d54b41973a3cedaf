use std::fs;
use std::path::Path;

use anyhow::Result;
use serde::Serialize;
use xfer_core::cauchy::{evolve as run_scheme, Mode, Scenario, Trajectory};
use xfer_core::fixedpoint::{iterate_fixed_point, FixedPointSettings};
use xfer_core::measures::w1_normalized;
use xfer_core::oracles::{moment_ode_solve, MomentOdeState};
use xfer_core::transfer::{
    loglog_slope, mc_error_study, predicted_moments, t_b_auto, t_b_exact, TransferConfig,
};
use xfer_core::{AtomicMeasure, XferError};

use crate::output::{csv_rows, OutDir};
use crate::{ApplyArgs, Common, CompareArgs, McArgs};

/// Reference resolution for `mc` when the exact product is too large.
const MC_REFERENCE_ATOMS: usize = 4096;

fn load(c: &Common) -> Result<(Scenario, Vec<u8>)> {
    let bytes = fs::read(&c.scenario).map_err(|e| {
        XferError::Config(format!("cannot read {}: {e}", c.scenario.display()))
    })?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| XferError::Config(format!("scenario is not UTF-8: {e}")))?;
    let mut s = Scenario::from_json(text)?;
    if let Some(seed) = c.seed {
        s.solver.seed = seed;
    }
    if let Some(m) = c.max_atoms {
        s.solver.max_atoms = m;
    }
    if let Some(dt) = c.dt {
        s.solver.dt = dt;
    }
    if let Some(t) = c.t_end {
        s.solver.t_end = t;
    }
    Ok((s, bytes))
}

fn read_measure(path: &Path) -> Result<AtomicMeasure> {
    let text = fs::read_to_string(path)
        .map_err(|e| XferError::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(AtomicMeasure::from_json(&text)
        .map_err(|e| XferError::Config(format!("{}: {e}", path.display())))?)
}

fn operands(a: &ApplyArgs, s: &Scenario) -> Result<(AtomicMeasure, AtomicMeasure)> {
    let u = match &a.u {
        Some(p) => read_measure(p)?,
        None => s.initial.clone(),
    };
    let v = match &a.v {
        Some(p) => read_measure(p)?,
        None => u.clone(),
    };
    Ok((u, v))
}

pub fn apply(a: &ApplyArgs) -> Result<()> {
    let (s, bytes) = load(&a.common)?;
    let kernel = s.validate()?;
    let (u, v) = operands(a, &s)?;
    let config = TransferConfig::default();
    let out = match a.common.max_atoms {
        Some(m) => t_b_auto(&kernel, &u, &v, m, &config)?.0,
        None => t_b_exact(&kernel, &u, &v, &config)?,
    };
    let json = out.to_json()?;
    match &a.common.out {
        Some(dir) => {
            let mut d = OutDir::create(dir)?;
            d.write("applied.json", &json)?;
            let mut csv = Vec::new();
            out.write_csv(&mut csv)?;
            d.write("applied.csv", csv)?;
            d.finish("apply", &bytes, s.solver.seed)?;
            println!(
                "{} atoms, mass {}, mean {}, variance {}",
                out.len(),
                out.mass(),
                out.mean(),
                out.variance()
            );
        }
        None => println!("{json}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct MomentRow {
    moment: u32,
    predicted: f64,
    actual: f64,
    relative_error: f64,
}

pub fn moments(a: &ApplyArgs) -> Result<()> {
    let (s, bytes) = load(&a.common)?;
    let kernel = s.validate()?;
    let (u, v) = operands(a, &s)?;
    let out = t_b_exact(&kernel, &u, &v, &TransferConfig::default())?;
    let p = predicted_moments(&kernel, &u, &v);
    let rows: Vec<MomentRow> = [p.m0, p.m1, p.m2]
        .into_iter()
        .enumerate()
        .map(|(k, predicted)| {
            let actual = out.moment(k as u32).expect("order ≤ 2");
            MomentRow {
                moment: k as u32,
                predicted,
                actual,
                relative_error: (actual - predicted).abs() / predicted.abs().max(f64::MIN_POSITIVE),
            }
        })
        .collect();
    let csv = csv_rows(&rows)?;
    print!("{}", String::from_utf8_lossy(&csv));
    if let Some(dir) = &a.common.out {
        let mut d = OutDir::create(dir)?;
        d.write("moments.csv", csv)?;
        d.finish("moments", &bytes, s.solver.seed)?;
    }
    Ok(())
}

pub fn fixpoint(c: &Common) -> Result<()> {
    let (s, bytes) = load(c)?;
    let kernel = s.validate()?;
    let u0 = s.initial.normalized()?;
    let mut settings = FixedPointSettings::default();
    if let Some(m) = c.max_atoms {
        settings.max_atoms = m;
    }
    let report = iterate_fixed_point(&kernel, &u0, &settings)?;
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(dir) = &c.out {
        let mut d = OutDir::create(dir)?;
        d.write("fixpoint.json", &json)?;
        d.write("iterations.csv", csv_rows(&report.history)?)?;
        d.finish("fixpoint", &bytes, s.solver.seed)?;
    }
    println!(
        "{:?} after {} iterations: w1_step {:e}, mean {}, variance {}",
        report.classification, report.iterations, report.w1_step, report.mean, report.variance
    );
    if let Some(v) = report.predicted_variance {
        println!("predicted variance {v}");
    }
    Ok(())
}

#[derive(Serialize)]
struct SnapshotFile<'a> {
    t: f64,
    #[serde(flatten)]
    measure: &'a AtomicMeasure,
}

fn write_snapshots(d: &mut OutDir, traj: &Trajectory, dir: &str) -> Result<()> {
    for (k, snap) in traj.snapshots.iter().enumerate() {
        let file = SnapshotFile {
            t: snap.t,
            measure: &snap.measure,
        };
        d.write(&format!("{dir}/{k:06}.json"), serde_json::to_string(&file)?)?;
    }
    Ok(())
}

pub fn evolve(c: &Common) -> Result<()> {
    let (s, bytes) = load(c)?;
    let traj = run_scheme(&s)?;
    let csv = traj.csv_string()?;
    match &c.out {
        Some(dir) => {
            let mut d = OutDir::create(dir)?;
            d.write("trajectory.csv", &csv)?;
            write_snapshots(&mut d, &traj, "snapshots")?;
            d.write("stats.json", serde_json::to_string_pretty(&traj.stats)?)?;
            d.finish("evolve", &bytes, s.solver.seed)?;
            let last = traj.diagnostics.last().expect("t = 0 row");
            println!(
                "{}: {} steps to t = {}, mass {}, mean {}, variance {}",
                s.solver.mode.name(),
                traj.stats.steps,
                last.t,
                last.mass,
                last.mean,
                last.variance
            );
        }
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn mc(a: &McArgs) -> Result<()> {
    let (s, bytes) = load(&a.common)?;
    let kernel = s.validate()?;
    let u = &s.initial;
    let config = TransferConfig::default();
    let reference = match t_b_exact(&kernel, u, u, &config) {
        Ok(m) => m,
        Err(XferError::Capacity { .. }) => {
            let atoms = a.common.max_atoms.unwrap_or(MC_REFERENCE_ATOMS);
            t_b_auto(&kernel, u, u, atoms, &config)?.0
        }
        Err(e) => return Err(e.into()),
    };
    let rows = mc_error_study(&kernel, u, u, &reference, &a.sizes, a.reps, s.solver.seed)?;
    let csv = csv_rows(&rows)?;
    print!("{}", String::from_utf8_lossy(&csv));
    if rows.len() >= 2 {
        println!("slope {}", loglog_slope(&rows));
    }
    if let Some(dir) = &a.common.out {
        let mut d = OutDir::create(dir)?;
        d.write("mc.csv", csv)?;
        d.finish("mc", &bytes, s.solver.seed)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scheme {
    Atomic,
    Grid,
    Particles,
    Ode,
}

impl Scheme {
    fn parse(name: &str) -> Result<Self> {
        Ok(match name.trim() {
            "atomic" => Scheme::Atomic,
            "grid" => Scheme::Grid,
            "particles" => Scheme::Particles,
            "ode" => Scheme::Ode,
            other => {
                return Err(XferError::Config(format!(
                    "unknown scheme {other:?}; expected atomic, grid, particles or ode"
                ))
                .into())
            }
        })
    }

    fn name(self) -> &'static str {
        match self {
            Scheme::Atomic => "atomic",
            Scheme::Grid => "grid",
            Scheme::Particles => "particles",
            Scheme::Ode => "ode",
        }
    }

    fn mode(self) -> Option<Mode> {
        match self {
            Scheme::Atomic => Some(Mode::AtomicEuler),
            Scheme::Grid => Some(Mode::GridPicard),
            Scheme::Particles => Some(Mode::Particles),
            Scheme::Ode => None,
        }
    }
}

enum Output {
    Measures(Trajectory),
    Moments(Vec<MomentOdeState>),
}

/// (t, mass, mean, variance) and the measure when there is one.
type Point<'a> = (f64, f64, f64, f64, Option<&'a AtomicMeasure>);

impl Output {
    fn points(&self) -> Vec<Point<'_>> {
        match self {
            Output::Measures(traj) => traj
                .snapshots
                .iter()
                .map(|s| {
                    let m = &s.measure;
                    (s.t, m.mass(), m.mean(), m.variance(), Some(m))
                })
                .collect(),
            Output::Moments(states) => states
                .iter()
                .map(|s| (s.t, s.m0, s.mean(), s.variance(), None))
                .collect(),
        }
    }
}

fn run(s: &Scenario, scheme: Scheme) -> Result<Output> {
    match scheme.mode() {
        Some(mode) => Ok(Output::Measures(run_scheme(&s.with_mode(mode))?)),
        None => {
            let kernel = s.validate()?;
            let c = s.growth.constant().filter(|_| s.source.is_zero()).ok_or_else(|| {
                XferError::Unsupported("the moment ODE needs g = 0 and a constant h".into())
            })?;
            let u = &s.initial;
            Ok(Output::Moments(moment_ode_solve(
                &kernel,
                u.mass(),
                u.moment(1)?,
                u.moment(2)?,
                c,
                s.solver.t_end,
                s.solver.dt,
            )?))
        }
    }
}

#[derive(Serialize)]
struct CompareRow {
    t: f64,
    reference: &'static str,
    scheme: &'static str,
    w1: Option<f64>,
    mass_error: f64,
    mean_error: f64,
    variance_error: f64,
}

fn discrepancies(
    reference: (Scheme, &Output),
    other: (Scheme, &Output),
) -> Result<Vec<CompareRow>> {
    let theirs = other.1.points();
    let mut rows = Vec::new();
    for (t, mass, mean, var, measure) in reference.1.points() {
        let tol = 1e-9 * t.max(1.0);
        let Some(&(_, m2, mean2, var2, measure2)) = theirs.iter().find(|p| (p.0 - t).abs() <= tol)
        else {
            continue;
        };
        let w1 = match (measure, measure2) {
            (Some(a), Some(b)) => Some(w1_normalized(a, b)?),
            _ => None,
        };
        rows.push(CompareRow {
            t,
            reference: reference.0.name(),
            scheme: other.0.name(),
            w1,
            mass_error: (mass - m2).abs(),
            mean_error: (mean - mean2).abs(),
            variance_error: (var - var2).abs(),
        });
    }
    Ok(rows)
}

pub fn compare(a: &CompareArgs) -> Result<()> {
    let (s, bytes) = load(&a.common)?;
    s.validate()?;
    let schemes = a
        .schemes
        .iter()
        .map(|n| Scheme::parse(n))
        .collect::<Result<Vec<_>>>()?;
    if schemes.len() < 2 {
        return Err(XferError::Config("compare needs at least two schemes".into()).into());
    }
    let outputs = std::thread::scope(|scope| {
        let handles: Vec<_> = schemes
            .iter()
            .map(|&scheme| {
                let s = &s;
                scope.spawn(move || run(s, scheme))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scheme thread panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut rows = Vec::new();
    for k in 1..schemes.len() {
        rows.extend(discrepancies(
            (schemes[0], &outputs[0]),
            (schemes[k], &outputs[k]),
        )?);
    }
    let csv = csv_rows(&rows)?;
    match &a.common.out {
        Some(dir) => {
            let mut d = OutDir::create(dir)?;
            d.write("compare.csv", &csv)?;
            for (scheme, out) in schemes.iter().zip(&outputs) {
                if let Output::Measures(traj) = out {
                    d.write(&format!("trajectory_{}.csv", scheme.name()), traj.csv_string()?)?;
                }
            }
            d.finish("compare", &bytes, s.solver.seed)?;
            for k in 1..schemes.len() {
                let name = schemes[k].name();
                let mine = rows.iter().filter(|r| r.scheme == name);
                let var_err = mine.clone().map(|r| r.variance_error).fold(0.0, f64::max);
                match mine.filter_map(|r| r.w1).reduce(f64::max) {
                    Some(w1) => println!(
                        "{} vs {name}: max w1 {w1}, max variance error {var_err}",
                        schemes[0].name()
                    ),
                    None => println!("{} vs {name}: max variance error {var_err}", schemes[0].name()),
                }
            }
        }
        None => print!("{}", String::from_utf8_lossy(&csv)),
    }
    Ok(())
}

pub fn validate(c: &Common) -> Result<()> {
    let (s, _) = load(c)?;
    let kernel = s.validate()?;
    println!(
        "ok: {} scenario, kernel λ₁ = {}, λ₂ = {}, {} steps",
        s.solver.mode.name(),
        kernel.lambda1(),
        kernel.lambda2(),
        s.solver.step_times().len()
    );
    Ok(())
}
