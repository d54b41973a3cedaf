//! Transfer kernels: the law on [0, 1] of the fraction of trait a cell sends
//! to its partner, always held in atomic form.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Result, XferError};
use crate::measures::{AtomicMeasure, MeasureSampler};
use crate::sum::exact_sum;

pub const DEFAULT_QUADRATURE_NODES: usize = 512;

fn default_nodes() -> usize {
    DEFAULT_QUADRATURE_NODES
}

/// How a kernel was specified. Serialized as the `kernel` object of a
/// scenario file, e.g. `{"type":"dirac","p":0.3}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum KernelSpec {
    /// Deterministic transfer of the fraction `p`.
    Dirac { p: f64 },
    Atoms { atoms: Vec<(f64, f64)> },
    Density {
        #[serde(flatten)]
        family: DensityFamily,
        #[serde(default = "default_nodes")]
        nodes: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum DensityFamily {
    Uniform,
    Beta { a: f64, b: f64 },
    /// Piecewise-linear density through `(z, value)` knots, zero outside.
    Table { table: Vec<(f64, f64)> },
}

impl KernelSpec {
    pub fn uniform(nodes: usize) -> Self {
        KernelSpec::Density {
            family: DensityFamily::Uniform,
            nodes,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransferKernel {
    atoms: AtomicMeasure,
    spec: KernelSpec,
    lambda1: f64,
    lambda2: f64,
    mass_at_0: f64,
    mass_at_1: f64,
}

impl TransferKernel {
    pub fn new(spec: KernelSpec) -> Result<Self> {
        make_kernel(spec)
    }

    pub fn dirac(p: f64) -> Result<Self> {
        make_kernel(KernelSpec::Dirac { p })
    }

    pub fn from_atoms(atoms: &[(f64, f64)]) -> Result<Self> {
        make_kernel(KernelSpec::Atoms {
            atoms: atoms.to_vec(),
        })
    }

    pub fn atoms(&self) -> &AtomicMeasure {
        &self.atoms
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    /// ∫ z dB.
    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    /// ∫ z² dB.
    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn variance(&self) -> f64 {
        self.lambda2 - self.lambda1 * self.lambda1
    }

    pub fn mass_at_0(&self) -> f64 {
        self.mass_at_0
    }

    pub fn mass_at_1(&self) -> f64 {
        self.mass_at_1
    }

    pub fn is_single_atom(&self) -> bool {
        self.atoms.len() == 1
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn sampler(&self) -> MeasureSampler<'_> {
        self.atoms
            .sampler()
            .expect("kernel has unit mass by construction")
    }
}

/// One draw z ∈ [0, 1] from the kernel.
pub fn kernel_sample<R: Rng + ?Sized>(kernel: &TransferKernel, rng: &mut R) -> f64 {
    kernel.sampler().draw(rng)
}

pub fn make_kernel(spec: KernelSpec) -> Result<TransferKernel> {
    let pairs: Vec<(f64, f64)> = match &spec {
        KernelSpec::Dirac { p } => {
            if !(0.0..=1.0).contains(p) {
                return Err(XferError::InvalidSpec(format!("p = {p} not in [0, 1]")));
            }
            vec![(*p, 1.0)]
        }
        KernelSpec::Atoms { atoms } => {
            if atoms.is_empty() {
                return Err(XferError::InvalidSpec("no kernel atoms".into()));
            }
            for &(z, w) in atoms {
                if !(0.0..=1.0).contains(&z) {
                    return Err(XferError::InvalidSpec(format!("atom at {z} outside [0, 1]")));
                }
                if !(w >= 0.0 && w.is_finite()) {
                    return Err(XferError::InvalidSpec(format!("atom weight {w} at {z}")));
                }
            }
            let total = exact_sum(atoms.iter().map(|a| a.1));
            if (total - 1.0).abs() > 1e-9 {
                return Err(XferError::InvalidSpec(format!(
                    "kernel atoms have total mass {total}, expected 1"
                )));
            }
            atoms.iter().map(|&(z, w)| (z, w / total)).collect()
        }
        KernelSpec::Density { family, nodes } => discretize(family, *nodes)?,
    };
    let atoms = AtomicMeasure::new(pairs)
        .map_err(|e| XferError::InvalidSpec(e.to_string()))?;
    let lambda1 = atoms.moment(1)?;
    let lambda2 = atoms.moment(2)?;
    let mass_at_0 = atoms.mass_at_zero();
    let mass_at_1 = atoms.weight_at(1.0);
    Ok(TransferKernel {
        atoms,
        spec,
        lambda1,
        lambda2,
        mass_at_0,
        mass_at_1,
    })
}

/// Cell integrals of the density on `nodes` uniform cells, placed at the
/// cell midpoints and renormalized to unit mass.
fn discretize(family: &DensityFamily, nodes: usize) -> Result<Vec<(f64, f64)>> {
    if nodes == 0 {
        return Err(XferError::InvalidSpec("quadrature_nodes must be positive".into()));
    }
    let h = 1.0 / nodes as f64;
    let edges: Vec<f64> = (0..=nodes).map(|i| i as f64 * h).collect();
    let cells: Vec<f64> = match family {
        DensityFamily::Uniform => vec![h; nodes],
        DensityFamily::Beta { a, b } => {
            if !(*a > 0.0 && *b > 0.0 && a.is_finite() && b.is_finite()) {
                return Err(XferError::InvalidSpec(format!(
                    "beta parameters ({a}, {b}) must be positive"
                )));
            }
            let cdf: Vec<f64> = edges.iter().map(|&x| beta_reg(*a, *b, x)).collect();
            cdf.windows(2).map(|c| (c[1] - c[0]).max(0.0)).collect()
        }
        DensityFamily::Table { table } => {
            validate_table(table)?;
            edges
                .windows(2)
                .map(|c| piecewise_linear_integral(table, c[0], c[1]))
                .collect()
        }
    };
    let total = exact_sum(cells.iter().copied());
    if !(total > 0.0 && total.is_finite()) {
        return Err(XferError::InvalidSpec("density is not normalizable".into()));
    }
    Ok(cells
        .iter()
        .enumerate()
        .map(|(i, &c)| ((i as f64 + 0.5) * h, c / total))
        .collect())
}

fn validate_table(table: &[(f64, f64)]) -> Result<()> {
    if table.len() < 2 {
        return Err(XferError::InvalidSpec("density table needs at least two knots".into()));
    }
    for (i, &(z, v)) in table.iter().enumerate() {
        if !(0.0..=1.0).contains(&z) {
            return Err(XferError::InvalidSpec(format!("table knot {z} outside [0, 1]")));
        }
        if !(v >= 0.0 && v.is_finite()) {
            return Err(XferError::InvalidSpec(format!(
                "negative or non-finite density {v} at {z}"
            )));
        }
        if i > 0 && z <= table[i - 1].0 {
            return Err(XferError::InvalidSpec("table knots must be strictly increasing".into()));
        }
    }
    Ok(())
}

/// Exact integral over [lo, hi] of the linear interpolant of `table`
/// (the trapezoid rule on the knots), zero outside the knot range.
fn piecewise_linear_integral(table: &[(f64, f64)], lo: f64, hi: f64) -> f64 {
    let mut acc = 0.0;
    for seg in table.windows(2) {
        let ((z0, v0), (z1, v1)) = (seg[0], seg[1]);
        let a = lo.max(z0);
        let b = hi.min(z1);
        if b <= a {
            continue;
        }
        let at = |z: f64| v0 + (v1 - v0) * (z - z0) / (z1 - z0);
        acc += 0.5 * (at(a) + at(b)) * (b - a);
    }
    acc
}
