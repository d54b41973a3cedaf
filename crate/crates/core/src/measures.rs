//! Finite non-negative atomic measures on the half line.
//!
//! [`AtomicMeasure`] is the single measure representation used across the
//! crate: initial data, sources, iterates, snapshots and operator outputs are
//! all weighted Dirac combinations with finite mass and second moment.

use std::cmp::{Ordering, Reverse};
use std::collections::binary_heap::{BinaryHeap, PeekMut};
use std::io::{Read, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::slice::ParallelSliceMut;
use serde::{Deserialize, Serialize};

use crate::error::{Result, XferError};
use crate::sum::{exact_sum, ExactSum};

/// Locations closer than this to the origin are snapped to exactly 0.
pub const ZERO_SNAP: f64 = 1e-12;

/// Relative tolerance on mass equality accepted by [`w1_distance`].
pub const EQUAL_MASS_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: f64,
    pub weight: f64,
}

/// Sorted, duplicate-free weighted Dirac combination on [0, ∞).
///
/// Every weight is strictly positive and locations are strictly increasing.
/// An atom sitting exactly at 0 is allowed and tracked separately by
/// [`AtomicMeasure::mass_at_zero`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AtomicMeasure {
    atoms: Vec<Atom>,
}

/// How atom counts are brought down to a budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compression {
    /// Greedy adjacent merging, see [`AtomicMeasure::compress`].
    #[default]
    Greedy,
    /// Linear splitting onto a mean-centred lattice, then greedy merging of
    /// whatever is left, see [`AtomicMeasure::compress_lattice`].
    Lattice,
}

/// Half-width of the lattice used by [`AtomicMeasure::compress_lattice`], in
/// standard deviations.
pub const LATTICE_SPAN_SD: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CompressionReport {
    pub merges_performed: usize,
    /// Certified upper bound on W₁(input, output).
    pub w1_error_bound: f64,
}

impl AtomicMeasure {
    pub fn empty() -> Self {
        Self { atoms: Vec::new() }
    }

    /// Unit mass at `x`.
    pub fn dirac(x: f64) -> Result<Self> {
        Self::new([(x, 1.0)])
    }

    /// Builds a canonical measure from arbitrary `(location, weight)` pairs.
    ///
    /// Zero weights are dropped, near-zero locations snapped to 0 and
    /// duplicates merged with a correctly rounded sum of their weights.
    pub fn new<I: IntoIterator<Item = (f64, f64)>>(pairs: I) -> Result<Self> {
        let mut atoms = Vec::new();
        for (location, weight) in pairs {
            if !location.is_finite() || !weight.is_finite() {
                return Err(XferError::InvalidArgument(format!(
                    "non-finite atom ({location}, {weight})"
                )));
            }
            if weight < 0.0 {
                return Err(XferError::InvalidArgument(format!(
                    "negative weight {weight} at {location}"
                )));
            }
            if location < -ZERO_SNAP {
                return Err(XferError::InvalidArgument(format!(
                    "negative location {location}"
                )));
            }
            if weight > 0.0 {
                atoms.push(Atom { location, weight });
            }
        }
        Ok(Self::canonicalize(atoms))
    }

    /// Sorts, snaps and merges. Inputs must already be finite with
    /// non-negative weights and locations ≥ -ZERO_SNAP.
    pub(crate) fn canonicalize(mut atoms: Vec<Atom>) -> Self {
        for a in atoms.iter_mut() {
            if a.location.abs() < ZERO_SNAP {
                a.location = 0.0;
            }
        }
        atoms.retain(|a| a.weight > 0.0);
        // tied weights are summed exactly, so the order among ties is irrelevant
        if atoms.len() > 1 << 14 {
            atoms.par_sort_unstable_by(|a, b| a.location.total_cmp(&b.location));
        } else {
            atoms.sort_unstable_by(|a, b| a.location.total_cmp(&b.location));
        }
        let mut out: Vec<Atom> = Vec::with_capacity(atoms.len());
        let mut i = 0;
        while i < atoms.len() {
            let loc = atoms[i].location;
            let mut j = i + 1;
            while j < atoms.len() && atoms[j].location == loc {
                j += 1;
            }
            let weight = if j - i == 1 {
                atoms[i].weight
            } else {
                exact_sum(atoms[i..j].iter().map(|a| a.weight))
            };
            out.push(Atom {
                location: loc,
                weight,
            });
            i = j;
        }
        Self { atoms: out }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.atoms.iter().map(|a| (a.location, a.weight))
    }

    /// Σ wᵢ xᵢᵏ for k ∈ {0, 1, 2}.
    pub fn moment(&self, k: u32) -> Result<f64> {
        match k {
            0 => Ok(self.mass()),
            1 => Ok(exact_sum(self.atoms.iter().map(|a| a.weight * a.location))),
            2 => Ok(exact_sum(
                self.atoms
                    .iter()
                    .map(|a| a.weight * a.location * a.location),
            )),
            _ => Err(XferError::InvalidArgument(format!(
                "moment order {k} not in {{0, 1, 2}}"
            ))),
        }
    }

    pub fn mass(&self) -> f64 {
        exact_sum(self.atoms.iter().map(|a| a.weight))
    }

    /// Mean of the normalized measure; 0 for the empty measure.
    pub fn mean(&self) -> f64 {
        let m0 = self.mass();
        if m0 == 0.0 {
            return 0.0;
        }
        exact_sum(self.atoms.iter().map(|a| a.weight * a.location)) / m0
    }

    /// Variance of the normalized measure, computed about the mean.
    pub fn variance(&self) -> f64 {
        let m0 = self.mass();
        if m0 == 0.0 {
            return 0.0;
        }
        let mean = self.mean();
        let centred = exact_sum(self.atoms.iter().map(|a| {
            let d = a.location - mean;
            a.weight * d * d
        }));
        centred / m0
    }

    /// Weight of the atom at exactly 0.
    pub fn mass_at_zero(&self) -> f64 {
        match self.atoms.first() {
            Some(a) if a.location == 0.0 => a.weight,
            _ => 0.0,
        }
    }

    pub fn max_location(&self) -> Option<f64> {
        self.atoms.last().map(|a| a.location)
    }

    pub fn max_weight(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).fold(0.0, f64::max)
    }

    /// Weight at exactly `x` (0 if there is no atom there).
    pub fn weight_at(&self, x: f64) -> f64 {
        match self
            .atoms
            .binary_search_by(|a| a.location.total_cmp(&x))
        {
            Ok(i) => self.atoms[i].weight,
            Err(_) => 0.0,
        }
    }

    /// Multiplies every weight by `alpha > 0`.
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(XferError::InvalidArgument(format!(
                "scale factor {alpha} must be positive"
            )));
        }
        Ok(Self {
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    location: a.location,
                    weight: a.weight * alpha,
                })
                .collect(),
        })
    }

    /// Probability measure u/‖u‖.
    pub fn normalized(&self) -> Result<Self> {
        let m0 = self.mass();
        if m0 <= 0.0 {
            return Err(XferError::EmptyMeasure);
        }
        self.scaled(1.0 / m0)
    }

    /// Sum of two measures.
    pub fn plus(&self, other: &Self) -> Self {
        let mut atoms = Vec::with_capacity(self.len() + other.len());
        atoms.extend_from_slice(&self.atoms);
        atoms.extend_from_slice(&other.atoms);
        Self::canonicalize(atoms)
    }

    /// Applies a per-atom weight multiplier `f(location)`; non-positive
    /// results drop the atom.
    pub fn reweighted<F: Fn(f64) -> f64>(&self, f: F) -> Self {
        Self {
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    location: a.location,
                    weight: a.weight * f(a.location),
                })
                .filter(|a| a.weight > 0.0)
                .collect(),
        }
    }

    /// ∫ φ du.
    pub fn integrate<F: Fn(f64) -> f64>(&self, phi: F) -> f64 {
        exact_sum(self.atoms.iter().map(|a| a.weight * phi(a.location)))
    }

    /// Reduces the atom count to at most `max_atoms` by repeatedly replacing
    /// the adjacent pair with the smallest second-moment loss
    /// `wᵢwⱼ/(wᵢ+wⱼ)·(xⱼ−xᵢ)²` by its barycenter.
    ///
    /// The atom at 0, if any, never takes part in a merge.
    pub fn compress(&self, max_atoms: usize) -> Result<(Self, CompressionReport)> {
        if max_atoms < 1 {
            return Err(XferError::InvalidArgument(
                "max_atoms must be at least 1".into(),
            ));
        }
        if self.len() <= max_atoms {
            return Ok((self.clone(), CompressionReport::default()));
        }
        let has_zero = self.mass_at_zero() > 0.0;
        let positive = if has_zero {
            &self.atoms[1..]
        } else {
            &self.atoms[..]
        };
        let target = max_atoms - usize::from(has_zero);
        if target == 0 {
            return Err(XferError::InvalidArgument(
                "max_atoms must be at least 2 when an atom at 0 coexists with positive atoms"
                    .into(),
            ));
        }
        let (merged, report) = merge_greedy(positive, target);
        let mut atoms = Vec::with_capacity(merged.len() + 1);
        if has_zero {
            atoms.push(self.atoms[0]);
        }
        atoms.extend(merged);
        Ok((Self { atoms }, report))
    }

    /// Compression that depends continuously on the input.
    ///
    /// Atoms are split between the two neighbouring nodes of a fixed node
    /// set (mass and mean preserved, variance raised by at most gap²/4 per
    /// unit weight): the lattice `mean + j·h` covering [`LATTICE_SPAN_SD`]
    /// standard deviations on each side with about `max_atoms/2` nodes,
    /// continued geometrically towards 0 and towards infinity. Atoms beyond
    /// the outermost nodes then go through [`compress`](Self::compress). Small
    /// perturbations of the input move the output by a small amount, which
    /// greedy merging alone does not guarantee.
    pub fn compress_lattice(&self, max_atoms: usize) -> Result<(Self, CompressionReport)> {
        if self.len() <= max_atoms {
            return Ok((self.clone(), CompressionReport::default()));
        }
        let has_zero = self.mass_at_zero() > 0.0;
        let positive = if has_zero { &self.atoms[1..] } else { &self.atoms[..] };
        let mass = exact_sum(positive.iter().map(|a| a.weight));
        let mean = exact_sum(positive.iter().map(|a| a.weight * a.location)) / mass;
        let var = exact_sum(positive.iter().map(|a| {
            let d = a.location - mean;
            a.weight * d * d
        })) / mass;
        let sd = var.max(0.0).sqrt();
        let half = (max_atoms / 4) as i64;
        if half < 1 || !(sd > 1e-9 * mean) {
            return self.compress(max_atoms);
        }
        let h = LATTICE_SPAN_SD * sd / half as f64;
        let mut lo = -half;
        while mean + lo as f64 * h <= ZERO_SNAP {
            lo += 1;
        }
        // geometric continuation on both sides keeps the tails on fixed
        // nodes too, without ever creating an atom at 0
        let n_geo = (max_atoms / 16).min(40) as i32;
        let bottom = mean + lo as f64 * h;
        let top = mean + half as f64 * h;
        let mut nodes: Vec<f64> = (1..=n_geo)
            .rev()
            .map(|k| bottom * 0.5f64.powi(k))
            .filter(|&x| x > ZERO_SNAP)
            .collect();
        nodes.extend((lo..=half).map(|j| mean + j as f64 * h));
        nodes.extend((1..=n_geo).map(|k| top * 1.25f64.powi(k)));

        let mut out = Vec::with_capacity(nodes.len() + 1);
        if has_zero {
            out.push(self.atoms[0]);
        }
        let mut bound = ExactSum::new();
        let mut tail = Vec::new();
        let mut k = 0;
        for a in positive {
            while k + 1 < nodes.len() && nodes[k + 1] <= a.location {
                k += 1;
            }
            if a.location < nodes[0] || k + 1 >= nodes.len() {
                tail.push(*a);
                continue;
            }
            let (xl, xr) = (nodes[k], nodes[k + 1]);
            let p = ((a.location - xl) / (xr - xl)).clamp(0.0, 1.0);
            let wr = a.weight * p;
            let wl = a.weight - wr;
            if wl > 0.0 {
                out.push(Atom { location: xl, weight: wl });
            }
            if wr > 0.0 {
                out.push(Atom { location: xr, weight: wr });
            }
            bound.add(2.0 * wl * p * (xr - xl));
        }
        out.extend(tail);
        let split = Self::canonicalize(out);
        let (compressed, rep) = split.compress(max_atoms)?;
        bound.add(rep.w1_error_bound);
        Ok((
            compressed,
            CompressionReport {
                merges_performed: self.len().saturating_sub(split.len()) + rep.merges_performed,
                w1_error_bound: bound.value(),
            },
        ))
    }

    /// Dispatches on the compression strategy.
    pub fn compress_with(
        &self,
        max_atoms: usize,
        strategy: Compression,
    ) -> Result<(Self, CompressionReport)> {
        match strategy {
            Compression::Greedy => self.compress(max_atoms),
            Compression::Lattice => self.compress_lattice(max_atoms),
        }
    }

    /// `n` i.i.d. draws from the normalized measure.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        let sampler = self.sampler()?;
        Ok((0..n).map(|_| sampler.draw(rng)).collect())
    }

    pub fn sampler(&self) -> Result<MeasureSampler<'_>> {
        if self.mass() <= 0.0 {
            return Err(XferError::EmptyMeasure);
        }
        let index = WeightedIndex::new(self.atoms.iter().map(|a| a.weight))
            .map_err(|e| XferError::InvalidArgument(e.to_string()))?;
        Ok(MeasureSampler {
            measure: self,
            index,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Writes `location,weight` rows with a header.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["location", "weight"])?;
        for a in &self.atoms {
            wtr.serialize((a.location, a.weight))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut pairs = Vec::new();
        for rec in rdr.deserialize() {
            let (location, weight): (f64, f64) = rec?;
            pairs.push((location, weight));
        }
        Self::new(pairs)
    }
}

/// Reusable categorical sampler over a measure's atoms.
pub struct MeasureSampler<'a> {
    measure: &'a AtomicMeasure,
    index: WeightedIndex<f64>,
}

impl MeasureSampler<'_> {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.measure.atoms[self.index.sample(rng)].location
    }
}

#[derive(Serialize, Deserialize)]
struct MeasureRepr {
    atoms: Vec<(f64, f64)>,
}

impl Serialize for AtomicMeasure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MeasureRepr {
            atoms: self.iter().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for AtomicMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = MeasureRepr::deserialize(d)?;
        AtomicMeasure::new(repr.atoms).map_err(serde::de::Error::custom)
    }
}

/// Heap key ordering pairs by (cost, left index). Costs are non-negative,
/// so their bit patterns order like the values.
fn pair_key(cost: f64, left: usize) -> Reverse<u128> {
    Reverse(((cost.to_bits() as u128) << 64) | left as u128)
}

const NIL: usize = usize::MAX;

/// Greedy adjacent merging down to `target` atoms.
///
/// Merging a pair into its barycenter only raises the cost of the two
/// neighbouring pairs (heavier atom, larger gap), so heap entries are lower
/// bounds and are re-evaluated lazily when popped.
fn merge_greedy(atoms: &[Atom], target: usize) -> (Vec<Atom>, CompressionReport) {
    let n = atoms.len();
    if n <= target {
        return (atoms.to_vec(), CompressionReport::default());
    }
    let mut loc: Vec<f64> = atoms.iter().map(|a| a.location).collect();
    let mut w: Vec<f64> = atoms.iter().map(|a| a.weight).collect();
    let mut next: Vec<usize> = (1..=n).map(|i| if i == n { NIL } else { i }).collect();
    let mut alive = vec![true; n];

    let cost = |wl: f64, xl: f64, wr: f64, xr: f64| {
        let d = xr - xl;
        wl * wr / (wl + wr) * d * d
    };

    let mut heap: BinaryHeap<Reverse<u128>> = (0..n - 1)
        .map(|i| pair_key(cost(w[i], loc[i], w[i + 1], loc[i + 1]), i))
        .collect();

    let mut bound = ExactSum::new();
    let mut merges = 0;
    let mut remaining = n;
    // each live left index owns exactly one heap entry, updated in place
    while remaining > target {
        let Some(mut top) = heap.peek_mut() else { break };
        let Reverse(key) = *top;
        let l = key as u64 as usize;
        let popped = f64::from_bits((key >> 64) as u64);
        let r = next[l];
        if !alive[l] || r == NIL {
            PeekMut::pop(top);
            continue;
        }
        let (wl, wr, xl, xr) = (w[l], w[r], loc[l], loc[r]);
        let current = cost(wl, xl, wr, xr);
        if current > popped {
            *top = pair_key(current, l);
            continue;
        }
        let wm = wl + wr;
        let xm = ((wl * xl + wr * xr) / wm).clamp(xl, xr);
        bound.add(2.0 * wl * wr / wm * (xr - xl));
        w[l] = wm;
        loc[l] = xm;
        alive[r] = false;
        let rn = next[r];
        next[l] = rn;
        if rn == NIL {
            PeekMut::pop(top);
        } else {
            *top = pair_key(cost(wm, xm, w[rn], loc[rn]), l);
        }
        merges += 1;
        remaining -= 1;
    }

    let out = (0..n)
        .filter(|&i| alive[i])
        .map(|i| Atom {
            location: loc[i],
            weight: w[i],
        })
        .collect();
    (
        out,
        CompressionReport {
            merges_performed: merges,
            w1_error_bound: bound.value(),
        },
    )
}

/// W₁ between two measures of equal mass, as ∫ |F_u − F_v| dx over the
/// merged support (equivalently mass · ∫₀¹ |Q_u − Q_v| ds).
pub fn w1_distance(u: &AtomicMeasure, v: &AtomicMeasure) -> Result<f64> {
    let (mu, mv) = (u.mass(), v.mass());
    let scale = mu.abs().max(mv.abs());
    if (mu - mv).abs() > EQUAL_MASS_RTOL * scale {
        return Err(XferError::UnequalMass {
            left: mu,
            right: mv,
        });
    }
    let (a, b) = (u.atoms(), v.atoms());
    let (mut i, mut j) = (0, 0);
    let mut cdf_u = ExactSum::new();
    let mut cdf_v = ExactSum::new();
    let mut total = ExactSum::new();
    let mut last: Option<f64> = None;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(p), Some(q)) => p.location.min(q.location),
            (Some(p), None) => p.location,
            (None, Some(q)) => q.location,
            (None, None) => unreachable!(),
        };
        if let Some(prev) = last {
            let gap = (cdf_u.value() - cdf_v.value()).abs();
            total.add(gap * (x - prev));
        }
        if i < a.len() && a[i].location == x {
            cdf_u.add(a[i].weight);
            i += 1;
        }
        if j < b.len() && b[j].location == x {
            cdf_v.add(b[j].weight);
            j += 1;
        }
        last = Some(x);
    }
    Ok(total.value())
}

/// W₁ between the normalized versions of two non-empty measures.
pub fn w1_normalized(u: &AtomicMeasure, v: &AtomicMeasure) -> Result<f64> {
    w1_distance(&u.normalized()?, &v.normalized()?)
}

/// Σ |w_u(x) − w_v(x)| over the union of atom locations (no ½ factor).
pub fn tv_distance(u: &AtomicMeasure, v: &AtomicMeasure) -> f64 {
    let (a, b) = (u.atoms(), v.atoms());
    let (mut i, mut j) = (0, 0);
    let mut total = ExactSum::new();
    while i < a.len() || j < b.len() {
        match (a.get(i), b.get(j)) {
            (Some(p), Some(q)) => match p.location.total_cmp(&q.location) {
                Ordering::Less => {
                    total.add(p.weight);
                    i += 1;
                }
                Ordering::Greater => {
                    total.add(q.weight);
                    j += 1;
                }
                Ordering::Equal => {
                    total.add((p.weight - q.weight).abs());
                    i += 1;
                    j += 1;
                }
            },
            (Some(p), None) => {
                total.add(p.weight);
                i += 1;
            }
            (None, Some(q)) => {
                total.add(q.weight);
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    total.value()
}

/// Offset of the bin edges used by [`binned`], in bin widths. Irrational,
/// so that round locations do not sit on an edge where rounding noise
/// would flip them between bins.
pub const BIN_OFFSET: f64 = 0.381_966_011_250_105_1;

/// Sums the measure's weights into bins of width `bin_width` with edges at
/// (k + [`BIN_OFFSET`])·bin_width (the first bin starts at 0), keeping an
/// atom at exactly 0 in its own bin. Each bin becomes one atom at its
/// centre.
pub fn binned(u: &AtomicMeasure, bin_width: f64) -> Result<AtomicMeasure> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(XferError::InvalidArgument(format!(
            "bin width {bin_width} must be positive"
        )));
    }
    let atoms = u
        .atoms()
        .iter()
        .map(|a| {
            let j = (a.location / bin_width - BIN_OFFSET).floor();
            let loc = if a.location == 0.0 {
                0.0
            } else if j < 0.0 {
                0.5 * BIN_OFFSET * bin_width
            } else {
                (j + BIN_OFFSET + 0.5) * bin_width
            };
            Atom {
                location: loc,
                weight: a.weight,
            }
        })
        .collect();
    Ok(AtomicMeasure::canonicalize(atoms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(pairs: &[(f64, f64)]) -> AtomicMeasure {
        AtomicMeasure::new(pairs.iter().copied()).unwrap()
    }

    #[test]
    fn moment_examples() {
        assert_eq!(m(&[(0.0, 0.5), (2.0, 0.5)]).moment(1).unwrap(), 1.0);
        assert_eq!(m(&[(1.0, 1.0)]).moment(2).unwrap(), 1.0);
        assert_eq!(m(&[(1.0, 0.5), (3.0, 0.5)]).moment(2).unwrap(), 5.0);
        assert!(matches!(
            m(&[(1.0, 1.0)]).moment(3),
            Err(XferError::InvalidArgument(_))
        ));
    }

    #[test]
    fn canonicalization_merges_and_snaps() {
        let u = m(&[(2.0, 0.25), (1e-13, 0.5), (2.0, 0.25), (0.0, 0.1)]);
        assert_eq!(u.len(), 2);
        assert_eq!(u.mass_at_zero(), 0.6);
        assert_eq!(u.weight_at(2.0), 0.5);
        let again = AtomicMeasure::new(u.iter()).unwrap();
        assert_eq!(again, u);
    }

    #[test]
    fn rejects_bad_atoms() {
        assert!(AtomicMeasure::new([(-1.0, 1.0)]).is_err());
        assert!(AtomicMeasure::new([(1.0, -1.0)]).is_err());
        assert!(AtomicMeasure::new([(f64::NAN, 1.0)]).is_err());
        assert!(AtomicMeasure::new([(1.0, 0.0)]).unwrap().is_empty());
    }

    #[test]
    fn compress_barycentric_merge() {
        let u = m(&[(1.0, 0.5), (1.0 + 1e-9, 0.5)]);
        let (c, rep) = u.compress(1).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.mass(), 1.0);
        assert!((c.atoms()[0].location - (1.0 + 5e-10)).abs() < 1e-15);
        assert_eq!(rep.merges_performed, 1);
        assert!(w1_distance(&u, &c).unwrap() <= rep.w1_error_bound * (1.0 + 1e-9));
    }

    #[test]
    fn compress_protects_zero_atom() {
        let u = m(&[(0.0, 0.3), (1.0, 0.7)]);
        assert!(u.compress(1).is_err());
        assert!(u.compress(0).is_err());
        let u = m(&[(0.0, 0.3), (1.0, 0.3), (1.5, 0.4)]);
        let (c, _) = u.compress(2).unwrap();
        assert_eq!(c.mass_at_zero(), 0.3);
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn compress_large_uniform_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = AtomicMeasure::new((0..10_000).map(|_| (rng.random::<f64>() * 5.0, 1e-4))).unwrap();
        let (c, rep) = u.compress(256).unwrap();
        assert_eq!(c.len(), 256);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        assert!(rel(c.mass(), u.mass()) < 1e-12);
        assert!(rel(c.moment(1).unwrap(), u.moment(1).unwrap()) < 1e-12);
        assert!(c.moment(2).unwrap() < u.moment(2).unwrap());
        assert!(w1_distance(&u, &c).unwrap() <= rep.w1_error_bound * (1.0 + 1e-9));
    }

    #[test]
    fn lattice_compression_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pairs: Vec<(f64, f64)> = (0..20_000)
            .map(|_| (rng.random::<f64>() * 5.0 + 0.01, 5e-5))
            .collect();
        let u = AtomicMeasure::new(pairs.iter().copied()).unwrap();
        let (c, rep) = u.compress_lattice(512).unwrap();
        assert!(c.len() <= 512);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        assert!(rel(c.mass(), u.mass()) < 1e-12);
        assert!(rel(c.mean(), u.mean()) < 1e-12);
        assert!(c.variance() >= u.variance() * (1.0 - 1e-12));
        assert!(w1_distance(&u, &c).unwrap() <= rep.w1_error_bound * (1.0 + 1e-9));

        // a 1e-9 relative perturbation of the input barely moves the output
        let v = AtomicMeasure::new(pairs.iter().map(|&(x, w)| (x * (1.0 + 1e-9), w))).unwrap();
        let (cv, _) = v.compress_lattice(512).unwrap();
        assert!(w1_distance(&c, &cv).unwrap() < 1e-7);
    }

    #[test]
    fn lattice_never_creates_zero_atom() {
        // 40 geometric nodes below a bottom node under 0.02 reach below the
        // snap threshold; an atom just above it sits between two of them
        let u = AtomicMeasure::new(
            (1..=1500)
                .map(|i| (i as f64 / 1500.0, 1.0))
                .chain([(1.01 * ZERO_SNAP, 1.0)]),
        )
        .unwrap();
        let (c, _) = u.compress_lattice(1024).unwrap();
        assert_eq!(c.mass_at_zero(), 0.0);
        assert!((c.mass() - u.mass()).abs() < 1e-12 * u.mass());
    }

    #[test]
    fn lattice_compression_keeps_zero_atom() {
        let u = AtomicMeasure::new((0..400).map(|i| (i as f64 * 0.01, 1.0))).unwrap();
        let (c, _) = u.compress_lattice(64).unwrap();
        assert_eq!(c.mass_at_zero(), 1.0);
        assert!(c.len() <= 64);
        let (d, _) = u.compress_lattice(1000).unwrap();
        assert_eq!(d, u);
    }

    #[test]
    fn w1_examples() {
        let d0 = AtomicMeasure::dirac(0.0).unwrap();
        let d1 = AtomicMeasure::dirac(1.0).unwrap();
        assert_eq!(w1_distance(&d0, &d1).unwrap(), 1.0);
        let half = m(&[(0.0, 0.5), (2.0, 0.5)]);
        assert_eq!(w1_distance(&half, &d1).unwrap(), 1.0);
        assert_eq!(w1_distance(&half, &half).unwrap(), 0.0);
        let heavy = m(&[(1.0, 2.0)]);
        assert!(matches!(
            w1_distance(&heavy, &d1),
            Err(XferError::UnequalMass { .. })
        ));
    }

    #[test]
    fn tv_examples() {
        let d0 = AtomicMeasure::dirac(0.0).unwrap();
        let d1 = AtomicMeasure::dirac(1.0).unwrap();
        assert_eq!(tv_distance(&d0, &d1), 2.0);
        assert_eq!(tv_distance(&d1, &d1), 0.0);
        assert_eq!(tv_distance(&m(&[(1.0, 0.4)]), &m(&[(1.0, 0.9)])), 0.5);
    }

    #[test]
    fn sample_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d1 = AtomicMeasure::dirac(1.0).unwrap();
        assert_eq!(d1.sample(5, &mut rng).unwrap(), vec![1.0; 5]);
        assert!(d1.sample(0, &mut rng).unwrap().is_empty());
        assert!(matches!(
            AtomicMeasure::empty().sample(3, &mut rng),
            Err(XferError::EmptyMeasure)
        ));
        let coin = m(&[(0.0, 0.5), (1.0, 0.5)]);
        let draws = coin.sample(1_000_000, &mut rng).unwrap();
        let zeros = draws.iter().filter(|&&x| x == 0.0).count() as f64 / 1e6;
        assert!((0.498..=0.502).contains(&zeros), "{zeros}");
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let u = m(&[(0.5, 0.2), (1.0, 0.3), (4.0, 0.5)]);
        let a = u.sample(100, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = u.sample(100, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn json_and_csv_formats() {
        let u = m(&[(0.0, 0.25), (1.5, 0.75)]);
        let s = u.to_json().unwrap();
        assert_eq!(s, r#"{"atoms":[[0.0,0.25],[1.5,0.75]]}"#);
        assert_eq!(AtomicMeasure::from_json(&s).unwrap(), u);
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("location,weight\n"));
        assert_eq!(AtomicMeasure::read_csv(&buf[..]).unwrap(), u);
        assert!(AtomicMeasure::from_json(r#"{"atoms":[[-3,1]]}"#).is_err());
    }

    #[test]
    fn binning_keeps_zero_separate() {
        let u = m(&[(0.0, 0.1), (0.01, 0.2), (0.02, 0.3), (0.26, 0.4)]);
        let b = binned(&u, 0.25).unwrap();
        assert_eq!(b.mass_at_zero(), 0.1);
        assert_eq!(b.len(), 3);
        assert!((b.weight_at(0.125 * BIN_OFFSET) - 0.5).abs() < 1e-15);
        assert_eq!(b.weight_at((BIN_OFFSET + 0.5) * 0.25), 0.4);
    }
}
