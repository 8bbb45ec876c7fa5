//! Search-space geometry: configurations, defaults, active sets and the
//! default-projection used by pruning.
//!
//! Equality against the default is exact stored-value equality. Pruning
//! resets copy the default component verbatim, so a reset component compares
//! equal again and never re-enters the active set by rounding accident.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sobol::SobolSequence;

/// Compact hyper-rectangle domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpace")]
pub struct SearchSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Deserialize)]
struct RawSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawSpace> for SearchSpace {
    type Error = Error;
    fn try_from(raw: RawSpace) -> Result<Self> {
        SearchSpace::new(raw.lower, raw.upper)
    }
}

impl SearchSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidBounds("dimension must be at least 1".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (j, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidBounds(format!(
                    "component {j}: require lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(SearchSpace { lower, upper })
    }

    /// Unit cube `[0,1]^d`.
    pub fn unit(dim: usize) -> Result<Self> {
        SearchSpace::new(vec![0.0; dim], vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn center(&self) -> Configuration {
        Configuration::new(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(lo, hi)| 0.5 * (lo + hi))
                .collect(),
        )
    }

    pub fn contains(&self, x: &Configuration) -> bool {
        x.len() == self.dim()
            && x.values()
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Map a point from natural units into `[0,1]^d`.
    pub fn normalize(&self, x: &Configuration) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        Ok(x.values()
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| (v - lo) / (hi - lo))
            .collect())
    }

    pub fn denormalize(&self, u: &[f64]) -> Result<Configuration> {
        self.check_dim(u.len())?;
        Ok(Configuration::new(
            u.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(t, (lo, hi))| lo + t * (hi - lo))
                .collect(),
        ))
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }
}

/// A point in the search space, stored in natural (unnormalized) units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration {
    values: Vec<f64>,
}

impl Configuration {
    pub fn new(values: Vec<f64>) -> Self {
        Configuration { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl From<Vec<f64>> for Configuration {
    fn from(values: Vec<f64>) -> Self {
        Configuration::new(values)
    }
}

/// Sorted set of component indices where a configuration differs from the
/// default.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveSet {
    indices: Vec<usize>,
}

impl ActiveSet {
    /// Builds from arbitrary indices; sorts and deduplicates.
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        ActiveSet { indices }
    }

    pub fn empty() -> Self {
        ActiveSet { indices: vec![] }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }

    pub fn is_subset_of(&self, other: &ActiveSet) -> bool {
        self.indices.iter().all(|j| other.contains(*j))
    }
}

/// Indices where `x` differs from the default, under exact stored-value
/// comparison.
pub fn active_set(x: &Configuration, x_def: &Configuration) -> Result<ActiveSet> {
    if x.len() != x_def.len() {
        return Err(Error::DimensionMismatch {
            expected: x_def.len(),
            got: x.len(),
        });
    }
    let indices = x
        .values()
        .iter()
        .zip(x_def.values())
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(j, _)| j)
        .collect();
    Ok(ActiveSet { indices })
}

/// Keeps the components of `x` listed in `keep` and resets all others to the
/// default value (bit-identical copy).
pub fn project(x: &Configuration, keep: &ActiveSet, x_def: &Configuration) -> Result<Configuration> {
    if x.len() != x_def.len() {
        return Err(Error::DimensionMismatch {
            expected: x_def.len(),
            got: x.len(),
        });
    }
    if let Some(&j) = keep.indices().iter().find(|&&j| j >= x.len()) {
        return Err(Error::IndexOutOfRange { index: j, dim: x.len() });
    }
    let values = x
        .values()
        .iter()
        .zip(x_def.values())
        .enumerate()
        .map(|(j, (xv, dv))| if keep.contains(j) { *xv } else { *dv })
        .collect();
    Ok(Configuration::new(values))
}

/// Number of components in which the two configurations differ.
pub fn l0_distance(x: &Configuration, x_def: &Configuration) -> Result<usize> {
    Ok(active_set(x, x_def)?.len())
}

/// Draws `n` points of a digitally shifted Sobol sequence scaled into the
/// space. The shift is derived from `seed`; identical arguments yield
/// identical output and a longer draw extends a shorter one.
pub fn sobol_sample(space: &SearchSpace, n: usize, seed: u64) -> Result<Vec<Configuration>> {
    let mut seq = SobolSequence::shifted(space.dim(), seed)?;
    let points = seq.take_unit(n);
    points.iter().map(|u| space.denormalize(u)).collect()
}
