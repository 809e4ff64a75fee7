//! Probability distributions over the alpha grid and basis sets that span them.

use nalgebra::{DMatrix, DVector};
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bloch::AlphaGrid;
use crate::error::{Error, Result};

/// Tolerance on `sum(p) == 1` for a valid distribution.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Coefficients of a function in some basis.
pub type CoefficientVector = DVector<f64>;

/// Regularly spaced grid `a_min + (a_max - a_min)(l-1)/(K-1)`.
pub fn alpha_grid(k: usize, a_min: f64, a_max: f64, delta: f64) -> Result<AlphaGrid> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "alpha grid needs K >= 2, got {k}"
        )));
    }
    if !(a_min < a_max) {
        return Err(Error::InvalidArgument(format!(
            "alpha bounds must satisfy a_min < a_max, got [{a_min}, {a_max}]"
        )));
    }
    let span = a_max - a_min;
    let last = (k - 1) as f64;
    let mut alphas: Vec<f64> = (0..k).map(|l| a_min + span * l as f64 / last).collect();
    alphas[k - 1] = a_max;
    AlphaGrid::new(alphas, delta)
}

/// Nonnegative weights on the grid that sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbabilityDistribution(Vec<f64>);

impl ProbabilityDistribution {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidArgument("distribution is empty".into()));
        }
        if let Some(v) = p.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "distribution weights must be finite and nonnegative, found {v}"
            )));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidArgument(format!(
                "distribution weights sum to {sum}, not 1"
            )));
        }
        Ok(Self(p))
    }

    /// Rescales nonnegative weights so they sum to one.
    pub fn normalized(p: Vec<f64>) -> Result<Self> {
        let sum: f64 = p.iter().sum();
        if !(sum > 0.0) || p.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidArgument(
                "cannot normalize weights with nonpositive total or negative entries".into(),
            ));
        }
        Ok(Self(p.into_iter().map(|v| v / sum).collect()))
    }

    /// The point mass on index `l`.
    pub fn point_mass(k: usize, l: usize) -> Self {
        let mut p = vec![0.0; k];
        p[l] = 1.0;
        Self(p)
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for ProbabilityDistribution {
    type Error = Error;

    fn try_from(p: Vec<f64>) -> Result<Self> {
        Self::new(p)
    }
}

impl From<ProbabilityDistribution> for Vec<f64> {
    fn from(p: ProbabilityDistribution) -> Self {
        p.0
    }
}

impl std::ops::Index<usize> for ProbabilityDistribution {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// A family of functions on `{1, ..., K}` stored as the columns of a `K x n` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisSet {
    functions: DMatrix<f64>,
}

impl BasisSet {
    pub fn from_matrix(functions: DMatrix<f64>) -> Self {
        Self { functions }
    }

    pub fn from_columns(columns: &[DVector<f64>]) -> Result<Self> {
        let first = columns
            .first()
            .ok_or_else(|| Error::InvalidArgument("basis needs at least one function".into()))?;
        if let Some(c) = columns.iter().find(|c| c.len() != first.len()) {
            return Err(Error::DimensionMismatch {
                expected: first.len(),
                actual: c.len(),
            });
        }
        Ok(Self {
            functions: DMatrix::from_columns(columns),
        })
    }

    /// The canonical basis of indicator functions `e_1, ..., e_K`.
    pub fn canonical(k: usize) -> Self {
        Self {
            functions: DMatrix::identity(k, k),
        }
    }

    /// Grid size `K`.
    pub fn dim(&self) -> usize {
        self.functions.nrows()
    }

    /// Number of functions.
    pub fn len(&self) -> usize {
        self.functions.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.ncols() == 0
    }

    pub fn function(&self, j: usize) -> DVector<f64> {
        self.functions.column(j).into_owned()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.functions
    }

    /// First `k` functions.
    pub fn leading(&self, k: usize) -> Self {
        Self {
            functions: self.functions.columns(0, k).into_owned(),
        }
    }

    /// Appends the functions of `other` after this set's.
    pub fn extended(&self, other: &BasisSet) -> Result<Self> {
        if other.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        let mut m = DMatrix::zeros(self.dim(), self.len() + other.len());
        m.columns_mut(0, self.len()).copy_from(&self.functions);
        m.columns_mut(self.len(), other.len())
            .copy_from(&other.functions);
        Ok(Self { functions: m })
    }

    /// Synthesis `sum_j beta_j phi_j` over the first `beta.len()` functions.
    pub fn expand(&self, beta: &CoefficientVector) -> Result<DVector<f64>> {
        if beta.len() > self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: beta.len(),
            });
        }
        Ok(self.functions.columns(0, beta.len()) * beta)
    }

    /// Analysis `<phi_j, v>` for every function; inverts `expand` on orthonormal sets.
    pub fn coefficients_of(&self, v: &DVector<f64>) -> Result<CoefficientVector> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: v.len(),
            });
        }
        Ok(self.functions.tr_mul(v))
    }

    /// Pairwise inner products of the functions.
    pub fn gram(&self) -> DMatrix<f64> {
        self.functions.tr_mul(&self.functions)
    }
}

/// Orthonormalized seeded Gaussian matrix.
pub fn random_orthonormal_basis(k: usize, seed: u64) -> BasisSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    BasisSet::from_matrix(q)
}

/// `n` distributions drawn by normalizing vectors of independent uniform(0, 1) draws.
pub fn random_probability_distributions(
    k: usize,
    n: usize,
    seed: u64,
) -> Vec<ProbabilityDistribution> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Open01)).collect();
            let sum: f64 = raw.iter().sum();
            ProbabilityDistribution(raw.into_iter().map(|v| v / sum).collect())
        })
        .collect()
}

/// Euclidean projection onto the probability simplex (sort-based, exact).
pub fn simplex_project(v: &[f64]) -> ProbabilityDistribution {
    ProbabilityDistribution(simplex_project_raw(v))
}

pub(crate) fn simplex_project_raw(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    assert!(n > 0, "cannot project an empty vector");
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = (sorted[0] - 1.0) / 1.0;
    for (i, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    let mut p: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    // absorb the rounding residue of the threshold so the weights sum to one
    let sum: f64 = p.iter().sum();
    if sum > 0.0 && sum != 1.0 {
        for x in &mut p {
            *x /= sum;
        }
    }
    p
}

/// Equal-weight mixture of Gaussians centered at -0.1 and 0.1 with width 0.03.
pub fn double_peak_distribution(grid: &AlphaGrid) -> ProbabilityDistribution {
    const CENTER: f64 = 0.1;
    const WIDTH: f64 = 0.03;
    let gauss = |a: f64, c: f64| (-0.5 * ((a - c) / WIDTH).powi(2)).exp();
    let raw: Vec<f64> = grid
        .alphas
        .iter()
        .map(|&a| 0.5 * (gauss(a, -CENTER) + gauss(a, CENTER)))
        .collect();
    let sum: f64 = raw.iter().sum();
    ProbabilityDistribution(raw.into_iter().map(|v| v / sum).collect())
}

/// Uniform weight on the strictly positive alphas.
pub fn step_distribution(grid: &AlphaGrid) -> ProbabilityDistribution {
    let count = grid.alphas.iter().filter(|&&a| a > 0.0).count();
    assert!(
        count > 0,
        "step distribution needs at least one positive alpha"
    );
    let w = 1.0 / count as f64;
    ProbabilityDistribution(
        grid.alphas
            .iter()
            .map(|&a| if a > 0.0 { w } else { 0.0 })
            .collect(),
    )
}
