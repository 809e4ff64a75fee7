//! Greedy reconstruction algorithm (GRA) and its duration-optimizing variant (GRAt).
//!
//! Starting from a pulse that maximizes `W(u)_11`, each iteration alternates
//! a fitting step, which finds the coefficients `beta` making `(beta, -1)` a
//! kernel candidate of the next upper-left block of the accumulated `W`, and a
//! discriminatory step, which picks the pulse that maximizes the quadratic form
//! of `W(u)` along that vector.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bloch::{propagate_grid, AlphaGrid, ControlPulse};
use crate::distributions::{BasisSet, CoefficientVector};
use crate::error::{Error, Result};
use crate::gram::{
    column_slice, response_matrix, solve_psd, spectrum_of, upper_left_block, GramMatrix,
    SPECTRAL_FLOOR,
};
use crate::search::{maximize_direction, Maximum, ResponseLattice, SearchConfig};

/// Inner-solver settings shared by GRA and GRAt.
pub type GreedyConfig = SearchConfig;

/// How a control set was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gra,
    Grat,
    Ogra,
    Ograt,
    Rcc,
    Rcct,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Gra,
        Method::Grat,
        Method::Ogra,
        Method::Ograt,
        Method::Rcc,
        Method::Rcct,
    ];

    pub fn optimizes_time(self) -> bool {
        matches!(self, Method::Grat | Method::Ograt | Method::Rcct)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Gra => "gra",
            Method::Grat => "grat",
            Method::Ogra => "ogra",
            Method::Ograt => "ograt",
            Method::Rcc => "rcc",
            Method::Rcct => "rcct",
        }
    }

    /// Display label, e.g. `GRAt`.
    pub fn label(self) -> &'static str {
        match self {
            Method::Gra => "GRA",
            Method::Grat => "GRAt",
            Method::Ogra => "OGRA",
            Method::Ograt => "OGRAt",
            Method::Rcc => "RCC",
            Method::Rcct => "RCCt",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

/// An ordered set of pulses and the method that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSet {
    pub pulses: Vec<ControlPulse>,
    pub method: Method,
}

impl ControlSet {
    pub fn len(&self) -> usize {
        self.pulses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pulses.is_empty()
    }

    pub fn all_admissible(&self, u_max: f64, tf_max: f64) -> bool {
        self.pulses.iter().all(|p| p.is_admissible(u_max, tf_max))
    }
}

/// Diagnostics of one GRA iteration `k` (fitting on `W^k`, then adding `u_{k+1}`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GreedyIteration {
    pub k: usize,
    pub beta: Vec<f64>,
    /// Smallest eigenvalue of `W^k_[1:k+1,1:k+1]` relative to `lambda_max(W^k)`.
    pub kernel_block_min_eig: f64,
    /// `||W^k_[1:k+1,1:k+1] v|| / lambda_max(W^k)` with `v = (beta, -1)`.
    pub kernel_residual: f64,
    pub pulse: ControlPulse,
    /// Achieved discriminatory objective.
    pub value: f64,
    /// `<v | W(u_{k+1})_[1:k+1,1:k+1] | v>` evaluated after the fact.
    pub gain: f64,
    /// Smallest eigenvalue of `W^{k+1}_[1:k+1,1:k+1]` relative to its largest.
    pub next_block_min_eig: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GreedyResult {
    pub controls: ControlSet,
    pub init_value: f64,
    pub trace: Vec<GreedyIteration>,
}

/// `h^(k)(beta, u) = sum_{j<=k} beta_j gamma_j(u)`, where `k = beta.len()`.
pub fn h_k(
    basis: &BasisSet,
    beta: &CoefficientVector,
    pulse: &ControlPulse,
    grid: &AlphaGrid,
) -> Result<[f64; 2]> {
    if basis.dim() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            actual: basis.dim(),
        });
    }
    let f = basis.expand(beta)?;
    Ok(combine_readings(f.as_slice(), pulse, grid))
}

pub(crate) fn combine_readings(
    weights: &[f64],
    pulse: &ControlPulse,
    grid: &AlphaGrid,
) -> [f64; 2] {
    propagate_grid(pulse, grid)
        .iter()
        .zip(weights)
        .fold([0.0, 0.0], |acc, (r, &w)| {
            [acc[0] + w * r.x, acc[1] + w * r.y]
        })
}

/// Solves `W^k_[1:k,1:k] beta = W^k_[1:k,k+1]`; `w` must be in basis coordinates.
pub fn fitting_step(k: usize, w: &GramMatrix) -> Result<CoefficientVector> {
    let block = upper_left_block(w, k)?;
    let rhs = column_slice(w, k)?;
    if block.matrix().amax() == 0.0 {
        return Err(Error::DegenerateBlock { k });
    }
    Ok(solve_psd(block.matrix(), &rhs))
}

/// The direction `phi_{k+1} - sum_{j<=k} beta_j phi_j` in grid coordinates.
pub fn discrepancy_direction(basis: &BasisSet, beta: &CoefficientVector) -> Result<DVector<f64>> {
    let k = beta.len();
    if k >= basis.len() {
        return Err(Error::DimensionMismatch {
            expected: basis.len() - 1,
            actual: k,
        });
    }
    Ok(basis.function(k) - basis.expand(beta)?)
}

/// Maximizes `||h^(K)(e_{k+1}, u) - h^(k)(beta, u)||^2` over admissible controls.
pub fn discriminatory_step(
    beta: &CoefficientVector,
    basis: &BasisSet,
    grid: &AlphaGrid,
    lattice: &ResponseLattice,
    config: &GreedyConfig,
) -> Result<Maximum> {
    let r = discrepancy_direction(basis, beta)?;
    Ok(maximize_direction(lattice, grid, r.as_slice(), config))
}

/// GRA with every pulse lasting `config.tf`.
pub fn run_gra(basis: &BasisSet, grid: &AlphaGrid, config: &GreedyConfig) -> Result<GreedyResult> {
    let cfg = GreedyConfig {
        optimize_time: false,
        ..config.clone()
    };
    run_greedy(basis, grid, &cfg, Method::Gra)
}

/// GRAt: durations are optimized in `[0, config.tf]` together with the amplitudes.
/// With `optimize_time` unset this is exactly [`run_gra`].
pub fn run_grat(basis: &BasisSet, grid: &AlphaGrid, config: &GreedyConfig) -> Result<GreedyResult> {
    let method = if config.optimize_time {
        Method::Grat
    } else {
        Method::Gra
    };
    run_greedy(basis, grid, config, method)
}

fn relative_min_eig(block: &DMatrix<f64>, scale: f64) -> f64 {
    let s = spectrum_of(block);
    if scale > 0.0 {
        s.min() / scale
    } else {
        0.0
    }
}

fn run_greedy(
    basis: &BasisSet,
    grid: &AlphaGrid,
    config: &GreedyConfig,
    method: Method,
) -> Result<GreedyResult> {
    config.validate()?;
    let k_total = grid.len();
    if basis.dim() != k_total || basis.len() != k_total {
        return Err(Error::InvalidArgument(format!(
            "GRA needs exactly {k_total} functions of length {k_total}, got {} of length {}",
            basis.len(),
            basis.dim()
        )));
    }
    let gspec = spectrum_of(&basis.gram());
    if gspec.min() <= 1e-12 * gspec.max() {
        return Err(Error::InvalidArgument(
            "basis functions are linearly dependent".into(),
        ));
    }

    let lattice = ResponseLattice::new(grid, config);
    let step_config = |k: usize| GreedyConfig {
        seed: config.seed.wrapping_add(k as u64),
        ..config.clone()
    };

    let init = maximize_direction(
        &lattice,
        grid,
        basis.function(0).as_slice(),
        &step_config(0),
    );
    let mut pulses = vec![init.pulse];
    let mut factor = response_matrix(&init.pulse, grid) * basis.matrix();
    let mut w = GramMatrix::from_factor(&factor, 1);
    let mut trace = Vec::with_capacity(k_total.saturating_sub(1));

    for k in 1..k_total {
        let beta = fitting_step(k, &w)?;
        let scale = spectrum_of(w.matrix()).max();
        let block = upper_left_block(&w, k + 1)?.into_matrix();
        let mut v = DVector::zeros(k + 1);
        v.rows_mut(0, k).copy_from(&beta);
        v[k] = -1.0;
        let kernel_residual = if scale > 0.0 {
            (&block * &v).norm() / scale
        } else {
            0.0
        };
        let kernel_block_min_eig = relative_min_eig(&block, scale);

        let best = discriminatory_step(&beta, basis, grid, &lattice, &step_config(k))?;

        let gamma_new = response_matrix(&best.pulse, grid) * basis.matrix();
        let single = GramMatrix::from_factor(&gamma_new.columns(0, k + 1).into_owned(), 1);
        let gain = v.dot(&(single.matrix() * &v));

        pulses.push(best.pulse);
        factor = stack(&factor, &gamma_new);
        w = GramMatrix::from_factor(&factor, pulses.len());
        let next_block = upper_left_block(&w, k + 1)?.into_matrix();
        let next_scale = spectrum_of(&next_block).max();
        let next_block_min_eig = relative_min_eig(&next_block, next_scale);

        trace.push(GreedyIteration {
            k,
            beta: beta.as_slice().to_vec(),
            kernel_block_min_eig,
            kernel_residual,
            pulse: best.pulse,
            value: best.value,
            gain,
            next_block_min_eig,
        });
    }

    Ok(GreedyResult {
        controls: ControlSet { pulses, method },
        init_value: init.value,
        trace,
    })
}

fn stack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    m.rows_mut(0, top.nrows()).copy_from(top);
    m.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    m
}

/// True when the `k x k` upper-left block is positive definite above the spectral floor.
pub fn block_is_definite(w: &GramMatrix, k: usize) -> Result<bool> {
    let block = upper_left_block(w, k)?;
    let s = spectrum_of(block.matrix());
    Ok(s.max() > 0.0 && s.min() > SPECTRAL_FLOOR * s.max())
}
