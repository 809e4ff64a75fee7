//! Optimized greedy reconstruction (OGRA / OGRAt).
//!
//! Instead of sweeping a fixed basis in order, every iteration fits each
//! remaining candidate function against the active set, then picks the pair
//! (candidate, pulse) with the largest discrepancy. The chosen candidate is
//! orthonormalized into the active set. Candidates that became linearly
//! dependent on the active set are dropped, and the run stops early once the
//! best discrepancy falls below a tolerance.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::{AlphaGrid, ControlPulse};
use crate::distributions::{BasisSet, CoefficientVector};
use crate::error::{Error, Result};
use crate::gram::{solve_psd, spectrum_of, w_canonical, SPECTRAL_FLOOR};
use crate::greedy::{combine_readings, ControlSet, Method};
use crate::search::{refine_direction, Maximum, ResponseLattice, SearchConfig};

/// Residuals at or below this fraction of a candidate's norm mark it as dependent.
pub const DEPENDENCE_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OgraConfig {
    #[serde(flatten)]
    pub search: SearchConfig,
    /// Stop once the best discrepancy drops below this.
    pub tol: f64,
}

impl Default for OgraConfig {
    fn default() -> Self {
        Self {
            search: SearchConfig::default(),
            tol: 1e-14,
        }
    }
}

/// A function still eligible for selection, tagged with its index in the full candidate set.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub index: usize,
    pub function: DVector<f64>,
}

impl Candidate {
    pub fn all(set: &BasisSet) -> Vec<Candidate> {
        (0..set.len())
            .map(|i| Candidate {
                index: i,
                function: set.function(i),
            })
            .collect()
    }
}

/// Least-squares fit of one candidate against the active set.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepFit {
    pub beta: CoefficientVector,
    /// `sum_m ||h_phi(1, u_m) - h_S(beta, u_m)||^2` at the optimum.
    pub residual: f64,
}

/// Outcome of the joint (candidate, pulse) maximization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Selection {
    /// Position within the current candidate list.
    pub position: usize,
    pub pulse: ControlPulse,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Continue,
    BelowTolerance,
    CandidatesExhausted,
    IterationCap,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Continue => "continue",
            StopReason::BelowTolerance => "below_tolerance",
            StopReason::CandidatesExhausted => "candidates_exhausted",
            StopReason::IterationCap => "iteration_cap",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Self::Continue,
            Self::BelowTolerance,
            Self::CandidatesExhausted,
            Self::IterationCap,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
    }
}

/// One row of the selection trace. Iteration 0 is the initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub iteration: usize,
    /// Index into the full candidate set, absent when nothing was left to choose.
    pub chosen_index: Option<usize>,
    pub objective: f64,
    pub stop_reason: StopReason,
    /// Smallest eigenvalue of `W` in active-set coordinates relative to its largest,
    /// after this iteration's pulse was added.
    #[serde(default)]
    pub active_min_eig: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct OgraResult {
    pub controls: ControlSet,
    /// Orthonormalized selected functions, in selection order.
    pub selected_basis: BasisSet,
    /// Indices of the selected functions in the full candidate set.
    pub selected_indices: Vec<usize>,
    pub trace: Vec<SelectionRecord>,
}

/// `h_S(beta, u) = sum_j beta_j gamma_{S_j}(u)` over the functions of `active`.
pub fn h_s(
    active: &BasisSet,
    beta: &CoefficientVector,
    pulse: &ControlPulse,
    grid: &AlphaGrid,
) -> Result<[f64; 2]> {
    if beta.len() != active.len() {
        return Err(Error::DimensionMismatch {
            expected: active.len(),
            actual: beta.len(),
        });
    }
    if active.dim() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            actual: active.dim(),
        });
    }
    let f = active.expand(beta)?;
    Ok(combine_readings(f.as_slice(), pulse, grid))
}

/// Component of `phi` orthogonal to the (orthonormal) active set, with one
/// reorthogonalization pass.
fn orthogonal_residual(active: &BasisSet, phi: &DVector<f64>) -> DVector<f64> {
    if active.is_empty() {
        return phi.clone();
    }
    let s = active.matrix();
    let mut r = phi - s * s.tr_mul(phi);
    r -= s * s.tr_mul(&r);
    r
}

/// Drops candidates lying in the span of the active set; survivors keep their order.
pub fn prune_dependent(candidates: &[Candidate], active: &BasisSet) -> Vec<Candidate> {
    candidates
        .iter()
        .filter(|c| {
            let norm = c.function.norm();
            norm > 0.0 && orthogonal_residual(active, &c.function).norm() > DEPENDENCE_TOL * norm
        })
        .cloned()
        .collect()
}

/// Unconstrained least-squares fit of every candidate against the active set
/// over the controls designed so far.
pub fn ogra_fitting_sweep(
    candidates: &[Candidate],
    active: &BasisSet,
    controls: &[ControlPulse],
    grid: &AlphaGrid,
) -> Result<Vec<SweepFit>> {
    if controls.is_empty() {
        return Err(Error::InvalidArgument(
            "fitting sweep needs at least one control".into(),
        ));
    }
    let w = w_canonical(controls, grid).into_matrix();
    let s = active.matrix();
    let ws = &w * s;
    let normal = s.tr_mul(&ws);
    Ok(candidates
        .iter()
        .map(|c| {
            let rhs = ws.tr_mul(&c.function);
            let beta = solve_psd(&normal, &rhs);
            let r = &c.function - s * &beta;
            let residual = r.dot(&(&w * &r)).max(0.0);
            SweepFit { beta, residual }
        })
        .collect())
}

fn discrepancy_directions(
    candidates: &[Candidate],
    active: &BasisSet,
    fits: &[SweepFit],
) -> DMatrix<f64> {
    let k = active.dim();
    let mut dirs = DMatrix::zeros(k, candidates.len());
    for (j, (c, fit)) in candidates.iter().zip(fits).enumerate() {
        let r = if active.is_empty() {
            c.function.clone()
        } else {
            &c.function - active.matrix() * &fit.beta
        };
        dirs.set_column(j, &r);
    }
    dirs
}

/// Per-candidate maximization of `||h_phi(1, u) - h_S(beta, u)||^2`, returned in candidate order.
pub fn candidate_maxima(
    candidates: &[Candidate],
    active: &BasisSet,
    fits: &[SweepFit],
    grid: &AlphaGrid,
    lattice: &ResponseLattice,
    config: &SearchConfig,
) -> Vec<Maximum> {
    let dirs = discrepancy_directions(candidates, active, fits);
    let screens = lattice.screen(&dirs);
    screens
        .par_iter()
        .enumerate()
        .map(|(j, values)| {
            let r = dirs.column(j).into_owned();
            refine_direction(lattice, grid, r.as_slice(), values, config)
        })
        .collect()
}

/// Joint maximization over the remaining candidates and admissible controls.
/// `None` when no candidate is left.
pub fn ogra_discriminatory_step(
    candidates: &[Candidate],
    active: &BasisSet,
    fits: &[SweepFit],
    grid: &AlphaGrid,
    lattice: &ResponseLattice,
    config: &SearchConfig,
) -> Option<Selection> {
    let maxima = candidate_maxima(candidates, active, fits, grid, lattice, config);
    let mut best: Option<Selection> = None;
    for (position, m) in maxima.into_iter().enumerate() {
        if best.map_or(true, |b| m.value > b.value) {
            best = Some(Selection {
                position,
                pulse: m.pulse,
                value: m.value,
            });
        }
    }
    best
}

/// Gram-Schmidt: appends the normalized component of `phi` orthogonal to `active`.
pub fn orthogonalize_into(active: &BasisSet, phi: &DVector<f64>) -> Result<BasisSet> {
    if phi.len() != active.dim() {
        return Err(Error::DimensionMismatch {
            expected: active.dim(),
            actual: phi.len(),
        });
    }
    let r = orthogonal_residual(active, phi);
    let norm = r.norm();
    let scale = phi.norm().max(f64::MIN_POSITIVE);
    if norm < 1e-12 * scale {
        return Err(Error::DependentCandidate(norm / scale));
    }
    let unit = r / norm;
    let mut m = DMatrix::zeros(active.dim(), active.len() + 1);
    m.columns_mut(0, active.len()).copy_from(active.matrix());
    m.set_column(active.len(), &unit);
    Ok(BasisSet::from_matrix(m))
}

fn active_min_eig(active: &BasisSet, controls: &[ControlPulse], grid: &AlphaGrid) -> f64 {
    let w = w_canonical(controls, grid).into_matrix();
    let s = active.matrix();
    let ws = s.tr_mul(&(&w * s));
    let spec = spectrum_of(&ws);
    if spec.max() > 0.0 {
        spec.min() / spec.max()
    } else {
        0.0
    }
}

/// Runs OGRA on the full candidate set `candidates` (`K_+` functions on a grid of size `K`).
/// With `config.search.optimize_time` set this is OGRAt.
pub fn run_ogra(
    candidates: &BasisSet,
    grid: &AlphaGrid,
    config: &OgraConfig,
) -> Result<OgraResult> {
    config.search.validate()?;
    if !(config.tol >= 0.0) {
        return Err(Error::InvalidArgument(
            "tolerance must be nonnegative".into(),
        ));
    }
    let k_total = grid.len();
    if candidates.dim() != k_total {
        return Err(Error::DimensionMismatch {
            expected: k_total,
            actual: candidates.dim(),
        });
    }
    if candidates.len() < k_total {
        return Err(Error::InvalidArgument(format!(
            "need at least K = {k_total} candidates, got {}",
            candidates.len()
        )));
    }
    let method = if config.search.optimize_time {
        Method::Ograt
    } else {
        Method::Ogra
    };
    let lattice = ResponseLattice::new(grid, &config.search);
    let step_config = |k: usize| SearchConfig {
        seed: config.search.seed.wrapping_add(k as u64),
        ..config.search.clone()
    };

    let mut remaining = Candidate::all(candidates);
    let mut active = BasisSet::from_matrix(DMatrix::zeros(k_total, 0));
    let mut pulses = Vec::new();
    let mut selected_indices = Vec::new();
    let mut trace = Vec::new();

    // initialization: the candidate/pulse pair with the largest response
    let empty_fits: Vec<SweepFit> = remaining
        .iter()
        .map(|_| SweepFit {
            beta: DVector::zeros(0),
            residual: 0.0,
        })
        .collect();
    let first = ogra_discriminatory_step(
        &remaining,
        &active,
        &empty_fits,
        grid,
        &lattice,
        &step_config(0),
    )
    .expect("candidate set is nonempty");
    let chosen = remaining.remove(first.position);
    active = orthogonalize_into(&active, &chosen.function)?;
    pulses.push(first.pulse);
    selected_indices.push(chosen.index);
    let init_stop = first.value < config.tol;
    trace.push(SelectionRecord {
        iteration: 0,
        chosen_index: Some(chosen.index),
        objective: first.value,
        stop_reason: if init_stop {
            StopReason::BelowTolerance
        } else {
            StopReason::Continue
        },
        active_min_eig: Some(active_min_eig(&active, &pulses, grid)),
    });

    if !init_stop {
        let mut k = 1;
        loop {
            if k > k_total - 1 {
                if let Some(last) = trace.last_mut() {
                    last.stop_reason = StopReason::IterationCap;
                }
                break;
            }
            remaining = prune_dependent(&remaining, &active);
            if remaining.is_empty() {
                trace.push(SelectionRecord {
                    iteration: k,
                    chosen_index: None,
                    objective: 0.0,
                    stop_reason: StopReason::CandidatesExhausted,
                    active_min_eig: None,
                });
                break;
            }
            let fits = ogra_fitting_sweep(&remaining, &active, &pulses, grid)?;
            let sel = ogra_discriminatory_step(
                &remaining,
                &active,
                &fits,
                grid,
                &lattice,
                &step_config(k),
            )
            .expect("candidate list is nonempty");
            if sel.value < config.tol {
                trace.push(SelectionRecord {
                    iteration: k,
                    chosen_index: Some(remaining[sel.position].index),
                    objective: sel.value,
                    stop_reason: StopReason::BelowTolerance,
                    active_min_eig: None,
                });
                break;
            }
            let chosen = remaining.remove(sel.position);
            active = orthogonalize_into(&active, &chosen.function)?;
            pulses.push(sel.pulse);
            selected_indices.push(chosen.index);
            trace.push(SelectionRecord {
                iteration: k,
                chosen_index: Some(chosen.index),
                objective: sel.value,
                stop_reason: StopReason::Continue,
                active_min_eig: Some(active_min_eig(&active, &pulses, grid)),
            });
            k += 1;
        }
    }

    Ok(OgraResult {
        controls: ControlSet { pulses, method },
        selected_basis: active,
        selected_indices,
        trace,
    })
}

/// True when the active-coordinate `W` is positive definite above the spectral floor.
pub fn active_block_is_definite(rel_min_eig: f64) -> bool {
    rel_min_eig > SPECTRAL_FLOOR
}
