//! Identification of the distribution from transverse readings: least squares
//! over the probability simplex, solved by accelerated projected gradient.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::{propagate_grid_into, AlphaGrid};
use crate::distributions::{simplex_project_raw, ProbabilityDistribution};
use crate::error::{Error, Result};
use crate::experiment::MeasurementSet;
use crate::greedy::ControlSet;

/// Stacked linear model `targets ~ design * P`.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentificationProblem {
    /// `2 K_c x K`; rows `2k`, `2k + 1` are the x and y responses to control `k`.
    pub design: DMatrix<f64>,
    pub targets: DVector<f64>,
}

impl IdentificationProblem {
    pub fn new(design: DMatrix<f64>, targets: DVector<f64>) -> Result<Self> {
        if design.nrows() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: design.nrows(),
                actual: targets.len(),
            });
        }
        if design.nrows() % 2 != 0 {
            return Err(Error::InvalidArgument(
                "design must have two rows per control".into(),
            ));
        }
        Ok(Self { design, targets })
    }

    pub fn n_controls(&self) -> usize {
        self.design.nrows() / 2
    }

    pub fn dim(&self) -> usize {
        self.design.ncols()
    }

    /// `sum_k ||Y_exp_k - sum_l P(l) Y_{k,l}||^2`.
    pub fn objective(&self, p: &[f64]) -> f64 {
        let p = DVector::from_column_slice(p);
        (&self.design * p - &self.targets).norm_squared()
    }

    /// `W` in canonical coordinates, `design^T design`.
    pub fn gram(&self) -> DMatrix<f64> {
        self.design.tr_mul(&self.design)
    }
}

pub fn build_problem(
    controls: &ControlSet,
    grid: &AlphaGrid,
    measurements: &MeasurementSet,
) -> Result<IdentificationProblem> {
    if controls.len() != measurements.readings.len() {
        return Err(Error::DimensionMismatch {
            expected: controls.len(),
            actual: measurements.readings.len(),
        });
    }
    let k = grid.len();
    let n = controls.len();
    let mut design = DMatrix::zeros(2 * n, k);
    let mut targets = DVector::zeros(2 * n);
    let mut buf = vec![0.0; 2 * k];
    for (m, (p, r)) in controls
        .pulses
        .iter()
        .zip(&measurements.readings)
        .enumerate()
    {
        propagate_grid_into(p, grid, &mut buf);
        for l in 0..k {
            design[(2 * m, l)] = buf[2 * l];
            design[(2 * m + 1, l)] = buf[2 * l + 1];
        }
        targets[2 * m] = r.x;
        targets[2 * m + 1] = r.y;
    }
    IdentificationProblem::new(design, targets)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Stop once an accepted step decreases the objective by less than this fraction.
    pub rel_tol: f64,
    /// Keep the objective after every accepted iterate.
    pub record_history: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 50_000,
            rel_tol: 1e-12,
            record_history: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub p_f: ProbabilityDistribution,
    pub objective: f64,
    pub n_iterations: usize,
    pub converged: bool,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub history: Vec<f64>,
}

/// Dense helper holding `A`, `b`, `A^T A` and `A^T b` in row-major buffers.
struct Quadratic {
    rows: usize,
    cols: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    q: Vec<f64>,
    c: Vec<f64>,
}

impl Quadratic {
    fn new(problem: &IdentificationProblem) -> Self {
        let (rows, cols) = problem.design.shape();
        let a: Vec<f64> = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .map(|(i, j)| problem.design[(i, j)])
            .collect();
        let qm = problem.gram();
        let q: Vec<f64> = (0..cols)
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .map(|(i, j)| qm[(i, j)])
            .collect();
        let c = problem.design.tr_mul(&problem.targets).as_slice().to_vec();
        Self {
            rows,
            cols,
            a,
            b: problem.targets.as_slice().to_vec(),
            q,
            c,
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.rows {
            let row = &self.a[i * self.cols..(i + 1) * self.cols];
            let r: f64 = row.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() - self.b[i];
            s += r * r;
        }
        s
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.cols {
            let row = &self.q[i * self.cols..(i + 1) * self.cols];
            let v: f64 = row.iter().zip(x).map(|(q, x)| q * x).sum();
            out[i] = 2.0 * (v - self.c[i]);
        }
    }
}

/// Accelerated projected gradient with function-value restart.
///
/// Accepted iterates never increase the objective. The step is `1 / L` with
/// `L = 2 lambda_max(A^T A)`.
pub fn solve_identification(
    problem: &IdentificationProblem,
    init: &[f64],
    options: &SolverOptions,
) -> Result<ReconstructionResult> {
    let k = problem.dim();
    if init.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: init.len(),
        });
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "initial point must be finite".into(),
        ));
    }
    let quad = Quadratic::new(problem);
    let lipschitz = 2.0 * crate::gram::spectrum_of(&problem.gram()).max();

    let mut x = simplex_project_raw(init);
    let mut fx = quad.value(&x);
    let mut history = Vec::new();
    if options.record_history {
        history.push(fx);
    }
    let finish = |x: Vec<f64>, fx: f64, n: usize, converged: bool, history: Vec<f64>| {
        Ok(ReconstructionResult {
            p_f: crate::distributions::simplex_project(&x),
            objective: fx,
            n_iterations: n,
            converged,
            history,
        })
    };
    if fx == 0.0 || lipschitz <= 0.0 {
        return finish(x, fx, 0, true, history);
    }
    let step = 1.0 / lipschitz;

    let mut y = x.clone();
    let mut momentum = false;
    let mut t = 1.0f64;
    let mut grad = vec![0.0; k];
    let mut trial = vec![0.0; k];

    for it in 1..=options.max_iter {
        quad.gradient(&y, &mut grad);
        for i in 0..k {
            trial[i] = y[i] - step * grad[i];
        }
        let x_new = simplex_project_raw(&trial);
        let f_new = quad.value(&x_new);

        if !(f_new <= fx) {
            if momentum {
                // restart from the last accepted iterate without momentum
                y.copy_from_slice(&x);
                t = 1.0;
                momentum = false;
                continue;
            }
            return finish(x, fx, it, true, history);
        }

        let decrease = fx - f_new;
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_new;
        for i in 0..k {
            y[i] = x_new[i] + beta * (x_new[i] - x[i]);
        }
        momentum = beta != 0.0;
        t = t_new;
        let previous = fx;
        x = x_new;
        fx = f_new;
        if options.record_history {
            history.push(fx);
        }
        if fx == 0.0 || decrease <= options.rel_tol * previous {
            return finish(x, fx, it, true, history);
        }
    }
    finish(x, fx, options.max_iter, false, history)
}

/// `||p_star - p_f|| / ||p_star||`.
pub fn relative_error(p_star: &[f64], p_f: &[f64]) -> Result<f64> {
    if p_star.len() != p_f.len() {
        return Err(Error::DimensionMismatch {
            expected: p_star.len(),
            actual: p_f.len(),
        });
    }
    let norm: f64 = p_star.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::InvalidArgument(
            "reference distribution has zero norm".into(),
        ));
    }
    let diff: f64 = p_star
        .iter()
        .zip(p_f)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(diff / norm)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MultistartOutcome {
    /// The run with the smallest relative error.
    pub best: ReconstructionResult,
    pub min_relative_error: f64,
    /// Relative error of every run, in start order.
    pub errors: Vec<f64>,
    pub runs: Vec<ReconstructionResult>,
}

/// Initial points drawn uniformly in the cube centred at `center` with half-width
/// `radius_factor * ||center||`.
pub fn hypercube_inits(
    center: &[f64],
    n_starts: usize,
    radius_factor: f64,
    seed: u64,
) -> Vec<Vec<f64>> {
    let norm = center.iter().map(|v| v * v).sum::<f64>().sqrt();
    let half = radius_factor * norm;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_starts)
        .map(|_| {
            center
                .iter()
                .map(|&c| {
                    if half > 0.0 {
                        c + rng.random_range(-half..=half)
                    } else {
                        c
                    }
                })
                .collect()
        })
        .collect()
}

/// Repeats the identification from random initial points around the reference
/// and keeps the run closest to it.
pub fn multistart_identify(
    problem: &IdentificationProblem,
    p_star_ref: &ProbabilityDistribution,
    n_starts: usize,
    radius_factor: f64,
    seed: u64,
    options: &SolverOptions,
) -> Result<MultistartOutcome> {
    if n_starts == 0 {
        return Err(Error::InvalidArgument(
            "multistart needs at least one start".into(),
        ));
    }
    let inits = hypercube_inits(p_star_ref.as_slice(), n_starts, radius_factor, seed);
    multistart_from(problem, p_star_ref, &inits, options)
}

/// Multistart over explicit initial points.
pub fn multistart_from(
    problem: &IdentificationProblem,
    p_star_ref: &ProbabilityDistribution,
    inits: &[Vec<f64>],
    options: &SolverOptions,
) -> Result<MultistartOutcome> {
    let runs = inits
        .par_iter()
        .map(|x0| solve_identification(problem, x0, options))
        .collect::<Result<Vec<_>>>()?;
    let errors = runs
        .iter()
        .map(|r| relative_error(p_star_ref.as_slice(), r.p_f.as_slice()))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, e) in errors.iter().enumerate() {
        if *e < errors[best] {
            best = i;
        }
    }
    Ok(MultistartOutcome {
        best: runs[best].clone(),
        min_relative_error: errors[best],
        errors,
        runs,
    })
}

/// Multistart without a reference: starts around the uniform distribution and
/// keeps the run with the smallest objective (earliest on ties).
pub fn multistart_unreferenced(
    problem: &IdentificationProblem,
    n_starts: usize,
    radius_factor: f64,
    seed: u64,
    options: &SolverOptions,
) -> Result<(ReconstructionResult, Vec<ReconstructionResult>)> {
    if n_starts == 0 {
        return Err(Error::InvalidArgument(
            "multistart needs at least one start".into(),
        ));
    }
    let center = ProbabilityDistribution::uniform(problem.dim());
    let inits = hypercube_inits(center.as_slice(), n_starts, radius_factor, seed);
    let runs = inits
        .par_iter()
        .map(|x0| solve_identification(problem, x0, options))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.objective < runs[best].objective {
            best = i;
        }
    }
    Ok((runs[best].clone(), runs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::{ControlPulse, TransverseReading};
    use crate::distributions::alpha_grid;
    use crate::greedy::Method;

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert_eq!(relative_error(&[0.2, 0.8], &[0.0, 0.0]).unwrap(), 1.0);
        let e = relative_error(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((e - std::f64::consts::SQRT_2 / 2.0).abs() < 1e-15);
        assert!(relative_error(&[0.0, 0.0], &[0.5, 0.5]).is_err());
        assert!(relative_error(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn one_control_one_value() {
        let grid = AlphaGrid::new(vec![0.0], 0.3).unwrap();
        let controls = ControlSet {
            pulses: vec![ControlPulse::new(1.0, 0.5, 2.0)],
            method: Method::Rcc,
        };
        let ms = MeasurementSet {
            readings: vec![TransverseReading { x: 0.1, y: 0.2 }],
        };
        let prob = build_problem(&controls, &grid, &ms).unwrap();
        assert_eq!(prob.design.shape(), (2, 1));

        let bad = MeasurementSet { readings: vec![] };
        assert!(build_problem(&controls, &grid, &bad).is_err());
    }

    #[test]
    fn identity_design_recovers_point_mass() {
        let k = 4;
        let design = DMatrix::identity(2 * k, k);
        let mut targets = DVector::zeros(2 * k);
        targets[2] = 1.0;
        let prob = IdentificationProblem::new(design, targets).unwrap();
        let res = solve_identification(&prob, &[0.25; 4], &SolverOptions::default()).unwrap();
        assert!(res.converged);
        assert!((res.p_f[2] - 1.0).abs() < 1e-9, "{:?}", res.p_f);
    }

    #[test]
    fn optimal_init_stops_at_once() {
        let grid = alpha_grid(3, -0.2, 0.2, 0.3).unwrap();
        let controls = ControlSet {
            pulses: vec![
                ControlPulse::new(5.0, 1.0, 16.0),
                ControlPulse::new(-3.0, 7.0, 16.0),
            ],
            method: Method::Rcc,
        };
        let p = ProbabilityDistribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        let ms = crate::experiment::synthesize_measurements(&controls, &p, &grid).unwrap();
        let prob = build_problem(&controls, &grid, &ms).unwrap();
        assert!(prob.objective(p.as_slice()) < 1e-24);
        let res = solve_identification(&prob, p.as_slice(), &SolverOptions::default()).unwrap();
        assert!(res.n_iterations <= 1);
        assert!(relative_error(p.as_slice(), res.p_f.as_slice()).unwrap() < 1e-12);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let design = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-3]);
        let targets = DVector::from_vec(vec![0.3, 0.7e-3]);
        let prob = IdentificationProblem::new(design, targets).unwrap();
        let opts = SolverOptions {
            max_iter: 3,
            ..Default::default()
        };
        let res = solve_identification(&prob, &[1.0, 0.0], &opts).unwrap();
        assert!(!res.converged);
        assert_eq!(res.n_iterations, 3);
    }

    #[test]
    fn hypercube_inits_are_seeded_and_bounded() {
        let c = [0.5, 0.5];
        let a = hypercube_inits(&c, 20, 100.0, 3);
        assert_eq!(a, hypercube_inits(&c, 20, 100.0, 3));
        let half = 100.0 * (0.5f64).sqrt();
        for x in &a {
            for (v, c) in x.iter().zip(&c) {
                assert!((v - c).abs() <= half);
            }
        }
        assert_ne!(a, hypercube_inits(&c, 20, 100.0, 4));
    }
}
