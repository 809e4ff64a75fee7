//! Oracle suites behind the `validate` command.
//!
//! Every check compares a production code path against an independent
//! computation (RK4, a matrix exponential, a direct scalar formula) and
//! reports the worst deviation next to its threshold.

use nalgebra::{DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bloch::{generator, propagate, rk4_propagate, BlochState, ControlPulse};
use crate::distributions::{random_orthonormal_basis, simplex_project};
use crate::error::Result;
use crate::experiment::{gra_basis, standard_grid};
use crate::gram::{
    quadratic_form, spectrum_of, upper_left_block, w_canonical, w_single, SPECTRAL_FLOOR,
};
use crate::greedy::{discrepancy_direction, fitting_step, h_k, run_gra};
use crate::search::{direction_value, SearchConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Check {
    fn at_most(name: &str, measured: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: measured <= threshold,
            measured,
            threshold,
            detail: detail.into(),
        }
    }

    fn at_least(name: &str, measured: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: measured >= threshold,
            measured,
            threshold,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        self.checks
            .iter()
            .map(|c| {
                format!(
                    "{} {}: measured {:.3e}, threshold {:.3e} ({})\n",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.measured,
                    c.threshold,
                    c.detail
                )
            })
            .collect()
    }
}

pub const U_MAX: f64 = 10.0;
pub const TF: f64 = 16.0;
pub const ALPHA_RANGE: (f64, f64) = (-0.2, 0.2);
pub const DELTA: f64 = std::f64::consts::PI / 10.0;

/// A seeded admissible pulse and an alpha in the default range.
pub fn random_pulse(rng: &mut impl Rng) -> (ControlPulse, f64) {
    let p = ControlPulse::new(
        rng.random_range(-U_MAX..=U_MAX),
        rng.random_range(-U_MAX..=U_MAX),
        TF,
    );
    (p, rng.random_range(ALPHA_RANGE.0..=ALPHA_RANGE.1))
}

/// Largest distance between the closed-form propagation and RK4 with the given step.
///
/// RK4 applied to a rotation at rate `w` accumulates a phase error close to
/// `t_f / h * (w h)^5 / 120`, so the attainable agreement depends on the step.
pub fn rk4_deviation(n_pulses: usize, seed: u64, step: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_pulses {
        let (p, a) = random_pulse(&mut rng);
        let exact = propagate(&p, a, DELTA, &BlochState::NORTH_POLE).as_vector();
        let rk = rk4_propagate(&p, a, DELTA, &BlochState::NORTH_POLE, step)?.as_vector();
        worst = worst.max((exact - rk).norm());
    }
    Ok(worst)
}

/// Largest `|‖exp(t_f G) e_z‖ - 1|` for a caller-supplied generator `G`.
pub fn norm_drift_with<G>(n_pulses: usize, seed: u64, generator_fn: G) -> f64
where
    G: Fn(&ControlPulse, f64, f64) -> Matrix3<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_pulses {
        let (p, a) = random_pulse(&mut rng);
        let m = (generator_fn(&p, a, DELTA) * p.tf).exp();
        let x = m * Vector3::z();
        worst = worst.max((x.norm() - 1.0).abs());
    }
    worst
}

/// Norm drift of the closed-form propagator itself.
pub fn closed_form_norm_drift(n_pulses: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_pulses)
        .map(|_| {
            let (p, a) = random_pulse(&mut rng);
            (propagate(&p, a, DELTA, &BlochState::NORTH_POLE).norm() - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

/// Worst asymmetry, most negative relative eigenvalue and largest numerical rank
/// of single-pulse `W(u)` in the canonical basis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinglePulseStructure {
    pub max_asymmetry: f64,
    pub min_eigenvalue: f64,
    pub max_rank: usize,
}

pub fn single_pulse_structure(n_pulses: usize, seed: u64) -> SinglePulseStructure {
    let grid = standard_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SinglePulseStructure {
        max_asymmetry: 0.0,
        min_eigenvalue: f64::INFINITY,
        max_rank: 0,
    };
    for _ in 0..n_pulses {
        let (p, _) = random_pulse(&mut rng);
        let w = w_canonical(&[p], &grid);
        let s = spectrum_of(w.matrix());
        out.max_asymmetry = out.max_asymmetry.max(w.max_asymmetry());
        out.min_eigenvalue = out.min_eigenvalue.min(s.min());
        out.max_rank = out.max_rank.max(s.numerical_rank());
    }
    out
}

/// Relative deviations of the two identities linking the greedy objectives to `W(u)`:
/// `‖h^(1)(1,u)‖² = W_11(u)` and the discriminatory objective equal to
/// `<v|W(u)_[1:k+1,1:k+1]|v>` with `v = (beta, -1)`.
pub fn objective_identities(n_samples: usize, seed: u64) -> Result<(f64, f64)> {
    let grid = standard_grid();
    let k_total = grid.len();
    let basis = random_orthonormal_basis(k_total, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let (mut first, mut second) = (0.0f64, 0.0f64);
    for _ in 0..n_samples {
        let (p, _) = random_pulse(&mut rng);
        let w = w_single(&basis, &p, &grid)?;
        let h = h_k(&basis, &DVector::from_element(1, 1.0), &p, &grid)?;
        let lhs = h[0] * h[0] + h[1] * h[1];
        let w11 = w.matrix()[(0, 0)];
        first = first.max((lhs - w11).abs() / w11.abs().max(f64::MIN_POSITIVE));

        let k = rng.random_range(1..k_total);
        let beta = DVector::from_fn(k, |_, _| rng.random_range(-2.0..2.0));
        let r = discrepancy_direction(&basis, &beta)?;
        let objective = direction_value(&p, &grid, r.as_slice());
        let mut v = DVector::zeros(k + 1);
        v.rows_mut(0, k).copy_from(&beta);
        v[k] = -1.0;
        let form = quadratic_form(&upper_left_block(&w, k + 1)?, &v)?;
        second = second.max((objective - form).abs() / form.abs().max(f64::MIN_POSITIVE));
    }
    Ok((first, second))
}

/// Largest `|beta_1 - W_12/W_11|` from the fitting step on random two-dimensional blocks.
pub fn k2_closed_form_deviation(n_samples: usize, seed: u64) -> Result<f64> {
    let grid = crate::distributions::alpha_grid(2, ALPHA_RANGE.0, ALPHA_RANGE.1, DELTA)?;
    let basis = random_orthonormal_basis(2, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut worst = 0.0f64;
    for _ in 0..n_samples {
        let (p, _) = random_pulse(&mut rng);
        let w = w_single(&basis, &p, &grid)?;
        let beta = fitting_step(1, &w)?;
        let m = w.matrix();
        worst = worst.max((beta[0] - m[(0, 1)] / m[(0, 0)]).abs());
    }
    Ok(worst)
}

/// Diagnostics of a GRA run on the 30-point scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct LemmaSummary {
    /// Largest kernel residual among iterations whose fitting block was singular.
    pub worst_singular_residual: f64,
    pub singular_blocks: usize,
    pub min_gain: f64,
    /// Smallest relative eigenvalue of the upper-left block after each iteration.
    pub min_next_block_eig: f64,
    pub iterations: usize,
}

pub fn gra_lemma_summary(master_seed: u64) -> Result<LemmaSummary> {
    let grid = standard_grid();
    let res = run_gra(
        &gra_basis(grid.len(), master_seed),
        &grid,
        &SearchConfig {
            seed: master_seed,
            ..SearchConfig::default()
        },
    )?;
    let mut s = LemmaSummary {
        worst_singular_residual: 0.0,
        singular_blocks: 0,
        min_gain: f64::INFINITY,
        min_next_block_eig: f64::INFINITY,
        iterations: res.trace.len(),
    };
    for it in &res.trace {
        if it.kernel_block_min_eig <= SPECTRAL_FLOOR {
            s.singular_blocks += 1;
            s.worst_singular_residual = s.worst_singular_residual.max(it.kernel_residual);
        }
        s.min_gain = s.min_gain.min(it.gain);
        s.min_next_block_eig = s.min_next_block_eig.min(it.next_block_min_eig);
    }
    Ok(s)
}

/// Worst violation of idempotence and non-expansiveness of the simplex projection.
pub fn simplex_projection_defect(n_samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_samples {
        let k = rng.random_range(1..40);
        let a: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
        let pa = simplex_project(&a);
        let pb = simplex_project(&b);
        let again = simplex_project(pa.as_slice());
        let idem = pa
            .as_slice()
            .iter()
            .zip(again.as_slice())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        let dist = |u: &[f64], v: &[f64]| {
            u.iter()
                .zip(v)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let expansion = dist(pa.as_slice(), pb.as_slice()) - dist(&a, &b);
        worst = worst.max(idem).max(expansion);
    }
    worst
}

/// Worst analysis/synthesis round-trip error for random orthonormal bases.
pub fn basis_round_trip_error(n_samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..n_samples {
        let k = rng.random_range(2..40);
        let basis = random_orthonormal_basis(k, seed.wrapping_add(i as u64));
        let v = DVector::from_fn(k, |_, _| rng.random_range(0.0..1.0));
        let back = basis.expand(&basis.coefficients_of(&v)?)?;
        worst = worst.max((back - &v).amax());
    }
    Ok(worst)
}

/// Runs every oracle suite with fixed seeds.
pub fn run_all() -> Result<ValidationReport> {
    let seed = 20_240_501;
    let mut checks = vec![
        Check::at_most(
            "rk4_oracle",
            rk4_deviation(100, seed, 2.5e-4)?,
            1e-8,
            "closed-form rotation vs RK4 step 2.5e-4, 100 pulses",
        ),
        Check::at_most(
            "norm_conservation",
            norm_drift_with(100, seed, generator).max(closed_form_norm_drift(100, seed)),
            1e-12,
            "matrix exponential of the generator and closed form, 100 pulses",
        ),
    ];

    let st = single_pulse_structure(100, seed);
    checks.push(Check::at_most(
        "gram_symmetry",
        st.max_asymmetry,
        1e-12,
        "single-pulse W, 100 pulses",
    ));
    checks.push(Check::at_least(
        "gram_psd",
        st.min_eigenvalue,
        -1e-10,
        "smallest eigenvalue of single-pulse W",
    ));
    checks.push(Check::at_most(
        "gram_rank",
        st.max_rank as f64,
        2.0,
        "numerical rank of single-pulse W",
    ));

    let (h1, disc) = objective_identities(50, seed)?;
    checks.push(Check::at_most(
        "initial_objective_identity",
        h1,
        1e-9,
        "relative, 50 samples",
    ));
    checks.push(Check::at_most(
        "discriminatory_objective_identity",
        disc,
        1e-9,
        "relative, 50 samples",
    ));
    checks.push(Check::at_most(
        "two_function_fitting",
        k2_closed_form_deviation(50, seed)?,
        1e-12,
        "beta_1 vs W_12/W_11",
    ));

    let lemma = gra_lemma_summary(42)?;
    checks.push(Check::at_most(
        "fitting_annihilates_singular_block",
        lemma.worst_singular_residual,
        1e-8,
        format!(
            "{} singular blocks in {} iterations",
            lemma.singular_blocks, lemma.iterations
        ),
    ));
    checks.push(Check {
        name: "discriminatory_gain_positive".into(),
        passed: lemma.min_gain > 0.0,
        measured: lemma.min_gain,
        threshold: 0.0,
        detail: "smallest post-discriminatory quadratic form".into(),
    });
    checks.push(Check {
        name: "block_positive_definite".into(),
        passed: lemma.min_next_block_eig > SPECTRAL_FLOOR,
        measured: lemma.min_next_block_eig,
        threshold: SPECTRAL_FLOOR,
        detail: "smallest relative eigenvalue of the grown block".into(),
    });

    checks.push(Check::at_most(
        "simplex_projection",
        simplex_projection_defect(200, seed),
        1e-12,
        "idempotence and non-expansiveness",
    ));
    checks.push(Check::at_most(
        "basis_round_trip",
        basis_round_trip_error(20, seed)?,
        1e-12,
        "orthonormal analysis then synthesis",
    ));
    Ok(ValidationReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_flip_breaks_norm_conservation() {
        let honest = norm_drift_with(20, 3, generator);
        assert!(honest <= 1e-12, "{honest}");
        let flipped = norm_drift_with(20, 3, |p, a, d| {
            let mut g = generator(p, a, d);
            g[(2, 0)] = -g[(2, 0)];
            g
        });
        assert!(flipped > 1e-6, "{flipped}");
    }

    #[test]
    fn report_text_lists_failures() {
        let r = ValidationReport {
            checks: vec![
                Check::at_most("a", 1.0, 2.0, ""),
                Check::at_most("b", 3.0, 2.0, ""),
            ],
        };
        assert!(!r.all_passed());
        let t = r.to_text();
        assert!(t.starts_with("PASS a") && t.contains("FAIL b"));
    }

    #[test]
    fn oracle_suites_pass() {
        assert!(rk4_deviation(5, 1, 2.5e-4).unwrap() <= 1e-8);
        assert!(closed_form_norm_drift(50, 1) <= 1e-12);
        let st = single_pulse_structure(10, 1);
        assert!(st.max_rank <= 2 && st.min_eigenvalue >= -1e-10);
        let (a, b) = objective_identities(10, 1).unwrap();
        assert!(a <= 1e-9 && b <= 1e-9);
        assert!(k2_closed_form_deviation(10, 1).unwrap() <= 1e-12);
        assert!(simplex_projection_defect(50, 1) <= 1e-12);
        assert!(basis_round_trip_error(5, 1).unwrap() <= 1e-12);
    }
}
