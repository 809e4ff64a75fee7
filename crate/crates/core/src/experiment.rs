//! Synthetic measurements, random-control baselines and the end-to-end benchmark.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::bloch::{propagate_grid, AlphaGrid, ControlPulse, TransverseReading};
use crate::distributions::{
    random_orthonormal_basis, random_probability_distributions, BasisSet, ProbabilityDistribution,
};
use crate::error::{Error, Result};
use crate::gram::{spectrum_of, w_canonical};
use crate::greedy::{run_gra, run_grat, ControlSet, GreedyIteration, Method};
use crate::ogra::{run_ogra, OgraConfig, SelectionRecord};
use crate::reconstruction::{build_problem, multistart_identify, SolverOptions};
use crate::search::SearchConfig;

/// Ensemble readings, one per control, in control order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub readings: Vec<TransverseReading>,
}

/// Noiseless ensemble averages `sum_l P(l) Y_{u_k, alpha_l}`.
pub fn synthesize_measurements(
    controls: &ControlSet,
    p_star: &ProbabilityDistribution,
    grid: &AlphaGrid,
) -> Result<MeasurementSet> {
    if p_star.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            actual: p_star.len(),
        });
    }
    let readings = controls
        .pulses
        .iter()
        .map(|u| {
            propagate_grid(u, grid).iter().zip(p_star.as_slice()).fold(
                TransverseReading::ZERO,
                |acc, (r, &w)| TransverseReading {
                    x: acc.x + w * r.x,
                    y: acc.y + w * r.y,
                },
            )
        })
        .collect();
    Ok(MeasurementSet { readings })
}

/// Adds independent `N(0, sigma^2)` noise to every coordinate.
pub fn add_measurement_noise(ms: &MeasurementSet, sigma: f64, seed: u64) -> Result<MeasurementSet> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise level must be nonnegative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(ms.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(MeasurementSet {
        readings: ms
            .readings
            .iter()
            .map(|r| TransverseReading {
                x: r.x + rng.sample(normal),
                y: r.y + rng.sample(normal),
            })
            .collect(),
    })
}

/// Uniform random amplitudes in the admissible box, all lasting `config.tf`.
pub fn rcc_controls(count: usize, config: &SearchConfig, seed: u64) -> Result<ControlSet> {
    random_controls(count, config, seed, false)
}

/// Like [`rcc_controls`] with durations drawn uniformly in `[0, config.tf]`.
pub fn rcct_controls(count: usize, config: &SearchConfig, seed: u64) -> Result<ControlSet> {
    random_controls(count, config, seed, true)
}

fn random_controls(
    count: usize,
    config: &SearchConfig,
    seed: u64,
    timed: bool,
) -> Result<ControlSet> {
    if count == 0 {
        return Err(Error::InvalidArgument(
            "need at least one random control".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let um = config.u_max;
    let pulses = (0..count)
        .map(|_| {
            let ux = rng.random_range(-um..=um);
            let uy = rng.random_range(-um..=um);
            let tf = if timed {
                rng.random_range(0.0..=config.tf)
            } else {
                config.tf
            };
            ControlPulse::new(ux, uy, tf)
        })
        .collect();
    Ok(ControlSet {
        pulses,
        method: if timed { Method::Rcct } else { Method::Rcc },
    })
}

/// Solver settings for the design methods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignSettings {
    /// Fixed-duration search (GRA, OGRA, RCC).
    pub fixed: SearchConfig,
    /// Free-duration search (GRAt, OGRAt, RCCt); `tf` is the duration bound.
    pub timed: SearchConfig,
    pub tol: f64,
    /// Size of the OGRA candidate set: the GRA basis plus `k_plus - K` random distributions.
    pub k_plus: usize,
}

impl Default for DesignSettings {
    fn default() -> Self {
        Self {
            fixed: SearchConfig::default(),
            timed: SearchConfig {
                optimize_time: true,
                lattice_amplitude: 41,
                lattice_time: 21,
                ..SearchConfig::default()
            },
            tol: 1e-14,
            k_plus: 60,
        }
    }
}

/// Seeds derived from the master seed by fixed offsets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedBundle {
    pub master: u64,
    pub basis: u64,
    pub extension: u64,
    pub design: Vec<(Method, u64)>,
    pub multistart: Vec<(Method, u64)>,
    pub noise: u64,
}

fn method_offset(m: Method) -> u64 {
    Method::ALL.iter().position(|x| *x == m).unwrap() as u64
}

impl SeedBundle {
    pub const BASIS_OFFSET: u64 = 1;
    pub const EXTENSION_OFFSET: u64 = 2;
    pub const DESIGN_OFFSET: u64 = 10;
    pub const MULTISTART_OFFSET: u64 = 100;
    pub const NOISE_OFFSET: u64 = 200;

    pub fn derive(master: u64) -> Self {
        Self {
            master,
            basis: master.wrapping_add(Self::BASIS_OFFSET),
            extension: master.wrapping_add(Self::EXTENSION_OFFSET),
            design: Method::ALL
                .iter()
                .map(|&m| (m, Self::design_seed(master, m)))
                .collect(),
            multistart: Method::ALL
                .iter()
                .map(|&m| (m, Self::multistart_seed(master, m)))
                .collect(),
            noise: master.wrapping_add(Self::NOISE_OFFSET),
        }
    }

    pub fn design_seed(master: u64, m: Method) -> u64 {
        master.wrapping_add(Self::DESIGN_OFFSET + method_offset(m))
    }

    pub fn multistart_seed(master: u64, m: Method) -> u64 {
        master.wrapping_add(Self::MULTISTART_OFFSET + method_offset(m))
    }
}

/// Per-iteration diagnostics kept alongside a design.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", content = "records", rename_all = "snake_case")]
pub enum DesignTrace {
    Greedy(Vec<GreedyIteration>),
    Ogra(Vec<SelectionRecord>),
    Random,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Design {
    pub controls: ControlSet,
    pub trace: DesignTrace,
    /// Orthonormal selected functions for OGRA designs, as columns.
    #[serde(skip)]
    pub selected_basis: Option<BasisSet>,
    pub seconds: f64,
}

/// The random orthonormal GRA basis for a given master seed.
pub fn gra_basis(k: usize, master_seed: u64) -> BasisSet {
    random_orthonormal_basis(k, master_seed.wrapping_add(SeedBundle::BASIS_OFFSET))
}

/// The GRA basis extended by `k_plus - K` random distributions.
pub fn ogra_candidates(k: usize, k_plus: usize, master_seed: u64) -> Result<BasisSet> {
    if k_plus < k {
        return Err(Error::InvalidArgument(format!(
            "K_plus = {k_plus} must be at least K = {k}"
        )));
    }
    let basis = gra_basis(k, master_seed);
    if k_plus == k {
        return Ok(basis);
    }
    let extra: Vec<_> = random_probability_distributions(
        k,
        k_plus - k,
        master_seed.wrapping_add(SeedBundle::EXTENSION_OFFSET),
    )
    .iter()
    .map(|p| p.to_vector())
    .collect();
    basis.extended(&BasisSet::from_columns(&extra)?)
}

/// Designs the control set of one method; every random choice derives from `master_seed`.
pub fn design_controls(
    method: Method,
    grid: &AlphaGrid,
    settings: &DesignSettings,
    master_seed: u64,
) -> Result<Design> {
    let start = Instant::now();
    let k = grid.len();
    let seed = SeedBundle::design_seed(master_seed, method);
    let fixed = SearchConfig {
        optimize_time: false,
        seed,
        ..settings.fixed.clone()
    };
    let timed = SearchConfig {
        optimize_time: true,
        seed,
        ..settings.timed.clone()
    };
    let (controls, trace, selected_basis) = match method {
        Method::Gra => {
            let r = run_gra(&gra_basis(k, master_seed), grid, &fixed)?;
            (r.controls, DesignTrace::Greedy(r.trace), None)
        }
        Method::Grat => {
            let r = run_grat(&gra_basis(k, master_seed), grid, &timed)?;
            (r.controls, DesignTrace::Greedy(r.trace), None)
        }
        Method::Ogra | Method::Ograt => {
            let search = if method == Method::Ogra { fixed } else { timed };
            let cands = ogra_candidates(k, settings.k_plus, master_seed)?;
            let r = run_ogra(
                &cands,
                grid,
                &OgraConfig {
                    search,
                    tol: settings.tol,
                },
            )?;
            (
                r.controls,
                DesignTrace::Ogra(r.trace),
                Some(r.selected_basis),
            )
        }
        Method::Rcc => (rcc_controls(k, &fixed, seed)?, DesignTrace::Random, None),
        Method::Rcct => (rcct_controls(k, &timed, seed)?, DesignTrace::Random, None),
    };
    Ok(Design {
        controls,
        trace,
        selected_basis,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// One end-to-end experiment: a target, the methods to compare and all settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    pub target_name: String,
    pub grid: AlphaGrid,
    pub target: ProbabilityDistribution,
    pub methods: Vec<Method>,
    pub design: DesignSettings,
    pub n_multistart: usize,
    pub radius_factor: f64,
    pub solver: SolverOptions,
    pub master_seed: u64,
    /// Standard deviation of the optional measurement noise; zero for exact averages.
    pub noise_sigma: f64,
}

/// The 30-point grid on `[-0.2, 0.2]` with detuning `pi/10` used by the benchmarks.
pub fn standard_grid() -> AlphaGrid {
    crate::distributions::alpha_grid(30, -0.2, 0.2, std::f64::consts::PI / 10.0)
        .expect("static grid parameters are valid")
}

/// Spin count carried as metadata only; nothing depends on it.
pub const NOMINAL_SPIN_COUNT: u64 = 100_000;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub n_controls: usize,
    pub min_relative_error: f64,
    pub best_objective: f64,
    pub condition_number: f64,
    /// Eigenvalues of the canonical `W`, descending.
    pub spectrum: Vec<f64>,
    pub p_recovered: Vec<f64>,
    pub design_seconds: f64,
    pub reconstruction_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<String>,
}

impl MethodReport {
    fn failed(method: Method, msg: String) -> Self {
        Self {
            method,
            n_controls: 0,
            min_relative_error: f64::NAN,
            best_objective: f64::NAN,
            condition_number: f64::NAN,
            spectrum: vec![],
            p_recovered: vec![],
            design_seconds: 0.0,
            reconstruction_seconds: 0.0,
            failure: Some(msg),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub target_name: String,
    pub alphas: Vec<f64>,
    pub p_true: Vec<f64>,
    pub methods: Vec<MethodReport>,
    pub seeds: SeedBundle,
    pub n_multistart: usize,
    pub radius_factor: f64,
    pub spin_count: u64,
    pub total_seconds: f64,
}

impl BenchmarkReport {
    pub fn get(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }

    /// Aligned text table: one column per method, rows for error and conditioning.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "target: {}", self.target_name);
        let width = 12;
        let _ = write!(s, "{:<14}", "Control set");
        for r in &self.methods {
            let _ = write!(s, "| {:>width$} ", r.method.label());
        }
        s.push('\n');
        s.push_str(&"-".repeat(14 + self.methods.len() * (width + 3)));
        s.push('\n');
        let _ = write!(s, "{:<14}", "Min. error");
        for r in &self.methods {
            let _ = write!(s, "| {:>width$.4e} ", r.min_relative_error);
        }
        s.push('\n');
        let _ = write!(s, "{:<14}", "cond(W)");
        for r in &self.methods {
            let _ = write!(s, "| {:>width$.4e} ", r.condition_number);
        }
        s.push('\n');
        let _ = write!(s, "{:<14}", "controls");
        for r in &self.methods {
            let _ = write!(s, "| {:>width$} ", r.n_controls);
        }
        s.push('\n');
        for r in self.methods.iter().filter(|r| r.failure.is_some()) {
            let _ = writeln!(
                s,
                "{} failed: {}",
                r.method.label(),
                r.failure.as_deref().unwrap_or("")
            );
        }
        s
    }
}

/// Reconstructs the target from the readings produced by an existing design.
pub fn evaluate_design(design: &Design, scenario: &Scenario) -> Result<MethodReport> {
    let start = Instant::now();
    let method = design.controls.method;
    let clean = synthesize_measurements(&design.controls, &scenario.target, &scenario.grid)?;
    let noise_seed = scenario.master_seed.wrapping_add(SeedBundle::NOISE_OFFSET);
    let ms = add_measurement_noise(&clean, scenario.noise_sigma, noise_seed)?;
    let problem = build_problem(&design.controls, &scenario.grid, &ms)?;
    let outcome = multistart_identify(
        &problem,
        &scenario.target,
        scenario.n_multistart,
        scenario.radius_factor,
        SeedBundle::multistart_seed(scenario.master_seed, method),
        &scenario.solver,
    )?;
    let spec = spectrum_of(w_canonical(&design.controls.pulses, &scenario.grid).matrix());
    Ok(MethodReport {
        method,
        n_controls: design.controls.len(),
        min_relative_error: outcome.min_relative_error,
        best_objective: outcome.best.objective,
        condition_number: spec.condition_number(),
        spectrum: spec.values.clone(),
        p_recovered: outcome.best.p_f.into_inner(),
        design_seconds: design.seconds,
        reconstruction_seconds: start.elapsed().as_secs_f64(),
        failure: None,
    })
}

/// Designs every method's controls once and evaluates them against each scenario.
/// All scenarios must share the grid, design settings and master seed of the first.
pub fn run_benchmarks(scenarios: &[Scenario]) -> Result<Vec<BenchmarkReport>> {
    let first = scenarios
        .first()
        .ok_or_else(|| Error::InvalidArgument("no scenario given".into()))?;
    if scenarios.iter().any(|s| {
        s.grid != first.grid || s.design != first.design || s.master_seed != first.master_seed
    }) {
        return Err(Error::InvalidArgument(
            "scenarios sharing designs must agree on grid, design settings and seed".into(),
        ));
    }
    let start = Instant::now();
    let designs: Vec<(Method, Result<Design>)> = first
        .methods
        .iter()
        .map(|&m| {
            (
                m,
                design_controls(m, &first.grid, &first.design, first.master_seed),
            )
        })
        .collect();

    Ok(scenarios
        .iter()
        .map(|sc| {
            let methods = sc
                .methods
                .iter()
                .map(|&m| match designs.iter().find(|(dm, _)| *dm == m) {
                    Some((_, Ok(d))) => evaluate_design(d, sc)
                        .unwrap_or_else(|e| MethodReport::failed(m, e.to_string())),
                    Some((_, Err(e))) => MethodReport::failed(m, e.to_string()),
                    None => match design_controls(m, &sc.grid, &sc.design, sc.master_seed) {
                        Ok(d) => evaluate_design(&d, sc)
                            .unwrap_or_else(|e| MethodReport::failed(m, e.to_string())),
                        Err(e) => MethodReport::failed(m, e.to_string()),
                    },
                })
                .collect();
            BenchmarkReport {
                target_name: sc.target_name.clone(),
                alphas: sc.grid.alphas.clone(),
                p_true: sc.target.as_slice().to_vec(),
                methods,
                seeds: SeedBundle::derive(sc.master_seed),
                n_multistart: sc.n_multistart,
                radius_factor: sc.radius_factor,
                spin_count: NOMINAL_SPIN_COUNT,
                total_seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect())
}

/// Runs a single scenario.
pub fn run_benchmark(scenario: &Scenario) -> Result<BenchmarkReport> {
    Ok(run_benchmarks(std::slice::from_ref(scenario))?.remove(0))
}
