use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use spinrecon::bloch::AlphaGrid;
use spinrecon::distributions::BasisSet;
use spinrecon::experiment::{
    add_measurement_noise, design_controls, gra_basis, ogra_candidates, run_benchmark,
    synthesize_measurements, DesignTrace, Scenario, SeedBundle,
};
use spinrecon::gram::{spectrum_of, w_canonical};
use spinrecon::greedy::{ControlSet, Method};
use spinrecon::io::{
    controls_csv, distribution_csv, matrix_csv, measurements_csv, parse_controls,
    parse_distribution, parse_matrix, parse_measurements, read_to_string, result_csv, spectrum_csv,
    to_json, trace_csv, write_atomic, ResultFile,
};
use spinrecon::reconstruction::{build_problem, multistart_identify, multistart_unreferenced};
use spinrecon::validate::run_all;
use spinrecon::{Error, Result};

use crate::config::{resolve_target, RunConfig};

/// Outcome that maps to a nonzero exit code without being an `Error`.
pub enum Failure {
    Error(Error),
    /// Numerical checks ran but did not pass.
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

pub type CmdResult = std::result::Result<(), Failure>;

#[derive(Serialize)]
struct Provenance<'a> {
    seed: u64,
    method: Method,
    n_controls: usize,
    /// SHA-256 of the basis (or OGRA candidate set) written as a headerless matrix CSV.
    basis_sha256: Option<String>,
    seeds: SeedBundle,
    config: &'a RunConfig,
}

pub fn basis_hash(basis: &BasisSet) -> String {
    hex::encode(Sha256::digest(matrix_csv(basis.matrix()).as_bytes()))
}

fn read(path: &Path) -> Result<String> {
    read_to_string(path).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

fn load_controls(path: &Path) -> Result<ControlSet> {
    parse_controls(&read(path)?)
}

pub fn design(cfg: &RunConfig, out: &Path) -> CmdResult {
    let grid = cfg.grid()?;
    let settings = cfg.design_settings();
    let design = design_controls(cfg.method, &grid, &settings, cfg.seed)?;
    let search = cfg.search_for(cfg.method);
    if !design.controls.all_admissible(search.u_max, search.tf) {
        return Err(Failure::Numerical(
            "designed controls left the admissible set".into(),
        ));
    }
    let basis_sha256 = match cfg.method {
        Method::Gra | Method::Grat => Some(basis_hash(&gra_basis(cfg.k, cfg.seed))),
        Method::Ogra | Method::Ograt => {
            Some(basis_hash(&ogra_candidates(cfg.k, cfg.k_plus, cfg.seed)?))
        }
        Method::Rcc | Method::Rcct => None,
    };
    write_atomic(&out.join("controls.csv"), &controls_csv(&design.controls))?;
    match &design.trace {
        DesignTrace::Ogra(t) => write_atomic(&out.join("selection_trace.csv"), &trace_csv(t))?,
        DesignTrace::Greedy(t) => write_atomic(&out.join("greedy_trace.json"), &to_json(t)?)?,
        DesignTrace::Random => {}
    }
    let prov = Provenance {
        seed: cfg.seed,
        method: cfg.method,
        n_controls: design.controls.len(),
        basis_sha256,
        seeds: SeedBundle::derive(cfg.seed),
        config: cfg,
    };
    write_atomic(&out.join("provenance.json"), &to_json(&prov)?)?;
    println!(
        "{} controls designed with {}",
        design.controls.len(),
        cfg.method
    );
    Ok(())
}

pub fn measure(
    cfg: &RunConfig,
    controls: &Path,
    distribution: Option<&Path>,
    out: &Path,
) -> CmdResult {
    let cs = load_controls(controls)?;
    let (grid, p) = match distribution {
        Some(path) => {
            let file = parse_distribution(&read(path)?)?;
            (AlphaGrid::new(file.alphas, cfg.delta)?, file.p)
        }
        None => {
            let grid = cfg.grid()?;
            let t = resolve_target(&cfg.target, &grid)?;
            (grid, t.p)
        }
    };
    let clean = synthesize_measurements(&cs, &p, &grid)?;
    let ms = add_measurement_noise(&clean, cfg.noise_sigma, SeedBundle::derive(cfg.seed).noise)?;
    write_atomic(&out.join("measurements.csv"), &measurements_csv(&ms))?;
    println!("{} readings written", ms.readings.len());
    Ok(())
}

#[derive(Serialize)]
struct ReconstructSummary {
    objective: f64,
    n_iterations: usize,
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    relative_error: Option<f64>,
    n_multistart: usize,
    converged_runs: usize,
    seed: u64,
}

pub fn reconstruct(
    cfg: &RunConfig,
    controls: &Path,
    measurements: &Path,
    truth: Option<&str>,
    out: &Path,
) -> CmdResult {
    let grid = cfg.grid()?;
    let cs = load_controls(controls)?;
    let ms = parse_measurements(&read(measurements)?)?;
    let problem = build_problem(&cs, &grid, &ms)?;
    let seed = SeedBundle::multistart_seed(cfg.seed, cs.method);
    let solver = cfg.solver();
    let (best, runs, err, p_true) = match truth {
        Some(spec) => {
            let t = resolve_target(spec, &grid)?;
            let o = multistart_identify(
                &problem,
                &t.p,
                cfg.n_multistart,
                cfg.radius_factor,
                seed,
                &solver,
            )?;
            (
                o.best,
                o.runs,
                Some(o.min_relative_error),
                Some(t.p.into_inner()),
            )
        }
        None => {
            let (best, runs) = multistart_unreferenced(
                &problem,
                cfg.n_multistart,
                cfg.radius_factor,
                seed,
                &solver,
            )?;
            (best, runs, None, None)
        }
    };
    let result = ResultFile {
        alphas: grid.alphas.clone(),
        p_true,
        p_recovered: best.p_f.as_slice().to_vec(),
    };
    write_atomic(&out.join("result.csv"), &result_csv(&result)?)?;
    let summary = ReconstructSummary {
        objective: best.objective,
        n_iterations: best.n_iterations,
        converged: best.converged,
        relative_error: err,
        n_multistart: runs.len(),
        converged_runs: runs.iter().filter(|r| r.converged).count(),
        seed,
    };
    write_atomic(&out.join("summary.json"), &to_json(&summary)?)?;
    match err {
        Some(e) => println!("objective {:.6e}, relative error {:.6e}", best.objective, e),
        None => println!("objective {:.6e}", best.objective),
    }
    Ok(())
}

#[derive(Serialize)]
struct SpectrumSummary {
    condition_number: f64,
    numerical_rank: usize,
    dim: usize,
}

pub fn spectrum(
    cfg: &RunConfig,
    controls: Option<&Path>,
    matrix: Option<&Path>,
    out: &Path,
) -> CmdResult {
    let w = match (controls, matrix) {
        (Some(c), None) => w_canonical(&load_controls(c)?.pulses, &cfg.grid()?).into_matrix(),
        (None, Some(m)) => parse_matrix(&read(m)?)?,
        _ => {
            return Err(
                Error::InvalidArgument("give exactly one of --controls or --matrix".into()).into(),
            )
        }
    };
    let s = spectrum_of(&w);
    write_atomic(&out.join("spectrum.csv"), &spectrum_csv(&s.values))?;
    let summary = SpectrumSummary {
        condition_number: s.condition_number(),
        numerical_rank: s.numerical_rank(),
        dim: w.nrows(),
    };
    write_atomic(&out.join("spectrum.json"), &to_json(&summary)?)?;
    println!(
        "condition number {:.6e}, rank {} of {}",
        summary.condition_number, summary.numerical_rank, summary.dim
    );
    Ok(())
}

pub fn benchmark(cfg: &RunConfig, methods: Vec<Method>, out: &Path) -> CmdResult {
    let grid = cfg.grid()?;
    let target = resolve_target(&cfg.target, &grid)?;
    let scenario = Scenario {
        target_name: target.name,
        target: target.p,
        grid: grid.clone(),
        methods,
        design: cfg.design_settings(),
        n_multistart: cfg.n_multistart,
        radius_factor: cfg.radius_factor,
        solver: cfg.solver(),
        master_seed: cfg.seed,
        noise_sigma: cfg.noise_sigma,
    };
    let report = run_benchmark(&scenario)?;
    write_atomic(&out.join("report.json"), &to_json(&report)?)?;
    let table = report.to_table();
    write_atomic(&out.join("report.txt"), &table)?;
    write_atomic(
        &out.join("target.csv"),
        &distribution_csv(&grid.alphas, &scenario.target)?,
    )?;
    for r in report.methods.iter().filter(|r| r.failure.is_none()) {
        let name = r.method.as_str();
        let result = ResultFile {
            alphas: grid.alphas.clone(),
            p_true: Some(report.p_true.clone()),
            p_recovered: r.p_recovered.clone(),
        };
        write_atomic(
            &out.join(format!("result_{name}.csv")),
            &result_csv(&result)?,
        )?;
        write_atomic(
            &out.join(format!("spectrum_{name}.csv")),
            &spectrum_csv(&r.spectrum),
        )?;
    }
    print!("{table}");
    if report.methods.iter().all(|r| r.failure.is_some()) {
        return Err(Failure::Numerical("every method failed".into()));
    }
    Ok(())
}

pub fn validate(out: Option<&PathBuf>) -> CmdResult {
    let report = run_all()?;
    print!("{}", report.to_text());
    if let Some(dir) = out {
        write_atomic(&dir.join("validation.json"), &to_json(&report)?)?;
    }
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure::Numerical(format!(
            "{} of {} checks failed",
            report.checks.iter().filter(|c| !c.passed).count(),
            report.checks.len()
        )))
    }
}
