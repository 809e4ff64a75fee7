use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spinrecon::bloch::AlphaGrid;
use spinrecon::distributions::{
    alpha_grid, double_peak_distribution, step_distribution, ProbabilityDistribution,
};
use spinrecon::experiment::DesignSettings;
use spinrecon::greedy::Method;
use spinrecon::io::{parse_distribution, read_to_string};
use spinrecon::reconstruction::SolverOptions;
use spinrecon::search::SearchConfig;
use spinrecon::{Error, Result};

/// Every tunable of a run. Defaults reproduce the 30-point benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub k: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub delta: f64,
    pub u_max: f64,
    /// Fixed duration of GRA, OGRA and RCC pulses.
    pub tf: f64,
    /// Duration bound for GRAt, OGRAt and RCCt.
    pub tf_max: f64,
    pub tol: f64,
    pub k_plus: usize,
    /// Refined starts per inner maximization.
    pub n_starts: usize,
    pub n_random_starts: usize,
    pub lattice_amplitude: usize,
    pub timed_lattice_amplitude: usize,
    pub timed_lattice_time: usize,
    pub n_multistart: usize,
    pub radius_factor: f64,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub method: Method,
    /// `double-peak`, `step`, `uniform` or a distribution CSV path.
    pub target: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let design = DesignSettings::default();
        let solver = SolverOptions::default();
        Self {
            k: 30,
            alpha_min: -0.2,
            alpha_max: 0.2,
            delta: std::f64::consts::PI / 10.0,
            u_max: design.fixed.u_max,
            tf: design.fixed.tf,
            tf_max: design.timed.tf,
            tol: design.tol,
            k_plus: design.k_plus,
            n_starts: design.fixed.n_starts,
            n_random_starts: design.fixed.n_random_starts,
            lattice_amplitude: design.fixed.lattice_amplitude,
            timed_lattice_amplitude: design.timed.lattice_amplitude,
            timed_lattice_time: design.timed.lattice_time,
            n_multistart: 100,
            radius_factor: 100.0,
            max_iter: solver.max_iter,
            rel_tol: solver.rel_tol,
            noise_sigma: 0.0,
            seed: 42,
            method: Method::Gra,
            target: "double-peak".into(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Ok(serde_json::from_str(&read_to_string(p)?)?),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidArgument(format!(
                "k must be at least 2, got {}",
                self.k
            )));
        }
        if !(self.alpha_min < self.alpha_max)
            || !self.alpha_min.is_finite()
            || !self.alpha_max.is_finite()
        {
            return Err(Error::InvalidArgument(
                "alpha_min must be below alpha_max".into(),
            ));
        }
        if !self.delta.is_finite() {
            return Err(Error::InvalidArgument("delta must be finite".into()));
        }
        positive("u_max", self.u_max)?;
        positive("tf", self.tf)?;
        positive("tf_max", self.tf_max)?;
        positive("radius_factor", self.radius_factor)?;
        positive("rel_tol", self.rel_tol)?;
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tol must be nonnegative, got {}",
                self.tol
            )));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidArgument(
                "noise_sigma must be nonnegative".into(),
            ));
        }
        if self.k_plus < self.k {
            return Err(Error::InvalidArgument(format!(
                "k_plus = {} must be at least k = {}",
                self.k_plus, self.k
            )));
        }
        if self.n_multistart == 0 || self.max_iter == 0 {
            return Err(Error::InvalidArgument(
                "n_multistart and max_iter must be positive".into(),
            ));
        }
        self.design_settings().fixed.validate()?;
        self.design_settings().timed.validate()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<AlphaGrid> {
        alpha_grid(self.k, self.alpha_min, self.alpha_max, self.delta)
    }

    pub fn design_settings(&self) -> DesignSettings {
        let base = SearchConfig {
            u_max: self.u_max,
            n_starts: self.n_starts,
            n_random_starts: self.n_random_starts,
            ..SearchConfig::default()
        };
        DesignSettings {
            fixed: SearchConfig {
                tf: self.tf,
                lattice_amplitude: self.lattice_amplitude,
                ..base.clone()
            },
            timed: SearchConfig {
                tf: self.tf_max,
                optimize_time: true,
                lattice_amplitude: self.timed_lattice_amplitude,
                lattice_time: self.timed_lattice_time,
                ..base
            },
            tol: self.tol,
            k_plus: self.k_plus,
        }
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions {
            max_iter: self.max_iter,
            rel_tol: self.rel_tol,
            ..SolverOptions::default()
        }
    }

    /// Search box of the random baselines and the admissibility check.
    pub fn search_for(&self, method: Method) -> SearchConfig {
        let d = self.design_settings();
        if method.optimizes_time() {
            d.timed
        } else {
            d.fixed
        }
    }
}

/// A distribution resolved against a grid, with a display name.
pub struct Target {
    pub name: String,
    pub p: ProbabilityDistribution,
}

const GRID_MATCH_TOL: f64 = 1e-12;

pub fn resolve_target(spec: &str, grid: &AlphaGrid) -> Result<Target> {
    let named = match spec.to_ascii_lowercase().replace('_', "-").as_str() {
        "double-peak" => Some(double_peak_distribution(grid)),
        "step" => Some(step_distribution(grid)),
        "uniform" => Some(ProbabilityDistribution::uniform(grid.len())),
        _ => None,
    };
    if let Some(p) = named {
        return Ok(Target {
            name: spec.to_ascii_lowercase().replace('_', "-"),
            p,
        });
    }
    let path = PathBuf::from(spec);
    if !path.exists() {
        return Err(Error::InvalidArgument(format!(
            "unknown target '{spec}': expected double-peak, step, uniform or an existing CSV file"
        )));
    }
    let file = parse_distribution(&read_to_string(&path)?)?;
    check_grid(&file.alphas, grid)?;
    let name = path
        .file_stem()
        .map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned());
    Ok(Target { name, p: file.p })
}

fn check_grid(alphas: &[f64], grid: &AlphaGrid) -> Result<()> {
    if alphas.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            actual: alphas.len(),
        });
    }
    if let Some(l) = alphas
        .iter()
        .zip(&grid.alphas)
        .position(|(a, b)| (a - b).abs() > GRID_MATCH_TOL)
    {
        return Err(Error::Parse {
            row: l + 2,
            msg: format!(
                "alpha {} does not match the configured grid value {}",
                alphas[l], grid.alphas[l]
            ),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), c);
        let partial: RunConfig = serde_json::from_str(r#"{"k": 12, "method": "ograt"}"#).unwrap();
        assert_eq!(
            (partial.k, partial.method, partial.seed),
            (12, Method::Ograt, 42)
        );
    }

    #[test]
    fn rejects_bad_values() {
        for bad in [
            RunConfig {
                k: 1,
                ..RunConfig::default()
            },
            RunConfig {
                u_max: 0.0,
                ..RunConfig::default()
            },
            RunConfig {
                alpha_min: 0.3,
                ..RunConfig::default()
            },
            RunConfig {
                k_plus: 10,
                ..RunConfig::default()
            },
            RunConfig {
                tol: -1.0,
                ..RunConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"method": "bfgs"}"#).is_err());
    }

    #[test]
    fn named_targets() {
        let grid = RunConfig::default().grid().unwrap();
        assert_eq!(
            resolve_target("double_peak", &grid).unwrap().name,
            "double-peak"
        );
        assert_eq!(resolve_target("step", &grid).unwrap().p.len(), 30);
        assert!(resolve_target("nope", &grid).is_err());
    }
}
