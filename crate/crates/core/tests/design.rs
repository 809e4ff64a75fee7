use nalgebra::DMatrix;
use spinrecon::bloch::{propagate, BlochState, ControlPulse};
use spinrecon::distributions::{
    double_peak_distribution, random_orthonormal_basis, ProbabilityDistribution,
};
use spinrecon::experiment::{
    design_controls, gra_basis, ogra_candidates, standard_grid, run_benchmark,
    synthesize_measurements, DesignSettings, Scenario,
};
use spinrecon::gram::{spectrum_of, w_canonical, SPECTRAL_FLOOR};
use spinrecon::greedy::{run_gra, run_grat, ControlSet, Method};
use spinrecon::ogra::{run_ogra, OgraConfig};
use spinrecon::reconstruction::{build_problem, multistart_identify, SolverOptions};
use spinrecon::search::SearchConfig;

/// `‖sum_l phi(l) Y_{u, alpha_l}‖²` from per-spin propagation.
fn brute_value(phi: &[f64], p: &ControlPulse) -> f64 {
    let grid = standard_grid();
    let (mut x, mut y) = (0.0, 0.0);
    for (l, &a) in grid.alphas.iter().enumerate() {
        let r = propagate(p, a, grid.delta, &BlochState::NORTH_POLE);
        x += phi[l] * r.x;
        y += phi[l] * r.y;
    }
    x * x + y * y
}

#[test]
fn first_gra_pulse_beats_a_dense_lattice() {
    let grid = standard_grid();
    let basis = gra_basis(30, 42);
    let phi: Vec<f64> = basis.function(0).iter().copied().collect();
    let n = 101;
    let mut best = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let ux = -10.0 + 20.0 * i as f64 / (n - 1) as f64;
            let uy = -10.0 + 20.0 * j as f64 / (n - 1) as f64;
            best = best.max(brute_value(&phi, &ControlPulse::new(ux, uy, 16.0)));
        }
    }
    let res = run_gra(&basis, &grid, &SearchConfig::default()).unwrap();
    let first = res.controls.pulses[0];
    let achieved = brute_value(&phi, &first);
    assert!((achieved - res.init_value).abs() <= 1e-10 * achieved);
    assert!(
        achieved >= best * (1.0 - 1e-12),
        "{achieved} < lattice {best}"
    );
}

#[test]
fn gra_trace_satisfies_the_lemmas() {
    let grid = standard_grid();
    let res = run_gra(&gra_basis(30, 42), &grid, &SearchConfig::default()).unwrap();
    assert_eq!(res.controls.len(), 30);
    assert_eq!(res.trace.len(), 29);
    for it in &res.trace {
        if it.kernel_block_min_eig <= SPECTRAL_FLOOR {
            assert!(it.kernel_residual <= 1e-8, "k = {}", it.k);
        }
        assert!(it.gain > 0.0, "k = {}", it.k);
        assert!(it.next_block_min_eig > SPECTRAL_FLOOR, "k = {}", it.k);
        assert!((it.value - it.gain).abs() <= 1e-9 * it.value.max(1.0));
    }
    assert!(res.controls.all_admissible(10.0, 16.0));
    assert!(res.controls.pulses.iter().all(|p| p.tf == 16.0));
    let w = w_canonical(&res.controls.pulses, &grid);
    assert_eq!(spectrum_of(w.matrix()).numerical_rank(), 30);
}

#[test]
fn designs_are_deterministic() {
    let grid = standard_grid();
    let settings = DesignSettings::default();
    for m in [Method::Gra, Method::Grat, Method::Ogra, Method::Rcct] {
        let a = design_controls(m, &grid, &settings, 5).unwrap();
        let b = design_controls(m, &grid, &settings, 5).unwrap();
        assert_eq!(a.controls, b.controls, "{m}");
    }
}

#[test]
fn grat_respects_bounds_and_reduces_to_gra() {
    let grid = standard_grid();
    let basis = random_orthonormal_basis(30, 9);
    let timed = SearchConfig {
        optimize_time: true,
        lattice_amplitude: 41,
        lattice_time: 21,
        ..SearchConfig::default()
    };
    let res = run_grat(&basis, &grid, &timed).unwrap();
    assert_eq!(res.controls.method, Method::Grat);
    assert!(res.controls.all_admissible(10.0, 16.0));
    assert!(res.controls.pulses.iter().any(|p| p.tf < 16.0));

    let fixed = SearchConfig::default();
    let a = run_grat(&basis, &grid, &fixed).unwrap();
    let b = run_gra(&basis, &grid, &fixed).unwrap();
    assert_eq!(a.controls, b.controls);
}

#[test]
fn ogra_invariants() {
    let grid = standard_grid();
    let cands = ogra_candidates(30, 60, 42).unwrap();
    let res = run_ogra(
        &cands,
        &grid,
        &OgraConfig {
            search: SearchConfig::default(),
            tol: 1e-14,
        },
    )
    .unwrap();
    let n = res.controls.len();
    assert!((1..=30).contains(&n));
    assert_eq!(res.selected_basis.len(), res.selected_indices.len());
    assert!(res.selected_basis.len() <= 30);
    let mut seen = res.selected_indices.clone();
    seen.sort();
    seen.dedup();
    assert_eq!(seen.len(), res.selected_indices.len());
    let g = res.selected_basis.gram();
    assert!((g - DMatrix::identity(seen.len(), seen.len())).amax() <= 1e-10);
    for r in &res.trace {
        if let Some(e) = r.active_min_eig {
            assert!(e > SPECTRAL_FLOOR, "iteration {}", r.iteration);
        }
    }
}

fn gra_problem() -> (
    spinrecon::reconstruction::IdentificationProblem,
    ProbabilityDistribution,
) {
    let grid = standard_grid();
    let res = run_gra(&gra_basis(30, 42), &grid, &SearchConfig::default()).unwrap();
    let p = double_peak_distribution(&grid);
    let ms = synthesize_measurements(&res.controls, &p, &grid).unwrap();
    (build_problem(&res.controls, &grid, &ms).unwrap(), p)
}

#[test]
fn definite_design_gives_a_unique_reconstruction() {
    let (problem, p) = gra_problem();
    assert!(spectrum_of(&problem.gram()).min() > 0.0);
    let out = multistart_identify(&problem, &p, 100, 100.0, 1, &SolverOptions::default()).unwrap();
    let first = out.runs[0].p_f.as_slice();
    for r in &out.runs {
        let d: f64 = r
            .p_f
            .as_slice()
            .iter()
            .zip(first)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(d <= 1e-5);
    }
}

#[test]
fn single_control_has_many_minimizers() {
    let grid = standard_grid();
    let cs = ControlSet {
        pulses: vec![ControlPulse::new(3.0, 7.0, 16.0)],
        method: Method::Rcc,
    };
    let p = double_peak_distribution(&grid);
    let ms = synthesize_measurements(&cs, &p, &grid).unwrap();
    let problem = build_problem(&cs, &grid, &ms).unwrap();
    let out = multistart_identify(&problem, &p, 100, 100.0, 3, &SolverOptions::default()).unwrap();
    let found = out.runs.iter().enumerate().any(|(i, a)| {
        out.runs[i + 1..].iter().any(|b| {
            let d: f64 = a
                .p_f
                .as_slice()
                .iter()
                .zip(b.p_f.as_slice())
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            d > 1e-3 && (a.objective - b.objective).abs() <= 1e-10
        })
    });
    assert!(found);
}

#[test]
fn benchmark_report_is_deterministic() {
    let grid = standard_grid();
    let sc = Scenario {
        target_name: "double-peak".into(),
        target: double_peak_distribution(&grid),
        grid,
        methods: vec![Method::Gra, Method::Rcc],
        design: DesignSettings::default(),
        n_multistart: 5,
        radius_factor: 100.0,
        solver: SolverOptions {
            max_iter: 2000,
            ..SolverOptions::default()
        },
        master_seed: 11,
        noise_sigma: 0.0,
    };
    let a = run_benchmark(&sc).unwrap();
    let b = run_benchmark(&sc).unwrap();
    for (x, y) in a.methods.iter().zip(&b.methods) {
        assert_eq!(
            x.min_relative_error.to_bits(),
            y.min_relative_error.to_bits()
        );
        assert_eq!(x.p_recovered, y.p_recovered);
        assert!(x.failure.is_none());
    }
    assert_eq!(a.spin_count, 100_000);
    assert!(a.to_table().contains("RCC"));
}
