//! Box-constrained multistart maximization over constant controls.
//!
//! The objectives met by the greedy designs oscillate quickly in both the
//! amplitudes and the duration, so a single local ascent is hopeless. Each
//! maximization first screens a regular lattice over the admissible box,
//! keeps the best lattice-local maxima as starting points (plus a few seeded
//! uniform draws), and polishes every start with a projected quasi-Newton
//! ascent using central finite-difference gradients.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::{propagate_grid_into, propagate_transverse, AlphaGrid, ControlPulse};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Amplitude bound `u_m`.
    pub u_max: f64,
    /// Fixed duration, or the duration bound when `optimize_time` is set.
    pub tf: f64,
    pub optimize_time: bool,
    /// Screening points per amplitude axis (endpoints included).
    pub lattice_amplitude: usize,
    /// Screening slices over `(0, tf]` when the duration is free.
    pub lattice_time: usize,
    /// Best lattice-local maxima polished by local ascent.
    pub n_starts: usize,
    /// Additional uniformly drawn starting points.
    pub n_random_starts: usize,
    /// Stop when the projected gradient falls below `grad_tol * max(1, |f|)`.
    pub grad_tol: f64,
    /// Stop when an accepted step is shorter than this in every coordinate.
    pub step_tol: f64,
    /// Longest trial step of the line search, in control units.
    pub max_step: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            u_max: 10.0,
            tf: 16.0,
            optimize_time: false,
            lattice_amplitude: 101,
            lattice_time: 25,
            n_starts: 8,
            n_random_starts: 2,
            grad_tol: 1e-9,
            step_tol: 1e-11,
            max_step: 0.25,
            max_iter: 200,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.u_max > 0.0) || !self.u_max.is_finite() {
            return bad("amplitude bound must be positive");
        }
        if !(self.tf > 0.0) || !self.tf.is_finite() {
            return bad("duration must be positive");
        }
        if self.lattice_amplitude < 2 || (self.optimize_time && self.lattice_time < 1) {
            return bad("screening lattice needs at least two amplitude points and one time slice");
        }
        if self.n_starts + self.n_random_starts == 0 {
            return bad("at least one start is required");
        }
        if !(self.max_step > 0.0) {
            return bad("max_step must be positive");
        }
        Ok(())
    }

    fn lower(&self) -> Vector3<f64> {
        let t = if self.optimize_time { 0.0 } else { self.tf };
        Vector3::new(-self.u_max, -self.u_max, t)
    }

    fn upper(&self) -> Vector3<f64> {
        Vector3::new(self.u_max, self.u_max, self.tf)
    }

    fn dims(&self) -> usize {
        if self.optimize_time {
            3
        } else {
            2
        }
    }
}

/// A maximizer together with the objective value it attains.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Maximum {
    pub pulse: ControlPulse,
    pub value: f64,
}

/// Regular lattice over the admissible box; index `(t * n + y) * n + x`.
#[derive(Clone, Debug)]
pub struct ScreeningLattice {
    n_amp: usize,
    n_time: usize,
    points: Vec<ControlPulse>,
}

impl ScreeningLattice {
    pub fn new(config: &SearchConfig) -> Self {
        let n_amp = config.lattice_amplitude;
        let amps: Vec<f64> = (0..n_amp)
            .map(|i| -config.u_max + 2.0 * config.u_max * i as f64 / (n_amp - 1) as f64)
            .collect();
        let times: Vec<f64> = if config.optimize_time {
            (1..=config.lattice_time)
                .map(|i| config.tf * i as f64 / config.lattice_time as f64)
                .collect()
        } else {
            vec![config.tf]
        };
        let mut points = Vec::with_capacity(amps.len() * amps.len() * times.len());
        for &t in &times {
            for &uy in &amps {
                for &ux in &amps {
                    points.push(ControlPulse::new(ux, uy, t));
                }
            }
        }
        Self {
            n_amp,
            n_time: times.len(),
            points,
        }
    }

    pub fn points(&self) -> &[ControlPulse] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Lattice points whose value is at least that of every lattice neighbour
    /// (8- or 26-neighbourhood), best first. Ties keep lattice order.
    pub fn local_maxima(&self, values: &[f64]) -> Vec<usize> {
        let n = self.n_amp as isize;
        let nt = self.n_time as isize;
        let idx = |x: isize, y: isize, t: isize| ((t * n + y) * n + x) as usize;
        let mut found = Vec::new();
        for t in 0..nt {
            for y in 0..n {
                for x in 0..n {
                    let v = values[idx(x, y, t)];
                    if !v.is_finite() {
                        continue;
                    }
                    let mut is_max = true;
                    'nb: for dt in -1..=1 {
                        for dy in -1..=1 {
                            for dx in -1..=1 {
                                if dx == 0 && dy == 0 && dt == 0 {
                                    continue;
                                }
                                let (xx, yy, tt) = (x + dx, y + dy, t + dt);
                                if xx < 0 || yy < 0 || tt < 0 || xx >= n || yy >= n || tt >= nt {
                                    continue;
                                }
                                if values[idx(xx, yy, tt)] > v {
                                    is_max = false;
                                    break 'nb;
                                }
                            }
                        }
                    }
                    if is_max {
                        found.push(idx(x, y, t));
                    }
                }
            }
        }
        found.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        found
    }
}

/// Responses of every grid value at every lattice point, cached so that
/// direction objectives can be screened with a single matrix product.
#[derive(Clone, Debug)]
pub struct ResponseLattice {
    lattice: ScreeningLattice,
    /// `2N x K`: rows `2p` and `2p + 1` hold the x and y readings at point `p`.
    responses: DMatrix<f64>,
}

impl ResponseLattice {
    pub fn new(grid: &AlphaGrid, config: &SearchConfig) -> Self {
        let lattice = ScreeningLattice::new(config);
        let k = grid.len();
        let n = lattice.len();
        // fill row-major per point, then transpose into column-major storage
        let mut rows = vec![0.0; 2 * n * k];
        rows.par_chunks_mut(2 * k)
            .zip(lattice.points.par_iter())
            .for_each(|(chunk, p)| {
                let mut buf = vec![0.0; 2 * k];
                propagate_grid_into(p, grid, &mut buf);
                for l in 0..k {
                    chunk[l] = buf[2 * l];
                    chunk[k + l] = buf[2 * l + 1];
                }
            });
        let responses = DMatrix::from_row_slice(2 * n, k, &rows);
        Self { lattice, responses }
    }

    pub fn lattice(&self) -> &ScreeningLattice {
        &self.lattice
    }

    /// Screening values `||Y(u_p) r||^2` for each direction (column of `directions`).
    /// Returns one vector of lattice values per direction.
    pub fn screen(&self, directions: &DMatrix<f64>) -> Vec<Vec<f64>> {
        let z = &self.responses * directions;
        let n = self.lattice.len();
        (0..directions.ncols())
            .map(|c| {
                let col = z.column(c);
                (0..n)
                    .map(|p| col[2 * p].powi(2) + col[2 * p + 1].powi(2))
                    .collect()
            })
            .collect()
    }
}

/// `||sum_l r_l Y_{u, alpha_l}||^2`, the objective shared by every greedy step.
pub fn direction_value(pulse: &ControlPulse, grid: &AlphaGrid, r: &[f64]) -> f64 {
    let (mut x, mut y) = (0.0, 0.0);
    for (&a, &w) in grid.alphas.iter().zip(r) {
        if w == 0.0 {
            continue;
        }
        let reading = propagate_transverse(pulse, a, grid.delta);
        x += w * reading.x;
        y += w * reading.y;
    }
    x * x + y * y
}

/// Multistart maximization of an arbitrary objective over the admissible controls.
///
/// The lattice is evaluated point by point; see [`maximize_direction`] for the cached path.
pub fn maximize_over_controls<F>(objective: F, config: &SearchConfig) -> Result<Maximum>
where
    F: Fn(&ControlPulse) -> f64 + Sync,
{
    config.validate()?;
    let lattice = ScreeningLattice::new(config);
    let values: Vec<f64> = lattice.points.par_iter().map(&objective).collect();
    Ok(refine(&objective, &lattice, &values, config))
}

/// Maximizes `||Y(u) r||^2` using a cached response lattice for the screening pass.
pub fn maximize_direction(
    lattice: &ResponseLattice,
    grid: &AlphaGrid,
    r: &[f64],
    config: &SearchConfig,
) -> Maximum {
    let dir = DMatrix::from_column_slice(r.len(), 1, r);
    let values = lattice.screen(&dir).pop().unwrap();
    refine_direction(lattice, grid, r, &values, config)
}

/// Polishing pass for a direction objective whose screening values are already known.
pub(crate) fn refine_direction(
    lattice: &ResponseLattice,
    grid: &AlphaGrid,
    r: &[f64],
    values: &[f64],
    config: &SearchConfig,
) -> Maximum {
    let objective = |p: &ControlPulse| direction_value(p, grid, r);
    refine(&objective, &lattice.lattice, values, config)
}

fn refine<F>(
    objective: &F,
    lattice: &ScreeningLattice,
    values: &[f64],
    config: &SearchConfig,
) -> Maximum
where
    F: Fn(&ControlPulse) -> f64 + Sync,
{
    let lo = config.lower();
    let hi = config.upper();
    let mut starts: Vec<Vector3<f64>> = lattice
        .local_maxima(values)
        .into_iter()
        .take(config.n_starts)
        .map(|i| to_vec(&lattice.points[i]))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.n_random_starts {
        let mut x = Vector3::zeros();
        for d in 0..3 {
            x[d] = if lo[d] < hi[d] {
                rng.random_range(lo[d]..=hi[d])
            } else {
                lo[d]
            };
        }
        starts.push(x);
    }
    if starts.is_empty() {
        starts.push((lo + hi) / 2.0);
    }

    let results: Vec<(Vector3<f64>, f64)> = starts
        .par_iter()
        .map(|x0| local_ascent(objective, *x0, &lo, &hi, config))
        .collect();

    let mut best = (results[0].0, results[0].1);
    for r in &results[1..] {
        if r.1 > best.1 {
            best = *r;
        }
    }
    Maximum {
        pulse: to_pulse(&best.0),
        value: best.1,
    }
}

fn to_vec(p: &ControlPulse) -> Vector3<f64> {
    Vector3::new(p.ux, p.uy, p.tf)
}

fn to_pulse(x: &Vector3<f64>) -> ControlPulse {
    ControlPulse::new(x[0], x[1], x[2])
}

fn clamp(x: &Vector3<f64>, lo: &Vector3<f64>, hi: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(
        x[0].clamp(lo[0], hi[0]),
        x[1].clamp(lo[1], hi[1]),
        x[2].clamp(lo[2], hi[2]),
    )
}

fn fd_gradient<F>(f: &F, x: &Vector3<f64>, dims: usize) -> Vector3<f64>
where
    F: Fn(&ControlPulse) -> f64,
{
    let mut g = Vector3::zeros();
    for d in 0..dims {
        let h = 1e-6 * x[d].abs().max(1.0);
        let mut xp = *x;
        let mut xm = *x;
        xp[d] += h;
        xm[d] -= h;
        g[d] = (f(&to_pulse(&xp)) - f(&to_pulse(&xm))) / (2.0 * h);
    }
    g
}

/// Projected BFGS ascent with Armijo backtracking inside the box `[lo, hi]`.
fn local_ascent<F>(
    f: &F,
    x0: Vector3<f64>,
    lo: &Vector3<f64>,
    hi: &Vector3<f64>,
    config: &SearchConfig,
) -> (Vector3<f64>, f64)
where
    F: Fn(&ControlPulse) -> f64,
{
    let dims = config.dims();
    let mut x = clamp(&x0, lo, hi);
    let mut fx = f(&to_pulse(&x));
    if !fx.is_finite() {
        return (x, fx);
    }
    let mut g = fd_gradient(f, &x, dims);
    let mut h_inv = Matrix3::identity();
    let mut scaled = false;

    for _ in 0..config.max_iter {
        let mut free = [false; 3];
        for d in 0..dims {
            let pinned_low = x[d] <= lo[d] && g[d] < 0.0;
            let pinned_high = x[d] >= hi[d] && g[d] > 0.0;
            free[d] = !(pinned_low || pinned_high);
        }
        let mask = |v: Vector3<f64>| {
            Vector3::new(
                if free[0] { v[0] } else { 0.0 },
                if free[1] { v[1] } else { 0.0 },
                if free[2] { v[2] } else { 0.0 },
            )
        };
        let pg = mask(g);
        if pg.norm() <= config.grad_tol * fx.abs().max(1.0) {
            break;
        }
        let mut dir = mask(h_inv * pg);
        if dir.dot(&pg) <= 0.0 {
            h_inv = Matrix3::identity();
            scaled = false;
            dir = pg;
        }
        let longest = dir.amax();
        let mut t = if longest > config.max_step {
            config.max_step / longest
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..40 {
            let xn = clamp(&(x + dir * t), lo, hi);
            let s = xn - x;
            if s.amax() == 0.0 {
                break;
            }
            let fxn = f(&to_pulse(&xn));
            if fxn.is_finite() && fxn >= fx + 1e-4 * g.dot(&s) {
                accepted = Some((xn, fxn, s));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fxn, s)) = accepted else { break };

        let gn = fd_gradient(f, &xn, dims);
        // curvature pair for the minimization of -f
        let y = -(gn - g);
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if !scaled {
                h_inv = Matrix3::identity() * (sy / y.dot(&y));
                scaled = true;
            }
            let rho = 1.0 / sy;
            let i = Matrix3::identity();
            let left = i - s * y.transpose() * rho;
            let right = i - y * s.transpose() * rho;
            h_inv = left * h_inv * right + s * s.transpose() * rho;
        }
        x = xn;
        fx = fxn;
        g = gn;
        if s.amax() < config.step_tol {
            break;
        }
    }
    (x, fx)
}
