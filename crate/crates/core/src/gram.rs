//! The Gram matrix `W` of a control set, its per-control summands and spectral diagnostics.
//!
//! For a basis `phi_1..phi_n` and a pulse `u`, `gamma_j(u) = sum_l phi_j(l) Y_{u,alpha_l}`
//! and `W(u)_{ij} = <gamma_i(u), gamma_j(u)>`. Summing over controls gives `W`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bloch::{propagate_grid_into, AlphaGrid, ControlPulse, TransverseReading};
use crate::distributions::BasisSet;
use crate::error::{Error, Result};

/// Eigenvalues below `SPECTRAL_FLOOR * lambda_max` count as zero.
pub const SPECTRAL_FLOOR: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    w: DMatrix<f64>,
    n_controls: usize,
}

impl GramMatrix {
    pub fn new(w: DMatrix<f64>, n_controls: usize) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::DimensionMismatch {
                expected: w.nrows(),
                actual: w.ncols(),
            });
        }
        Ok(Self { w, n_controls })
    }

    pub fn zeros(k: usize) -> Self {
        Self {
            w: DMatrix::zeros(k, k),
            n_controls: 0,
        }
    }

    pub fn identity(k: usize) -> Self {
        Self {
            w: DMatrix::identity(k, k),
            n_controls: 0,
        }
    }

    /// Gram matrix of the columns of `gamma`, i.e. `gamma^T gamma`.
    pub fn from_factor(gamma: &DMatrix<f64>, n_controls: usize) -> Self {
        Self {
            w: gamma.tr_mul(gamma),
            n_controls,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.w
    }

    /// Adds another summand in place.
    pub fn add_assign(&mut self, other: &GramMatrix) -> Result<()> {
        if other.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        self.w += &other.w;
        self.n_controls += other.n_controls;
        Ok(())
    }

    /// Change of coordinates `B^T W B` to the basis whose functions are the columns of `B`.
    pub fn in_basis(&self, basis: &BasisSet) -> Result<GramMatrix> {
        if basis.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: basis.dim(),
            });
        }
        let b = basis.matrix();
        let mut w = b.tr_mul(&(&self.w * b));
        symmetrize(&mut w);
        Ok(GramMatrix {
            w,
            n_controls: self.n_controls,
        })
    }

    pub fn max_asymmetry(&self) -> f64 {
        (&self.w - self.w.transpose()).amax()
    }
}

pub(crate) fn symmetrize(w: &mut DMatrix<f64>) {
    let n = w.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (w[(i, j)] + w[(j, i)]);
            w[(i, j)] = m;
            w[(j, i)] = m;
        }
    }
}

/// The `2 x K` matrix whose column `l` is the reading of grid value `alpha_l`.
pub fn response_matrix(pulse: &ControlPulse, grid: &AlphaGrid) -> DMatrix<f64> {
    let mut buf = vec![0.0; 2 * grid.len()];
    propagate_grid_into(pulse, grid, &mut buf);
    DMatrix::from_column_slice(2, grid.len(), &buf)
}

/// `gamma_j = sum_l phi_j(l) Y_l` for every basis function.
pub fn gamma_vectors(basis: &BasisSet, readings: &[TransverseReading]) -> Result<Vec<[f64; 2]>> {
    if readings.len() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            actual: readings.len(),
        });
    }
    let b = basis.matrix();
    Ok((0..basis.len())
        .map(|j| {
            let col = b.column(j);
            readings
                .iter()
                .zip(col.iter())
                .fold([0.0, 0.0], |acc, (r, &phi)| {
                    [acc[0] + phi * r.x, acc[1] + phi * r.y]
                })
        })
        .collect())
}

/// The one-control summand `W(u)` in the coordinates of `basis`.
pub fn w_single(basis: &BasisSet, pulse: &ControlPulse, grid: &AlphaGrid) -> Result<GramMatrix> {
    if basis.dim() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            actual: basis.dim(),
        });
    }
    let gamma = response_matrix(pulse, grid) * basis.matrix();
    Ok(GramMatrix::from_factor(&gamma, 1))
}

/// `W` summed over a set of controls, in canonical (indicator) coordinates.
pub fn w_canonical(pulses: &[ControlPulse], grid: &AlphaGrid) -> GramMatrix {
    let k = grid.len();
    let mut stacked = DMatrix::zeros(2 * pulses.len(), k);
    let mut buf = vec![0.0; 2 * k];
    for (m, p) in pulses.iter().enumerate() {
        propagate_grid_into(p, grid, &mut buf);
        for l in 0..k {
            stacked[(2 * m, l)] = buf[2 * l];
            stacked[(2 * m + 1, l)] = buf[2 * l + 1];
        }
    }
    GramMatrix::from_factor(&stacked, pulses.len())
}

/// Entrywise sum of summands.
pub fn w_accumulate(terms: &[GramMatrix]) -> Result<GramMatrix> {
    let first = terms
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to accumulate".into()))?;
    let mut acc = GramMatrix::zeros(first.dim());
    for t in terms {
        acc.add_assign(t)?;
    }
    Ok(acc)
}

/// Eigen-decomposition with eigenvalues in descending order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Spectrum {
    pub values: Vec<f64>,
    /// Column `i` belongs to `values[i]`.
    #[serde(skip)]
    pub vectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn max(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn min(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// Number of eigenvalues above the relative spectral floor.
    pub fn numerical_rank(&self) -> usize {
        let top = self.max();
        if top <= 0.0 {
            return 0;
        }
        self.values
            .iter()
            .filter(|&&v| v > SPECTRAL_FLOOR * top)
            .count()
    }

    pub fn condition_number(&self) -> f64 {
        let (top, bottom) = (self.max(), self.min());
        if top <= 0.0 || bottom <= SPECTRAL_FLOOR * top {
            f64::INFINITY
        } else {
            top / bottom
        }
    }

    /// Sign changes along each eigenvector, a proxy for how oscillatory a mode is.
    pub fn sign_changes(&self) -> Vec<usize> {
        (0..self.vectors.ncols())
            .map(|i| {
                let col = self.vectors.column(i);
                let scale = col.amax();
                let mut last = 0.0f64;
                let mut changes = 0;
                for &v in col.iter() {
                    if v.abs() <= 1e-12 * scale {
                        continue;
                    }
                    if last != 0.0 && v.signum() != last.signum() {
                        changes += 1;
                    }
                    last = v;
                }
                changes
            })
            .collect()
    }
}

pub fn spectrum_of(w: &DMatrix<f64>) -> Spectrum {
    let n = w.nrows();
    if n == 0 {
        return Spectrum {
            values: vec![],
            vectors: DMatrix::zeros(0, 0),
        };
    }
    let mut sym = w.clone();
    symmetrize(&mut sym);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Spectrum { values, vectors }
}

pub fn spectrum(w: &GramMatrix) -> Spectrum {
    spectrum_of(&w.w)
}

/// `lambda_max / lambda_min`, or infinity when `lambda_min` is below the spectral floor.
pub fn condition_number(w: &GramMatrix) -> f64 {
    spectrum(w).condition_number()
}

pub fn quadratic_form(w: &GramMatrix, v: &DVector<f64>) -> Result<f64> {
    if v.len() != w.dim() {
        return Err(Error::DimensionMismatch {
            expected: w.dim(),
            actual: v.len(),
        });
    }
    Ok(v.dot(&(&w.w * v)))
}

/// The `k x k` upper-left block.
pub fn upper_left_block(w: &GramMatrix, k: usize) -> Result<GramMatrix> {
    check_k(w, k)?;
    Ok(GramMatrix {
        w: w.w.view((0, 0), (k, k)).into_owned(),
        n_controls: w.n_controls,
    })
}

/// The first `k` entries of column `k + 1` (zero-based column `k`).
pub fn column_slice(w: &GramMatrix, k: usize) -> Result<DVector<f64>> {
    if k == 0 || k >= w.dim() {
        return Err(Error::InvalidArgument(format!(
            "column slice needs 1 <= k < {}, got {k}",
            w.dim()
        )));
    }
    Ok(w.w.view((0, k), (k, 1)).column(0).into_owned())
}

fn check_k(w: &GramMatrix, k: usize) -> Result<()> {
    if k == 0 || k > w.dim() {
        return Err(Error::InvalidArgument(format!(
            "block size must satisfy 1 <= k <= {}, got {k}",
            w.dim()
        )));
    }
    Ok(())
}

/// Solves `A x = b` for symmetric PSD `A`: Cholesky when `A` is definite above the
/// spectral floor, otherwise the minimum-norm least-squares solution.
pub fn solve_psd(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let spec = spectrum_of(a);
    let top = spec.max();
    if top <= 0.0 {
        return DVector::zeros(b.len());
    }
    let floor = SPECTRAL_FLOOR * top;
    if spec.min() > floor {
        if let Some(chol) = a.clone().cholesky() {
            return chol.solve(b);
        }
    }
    let coeffs = spec.vectors.tr_mul(b);
    let scaled = DVector::from_iterator(
        coeffs.len(),
        coeffs
            .iter()
            .zip(&spec.values)
            .map(|(c, &lam)| if lam > floor { c / lam } else { 0.0 }),
    );
    &spec.vectors * scaled
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{alpha_grid, random_orthonormal_basis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> AlphaGrid {
        alpha_grid(30, -0.2, 0.2, std::f64::consts::PI / 10.0).unwrap()
    }

    fn random_pulse(rng: &mut ChaCha8Rng) -> ControlPulse {
        ControlPulse::new(
            rng.random_range(-10.0..=10.0),
            rng.random_range(-10.0..=10.0),
            16.0,
        )
    }

    #[test]
    fn gamma_examples() {
        let b = BasisSet::canonical(3);
        let zeros = vec![TransverseReading::ZERO; 3];
        assert!(gamma_vectors(&b, &zeros)
            .unwrap()
            .iter()
            .all(|g| *g == [0.0, 0.0]));

        let readings = vec![
            TransverseReading { x: 0.1, y: 0.2 },
            TransverseReading { x: -0.3, y: 0.4 },
            TransverseReading { x: 0.5, y: -0.6 },
        ];
        let g = gamma_vectors(&b, &readings).unwrap();
        for (gj, r) in g.iter().zip(&readings) {
            assert_eq!(*gj, [r.x, r.y]);
        }

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let b2 = BasisSet::from_matrix(DMatrix::from_column_slice(2, 1, &[s, s]));
        let r2 = [
            TransverseReading { x: 1.0, y: 0.0 },
            TransverseReading { x: 0.0, y: 1.0 },
        ];
        let g2 = gamma_vectors(&b2, &r2).unwrap();
        assert!((g2[0][0] - s).abs() < 1e-16 && (g2[0][1] - s).abs() < 1e-16);

        assert!(gamma_vectors(&b, &r2).is_err());
    }

    #[test]
    fn single_control_summand() {
        let g = grid();
        let b = random_orthonormal_basis(30, 1);
        let w0 = w_single(&b, &ControlPulse::new(0.0, 0.0, 16.0), &g).unwrap();
        assert_eq!(w0.matrix().amax(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let p = random_pulse(&mut rng);
            let w = w_single(&b, &p, &g).unwrap();
            let s = spectrum(&w);
            assert!(s.numerical_rank() <= 2);
            assert!(w.matrix()[(0, 0)] >= 0.0);
            let gam = gamma_vectors(&b, &crate::bloch::propagate_grid(&p, &g)).unwrap();
            let n1 = gam[0][0].powi(2) + gam[0][1].powi(2);
            assert!((w.matrix()[(0, 0)] - n1).abs() < 1e-12);
        }
    }

    #[test]
    fn accumulation_is_additive() {
        let g = grid();
        let b = random_orthonormal_basis(30, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let terms: Vec<GramMatrix> = (0..4)
            .map(|_| w_single(&b, &random_pulse(&mut rng), &g).unwrap())
            .collect();
        assert_eq!(w_accumulate(&terms[..1]).unwrap(), terms[0]);
        let acc = w_accumulate(&terms).unwrap();
        assert_eq!(acc.n_controls(), 4);
        assert!(spectrum(&acc).numerical_rank() <= 8);
        let v = DVector::from_fn(30, |_, _| rng.random_range(-1.0..1.0));
        let sum: f64 = terms.iter().map(|t| quadratic_form(t, &v).unwrap()).sum();
        assert!((quadratic_form(&acc, &v).unwrap() - sum).abs() < 1e-10);

        assert!(w_accumulate(&[GramMatrix::zeros(2), GramMatrix::zeros(3)]).is_err());
        assert!(w_accumulate(&[]).is_err());
    }

    #[test]
    fn canonical_matches_basis_change() {
        let g = grid();
        let b = random_orthonormal_basis(30, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pulses: Vec<_> = (0..5).map(|_| random_pulse(&mut rng)).collect();
        let direct = w_accumulate(
            &pulses
                .iter()
                .map(|p| w_single(&b, p, &g).unwrap())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let via = w_canonical(&pulses, &g).in_basis(&b).unwrap();
        assert!((direct.matrix() - via.matrix()).amax() < 1e-12);
    }

    #[test]
    fn spectra_of_simple_matrices() {
        let z = spectrum(&GramMatrix::zeros(4));
        assert!(z.values.iter().all(|&v| v == 0.0));
        assert_eq!(condition_number(&GramMatrix::zeros(4)), f64::INFINITY);

        let i = spectrum(&GramMatrix::identity(5));
        assert!(i.values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert_eq!(condition_number(&GramMatrix::identity(5)), 1.0);

        let d = GramMatrix::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0])),
            0,
        )
        .unwrap();
        assert!((condition_number(&d) - 4.0).abs() < 1e-15);
        assert_eq!(spectrum(&d).values, vec![4.0, 1.0]);
    }

    #[test]
    fn spectrum_matches_singular_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let gamma = DMatrix::from_fn(7, 5, |_, _| rng.random_range(-1.0..1.0));
        let w = GramMatrix::from_factor(&gamma, 1);
        let mut sv: Vec<f64> = gamma
            .svd(false, false)
            .singular_values
            .iter()
            .map(|s| s * s)
            .collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in spectrum(&w).values.iter().zip(&sv) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn blocks_and_slices() {
        let m = DMatrix::from_fn(4, 4, |i, j| (i * 4 + j) as f64);
        let w = GramMatrix::new(m.clone(), 0).unwrap();
        assert_eq!(upper_left_block(&w, 4).unwrap().matrix(), &m);
        assert_eq!(
            upper_left_block(&w, 2).unwrap().matrix(),
            &m.view((0, 0), (2, 2)).into_owned()
        );
        assert_eq!(column_slice(&w, 2).unwrap().as_slice(), &[2.0, 6.0]);
        assert!(upper_left_block(&w, 0).is_err());
        assert!(upper_left_block(&w, 5).is_err());
        assert!(column_slice(&w, 4).is_err());

        let v = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        assert_eq!(quadratic_form(&GramMatrix::identity(3), &v).unwrap(), 14.0);
        assert!(quadratic_form(&GramMatrix::identity(2), &v).is_err());
    }

    #[test]
    fn psd_solve_definite_and_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let x = solve_psd(&a, &b);
        assert!((&a * &x - &b).norm() < 1e-14);

        // rank one: minimum-norm solution lies in the range
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let x = solve_psd(&a, &DVector::from_vec(vec![2.0, 2.0]));
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);

        assert_eq!(solve_psd(&DMatrix::zeros(2, 2), &b), DVector::zeros(2));
    }

    #[test]
    fn oscillatory_modes_count_sign_changes() {
        let v = DMatrix::from_column_slice(4, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, -1.0, 1.0, -1.0]);
        let s = Spectrum {
            values: vec![2.0, 1.0],
            vectors: v,
        };
        assert_eq!(s.sign_changes(), vec![0, 3]);
    }
}
