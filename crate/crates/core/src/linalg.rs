//! Real-valued design matrices and Tikhonov-regularized amplitude solves.
//!
//! A block with `W` chains is linear in its amplitudes once the frequencies
//! are fixed. Block 1 has columns `[cos(ω_j·θ) | −sin(ω_j·θ)]` and the
//! coefficient vector `(Re b, Im b)`; later blocks append
//! `[cos(ω′_j z) | −sin(ω′_j z)]` and `(Re b′, Im b′)`.
//!
//! The amplitudes minimize `n⁻¹|Ab − r|² + λ|b|²`, solved as the ordinary
//! least-squares problem on the stacked system `[A/√n ; √λ I] b = [r/√n ; 0]`
//! with a Householder QR factorization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative threshold on `|R_ii| / max_j |R_jj|` below which a column is
/// considered linearly dependent.
const RANK_TOL: f64 = 1e-12;

/// Which half of a block's columns a chain index refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    /// Columns driven by `ω_j · θ`.
    Input,
    /// Columns driven by `ω′_j z_{ℓ−1}`.
    Previous,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    matrix: DMatrix<f64>,
    width: usize,
    has_prime: bool,
}

impl DesignMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn has_prime(&self) -> bool {
        self.has_prime
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Recomputes the cosine/sine column pair of chain `j` for a new input
    /// frequency `freq` (length d).
    pub fn set_input_chain(&mut self, j: usize, inputs: &DMatrix<f64>, freq: &[f64]) {
        debug_assert_eq!(freq.len(), inputs.ncols());
        let w = self.width;
        for n in 0..inputs.nrows() {
            let mut arg = 0.0;
            for (k, f) in freq.iter().enumerate() {
                arg += f * inputs[(n, k)];
            }
            let (s, c) = arg.sin_cos();
            self.matrix[(n, j)] = c;
            self.matrix[(n, w + j)] = -s;
        }
    }

    /// Recomputes the cosine/sine column pair of chain `j` for a new
    /// previous-output frequency `freq_prime`.
    pub fn set_previous_chain(&mut self, j: usize, z_prev: &DVector<f64>, freq_prime: f64) {
        debug_assert!(self.has_prime);
        let w = self.width;
        for n in 0..z_prev.len() {
            let (s, c) = (freq_prime * z_prev[n]).sin_cos();
            self.matrix[(n, 2 * w + j)] = c;
            self.matrix[(n, 3 * w + j)] = -s;
        }
    }

    /// Copies the column pair of chain `j` from `other`, which must have the
    /// same shape.
    pub fn copy_chain_from(&mut self, other: &DesignMatrix, j: usize, kind: FeatureKind) {
        let w = self.width;
        let (a, b) = match kind {
            FeatureKind::Input => (j, w + j),
            FeatureKind::Previous => (2 * w + j, 3 * w + j),
        };
        self.matrix.set_column(a, &other.matrix.column(a));
        self.matrix.set_column(b, &other.matrix.column(b));
    }
}

/// Amplitudes of one block in real/imaginary form plus the attained
/// regularized objective.
#[derive(Clone, Debug, PartialEq)]
pub struct AmplitudeSolution {
    pub re_b: Vec<f64>,
    pub im_b: Vec<f64>,
    pub re_b_prime: Option<Vec<f64>>,
    pub im_b_prime: Option<Vec<f64>>,
    pub objective_value: f64,
}

impl AmplitudeSolution {
    /// The all-zero solution for a block of the given width, with objective
    /// `n⁻¹|r|²`.
    pub fn zeros(width: usize, has_prime: bool, objective_value: f64) -> Self {
        AmplitudeSolution {
            re_b: vec![0.0; width],
            im_b: vec![0.0; width],
            re_b_prime: has_prime.then(|| vec![0.0; width]),
            im_b_prime: has_prime.then(|| vec![0.0; width]),
            objective_value,
        }
    }

    pub fn width(&self) -> usize {
        self.re_b.len()
    }

    /// Coefficients stacked in design-matrix column order.
    pub fn coefficients(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(4 * self.width());
        out.extend_from_slice(&self.re_b);
        out.extend_from_slice(&self.im_b);
        if let (Some(re), Some(im)) = (&self.re_b_prime, &self.im_b_prime) {
            out.extend_from_slice(re);
            out.extend_from_slice(im);
        }
        DVector::from_vec(out)
    }

    /// `|b_j| = √(Re(b_j)² + Im(b_j)²)`.
    pub fn magnitude(&self, j: usize) -> f64 {
        self.re_b[j].hypot(self.im_b[j])
    }

    /// `|b′_j|`; zero for block-1 solutions.
    pub fn magnitude_prime(&self, j: usize) -> f64 {
        match (&self.re_b_prime, &self.im_b_prime) {
            (Some(re), Some(im)) => re[j].hypot(im[j]),
            _ => 0.0,
        }
    }

    /// Squared Euclidean norm over every real coefficient.
    pub fn norm_squared(&self) -> f64 {
        self.coefficients().norm_squared()
    }

    fn from_coefficients(b: &DVector<f64>, width: usize, has_prime: bool, objective: f64) -> Self {
        let s = b.as_slice();
        AmplitudeSolution {
            re_b: s[..width].to_vec(),
            im_b: s[width..2 * width].to_vec(),
            re_b_prime: has_prime.then(|| s[2 * width..3 * width].to_vec()),
            im_b_prime: has_prime.then(|| s[3 * width..4 * width].to_vec()),
            objective_value: objective,
        }
    }
}

/// Builds the block design matrix.
///
/// `inputs` is N×d, `freqs` is W×d. `prev_block_output` (length N) and
/// `freqs_prime` (length W) must be given together for blocks after the
/// first.
pub fn assemble_design_matrix(
    inputs: &DMatrix<f64>,
    prev_block_output: Option<&DVector<f64>>,
    freqs: &DMatrix<f64>,
    freqs_prime: Option<&DVector<f64>>,
) -> Result<DesignMatrix> {
    let n = inputs.nrows();
    let d = inputs.ncols();
    let w = freqs.nrows();
    if freqs.ncols() != d {
        return Err(Error::DimensionMismatch {
            what: "frequency dimension (columns of freqs vs input dimension d)",
            expected: d,
            found: freqs.ncols(),
        });
    }
    if w == 0 {
        return Err(Error::DimensionMismatch {
            what: "width W (rows of freqs)",
            expected: 1,
            found: 0,
        });
    }
    let has_prime = match (prev_block_output, freqs_prime) {
        (None, None) => false,
        (Some(z), Some(fp)) => {
            if z.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "previous block output length vs sample count N",
                    expected: n,
                    found: z.len(),
                });
            }
            if fp.len() != w {
                return Err(Error::DimensionMismatch {
                    what: "freqs_prime length vs width W",
                    expected: w,
                    found: fp.len(),
                });
            }
            if z.iter().chain(fp.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("previous block output or freqs_prime"));
            }
            true
        }
        (Some(_), None) | (None, Some(_)) => {
            return Err(Error::DimensionMismatch {
                what: "primed inputs (prev_block_output and freqs_prime must be given together)",
                expected: 2,
                found: 1,
            })
        }
    };
    if inputs.iter().chain(freqs.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("inputs or freqs"));
    }

    let cols = if has_prime { 4 * w } else { 2 * w };
    let mut dm = DesignMatrix {
        matrix: DMatrix::zeros(n, cols),
        width: w,
        has_prime,
    };
    let mut row = vec![0.0; d];
    for j in 0..w {
        for (k, r) in row.iter_mut().enumerate() {
            *r = freqs[(j, k)];
        }
        dm.set_input_chain(j, inputs, &row);
    }
    if let (Some(z), Some(fp)) = (prev_block_output, freqs_prime) {
        for j in 0..w {
            dm.set_previous_chain(j, z, fp[j]);
        }
    }
    Ok(dm)
}

/// Minimizes `n⁻¹|Ab − r|² + λ|b|²` over the real coefficient vector `b`.
pub fn solve_ridge(a: &DesignMatrix, r: &DVector<f64>, lambda: f64, n: usize) -> Result<AmplitudeSolution> {
    let coeffs = solve_ridge_raw(a.matrix(), r, lambda, n)?;
    let objective = ridge_objective(a.matrix(), r, lambda, n, &coeffs);
    Ok(AmplitudeSolution::from_coefficients(
        &coeffs,
        a.width(),
        a.has_prime(),
        objective,
    ))
}

/// Matrix-level ridge solve used by [`solve_ridge`].
pub fn solve_ridge_raw(a: &DMatrix<f64>, r: &DVector<f64>, lambda: f64, n: usize) -> Result<DVector<f64>> {
    let rows = a.nrows();
    let cols = a.ncols();
    if r.len() != rows {
        return Err(Error::DimensionMismatch {
            what: "residual length vs design-matrix rows",
            expected: rows,
            found: r.len(),
        });
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::config("lambda", format!("must be finite and >= 0, got {lambda}")));
    }
    if n == 0 {
        return Err(Error::config("n", "normalization count must be positive"));
    }
    if a.iter().chain(r.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("design matrix or residual"));
    }
    if lambda == 0.0 && rows < cols {
        return Err(Error::RankDeficient { rank: rows, cols });
    }

    let scale = 1.0 / (n as f64).sqrt();
    let extra = if lambda > 0.0 { cols } else { 0 };
    let mut aug = DMatrix::<f64>::zeros(rows + extra, cols);
    aug.view_mut((0, 0), (rows, cols)).copy_from(a);
    aug.view_mut((0, 0), (rows, cols)).scale_mut(scale);
    let sl = lambda.sqrt();
    for k in 0..extra {
        aug[(rows + k, k)] = sl;
    }
    let mut rhs = DVector::<f64>::zeros(rows + extra);
    rhs.rows_mut(0, rows).copy_from(r);
    rhs.rows_mut(0, rows).scale_mut(scale);

    let qr = aug.qr();
    let rmat = qr.r();
    let diag_max = (0..cols).map(|i| rmat[(i, i)].abs()).fold(0.0, f64::max);
    let rank = (0..cols)
        .filter(|&i| rmat[(i, i)].abs() > RANK_TOL * diag_max && rmat[(i, i)] != 0.0)
        .count();
    if rank < cols {
        return Err(Error::RankDeficient { rank, cols });
    }
    qr.q_tr_mul(&mut rhs);
    let top = rhs.rows(0, cols).into_owned();
    rmat.solve_upper_triangular(&top)
        .ok_or(Error::RankDeficient { rank, cols })
}

/// `n⁻¹|Ab − r|² + λ|b|²`.
pub fn ridge_objective(a: &DMatrix<f64>, r: &DVector<f64>, lambda: f64, n: usize, b: &DVector<f64>) -> f64 {
    let resid = a * b - r;
    resid.norm_squared() / n as f64 + lambda * b.norm_squared()
}

/// Relative residual of the normal equations `(AᵀA/n + λI)b = Aᵀr/n`,
/// measured against `|Aᵀr/n|` (absolute when that is zero).
pub fn normal_equation_residual(a: &DMatrix<f64>, r: &DVector<f64>, lambda: f64, n: usize, b: &DVector<f64>) -> f64 {
    let nf = n as f64;
    let atr = a.tr_mul(r) / nf;
    let lhs = a.tr_mul(&(a * b - r)) / nf + b * lambda;
    let denom = atr.norm();
    if denom > 0.0 {
        lhs.norm() / denom
    } else {
        lhs.norm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn dm(rows: usize, cols: usize, data: &[f64]) -> DesignMatrix {
        DesignMatrix {
            matrix: DMatrix::from_row_slice(rows, cols, data),
            width: cols / 2,
            has_prime: false,
        }
    }

    #[test]
    fn block1_row_at_origin() {
        let x = DMatrix::from_element(1, 1, 0.0);
        let f = DMatrix::from_element(1, 1, 3.7);
        let a = assemble_design_matrix(&x, None, &f, None).unwrap();
        assert_eq!(a.matrix().as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn block_ell_row_at_origin() {
        let x = DMatrix::from_element(1, 1, 0.0);
        let z = DVector::from_element(1, 0.0);
        let f = DMatrix::from_element(1, 1, 2.0);
        let fp = DVector::from_element(1, 5.0);
        let a = assemble_design_matrix(&x, Some(&z), &f, Some(&fp)).unwrap();
        assert_eq!(a.cols(), 4);
        let row: Vec<f64> = a.matrix().row(0).iter().copied().collect();
        assert_eq!(row, vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn two_chain_row_matches_scalar_loop() {
        let theta = PI / 2.0;
        let freqs = [1.0, 2.0];
        let x = DMatrix::from_element(1, 1, theta);
        let f = DMatrix::from_column_slice(2, 1, &freqs);
        let a = assemble_design_matrix(&x, None, &f, None).unwrap();
        let mut oracle = Vec::new();
        for w in freqs {
            oracle.push((w * theta).cos());
        }
        for w in freqs {
            oracle.push(-(w * theta).sin());
        }
        let row: Vec<f64> = a.matrix().row(0).iter().copied().collect();
        for (got, want) in row.iter().zip(&oracle) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-15);
        }
        for (got, want) in row.iter().zip([0.0, -1.0, -1.0, 0.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn mismatched_dimensions_are_named() {
        let x = DMatrix::from_element(3, 2, 0.1);
        let f = DMatrix::from_element(2, 1, 1.0);
        let err = assemble_design_matrix(&x, None, &f, None).unwrap_err();
        assert!(err.to_string().contains("frequency dimension"), "{err}");

        let f = DMatrix::from_element(2, 2, 1.0);
        let z = DVector::from_element(4, 0.0);
        let fp = DVector::from_element(2, 1.0);
        let err = assemble_design_matrix(&x, Some(&z), &f, Some(&fp)).unwrap_err();
        assert!(err.to_string().contains("previous block output"), "{err}");

        let err = assemble_design_matrix(&x, None, &f, Some(&fp)).unwrap_err();
        assert!(err.to_string().contains("primed inputs"), "{err}");
    }

    #[test]
    fn identity_interpolation() {
        let a = dm(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let r = DVector::from_vec(vec![1.0, 2.0]);
        let s = solve_ridge(&a, &r, 0.0, 2).unwrap();
        assert_abs_diff_eq!(s.re_b[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.im_b[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.objective_value, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn identity_with_regularization() {
        // (I/2 + I) b = r/2  =>  b = r/3
        let a = dm(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let r = DVector::from_vec(vec![3.0, 6.0]);
        let s = solve_ridge(&a, &r, 1.0, 2).unwrap();
        assert_abs_diff_eq!(s.re_b[0], 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(s.im_b[0], 2.0, epsilon = 1e-13);
        let b = s.coefficients();
        let obj = ridge_objective(a.matrix(), &r, 1.0, 2, &b);
        assert!((s.objective_value - obj).abs() <= 1e-10 * obj);
    }

    #[test]
    fn zero_target_gives_zero_amplitudes() {
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64 * 0.1);
        let f = DMatrix::from_column_slice(2, 1, &[0.7, 2.3]);
        let a = assemble_design_matrix(&x, None, &f, None).unwrap();
        let s = solve_ridge(&a, &DVector::zeros(10), 1e-4, 10).unwrap();
        assert!(s.coefficients().iter().all(|&v| v == 0.0));
        assert_eq!(s.objective_value, 0.0);
    }

    #[test]
    fn rank_deficient_without_regularization_is_an_error() {
        // Two identical chains make duplicated columns.
        let x = DMatrix::from_fn(8, 1, |i, _| i as f64 * 0.3);
        let f = DMatrix::from_column_slice(2, 1, &[1.5, 1.5]);
        let a = assemble_design_matrix(&x, None, &f, None).unwrap();
        let r = DVector::from_fn(8, |i, _| (i as f64).sin());
        let err = solve_ridge(&a, &r, 0.0, 8).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
        assert!(err.to_string().contains("lambda"));
        // Regularization repairs it.
        let s = solve_ridge(&a, &r, 1e-3, 8).unwrap();
        assert!(normal_equation_residual(a.matrix(), &r, 1e-3, 8, &s.coefficients()) < 1e-8);
    }

    #[test]
    fn underdetermined_without_regularization_is_an_error() {
        let a = dm(1, 2, &[1.0, 0.5]);
        let r = DVector::from_vec(vec![1.0]);
        assert!(matches!(solve_ridge(&a, &r, 0.0, 1), Err(Error::RankDeficient { .. })));
        assert!(solve_ridge(&a, &r, 0.1, 1).is_ok());
    }

    #[test]
    fn non_finite_and_negative_lambda_rejected() {
        let a = dm(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let r = DVector::from_vec(vec![f64::NAN, 1.0]);
        assert!(matches!(solve_ridge(&a, &r, 0.1, 2), Err(Error::NonFinite(_))));
        let r = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(solve_ridge(&a, &r, -1.0, 2), Err(Error::InvalidConfig { .. })));
    }

    #[test]
    fn chain_column_updates_match_full_assembly() {
        let x = DMatrix::from_fn(6, 2, |i, k| (i as f64 - 2.0) * 0.4 + k as f64);
        let z = DVector::from_fn(6, |i, _| (i as f64).cos());
        let f = DMatrix::from_row_slice(2, 2, &[0.3, -1.0, 2.0, 0.5]);
        let fp = DVector::from_vec(vec![0.7, -0.2]);
        let mut a = assemble_design_matrix(&x, Some(&z), &f, Some(&fp)).unwrap();
        a.set_input_chain(1, &x, &[1.1, 1.2]);
        a.set_previous_chain(0, &z, 3.0);
        let f2 = DMatrix::from_row_slice(2, 2, &[0.3, -1.0, 1.1, 1.2]);
        let fp2 = DVector::from_vec(vec![3.0, -0.2]);
        let b = assemble_design_matrix(&x, Some(&z), &f2, Some(&fp2)).unwrap();
        assert_eq!(a, b);
    }
}
