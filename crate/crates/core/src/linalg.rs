//! Dense linear-algebra kernels.
//!
//! Thin, deterministic wrappers over `nalgebra` that fix the conventions the
//! rest of the crate depends on: descending orderings, an explicit numerical
//! rank rule, orthonormal left null spaces, `T`-orthonormal generalized
//! eigenvectors and a doubling solver for the discrete Lyapunov equation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen, SVD};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Spectral radius at or above `1 - STABILITY_MARGIN` counts as unstable.
pub const STABILITY_MARGIN: f64 = 1e-9;

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} has non-finite entries")))
    }
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Compact SVD `M = U · diag(Λ) · Vᵀ` truncated to the numerical rank.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: Matrix,
    pub singular_values: Vector,
    pub v: Matrix,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        &self.u * Matrix::from_diagonal(&self.singular_values) * self.v.transpose()
    }
}

/// `max(rows, cols) · ε · σ_max`.
pub fn rank_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * sigma_max
}

pub fn svd(m: &Matrix) -> Result<SvdFactors> {
    ensure_finite(m, "svd input")?;
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(SvdFactors {
            u: Matrix::zeros(rows, 0),
            singular_values: Vector::zeros(0),
            v: Matrix::zeros(cols, 0),
        });
    }
    let dec = SVD::new(m.clone(), true, true);
    let sigma = dec.singular_values;
    let u = dec.u.expect("left vectors requested");
    let v_t = dec.v_t.expect("right vectors requested");
    let tol = rank_tolerance(rows, cols, sigma.max());
    let rank = sigma.iter().take_while(|&&s| s > tol && s > 0.0).count();
    Ok(SvdFactors {
        u: u.columns(0, rank).into_owned(),
        singular_values: sigma.rows(0, rank).into_owned(),
        v: v_t.rows(0, rank).transpose(),
    })
}

pub fn rank(m: &Matrix) -> Result<usize> {
    Ok(svd(m)?.rank())
}

/// Rows spanning the left null space of `m`: `N · m = 0`, `N · Nᵀ = I`.
pub fn null_space_left(m: &Matrix) -> Result<Matrix> {
    ensure_finite(m, "null space input")?;
    let (rows, cols) = m.shape();
    if rows == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    // Zero-pad to at least square so the SVD returns a complete left basis.
    let width = cols.max(rows);
    let mut padded = Matrix::zeros(rows, width);
    padded.view_mut((0, 0), (rows, cols)).copy_from(m);
    let dec = SVD::new(padded, true, false);
    let u = dec.u.expect("left vectors requested");
    let sigma = dec.singular_values;
    let sigma_max = if sigma.is_empty() { 0.0 } else { sigma.max() };
    let tol = rank_tolerance(rows, cols, sigma_max);
    let rank = sigma.iter().filter(|&&s| s > tol && s > 0.0).count();
    Ok(u.columns(rank, rows - rank).transpose())
}

/// Generalized eigenpairs of a symmetric-definite pencil, descending.
#[derive(Debug, Clone)]
pub struct GenEigPair {
    pub eigenvalues: Vector,
    /// Column `i` pairs with `eigenvalues[i]`; columns are `T`-orthonormal.
    pub eigenvectors: Matrix,
}

/// Eigen-decomposition of a symmetric matrix, sorted descending.
pub fn sym_eigen(m: &Matrix) -> Result<(Vector, Matrix)> {
    ensure_finite(m, "eigen input")?;
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Dimension(format!("eigen input is {}x{}", n, m.ncols())));
    }
    let dec = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dec.eigenvalues[b].total_cmp(&dec.eigenvalues[a]));
    let values = Vector::from_iterator(n, order.iter().map(|&i| dec.eigenvalues[i]));
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &dec.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// Solves `S v = λ T v` for symmetric `S` and symmetric positive definite `T`.
pub fn gen_eig_spd(s: &Matrix, t: &Matrix) -> Result<GenEigPair> {
    ensure_finite(s, "pencil S")?;
    ensure_finite(t, "pencil T")?;
    let n = s.nrows();
    if s.shape() != (n, n) || t.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "pencil shapes {:?} and {:?}",
            s.shape(),
            t.shape()
        )));
    }
    let chol = Cholesky::new(symmetrize(t))
        .ok_or_else(|| Error::DegeneratePencil("T is not positive definite".into()))?;
    let l = chol.l();
    // C = L⁻¹ S L⁻ᵀ
    let l_inv_s = l
        .solve_lower_triangular(&symmetrize(s))
        .ok_or_else(|| Error::DegeneratePencil("singular Cholesky factor".into()))?;
    let c = l
        .solve_lower_triangular(&l_inv_s.transpose())
        .ok_or_else(|| Error::DegeneratePencil("singular Cholesky factor".into()))?;
    let (values, w) = sym_eigen(&c)?;
    let vectors = l
        .transpose()
        .solve_upper_triangular(&w)
        .ok_or_else(|| Error::DegeneratePencil("singular Cholesky factor".into()))?;
    Ok(GenEigPair {
        eigenvalues: values,
        eigenvectors: vectors,
    })
}

pub fn spectral_radius(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Solves `A P Aᵀ − P + W = 0` by squaring: `P ← P + Aₖ P Aₖᵀ`, `Aₖ ← Aₖ²`.
pub fn dlyap(a: &Matrix, w: &Matrix) -> Result<Matrix> {
    ensure_finite(a, "dlyap A")?;
    ensure_finite(w, "dlyap W")?;
    let n = a.nrows();
    if a.shape() != (n, n) || w.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "dlyap shapes {:?} and {:?}",
            a.shape(),
            w.shape()
        )));
    }
    let radius = spectral_radius(a);
    if radius >= 1.0 - STABILITY_MARGIN {
        return Err(Error::Unstable { radius });
    }
    let mut p = symmetrize(w);
    let mut ak = a.clone();
    for _ in 0..64 {
        let inc = &ak * &p * ak.transpose();
        p += &inc;
        ak = &ak * &ak;
        if inc.norm() <= 1e-17 * p.norm().max(f64::MIN_POSITIVE) || ak.norm() < 1e-300 {
            break;
        }
    }
    Ok(symmetrize(&p))
}

/// Symmetric square root of a positive semidefinite matrix.
pub fn psd_sqrt(m: &Matrix) -> Result<Matrix> {
    let (values, vectors) = sym_eigen(m)?;
    let root = values.map(|v| v.max(0.0).sqrt());
    Ok(&vectors * Matrix::from_diagonal(&root) * vectors.transpose())
}

/// `I_n ⊗ M`.
pub fn kron_identity(n: usize, m: &Matrix) -> Matrix {
    let (r, c) = m.shape();
    let mut out = Matrix::zeros(n * r, n * c);
    for i in 0..n {
        out.view_mut((i * r, i * c), (r, c)).copy_from(m);
    }
    out
}

pub fn block_diag(blocks: &[&Matrix]) -> Matrix {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Induced ∞-norm (maximum absolute row sum).
pub fn norm_inf(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Spectral norm.
pub fn norm_2(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    SVD::new(m.clone(), false, false).singular_values.max()
}

/// Cholesky factor of a symmetric positive definite matrix with the few
/// derived quantities the detectors need.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    ln_det: f64,
}

impl SpdFactor {
    pub fn new(m: &Matrix) -> Result<Self> {
        ensure_finite(m, "SPD input")?;
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::Dimension(format!("SPD input is {:?}", m.shape())));
        }
        let chol = Cholesky::new(symmetrize(m))
            .ok_or_else(|| Error::Conditioning("matrix is not positive definite".into()))?;
        let ln_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self { chol, ln_det })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn ln_det(&self) -> f64 {
        self.ln_det
    }

    pub fn solve(&self, b: &Vector) -> Vector {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &Matrix) -> Matrix {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> Matrix {
        symmetrize(&self.chol.inverse())
    }

    /// `xᵀ M⁻¹ x`.
    pub fn quad_inv(&self, x: &Vector) -> f64 {
        let y = self
            .chol
            .l_dirty()
            .solve_lower_triangular(x)
            .expect("nonsingular Cholesky factor");
        y.norm_squared()
    }

    /// Ratio of largest to smallest Cholesky pivot, squared.
    pub fn condition_estimate(&self) -> f64 {
        let d = self.chol.l_dirty().diagonal();
        let (lo, hi) = d
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        (hi / lo).powi(2)
    }
}

/// Row-major nested arrays for (de)serializing matrices.
pub mod serde_matrix {
    use super::Matrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix, String> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged matrix rows".into());
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err("non-finite matrix entry".into());
        }
        Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &Matrix, ser: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Matrix, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(de)?;
        from_rows(&rows).map_err(D::Error::custom)
    }

    pub mod vec {
        use super::{from_rows, to_rows, Matrix};
        use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(ms: &[Matrix], ser: S) -> Result<S::Ok, S::Error> {
            ms.iter().map(to_rows).collect::<Vec<_>>().serialize(ser)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<Matrix>, D::Error> {
            let all = Vec::<Vec<Vec<f64>>>::deserialize(de)?;
            all.iter()
                .map(|rows| from_rows(rows).map_err(D::Error::custom))
                .collect()
        }
    }

    pub mod option {
        use super::{from_rows, to_rows, Matrix};
        use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(m: &Option<Matrix>, ser: S) -> Result<S::Ok, S::Error> {
            m.as_ref().map(to_rows).serialize(ser)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Option<Matrix>, D::Error> {
            let rows = Option::<Vec<Vec<f64>>>::deserialize(de)?;
            rows.map(|r| from_rows(&r).map_err(D::Error::custom))
                .transpose()
        }
    }
}
