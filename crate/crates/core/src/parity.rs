//! Stacked parity relation and residual generation.
//!
//! Over a window of `s + 1` steps, stacked oldest first,
//! `Y_s(k) = H_0s x(k−s) + H_us U_s(k) + H_ws W_s(k) + V_s(k)`, and any `Z_s`
//! with `Z_s H_0s = 0` yields a residual `r = Z_s (Y_s − H_us U_s)` free of
//! the state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, serde_matrix, Matrix, Vector};
use crate::plant::LtiSystem;
use crate::sim::Trajectory;

/// `[C; CA; …; CA^s]`.
pub fn observability(a: &Matrix, c: &Matrix, s: usize) -> Matrix {
    let (p, n) = c.shape();
    let mut out = Matrix::zeros(p * (s + 1), n);
    let mut block = c.clone();
    for i in 0..=s {
        out.view_mut((i * p, 0), (p, n)).copy_from(&block);
        block = &block * a;
    }
    out
}

/// Lower block-Toeplitz map with zero diagonal: block `(i, j)` equals
/// `C A^{i−j−1} B` for `i > j`.
pub fn impulse_toeplitz(a: &Matrix, b: &Matrix, c: &Matrix, s: usize) -> Matrix {
    let p = c.nrows();
    let m = b.ncols();
    let mut markov = Vec::with_capacity(s);
    let mut ab = b.clone();
    for _ in 0..s {
        markov.push(c * &ab);
        ab = a * &ab;
    }
    let mut out = Matrix::zeros(p * (s + 1), m * (s + 1));
    for i in 1..=s {
        for j in 0..i {
            out.view_mut((i * p, j * m), (p, m)).copy_from(&markov[i - j - 1]);
        }
    }
    out
}

/// Detector-visible data over `[k − s, k]`, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct DataWindow {
    pub y: Vector,
    pub u: Vector,
    pub k: usize,
}

impl DataWindow {
    /// Stacks the detector channels `y_d` and `u_d` of a trajectory.
    pub fn from_trajectory(traj: &Trajectory, k: usize, s: usize) -> Result<Self> {
        if k < s || k >= traj.len() {
            return Err(Error::InvalidInput(format!(
                "window ending at {k} of order {s} does not fit {} steps",
                traj.len()
            )));
        }
        Ok(Self {
            y: stack(&traj.y_d, k - s, s + 1),
            u: stack(&traj.u_d, k - s, s + 1),
            k,
        })
    }
}

fn stack(m: &Matrix, start: usize, len: usize) -> Vector {
    let r = m.nrows();
    Vector::from_column_slice(&m.as_slice()[start * r..(start + len) * r])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityModel {
    pub s: usize,
    #[serde(with = "serde_matrix")]
    pub h0: Matrix,
    #[serde(with = "serde_matrix")]
    pub hu: Matrix,
    #[serde(with = "serde_matrix")]
    pub hw: Matrix,
    #[serde(with = "serde_matrix")]
    pub hv: Matrix,
    /// Orthonormal rows spanning the left null space of `H_0s`.
    #[serde(with = "serde_matrix")]
    pub basis: Matrix,
    #[serde(with = "serde_matrix")]
    pub weight: Matrix,
    #[serde(with = "serde_matrix")]
    pub z: Matrix,
}

/// Stacks the parity relation of order `s` with `M_s = I`.
pub fn build_parity(sys: &LtiSystem, s: usize) -> Result<ParityModel> {
    sys.validate_structure()?;
    if s == 0 {
        return Err(Error::InvalidInput("parity order must be at least 1".into()));
    }
    let p = sys.n_outputs();
    let h0 = observability(&sys.a, &sys.c, s);
    let hu = impulse_toeplitz(&sys.a, &sys.b_u, &sys.c, s);
    let hw = impulse_toeplitz(&sys.a, &sys.b_w, &sys.c, s);
    let hv = Matrix::identity(p * (s + 1), p * (s + 1));
    let basis = linalg::null_space_left(&h0)?;
    if basis.nrows() == 0 {
        return Err(Error::OrderTooSmall {
            s,
            rows: h0.nrows(),
            rank: linalg::rank(&h0)?,
        });
    }
    let nz = basis.nrows();
    Ok(ParityModel {
        s,
        h0,
        hu,
        hw,
        hv,
        z: basis.clone(),
        basis,
        weight: Matrix::identity(nz, nz),
    })
}

impl ParityModel {
    pub fn n_z(&self) -> usize {
        self.basis.nrows()
    }

    /// Residual dimension `l`.
    pub fn l(&self) -> usize {
        self.z.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.h0.nrows() / (self.s + 1)
    }

    pub fn n_inputs(&self) -> usize {
        self.hu.ncols() / (self.s + 1)
    }

    /// Replaces `M_s`, giving `Z_s = M_s N_s`.
    pub fn with_weight(&self, weight: Matrix) -> Result<Self> {
        linalg::ensure_finite(&weight, "weight")?;
        if weight.ncols() != self.n_z() || weight.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "weight is {:?}, expected l x {}",
                weight.shape(),
                self.n_z()
            )));
        }
        if linalg::rank(&weight)? < weight.nrows() {
            return Err(Error::Rank("weight must have full row rank".into()));
        }
        let mut out = self.clone();
        out.z = &weight * &self.basis;
        out.weight = weight;
        Ok(out)
    }

    /// `‖Z_s H_0s‖_F / ‖H_0s‖_F`.
    pub fn kernel_defect(&self) -> f64 {
        (&self.z * &self.h0).norm() / self.h0.norm().max(f64::MIN_POSITIVE)
    }

    pub fn validate(&self) -> Result<()> {
        let rows = self.n_outputs() * (self.s + 1);
        if self.h0.nrows() != rows
            || self.hu.nrows() != rows
            || self.hw.nrows() != rows
            || self.hv.shape() != (rows, rows)
            || self.basis.ncols() != rows
            || self.weight.ncols() != self.basis.nrows()
            || self.z.shape() != (self.weight.nrows(), rows)
        {
            return Err(Error::Dimension("inconsistent parity model blocks".into()));
        }
        if (&self.weight * &self.basis - &self.z).amax() > 1e-9 * self.z.amax().max(1.0) {
            return Err(Error::InvalidInput("Z_s differs from M_s N_s".into()));
        }
        if self.kernel_defect() > 1e-9 {
            return Err(Error::InvalidInput("Z_s does not annihilate H_0s".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let pm: Self = serde_json::from_str(text)?;
        pm.validate()?;
        Ok(pm)
    }

    /// `r = Z_s (Y − H_us U)`.
    pub fn residual(&self, win: &DataWindow) -> Result<Vector> {
        if win.y.len() != self.h0.nrows() || win.u.len() != self.hu.ncols() {
            return Err(Error::Dimension(format!(
                "window sizes ({}, {}) vs parity ({}, {})",
                win.y.len(),
                win.u.len(),
                self.h0.nrows(),
                self.hu.ncols()
            )));
        }
        Ok(&self.z * (&win.y - &self.hu * &win.u))
    }

    /// Residuals from the detector channels; column `j` belongs to step
    /// `k = s + j`.
    pub fn residual_trace(&self, traj: &Trajectory) -> Result<Matrix> {
        let horizon = traj.len();
        if horizon <= self.s {
            return Err(Error::InvalidInput(format!(
                "trajectory of {horizon} steps is shorter than the window"
            )));
        }
        if traj.y_d.nrows() != self.n_outputs() || traj.u_d.nrows() != self.n_inputs() {
            return Err(Error::Dimension("trajectory channels do not fit the parity model".into()));
        }
        let zh = &self.z * &self.hu;
        let count = horizon - self.s;
        let mut out = Matrix::zeros(self.l(), count);
        for j in 0..count {
            let (ny, nu) = (self.h0.nrows(), self.hu.ncols());
            let yv = nalgebra::DVectorView::from_slice(&traj.y_d.as_slice()[j * self.n_outputs()..][..ny], ny);
            let uv = nalgebra::DVectorView::from_slice(&traj.u_d.as_slice()[j * self.n_inputs()..][..nu], nu);
            out.set_column(j, &(&self.z * yv - &zh * uv));
        }
        Ok(out)
    }
}
