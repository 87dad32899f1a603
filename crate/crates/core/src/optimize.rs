//! Weight design for the parity matrix `Z_s = M_s N_s`.

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceReport;
use crate::error::{Error, Result};
use crate::linalg::{self, serde_matrix, Matrix, SpdFactor, Vector};
use crate::parity::ParityModel;
use crate::plant::LtiSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Index {
    J1,
    J2,
    J2m,
    J3,
    J4,
    Unified,
}

/// Induced matrix norm used by the `J₁` ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    Two,
    Inf,
}

impl Norm {
    pub fn of(self, m: &Matrix) -> f64 {
        match self {
            Self::Two => linalg::norm_2(m),
            Self::Inf => linalg::norm_inf(m),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimalWeight {
    pub index: Index,
    #[serde(with = "serde_matrix")]
    pub m: Matrix,
    pub objective: f64,
    /// Singular values of `T_Θ^{1/2}` for `J₁`/unified, pencil eigenvalues otherwise.
    pub certificate: Vec<f64>,
    pub note: Option<String>,
}

/// `T_Θ^{1/2} = N_s [H_ws (I ⊗ Q^{1/2}), H_vs (I ⊗ R^{1/2})]`, of size
/// `n_z × (q + p)(s + 1)`.
pub fn t_theta_factor(pm: &ParityModel, sys: &LtiSystem) -> Result<Matrix> {
    let w = &pm.hw * linalg::kron_identity(pm.s + 1, &linalg::psd_sqrt(&sys.q)?);
    let v = &pm.hv * linalg::kron_identity(pm.s + 1, &linalg::psd_sqrt(&sys.r)?);
    let mut f = Matrix::zeros(pm.h0.nrows(), w.ncols() + v.ncols());
    f.view_mut((0, 0), w.shape()).copy_from(&w);
    f.view_mut((0, w.ncols()), v.shape()).copy_from(&v);
    Ok(&pm.basis * f)
}

/// `Λ⁻¹Uᵀ` from `T_Θ^{1/2} = U [Λ 0] Vᵀ`.
fn whitening(t_theta_sqrt: &Matrix) -> Result<(Matrix, Vector)> {
    let dec = linalg::svd(t_theta_sqrt)?;
    if dec.rank() < t_theta_sqrt.nrows() {
        return Err(Error::Rank(format!(
            "T_Θ^{{1/2}} has rank {} < {}; whitening fails",
            dec.rank(),
            t_theta_sqrt.nrows()
        )));
    }
    let inv = dec.singular_values.map(|s| 1.0 / s);
    Ok((Matrix::from_diagonal(&inv) * dec.u.transpose(), dec.singular_values))
}

/// `‖M T_P^{1/2}‖_i / ‖M T_Θ^{1/2}‖_i`.
pub fn j1_objective(m: &Matrix, t_theta_sqrt: &Matrix, t_pos_sqrt: &Matrix, norm: Norm) -> f64 {
    norm.of(&(m * t_pos_sqrt)) / norm.of(&(m * t_theta_sqrt))
}

pub fn solve_j1(t_theta_sqrt: &Matrix, t_pos: &Matrix, norm: Norm) -> Result<OptimalWeight> {
    let (m, sv) = whitening(t_theta_sqrt)?;
    let root = linalg::psd_sqrt(t_pos)?;
    Ok(OptimalWeight {
        index: Index::J1,
        objective: norm.of(&(&m * root)),
        m,
        certificate: sv.iter().copied().collect(),
        note: None,
    })
}

/// Whitening weight `M_s = Λ⁻¹Uᵀ`; `M_s T_Θ M_sᵀ = I`.
pub fn unified_solution(t_theta_sqrt: &Matrix) -> Result<OptimalWeight> {
    let (m, sv) = whitening(t_theta_sqrt)?;
    Ok(OptimalWeight {
        index: Index::Unified,
        objective: 1.0,
        m,
        certificate: sv.iter().copied().collect(),
        note: None,
    })
}

fn top_rows(pencil: &linalg::GenEigPair, l: usize) -> Matrix {
    pencil.eigenvectors.columns(0, l).transpose()
}

/// `tr((M T_Θ Mᵀ)⁻¹ M T_Σ Mᵀ)`.
pub fn j2_objective(m: &Matrix, t_theta: &Matrix, t_sum: &Matrix) -> Result<f64> {
    let f = SpdFactor::new(&linalg::symmetrize(&(m * t_theta * m.transpose())))?;
    Ok(f.solve_mat(&(m * t_sum * m.transpose())).trace())
}

pub fn solve_j2(t_theta: &Matrix, t_sum: &Matrix, l: usize) -> Result<OptimalWeight> {
    let n = t_theta.nrows();
    if l == 0 || l > n {
        return Err(Error::InvalidInput(format!("target rows l = {l} outside 1..={n}")));
    }
    let pencil = linalg::gen_eig_spd(t_sum, t_theta)?;
    Ok(OptimalWeight {
        index: Index::J2,
        m: top_rows(&pencil, l),
        objective: pencil.eigenvalues.rows(0, l).sum(),
        certificate: pencil.eigenvalues.iter().copied().collect(),
        note: None,
    })
}

/// KL divergence of the weighted attacked residual from the nominal one.
pub fn kl_objective(m: &Matrix, t_theta: &Matrix, t_delta: &Matrix) -> Result<f64> {
    let theta = linalg::symmetrize(&(m * t_theta * m.transpose()));
    let theta_a = linalg::symmetrize(&(m * (t_theta + t_delta) * m.transpose()));
    crate::detect::kl_divergence(&theta, &theta_a)
}

pub fn solve_j2m(t_theta: &Matrix, t_delta: &Matrix) -> Result<OptimalWeight> {
    let n = t_theta.nrows();
    let attacked = linalg::symmetrize(&(t_theta + t_delta));
    let ln_ratio = SpdFactor::new(&attacked)
        .map_err(|_| Error::DegeneratePencil("T_Δ + T_Θ is not positive definite".into()))?
        .ln_det()
        - SpdFactor::new(t_theta)?.ln_det();
    let (pencil, note) = if ln_ratio > 0.0 {
        (linalg::gen_eig_spd(&attacked, t_theta)?, "det ratio > 1: pencil (T_Δ + T_Θ, T_Θ)")
    } else {
        let note = if ln_ratio == 0.0 {
            "det ratio = 1: tie, swapped pencil used"
        } else {
            "det ratio < 1: pencil (T_Θ, T_Δ + T_Θ)"
        };
        (linalg::gen_eig_spd(t_theta, &attacked)?, note)
    };
    info!("J2M branch: {note}");
    let m = top_rows(&pencil, n);
    Ok(OptimalWeight {
        index: Index::J2m,
        objective: kl_objective(&m, t_theta, t_delta)?,
        m,
        certificate: pencil.eigenvalues.iter().copied().collect(),
        note: Some(note.into()),
    })
}

/// Rayleigh quotient `M T_Σ Mᵀ / M T_Θ Mᵀ` of a single row.
pub fn j3_objective(m: &Matrix, t_theta: &Matrix, t_sum: &Matrix) -> f64 {
    (m * t_sum * m.transpose())[(0, 0)] / (m * t_theta * m.transpose())[(0, 0)]
}

pub fn solve_j3(t_theta: &Matrix, t_sum: &Matrix) -> Result<OptimalWeight> {
    let pencil = linalg::gen_eig_spd(t_sum, t_theta)?;
    Ok(OptimalWeight {
        index: Index::J3,
        m: top_rows(&pencil, 1),
        objective: pencil.eigenvalues[0],
        certificate: pencil.eigenvalues.iter().copied().collect(),
        note: None,
    })
}

/// `tr(M T_Σ Mᵀ)`, to be read with the budget `tr(M T_Θ Mᵀ) ≤ γ`.
pub fn j4_objective(m: &Matrix, t_sum: &Matrix) -> f64 {
    (m * t_sum * m.transpose()).trace()
}

pub fn solve_j4(t_theta: &Matrix, t_sum: &Matrix, l: usize, gamma: f64) -> Result<OptimalWeight> {
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(Error::InvalidInput(format!("trace budget γ = {gamma} must be positive")));
    }
    if l == 0 {
        return Err(Error::InvalidInput("target rows l must be positive".into()));
    }
    let pencil = linalg::gen_eig_spd(t_sum, t_theta)?;
    let p = pencil.eigenvectors.column(0).transpose();
    let a = (gamma / l as f64).sqrt();
    let mut m = Matrix::zeros(l, t_theta.nrows());
    for i in 0..l {
        m.set_row(i, &(&p * a));
    }
    let note = (l > 1).then(|| {
        let msg = "repeated rows make the weighted Θ_s singular; detectors use one row".to_string();
        warn!("J4: {msg}");
        msg
    });
    Ok(OptimalWeight {
        index: Index::J4,
        objective: pencil.eigenvalues[0] * gamma,
        m,
        certificate: pencil.eigenvalues.iter().copied().collect(),
        note,
    })
}

/// Weight selection for the detectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    Identity,
    J1 {
        #[serde(default)]
        norm: Norm,
    },
    J2 {
        l: usize,
    },
    J2m {
        alpha: usize,
    },
    J3,
    J4 {
        l: usize,
        gamma: f64,
    },
    Unified,
}

impl Weighting {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::J1 { .. } => "j1",
            Self::J2 { .. } => "j2",
            Self::J2m { .. } => "j2m",
            Self::J3 => "j3",
            Self::J4 { .. } => "j4",
            Self::Unified => "unified",
        }
    }

    /// `M_s` for this choice, built on an unweighted report. J4 keeps a
    /// single row so that the weighted `Θ_s` stays invertible.
    pub fn design(&self, pm: &ParityModel, sys: &LtiSystem, report: Option<&CovarianceReport>) -> Result<Matrix> {
        let nz = pm.n_z();
        let need = || {
            report.ok_or_else(|| {
                Error::Unsupported(format!("{} weighting needs the analytic covariance report", self.name()))
            })
        };
        Ok(match *self {
            Self::Identity => Matrix::identity(nz, nz),
            Self::Unified => unified_solution(&t_theta_factor(pm, sys)?)?.m,
            Self::J1 { norm } => {
                let pos = need()?.t_delta_pos.iter().fold(Matrix::zeros(nz, nz), |a, t| a + t);
                solve_j1(&t_theta_factor(pm, sys)?, &pos, norm)?.m
            }
            Self::J2 { l } => {
                let r = need()?;
                solve_j2(&r.t_theta, &r.t_delta_sum, l)?.m
            }
            Self::J2m { alpha } => {
                let r = need()?;
                let t = r
                    .t_delta
                    .get(alpha.wrapping_sub(1))
                    .ok_or_else(|| Error::InvalidInput(format!("J2M depth {alpha} outside 1..={}", pm.s)))?;
                solve_j2m(&r.t_theta, t)?.m
            }
            Self::J3 => {
                let r = need()?;
                solve_j3(&r.t_theta, &r.t_delta_sum)?.m
            }
            Self::J4 { l, gamma } => {
                let r = need()?;
                let w = solve_j4(&r.t_theta, &r.t_delta_sum, l, gamma)?;
                w.m.rows(0, 1).into_owned()
            }
        })
    }
}
