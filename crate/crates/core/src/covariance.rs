//! Residual covariance and its change under replay.
//!
//! For replay depth `1 ≤ α ≤ s` the detector window splits into a genuine
//! head of `s + 1 − α` steps and a replayed tail of `α` steps. The change
//! `Δ_α = Z_s P_Δα Z_sᵀ` only has entries coupling the tail to itself and to
//! the head; it is assembled here from the stationary covariances of the
//! closed loop.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, serde_matrix, Matrix, Vector};
use crate::parity::{observability, ParityModel};
use crate::plant::{ClosedLoop, LoopModel, LtiSystem};
use crate::sim::{simulate, trial_seed, AttackScenario, MaliciousInput, ReplayMap};

/// `H_ws (I ⊗ Q) H_wsᵀ + H_vs (I ⊗ R) H_vsᵀ`, the covariance of the stacked
/// noise term of the parity relation.
pub fn error_covariance(pm: &ParityModel, sys: &LtiSystem) -> Matrix {
    let q_s = linalg::kron_identity(pm.s + 1, &sys.q);
    let r_s = linalg::kron_identity(pm.s + 1, &sys.r);
    linalg::symmetrize(&(&pm.hw * q_s * pm.hw.transpose() + &pm.hv * r_s * pm.hv.transpose()))
}

/// `Θ_s = Z_s (H_ws Q_s H_wsᵀ + H_vs R_s H_vsᵀ) Z_sᵀ`.
///
/// A noiseless system yields `Θ_s = 0`; any other numerically singular
/// result is a conditioning error.
pub fn theta_s(pm: &ParityModel, sys: &LtiSystem) -> Result<Matrix> {
    let theta = linalg::symmetrize(&(&pm.z * error_covariance(pm, sys) * pm.z.transpose()));
    if theta.amax() == 0.0 {
        return Ok(theta);
    }
    check_conditioning(&theta)?;
    Ok(theta)
}

fn check_conditioning(theta: &Matrix) -> Result<()> {
    let (values, _) = linalg::sym_eigen(theta)?;
    let hi = values[0];
    let lo = values[values.len() - 1];
    if lo <= hi * 1e-12 {
        return Err(Error::Conditioning(format!(
            "Θ_s eigenvalues span [{lo:e}, {hi:e}]"
        )));
    }
    Ok(())
}

/// Stationary covariances of the closed loop and the noise-to-state cross
/// covariances used by the replay perturbation.
///
/// Cross terms are indexed by `α − 1`. Element `α − 1` of `p_wx` stacks,
/// for `i = 0, …, s − α`, the blocks `cov{w(k − s + i), x(k − α + 1)}`,
/// matching `W_{s−α}(k − α) = col{w(k − s), …, w(k − α)}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteadyStateCov {
    #[serde(with = "serde_matrix")]
    pub p_bar: Matrix,
    #[serde(with = "serde_matrix")]
    pub p_x: Matrix,
    #[serde(with = "serde_matrix")]
    pub p_xhat: Matrix,
    #[serde(with = "serde_matrix")]
    pub p_x_xhat: Matrix,
    #[serde(with = "serde_matrix::vec")]
    pub p_wx: Vec<Matrix>,
    #[serde(with = "serde_matrix::vec")]
    pub p_vx: Vec<Matrix>,
    #[serde(with = "serde_matrix::vec")]
    pub p_wxhat: Vec<Matrix>,
    #[serde(with = "serde_matrix::vec")]
    pub p_vxhat: Vec<Matrix>,
}

pub fn steady_state_cov(cl: &ClosedLoop, s: usize) -> Result<SteadyStateCov> {
    let p_bar = linalg::dlyap(&cl.a_bar, &cl.noise_gramian())?;
    let (n, off, nc) = (cl.plant_states, cl.ctrl_offset, cl.ctrl_states);
    let p_x = p_bar.view((0, 0), (n, n)).into_owned();
    let p_xhat = p_bar.view((off, off), (nc, nc)).into_owned();
    let p_x_xhat = p_bar.view((0, off), (n, nc)).into_owned();

    // cov{w(t), χ(t + j + 1)} = Q B̄_wᵀ (Āᵀ)^j
    let mut powers_t = vec![Matrix::identity(cl.dim(), cl.dim())];
    for j in 1..=s {
        let next = &powers_t[j - 1] * cl.a_bar.transpose();
        powers_t.push(next);
    }
    let qw = &cl.q * cl.b_w_bar.transpose();
    let rv = &cl.r * cl.b_v_bar.transpose();
    let (q, p) = (cl.q.nrows(), cl.r.nrows());

    let mut p_wx = Vec::with_capacity(s);
    let mut p_vx = Vec::with_capacity(s);
    let mut p_wxhat = Vec::with_capacity(s);
    let mut p_vxhat = Vec::with_capacity(s);
    for alpha in 1..=s {
        let blocks = s - alpha + 1;
        let mut wx = Matrix::zeros(q * blocks, cl.dim());
        let mut vx = Matrix::zeros(p * blocks, cl.dim());
        for i in 0..blocks {
            let lag = s - alpha - i;
            wx.view_mut((i * q, 0), (q, cl.dim())).copy_from(&(&qw * &powers_t[lag]));
            vx.view_mut((i * p, 0), (p, cl.dim())).copy_from(&(&rv * &powers_t[lag]));
        }
        p_wx.push(wx.columns(0, n).into_owned());
        p_vx.push(vx.columns(0, n).into_owned());
        p_wxhat.push(wx.columns(off, nc).into_owned());
        p_vxhat.push(vx.columns(off, nc).into_owned());
    }
    Ok(SteadyStateCov {
        p_bar,
        p_x,
        p_xhat,
        p_x_xhat,
        p_wx,
        p_vx,
        p_wxhat,
        p_vxhat,
    })
}

/// Ingredients of the replay perturbation for one depth `α`.
#[derive(Debug, Clone)]
pub struct ReplayPerturbation {
    pub alpha: usize,
    /// `H_{0,α−1}`.
    pub h0_tail: Matrix,
    /// `H_{w,s−α}`, the head-to-head block of `H_ws`.
    pub hw_head: Matrix,
    /// Lower-left block of `H_ws`: tail rows, head noise columns.
    pub hw21: Matrix,
    /// `H_{u,α−1}`.
    pub hu_tail: Matrix,
}

impl ReplayPerturbation {
    pub fn new(pm: &ParityModel, sys: &LtiSystem, alpha: usize) -> Result<Self> {
        let s = pm.s;
        if alpha == 0 || alpha > s {
            return Err(Error::InvalidInput(format!("replay depth {alpha} outside 1..={s}")));
        }
        let (p, m, q) = (sys.n_outputs(), sys.n_inputs(), sys.n_noise());
        let head = s + 1 - alpha;
        Ok(Self {
            alpha,
            h0_tail: observability(&sys.a, &sys.c, alpha - 1),
            hw_head: pm.hw.view((0, 0), (p * head, q * head)).into_owned(),
            hw21: pm.hw.view((p * head, 0), (p * alpha, q * head)).into_owned(),
            hu_tail: pm.hu.view((p * head, m * head), (p * alpha, m * alpha)).into_owned(),
        })
    }
}

/// `H_{c,α−1} = [C_c; C_c A_c; …; C_c A_c^{α−1}]`.
pub fn controller_observability(a_c: &Matrix, c_c: &Matrix, alpha: usize) -> Matrix {
    observability(a_c, c_c, alpha - 1)
}

fn place(total: usize, head: usize, tr: &Matrix, br: &Matrix) -> Matrix {
    let tail = total - head;
    let mut out = Matrix::zeros(total, total);
    out.view_mut((0, head), (head, tail)).copy_from(tr);
    out.view_mut((head, 0), (tail, head)).copy_from(&tr.transpose());
    out.view_mut((head, head), (tail, tail)).copy_from(br);
    out
}

/// Replay weighting `P_Δα` (plus `P_{u,Δα}` without input replay), of size
/// `p(s+1)`, for `1 ≤ α ≤ s`.
pub fn replay_weighting(
    model: &LoopModel,
    pm: &ParityModel,
    ss: &SteadyStateCov,
    alpha: usize,
    input_replay: bool,
) -> Result<Matrix> {
    let sys = &model.monitored;
    let pert = ReplayPerturbation::new(pm, sys, alpha)?;
    let total = pm.h0.nrows();
    let head = total - sys.n_outputs() * alpha;
    let i = alpha - 1;
    let h0 = &pert.h0_tail;

    let cross = h0 * ss.p_wx[i].transpose() * pert.hw21.transpose();
    let br = h0 * &ss.p_x * h0.transpose() * 2.0 - (&cross + cross.transpose());
    let tr = -(&pert.hw_head * &ss.p_wx[i] * h0.transpose()) - &ss.p_vx[i] * h0.transpose();
    let mut p = place(total, head, &tr, &br);

    if !input_replay {
        if model.filter.is_some() {
            return Err(Error::Unsupported(
                "output-only replay weighting with an output filter".into(),
            ));
        }
        let ctrl = &model.controller;
        if ctrl.state_dim() > 0 {
            let g = &pert.hu_tail * controller_observability(&ctrl.a_c, &ctrl.c_c, alpha);
            let gxg = &g * &ss.p_xhat * g.transpose();
            let hxg = h0 * &ss.p_x_xhat * g.transpose();
            let wcross = &g * ss.p_wxhat[i].transpose() * pert.hw21.transpose();
            let br_u = gxg * 2.0 + (&hxg + hxg.transpose()) * 2.0 - (&wcross + wcross.transpose());
            let tr_u = -(&pert.hw_head * &ss.p_wxhat[i] * g.transpose()) - &ss.p_vxhat[i] * g.transpose();
            p += place(total, head, &tr_u, &br_u);
        }
    }
    let asym = (&p - p.transpose()).amax();
    debug_assert!(asym <= 1e-9 * p.amax().max(1.0), "replay weighting asymmetry {asym}");
    Ok(linalg::symmetrize(&p))
}

/// `(P, Δ_α = Z_s P Z_sᵀ)`; both vanish for `α = 0` and, with input replay,
/// for `α > s`.
pub fn delta_alpha(
    model: &LoopModel,
    pm: &ParityModel,
    ss: &SteadyStateCov,
    alpha: usize,
    input_replay: bool,
) -> Result<(Matrix, Matrix)> {
    let total = pm.h0.nrows();
    if alpha == 0 || (alpha > pm.s && input_replay) {
        return Ok((Matrix::zeros(total, total), Matrix::zeros(pm.l(), pm.l())));
    }
    if alpha > pm.s {
        return Err(Error::InvalidInput(format!(
            "replay depth {alpha} beyond s = {} needs input replay",
            pm.s
        )));
    }
    let p = replay_weighting(model, pm, ss, alpha, input_replay)?;
    let delta = linalg::symmetrize(&(&pm.z * &p * pm.z.transpose()));
    Ok((p, delta))
}

/// Positive semidefinite portion of the replay weighting: the tail block
/// `2 H_{0,α−1} P_x H_{0,α−1}ᵀ`, plus `H_{u,α−1} H_{c,α−1} P_x̂ H_{c,α−1}ᵀ H_{u,α−1}ᵀ`
/// without input replay.
pub fn positive_weighting(
    model: &LoopModel,
    pm: &ParityModel,
    ss: &SteadyStateCov,
    alpha: usize,
    input_replay: bool,
) -> Result<Matrix> {
    let sys = &model.monitored;
    let pert = ReplayPerturbation::new(pm, sys, alpha)?;
    let total = pm.h0.nrows();
    let head = total - sys.n_outputs() * alpha;
    let h0 = &pert.h0_tail;
    let mut br = h0 * &ss.p_x * h0.transpose() * 2.0;
    if !input_replay && model.controller.state_dim() > 0 {
        let ctrl = &model.controller;
        let g = &pert.hu_tail * controller_observability(&ctrl.a_c, &ctrl.c_c, alpha);
        br += &g * &ss.p_xhat * g.transpose();
    }
    let tail = total - head;
    Ok(place(total, head, &Matrix::zeros(head, tail), &linalg::symmetrize(&br)))
}

/// `T_{Δα,P} = N_s P^α_P N_sᵀ`.
pub fn positive_portion(
    model: &LoopModel,
    pm: &ParityModel,
    ss: &SteadyStateCov,
    alpha: usize,
    input_replay: bool,
) -> Result<Matrix> {
    let w = positive_weighting(model, pm, ss, alpha, input_replay)?;
    Ok(linalg::symmetrize(&(&pm.basis * w * pm.basis.transpose())))
}

/// Everything the detectors and optimizers need for one parity model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub s: usize,
    pub input_replay: bool,
    #[serde(with = "serde_matrix")]
    pub theta: Matrix,
    /// `Δ_α` for `α = 1, …, s` at index `α − 1`.
    #[serde(with = "serde_matrix::vec")]
    pub deltas: Vec<Matrix>,
    #[serde(with = "serde_matrix::vec")]
    pub p_delta: Vec<Matrix>,
    #[serde(with = "serde_matrix")]
    pub t_theta: Matrix,
    #[serde(with = "serde_matrix::vec")]
    pub t_delta: Vec<Matrix>,
    #[serde(with = "serde_matrix")]
    pub t_delta_sum: Matrix,
    #[serde(with = "serde_matrix::vec")]
    pub t_delta_pos: Vec<Matrix>,
}

impl CovarianceReport {
    pub fn build(model: &LoopModel, pm: &ParityModel, input_replay: bool) -> Result<Self> {
        let sys = &model.monitored;
        let ss = steady_state_cov(&model.closed, pm.s)?;
        let theta = theta_s(pm, sys)?;
        let t_theta = linalg::symmetrize(&(&pm.basis * error_covariance(pm, sys) * pm.basis.transpose()));
        let nz = pm.n_z();
        let mut report = Self {
            s: pm.s,
            input_replay,
            theta,
            deltas: Vec::with_capacity(pm.s),
            p_delta: Vec::with_capacity(pm.s),
            t_theta,
            t_delta: Vec::with_capacity(pm.s),
            t_delta_sum: Matrix::zeros(nz, nz),
            t_delta_pos: Vec::with_capacity(pm.s),
        };
        for alpha in 1..=pm.s {
            let (p, delta) = delta_alpha(model, pm, &ss, alpha, input_replay)?;
            let t = linalg::symmetrize(&(&pm.basis * &p * pm.basis.transpose()));
            report.t_delta_sum += &t;
            report.t_delta.push(t);
            report.deltas.push(delta);
            report.p_delta.push(p);
            report
                .t_delta_pos
                .push(positive_portion(model, pm, &ss, alpha, input_replay)?);
        }
        Ok(report)
    }

    /// `Θ_s^α = Θ_s + Δ_α`; `Θ_s` itself outside `1..=s`.
    pub fn theta_alpha(&self, alpha: usize) -> Matrix {
        match alpha {
            a if a >= 1 && a <= self.s => &self.theta + &self.deltas[a - 1],
            _ => self.theta.clone(),
        }
    }

    /// The report seen through a weight `M_s`, from the `T`-matrices.
    pub fn reweighted(&self, weight: &Matrix) -> Self {
        let map = |t: &Matrix| linalg::symmetrize(&(weight * t * weight.transpose()));
        Self {
            theta: map(&self.t_theta),
            deltas: self.t_delta.iter().map(map).collect(),
            ..self.clone()
        }
    }

    /// `tr(Δ_α Θ_s⁻¹)` for every `α`.
    pub fn trace_profile(&self) -> Result<Vec<f64>> {
        let f = linalg::SpdFactor::new(&self.theta)?;
        Ok(self
            .deltas
            .iter()
            .map(|d| f.solve_mat(d).trace())
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Step layout of one offline replay batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchLayout {
    pub onset: usize,
    pub offset: usize,
    pub horizon: usize,
}

/// Records after the warm-up, replays from an onset far enough away that
/// the recorded and live segments are decorrelated, and stops after
/// `max_alpha` replayed steps.
pub fn batch_layout(model: &LoopModel, s: usize, max_alpha: usize) -> BatchLayout {
    let warm = model.warmup_steps();
    let first_tau = warm + s;
    let offset = warm + 3 * s + max_alpha;
    let onset = first_tau + offset;
    BatchLayout {
        onset,
        offset,
        horizon: onset + max_alpha,
    }
}

pub fn batch_scenario(layout: &BatchLayout, s: usize, input_replay: bool) -> AttackScenario {
    let last_tau = layout.horizon - 1 - layout.offset;
    AttackScenario {
        record_window: (layout.onset - layout.offset - s, last_tau + s),
        onset: layout.onset,
        end: None,
        replay_map: ReplayMap::FixedOffset { offset: layout.offset },
        replay_inputs: input_replay,
        malicious_input: MaliciousInput::Zero,
        margin: s,
    }
}

/// Residuals at replay depths `α = 0, …, max_alpha` over `n_t` independent
/// batches; element `α` is an `l × n_t` sample matrix.
pub fn sample_replay_residuals(
    model: &LoopModel,
    pm: &ParityModel,
    n_t: usize,
    max_alpha: usize,
    input_replay: bool,
    seed: u64,
) -> Result<Vec<Matrix>> {
    let layout = batch_layout(model, pm.s, max_alpha);
    let scenario = batch_scenario(&layout, pm.s, input_replay);
    let columns: Vec<Vec<Vector>> = (0..n_t)
        .into_par_iter()
        .map(|b| -> Result<Vec<Vector>> {
            let traj = simulate(model, layout.horizon, Some(&scenario), None, trial_seed(seed, b as u64))?;
            let r = pm.residual_trace(&traj)?;
            // α = 0 is the last attack-free step, T₀ − 1.
            Ok((0..=max_alpha)
                .map(|a| r.column(layout.onset + a - 1 - pm.s).into_owned())
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut out = vec![Matrix::zeros(pm.l(), n_t); max_alpha + 1];
    for (b, cols) in columns.iter().enumerate() {
        for (a, c) in cols.iter().enumerate() {
            out[a].set_column(b, c);
        }
    }
    Ok(out)
}

/// Second-moment estimate `(1 / (n − 1)) Σ r rᵀ`.
pub fn second_moment(samples: &Matrix) -> Matrix {
    let n = samples.ncols().max(2);
    linalg::symmetrize(&(samples * samples.transpose() / (n as f64 - 1.0)))
}

#[derive(Debug, Clone)]
pub struct TDeltaEstimate {
    /// `T̂_Δα` for `α = 0, …, s`.
    pub t_hat: Vec<Matrix>,
    pub batches: usize,
    pub warning: Option<String>,
}

/// Data-driven estimate of `T_Δα` with `M_s = I`: offline replay over `n_t`
/// batches, `T̂_Δα = (1/(n_t − 1)) Σ r rᵀ − Θ_s`.
pub fn estimate_t_delta(
    model: &LoopModel,
    pm: &ParityModel,
    n_t: usize,
    input_replay: bool,
    seed: u64,
) -> Result<TDeltaEstimate> {
    if n_t < 2 {
        return Err(Error::InvalidInput("at least two batches are needed".into()));
    }
    let nz = pm.n_z();
    let unweighted = pm.with_weight(Matrix::identity(nz, nz))?;
    let theta = theta_s(&unweighted, &model.monitored)?;
    let samples = sample_replay_residuals(model, &unweighted, n_t, pm.s, input_replay, seed)?;
    let warning = (n_t < 100).then(|| {
        let msg = format!("only {n_t} batches; the estimate is unreliable below 100");
        warn!("{msg}");
        msg
    });
    Ok(TDeltaEstimate {
        t_hat: samples.iter().map(|r| second_moment(r) - &theta).collect(),
        batches: n_t,
        warning,
    })
}
