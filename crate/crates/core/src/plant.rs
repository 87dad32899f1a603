//! Plant, controllers, closed-loop assembly and the marginally stable output
//! filter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, serde_matrix, Matrix, Vector, STABILITY_MARGIN};

const RICCATI_MAX_ITER: usize = 10_000;
const RICCATI_TOL: f64 = 1e-13;

/// `x(k+1) = A x + B_u u + B_w w`, `y = C x + v`, `w ~ N(0, Q)`, `v ~ N(0, R)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtiSystem {
    #[serde(with = "serde_matrix")]
    pub a: Matrix,
    #[serde(with = "serde_matrix")]
    pub b_u: Matrix,
    #[serde(with = "serde_matrix")]
    pub b_w: Matrix,
    #[serde(with = "serde_matrix")]
    pub c: Matrix,
    #[serde(with = "serde_matrix")]
    pub q: Matrix,
    #[serde(with = "serde_matrix")]
    pub r: Matrix,
}

fn check_shape(m: &Matrix, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::Dimension(format!(
            "{what} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_psd(m: &Matrix, what: &str, strict: bool) -> Result<()> {
    if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return Err(Error::InvalidInput(format!("{what} is not symmetric")));
    }
    let (values, _) = linalg::sym_eigen(m)?;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if (strict && min <= 1e-14 * scale) || min < -1e-12 * scale {
        let kind = if strict { "positive definite" } else { "positive semidefinite" };
        return Err(Error::InvalidInput(format!("{what} is not {kind}")));
    }
    Ok(())
}

impl LtiSystem {
    pub fn new(a: Matrix, b_u: Matrix, b_w: Matrix, c: Matrix, q: Matrix, r: Matrix) -> Result<Self> {
        let sys = Self { a, b_u, b_w, c, q, r };
        sys.validate()?;
        Ok(sys)
    }

    /// Checks dimensions, finiteness, `Q ≻ 0` and `R ⪰ 0`.
    ///
    /// A singular `R` only arises for the filter-augmented monitoring system,
    /// whose measurement noise has been folded into the process noise.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        check_psd(&self.q, "Q", true)?;
        check_psd(&self.r, "R", false)
    }

    /// Dimensions and finiteness only.
    pub fn validate_structure(&self) -> Result<()> {
        for (m, what) in [
            (&self.a, "A"),
            (&self.b_u, "B_u"),
            (&self.b_w, "B_w"),
            (&self.c, "C"),
            (&self.q, "Q"),
            (&self.r, "R"),
        ] {
            linalg::ensure_finite(m, what)?;
        }
        let n = self.a.nrows();
        if n == 0 {
            return Err(Error::Dimension("A must be nonempty".into()));
        }
        check_shape(&self.a, n, n, "A")?;
        if self.b_u.nrows() != n || self.b_u.ncols() == 0 {
            return Err(Error::Dimension(format!("B_u is {:?}", self.b_u.shape())));
        }
        if self.b_w.nrows() != n || self.b_w.ncols() == 0 {
            return Err(Error::Dimension(format!("B_w is {:?}", self.b_w.shape())));
        }
        if self.c.ncols() != n || self.c.nrows() == 0 {
            return Err(Error::Dimension(format!("C is {:?}", self.c.shape())));
        }
        check_shape(&self.q, self.n_noise(), self.n_noise(), "Q")?;
        check_shape(&self.r, self.n_outputs(), self.n_outputs(), "R")
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b_u.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn n_noise(&self) -> usize {
        self.b_w.ncols()
    }

    /// Third-order benchmark plant for passive monitoring, `Q = R = 0.01`.
    pub fn eq80() -> Self {
        Self {
            a: Matrix::from_row_slice(3, 3, &[0.9, 0.0, 0.0, 13.4679, 0.9, 0.0, 0.0, 0.1813, 1.0]),
            b_u: Matrix::from_row_slice(3, 1, &[0.2835, 0.0, 0.0]),
            b_w: Matrix::from_row_slice(3, 1, &[0.2835, 0.0, 0.0]),
            c: Matrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]),
            q: Matrix::from_element(1, 1, 0.01),
            r: Matrix::from_element(1, 1, 0.01),
        }
    }

    /// Scalar integrator used with the active filter, `Q = 1`, `R = 0.1`.
    pub fn eq81() -> Self {
        let one = Matrix::from_element(1, 1, 1.0);
        Self {
            a: one.clone(),
            b_u: one.clone(),
            b_w: one.clone(),
            c: one.clone(),
            q: one,
            r: Matrix::from_element(1, 1, 0.1),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "eq80" => Ok(Self::eq80()),
            "eq81" => Ok(Self::eq81()),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let sys: Self = serde_json::from_str(text)?;
        sys.validate()?;
        Ok(sys)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    StaticGain,
    ObserverStateFeedback,
    DynamicOutputFeedback,
}

/// Linear controller `x̂(k+1) = A_c x̂ + B_c y`, `u = C_c x̂ + D_c y`.
///
/// Every kind is stored through its realization; `k` and `l` are kept for
/// observer-based controllers, where `A_c = A + B_u K − L C`, `B_c = L`,
/// `C_c = K`, `D_c = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    pub kind: ControllerKind,
    #[serde(default, with = "serde_matrix::option", skip_serializing_if = "Option::is_none")]
    pub k: Option<Matrix>,
    #[serde(default, with = "serde_matrix::option", skip_serializing_if = "Option::is_none")]
    pub l: Option<Matrix>,
    #[serde(with = "serde_matrix")]
    pub a_c: Matrix,
    #[serde(with = "serde_matrix")]
    pub b_c: Matrix,
    #[serde(with = "serde_matrix")]
    pub c_c: Matrix,
    #[serde(with = "serde_matrix")]
    pub d_c: Matrix,
}

impl Controller {
    /// Static output feedback `u = D y`.
    pub fn static_gain(sys: &LtiSystem, d: Matrix) -> Result<Self> {
        let (m, p) = (sys.n_inputs(), sys.n_outputs());
        check_shape(&d, m, p, "static gain")?;
        let ctrl = Self {
            kind: ControllerKind::StaticGain,
            k: None,
            l: None,
            a_c: Matrix::zeros(0, 0),
            b_c: Matrix::zeros(0, p),
            c_c: Matrix::zeros(m, 0),
            d_c: d,
        };
        ctrl.check_stabilizing(sys)?;
        Ok(ctrl)
    }

    /// Predictor observer with state feedback `u = K x̂`.
    pub fn observer(sys: &LtiSystem, k: Matrix, l: Matrix) -> Result<Self> {
        let (n, m, p) = (sys.n_states(), sys.n_inputs(), sys.n_outputs());
        check_shape(&k, m, n, "K")?;
        check_shape(&l, n, p, "L")?;
        let a_c = &sys.a + &sys.b_u * &k - &l * &sys.c;
        let ctrl = Self {
            kind: ControllerKind::ObserverStateFeedback,
            a_c,
            b_c: l.clone(),
            c_c: k.clone(),
            d_c: Matrix::zeros(m, p),
            k: Some(k),
            l: Some(l),
        };
        ctrl.check_stabilizing(sys)?;
        Ok(ctrl)
    }

    pub fn dynamic(sys: &LtiSystem, a_c: Matrix, b_c: Matrix, c_c: Matrix, d_c: Matrix) -> Result<Self> {
        let nc = a_c.nrows();
        let (m, p) = (sys.n_inputs(), sys.n_outputs());
        check_shape(&a_c, nc, nc, "A_c")?;
        check_shape(&b_c, nc, p, "B_c")?;
        check_shape(&c_c, m, nc, "C_c")?;
        check_shape(&d_c, m, p, "D_c")?;
        let ctrl = Self {
            kind: ControllerKind::DynamicOutputFeedback,
            k: None,
            l: None,
            a_c,
            b_c,
            c_c,
            d_c,
        };
        ctrl.check_stabilizing(sys)?;
        Ok(ctrl)
    }

    pub fn validate(&self, sys: &LtiSystem) -> Result<()> {
        let nc = self.state_dim();
        let (m, p) = (sys.n_inputs(), sys.n_outputs());
        check_shape(&self.a_c, nc, nc, "A_c")?;
        check_shape(&self.b_c, nc, p, "B_c")?;
        check_shape(&self.c_c, m, nc, "C_c")?;
        check_shape(&self.d_c, m, p, "D_c")?;
        self.check_stabilizing(sys)
    }

    fn check_stabilizing(&self, sys: &LtiSystem) -> Result<()> {
        let radius = linalg::spectral_radius(&closed_loop_dynamics(sys, self));
        if radius >= 1.0 - STABILITY_MARGIN {
            return Err(Error::Unstable { radius });
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.a_c.nrows()
    }

    /// `u_c = C_c x̂ + D_c y`.
    pub fn output(&self, state: &Vector, y: &Vector) -> Vector {
        &self.c_c * state + &self.d_c * y
    }

    /// `x̂⁺ = A_c x̂ + B_c y`.
    pub fn update(&self, state: &Vector, y: &Vector) -> Vector {
        &self.a_c * state + &self.b_c * y
    }
}

fn closed_loop_dynamics(sys: &LtiSystem, ctrl: &Controller) -> Matrix {
    let n = sys.n_states();
    let nc = ctrl.state_dim();
    let mut f = Matrix::zeros(n + nc, n + nc);
    f.view_mut((0, 0), (n, n))
        .copy_from(&(&sys.a + &sys.b_u * &ctrl.d_c * &sys.c));
    f.view_mut((0, n), (n, nc)).copy_from(&(&sys.b_u * &ctrl.c_c));
    f.view_mut((n, 0), (nc, n)).copy_from(&(&ctrl.b_c * &sys.c));
    f.view_mut((n, n), (nc, nc)).copy_from(&ctrl.a_c);
    f
}

fn riccati_converged(prev: &Matrix, next: &Matrix) -> bool {
    (next - prev).norm() <= RICCATI_TOL * next.norm().max(1.0)
}

/// Stabilizing solution of `S = AᵀSA − AᵀSB(R + BᵀSB)⁻¹BᵀSA + Q` by
/// Riccati iteration.
pub fn dare(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<Matrix> {
    let mut s = linalg::symmetrize(q);
    for _ in 0..RICCATI_MAX_ITER {
        let gram = r + b.transpose() * &s * b;
        let f = linalg::SpdFactor::new(&gram)
            .map_err(|_| Error::Synthesis("R + BᵀSB is not positive definite".into()))?;
        let bsa = b.transpose() * &s * a;
        let next = linalg::symmetrize(&(a.transpose() * &s * a - bsa.transpose() * f.solve_mat(&bsa) + q));
        linalg::ensure_finite(&next, "Riccati iterate").map_err(|_| Error::Synthesis("Riccati iteration diverged".into()))?;
        if riccati_converged(&s, &next) {
            return Ok(next);
        }
        s = next;
    }
    Err(Error::Synthesis(format!(
        "Riccati iteration did not converge in {RICCATI_MAX_ITER} steps"
    )))
}

/// LQR feedback gain `K = −(R_u + BᵀSB)⁻¹BᵀSA` and predictor Kalman gain
/// `L = APCᵀ(CPCᵀ + R)⁻¹`, combined into an observer controller.
pub fn lqg_synthesize(sys: &LtiSystem, state_weight: &Matrix, input_weight: &Matrix) -> Result<Controller> {
    sys.validate()?;
    let (n, m) = (sys.n_states(), sys.n_inputs());
    check_shape(state_weight, n, n, "state weight")?;
    check_shape(input_weight, m, m, "input weight")?;
    check_psd(state_weight, "state weight", false)?;
    check_psd(input_weight, "input weight", true)?;

    let s = dare(&sys.a, &sys.b_u, state_weight, input_weight)?;
    let gram = input_weight + sys.b_u.transpose() * &s * &sys.b_u;
    let k = -linalg::SpdFactor::new(&gram)?.solve_mat(&(sys.b_u.transpose() * &s * &sys.a));

    let w = &sys.b_w * &sys.q * sys.b_w.transpose();
    let p = dare(&sys.a.transpose(), &sys.c.transpose(), &w, &sys.r)?;
    let innov = &sys.c * &p * sys.c.transpose() + &sys.r;
    let l = linalg::SpdFactor::new(&innov)
        .map_err(|_| Error::Synthesis("innovation covariance is singular".into()))?
        .solve_mat(&(&sys.c * &p * sys.a.transpose()))
        .transpose();

    Controller::observer(sys, k, l).map_err(|e| match e {
        Error::Unstable { radius } => Error::Synthesis(format!("LQG closed loop has spectral radius {radius}")),
        other => other,
    })
}

/// LQG controller with identity weights.
pub fn lqg_default(sys: &LtiSystem) -> Result<Controller> {
    lqg_synthesize(
        sys,
        &Matrix::identity(sys.n_states(), sys.n_states()),
        &Matrix::identity(sys.n_inputs(), sys.n_inputs()),
    )
}

/// Closed loop `χ(k+1) = Ā χ + B̄_w w + B̄_v v` over a stacked state whose
/// leading block is the monitored plant state.
///
/// Without a filter `χ = [x; x̂]`. With a filter the monitored plant is the
/// augmented `[x; ζ]`, its process noise is `w̄(k) = [w(k); v(k+1)]`, and the
/// stack also carries `v(k)` so the controller can be driven by the recovered
/// output: `χ = [x; ζ; x̂; v]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoop {
    #[serde(with = "serde_matrix")]
    pub a_bar: Matrix,
    #[serde(with = "serde_matrix")]
    pub b_w_bar: Matrix,
    #[serde(with = "serde_matrix")]
    pub b_v_bar: Matrix,
    #[serde(with = "serde_matrix")]
    pub c_bar: Matrix,
    /// Covariance of the noise entering through `B̄_w`.
    #[serde(with = "serde_matrix")]
    pub q: Matrix,
    /// Covariance of the noise entering through `B̄_v`.
    #[serde(with = "serde_matrix")]
    pub r: Matrix,
    pub plant_states: usize,
    pub ctrl_offset: usize,
    pub ctrl_states: usize,
}

impl ClosedLoop {
    pub fn dim(&self) -> usize {
        self.a_bar.nrows()
    }

    pub fn spectral_radius(&self) -> f64 {
        linalg::spectral_radius(&self.a_bar)
    }

    pub fn is_stationary(&self) -> bool {
        self.spectral_radius() < 1.0 - STABILITY_MARGIN
    }

    /// `B̄_w Q B̄_wᵀ + B̄_v R B̄_vᵀ`.
    pub fn noise_gramian(&self) -> Matrix {
        &self.b_w_bar * &self.q * self.b_w_bar.transpose() + &self.b_v_bar * &self.r * self.b_v_bar.transpose()
    }
}

/// Assembles `Ā = [[A + B D_c C, B C_c], [B_c C, A_c]]`, `B̄_w = [B_w; 0]`,
/// `B̄_v = [B D_c; B_c]`, `C̄ = [C 0]`.
pub fn close_loop(sys: &LtiSystem, ctrl: &Controller) -> Result<ClosedLoop> {
    let (n, p, q) = (sys.n_states(), sys.n_outputs(), sys.n_noise());
    let nc = ctrl.state_dim();
    ctrl.validate(sys)?;
    let a_bar = closed_loop_dynamics(sys, ctrl);
    let mut b_w_bar = Matrix::zeros(n + nc, q);
    b_w_bar.view_mut((0, 0), (n, q)).copy_from(&sys.b_w);
    let mut b_v_bar = Matrix::zeros(n + nc, p);
    b_v_bar.view_mut((0, 0), (n, p)).copy_from(&(&sys.b_u * &ctrl.d_c));
    b_v_bar.view_mut((n, 0), (nc, p)).copy_from(&ctrl.b_c);
    let mut c_bar = Matrix::zeros(p, n + nc);
    c_bar.view_mut((0, 0), (p, n)).copy_from(&sys.c);
    Ok(ClosedLoop {
        a_bar,
        b_w_bar,
        b_v_bar,
        c_bar,
        q: sys.q.clone(),
        r: sys.r.clone(),
        plant_states: n,
        ctrl_offset: n,
        ctrl_states: nc,
    })
}

/// Output-side filter `ζ(k) = A_ζ ζ(k−1) + B_ζ y(k)`, `ζ(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalFilter {
    #[serde(with = "serde_matrix")]
    pub a_zeta: Matrix,
    #[serde(with = "serde_matrix")]
    pub b_zeta: Matrix,
    #[serde(skip)]
    b_pinv: Option<Matrix>,
    #[serde(skip)]
    zeta: Option<Vector>,
}

impl MarginalFilter {
    pub fn new(a_zeta: Matrix, b_zeta: Matrix) -> Result<Self> {
        let mut f = Self {
            a_zeta,
            b_zeta,
            b_pinv: None,
            zeta: None,
        };
        f.prepare()?;
        Ok(f)
    }

    /// `A_ζ = σ I`, `B_ζ = I`.
    pub fn scaled_identity(p: usize, sigma: f64) -> Result<Self> {
        Self::new(Matrix::identity(p, p) * sigma, Matrix::identity(p, p))
    }

    /// Slightly contractive default, `σ = 0.999`.
    pub fn default_for(p: usize) -> Result<Self> {
        Self::scaled_identity(p, 0.999)
    }

    /// Validates and caches the recovery map; needed after deserializing.
    pub fn prepare(&mut self) -> Result<()> {
        linalg::ensure_finite(&self.a_zeta, "A_zeta")?;
        linalg::ensure_finite(&self.b_zeta, "B_zeta")?;
        let p = self.a_zeta.nrows();
        if p == 0 {
            return Err(Error::Dimension("filter must be nonempty".into()));
        }
        check_shape(&self.a_zeta, p, p, "A_zeta")?;
        check_shape(&self.b_zeta, p, p, "B_zeta")?;
        let sigma_max = linalg::norm_2(&self.a_zeta);
        if sigma_max > 1.0 + 1e-12 {
            return Err(Error::InvalidInput(format!(
                "A_zeta has singular value {sigma_max} above 1"
            )));
        }
        let f = linalg::svd(&self.b_zeta)?;
        if f.rank() < p {
            return Err(Error::Rank("B_zeta must be invertible".into()));
        }
        let inv = &f.v * Matrix::from_diagonal(&f.singular_values.map(|s| 1.0 / s)) * f.u.transpose();
        self.b_pinv = Some(inv);
        self.zeta = Some(Vector::zeros(p));
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.a_zeta.nrows()
    }

    pub fn reset(&mut self) {
        self.zeta = Some(Vector::zeros(self.dim()));
    }

    pub fn state(&self) -> Vector {
        self.zeta.clone().unwrap_or_else(|| Vector::zeros(self.dim()))
    }

    /// Advances the filter with `y(k)` and returns the transmitted `ζ(k)`.
    pub fn filter_step(&mut self, y: &Vector) -> Vector {
        let next = &self.a_zeta * self.state() + &self.b_zeta * y;
        self.zeta = Some(next.clone());
        next
    }

    /// `y(k) = B_ζ⁺ (ζ(k) − A_ζ ζ(k−1))`.
    pub fn recover_step(&self, zeta_k: &Vector, zeta_prev: &Vector) -> Vector {
        let pinv = self
            .b_pinv
            .as_ref()
            .expect("filter prepared by its constructor");
        pinv * (zeta_k - &self.a_zeta * zeta_prev)
    }
}

/// Monitoring system with state `[x; ζ]`, output `ζ` and process noise
/// `w̄(k) = [w(k); v(k+1)] ~ N(0, diag(Q, R))`; its measurement noise is zero.
pub fn augment_with_filter(sys: &LtiSystem, f: &MarginalFilter) -> Result<LtiSystem> {
    let (n, m, p, q) = (sys.n_states(), sys.n_inputs(), sys.n_outputs(), sys.n_noise());
    if f.dim() != p {
        return Err(Error::Dimension(format!("filter dim {} vs outputs {p}", f.dim())));
    }
    let bc = &f.b_zeta * &sys.c;
    let mut a = Matrix::zeros(n + p, n + p);
    a.view_mut((0, 0), (n, n)).copy_from(&sys.a);
    a.view_mut((n, 0), (p, n)).copy_from(&(&bc * &sys.a));
    a.view_mut((n, n), (p, p)).copy_from(&f.a_zeta);
    let mut b_u = Matrix::zeros(n + p, m);
    b_u.view_mut((0, 0), (n, m)).copy_from(&sys.b_u);
    b_u.view_mut((n, 0), (p, m)).copy_from(&(&bc * &sys.b_u));
    let mut b_w = Matrix::zeros(n + p, q + p);
    b_w.view_mut((0, 0), (n, q)).copy_from(&sys.b_w);
    b_w.view_mut((n, 0), (p, q)).copy_from(&(&bc * &sys.b_w));
    b_w.view_mut((n, q), (p, p)).copy_from(&f.b_zeta);
    let mut c = Matrix::zeros(p, n + p);
    c.view_mut((0, n), (p, p)).fill_with_identity();
    let aug = LtiSystem {
        a,
        b_u,
        b_w,
        c,
        q: linalg::block_diag(&[&sys.q, &sys.r]),
        r: Matrix::zeros(p, p),
    };
    aug.validate()?;
    Ok(aug)
}

/// Closed loop of plant, filter and a controller driven by the recovered
/// output, over `χ = [x; ζ; x̂; v]`.
///
/// Only the control part must be stable; with `A_ζ` on the unit circle the
/// `ζ` block is marginal and the loop is not stationary.
pub fn close_loop_filtered(sys: &LtiSystem, ctrl: &Controller, f: &MarginalFilter) -> Result<ClosedLoop> {
    ctrl.validate(sys)?;
    let aug = augment_with_filter(sys, f)?;
    let (n, p, q) = (sys.n_states(), sys.n_outputs(), sys.n_noise());
    let nc = ctrl.state_dim();
    let na = n + p;
    let dim = na + nc + p;
    // Recovered output y = C x + v, expressed on χ.
    let mut y_sel = Matrix::zeros(p, dim);
    y_sel.view_mut((0, 0), (p, n)).copy_from(&sys.c);
    y_sel.view_mut((0, na + nc), (p, p)).fill_with_identity();
    let mut x_c = Matrix::zeros(nc, dim);
    x_c.view_mut((0, na), (nc, nc)).fill_with_identity();
    let mut x_m = Matrix::zeros(na, dim);
    x_m.view_mut((0, 0), (na, na)).fill_with_identity();
    let u_of_chi = &ctrl.c_c * &x_c + &ctrl.d_c * &y_sel;

    let mut a_bar = Matrix::zeros(dim, dim);
    a_bar
        .view_mut((0, 0), (na, dim))
        .copy_from(&(&aug.a * &x_m + &aug.b_u * &u_of_chi));
    a_bar
        .view_mut((na, 0), (nc, dim))
        .copy_from(&(&ctrl.a_c * &x_c + &ctrl.b_c * &y_sel));

    let mut b_w_bar = Matrix::zeros(dim, q + p);
    b_w_bar.view_mut((0, 0), (na, q + p)).copy_from(&aug.b_w);
    b_w_bar
        .view_mut((na + nc, q), (p, p))
        .fill_with_identity();
    let mut c_bar = Matrix::zeros(p, dim);
    c_bar.view_mut((0, 0), (p, na)).copy_from(&aug.c);
    Ok(ClosedLoop {
        a_bar,
        b_w_bar,
        b_v_bar: Matrix::zeros(dim, p),
        c_bar,
        q: aug.q.clone(),
        r: aug.r.clone(),
        plant_states: na,
        ctrl_offset: na,
        ctrl_states: nc,
    })
}

/// Everything the monitoring side needs about one control loop.
#[derive(Debug, Clone)]
pub struct LoopModel {
    pub plant: LtiSystem,
    pub controller: Controller,
    pub filter: Option<MarginalFilter>,
    /// System seen by the detector: the plant, or the filter-augmented plant.
    pub monitored: LtiSystem,
    pub closed: ClosedLoop,
}

impl LoopModel {
    pub fn new(plant: LtiSystem, controller: Controller, filter: Option<MarginalFilter>) -> Result<Self> {
        plant.validate()?;
        let (monitored, closed) = match &filter {
            None => (plant.clone(), close_loop(&plant, &controller)?),
            Some(f) => (
                augment_with_filter(&plant, f)?,
                close_loop_filtered(&plant, &controller, f)?,
            ),
        };
        Ok(Self {
            plant,
            controller,
            filter,
            monitored,
            closed,
        })
    }

    /// Preset plant with the identity-weighted LQG controller.
    pub fn preset(name: &str, filter: Option<MarginalFilter>) -> Result<Self> {
        let plant = LtiSystem::preset(name)?;
        let controller = lqg_default(&plant)?;
        Self::new(plant, controller, filter)
    }

    /// Spectral radius of the plant-controller loop, excluding any filter.
    pub fn control_radius(&self) -> f64 {
        linalg::spectral_radius(&closed_loop_dynamics(&self.plant, &self.controller))
    }

    /// `max(200, 10 τ)` with `τ = −1 / ln ρ` of the control loop.
    pub fn warmup_steps(&self) -> usize {
        let rho = self.control_radius();
        let tau = if rho <= 0.0 { 0.0 } else { -1.0 / rho.ln() };
        (10.0 * tau).ceil().max(200.0) as usize
    }
}
