//! Analytic covariances against long seeded simulations.

use replay_parity::covariance::{estimate_t_delta, steady_state_cov, theta_s, CovarianceReport};
use replay_parity::linalg::Matrix;
use replay_parity::parity::build_parity;
use replay_parity::plant::LoopModel;
use replay_parity::sim::simulate;

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm()
}

fn sample_cov(x: &Matrix) -> Matrix {
    let n = x.ncols() as f64;
    let mean = x.column_mean();
    let c = x - &mean * nalgebra::RowDVector::from_element(x.ncols(), 1.0);
    &c * c.transpose() / (n - 1.0)
}

#[test]
fn theta_matches_attack_free_residuals() {
    let model = LoopModel::preset("eq80", None).unwrap();
    let pm = build_parity(&model.monitored, 9).unwrap();
    let warm = model.warmup_steps();
    let traj = simulate(&model, warm + 100_000 + 9, None, None, 11).unwrap();
    let r = pm.residual_trace(&traj).unwrap();
    let tail = r.columns(warm, 100_000).into_owned();
    let theta = theta_s(&pm, &model.monitored).unwrap();
    let e = rel(&sample_cov(&tail), &theta);
    assert!(e < 0.05, "Θ_s relative error {e}");
}

#[test]
fn closed_loop_state_covariance() {
    let model = LoopModel::preset("eq81", None).unwrap();
    let ss = steady_state_cov(&model.closed, 1).unwrap();
    let warm = model.warmup_steps();
    let steps = 1_000_000;
    let traj = simulate(&model, warm + steps, None, None, 5).unwrap();
    let (n, nc) = (traj.x.nrows(), traj.x_c.nrows());
    let mut chi = Matrix::zeros(n + nc, steps);
    chi.rows_mut(0, n).copy_from(&traj.x.columns(warm, steps));
    chi.rows_mut(n, nc).copy_from(&traj.x_c.columns(warm, steps));
    let e = rel(&sample_cov(&chi), &ss.p_bar);
    assert!(e < 0.02, "P̄ relative error {e}");
}

#[test]
fn noise_state_cross_covariance() {
    let model = LoopModel::preset("eq81", None).unwrap();
    let s = 4;
    let ss = steady_state_cov(&model.closed, s).unwrap();
    let warm = model.warmup_steps();
    let steps = 400_000;
    let traj = simulate(&model, warm + steps + s + 1, None, None, 21).unwrap();
    let q = traj.w.nrows();
    let n = traj.x.nrows();
    for alpha in 1..=s {
        let blocks = s - alpha + 1;
        let mut est = Matrix::zeros(q * blocks, n);
        // Anchor k runs over the tail; block i pairs w(k − s + i) with x(k − α + 1).
        for k in (warm + s)..(warm + s + steps) {
            let x = traj.x.column(k + 1 - alpha);
            for i in 0..blocks {
                let w = traj.w.column(k - s + i);
                let mut b = est.view_mut((i * q, 0), (q, n));
                b += w * x.transpose();
            }
        }
        est /= steps as f64;
        let e = rel(&est, &ss.p_wx[alpha - 1]);
        assert!(e < 0.05, "α = {alpha}: P_wx relative error {e}");
    }
}

#[test]
fn batch_estimate_matches_analytic_delta() {
    let model = LoopModel::preset("eq80", None).unwrap();
    let pm = build_parity(&model.monitored, 9).unwrap();
    let report = CovarianceReport::build(&model, &pm, true).unwrap();
    let est = estimate_t_delta(&model, &pm, 10_000, true, 3).unwrap();
    assert!(est.warning.is_none());
    for alpha in [3, 5] {
        let e = rel(&est.t_hat[alpha], &report.t_delta[alpha - 1]);
        assert!(e < 0.10, "α = {alpha}: T̂_Δ relative error {e}");
    }
    // α = 0: only sampling noise, E‖S − Θ‖²_F = (‖Θ‖²_F + tr(Θ)²) / n.
    let theta = &report.t_theta;
    let rms = ((theta.norm_squared() + theta.trace().powi(2)) / 10_000.0).sqrt();
    let e0 = est.t_hat[0].norm();
    assert!(e0 < 4.0 * rms, "α = 0: ‖T̂‖ = {e0}, sampling rms {rms}");
}

#[test]
fn batch_estimate_error_halves_when_batches_quadruple() {
    let model = LoopModel::preset("eq81", None).unwrap();
    let pm = build_parity(&model.monitored, 4).unwrap();
    let report = CovarianceReport::build(&model, &pm, true).unwrap();
    let truth: Vec<&Matrix> = report.t_delta.iter().collect();
    let mse = |n_t: usize| {
        let mut acc = 0.0;
        for seed in 0..12 {
            let est = estimate_t_delta(&model, &pm, n_t, true, 100 + seed).unwrap();
            for (a, t) in truth.iter().enumerate() {
                acc += rel(&est.t_hat[a + 1], t).powi(2);
            }
        }
        acc
    };
    let ratio = (mse(4_000) / mse(1_000)).sqrt();
    assert!((0.35..=0.65).contains(&ratio), "error ratio {ratio}");
}
