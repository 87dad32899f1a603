//! A user-defined plant read from JSON: LQG loop, parity residuals and a χ²
//! trace on an attack-free run.

use replay_parity::covariance::theta_s;
use replay_parity::detect::Chi2Detector;
use replay_parity::parity::build_parity;
use replay_parity::plant::{lqg_default, LoopModel, LtiSystem};
use replay_parity::sim::simulate;

const PLANT: &str = r#"{
  "a": [[1.0, 0.1], [0.0, 0.95]],
  "b_u": [[0.0], [0.1]],
  "b_w": [[1.0, 0.0], [0.0, 1.0]],
  "c": [[1.0, 0.0]],
  "q": [[0.01, 0.0], [0.0, 0.01]],
  "r": [[0.04]]
}"#;

fn main() -> replay_parity::Result<()> {
    let plant = LtiSystem::from_json(PLANT)?;
    let ctrl = lqg_default(&plant)?;
    let model = LoopModel::new(plant, ctrl, None)?;
    println!("closed-loop spectral radius {:.4}", model.control_radius());

    let pm = build_parity(&model.monitored, 4)?;
    println!("parity space dimension {}, kernel defect {:.2e}", pm.n_z(), pm.kernel_defect());

    let theta = theta_s(&pm, &model.monitored)?;
    let det = Chi2Detector::from_false_alarm_rate(&theta, 0.01)?;
    let traj = simulate(&model, 5_000, None, None, 4)?;
    let r = pm.residual_trace(&traj)?;
    let trace = det.trace(&r, pm.s);
    let rate = trace.alarm_steps().len() as f64 / trace.values.len() as f64;
    println!("threshold {:.3}, attack-free alarm rate {rate:.4}", trace.threshold);
    Ok(())
}
