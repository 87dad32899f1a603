//! Data-driven covariance change from offline replay batches, compared with
//! the model-based value.

use replay_parity::covariance::{estimate_t_delta, CovarianceReport};
use replay_parity::parity::build_parity;
use replay_parity::plant::LoopModel;

fn main() -> replay_parity::Result<()> {
    let model = LoopModel::preset("eq81", None)?;
    let pm = build_parity(&model.monitored, 4)?;
    let truth = CovarianceReport::build(&model, &pm, true)?;

    for n_t in [500, 2_000, 8_000] {
        let est = estimate_t_delta(&model, &pm, n_t, true, 9)?;
        let errs: Vec<String> = (1..=pm.s)
            .map(|a| {
                let t = &truth.t_delta[a - 1];
                format!("{:.3}", (&est.t_hat[a] - t).norm() / t.norm())
            })
            .collect();
        println!("n_t = {n_t:>5}: relative error by alpha [{}]", errs.join(", "));
        if let Some(w) = est.warning {
            println!("  warning: {w}");
        }
    }
    Ok(())
}
