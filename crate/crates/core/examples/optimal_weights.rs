//! Designs `M_s` under each optimization index and compares the KL gain
//! summed over replay depths. Square invertible weights leave the KL
//! divergence unchanged, so only the one-row designs differ.

use replay_parity::covariance::CovarianceReport;
use replay_parity::detect::kl_divergence;
use replay_parity::optimize::{Norm, Weighting};
use replay_parity::parity::build_parity;
use replay_parity::plant::LoopModel;

fn main() -> replay_parity::Result<()> {
    let model = LoopModel::preset("eq80", None)?;
    let pm = build_parity(&model.monitored, 9)?;
    let base = CovarianceReport::build(&model, &pm, true)?;
    let l = pm.n_z();

    let choices = [
        Weighting::Identity,
        Weighting::Unified,
        Weighting::J1 { norm: Norm::Two },
        Weighting::J2 { l },
        Weighting::J2 { l: 1 },
        Weighting::J2m { alpha: 5 },
        Weighting::J3,
        Weighting::J4 { l, gamma: 0.5 },
    ];
    for w in choices {
        let m = w.design(&pm, &model.monitored, Some(&base))?;
        let report = base.reweighted(&m);
        let kl: f64 = (1..=pm.s)
            .map(|a| kl_divergence(&report.theta, &report.theta_alpha(a)))
            .sum::<replay_parity::Result<f64>>()?;
        println!("{:<8} rows {:>2}  summed KL {kl:.4}", w.name(), m.nrows());
    }
    Ok(())
}
