//! Analytic residual covariance under replay: `tr(Δ_α Θ⁻¹)`, KL divergence
//! and the detectability ranges for every depth.

use replay_parity::covariance::CovarianceReport;
use replay_parity::detect::{chi2_bounds, kl_divergence, lr_bounds};
use replay_parity::parity::build_parity;
use replay_parity::plant::LoopModel;

fn main() -> replay_parity::Result<()> {
    let model = LoopModel::preset("eq80", None)?;
    let pm = build_parity(&model.monitored, 9)?;
    let report = CovarianceReport::build(&model, &pm, true)?;
    let profile = report.trace_profile()?;

    println!("alpha  tr(DΘ⁻¹)    KL        chi2 upper  LR upper");
    for alpha in 1..=pm.s {
        let ta = report.theta_alpha(alpha);
        let kl = kl_divergence(&report.theta, &ta)?;
        let c = chi2_bounds(&report.theta, &ta, 20.0)?;
        let l = lr_bounds(&report.theta, &ta, 40.0)?;
        println!(
            "{alpha:>5}  {:>10.4}  {kl:>8.4}  {:>10.4}  {:>8.4}",
            profile[alpha - 1],
            c.upper,
            l.upper
        );
    }
    if std::env::args().any(|a| a == "--json") {
        println!("{}", report.to_json()?);
    }
    Ok(())
}
