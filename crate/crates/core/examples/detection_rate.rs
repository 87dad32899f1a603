//! Monte Carlo detection rate against replay depth, with the theoretical
//! χ² and LR ranges alongside.
//!
//! `cargo run --release --example detection_rate -- [trials]`

use replay_parity::harness::{run_detection_rate, ExperimentConfig};

fn main() -> replay_parity::Result<()> {
    let mut cfg = ExperimentConfig::preset("eq80")?;
    cfg.trials = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(300);
    cfg.seed = 1;
    let result = run_detection_rate(&cfg)?;

    let chi2 = result.rate("identity", "chi2").expect("chi2 curve");
    let glr = result.rate("identity", "glr").expect("glr curve");
    let bounds = &result.bounds[0].rows;
    println!("alpha  chi2   glr    chi2 range");
    for (i, a) in chi2.alpha.iter().enumerate() {
        let range = bounds
            .iter()
            .find(|b| b.alpha == *a)
            .map(|b| format!("[{:.3}, {:.3}]", b.chi2.lower.unwrap_or(0.0), b.chi2.upper.min(1.0)))
            .unwrap_or_default();
        println!(
            "{a:>5}  {:.3}  {:.3}  {range}",
            chi2.per_step[i].rate(),
            glr.per_step[i].rate()
        );
    }
    Ok(())
}
