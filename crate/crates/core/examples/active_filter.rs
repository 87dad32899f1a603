//! Passive monitoring against an output-side marginally stable filter on
//! the scalar loop, where plain replay is nearly stealthy.

use replay_parity::harness::config::{FilterSpec, VariantSpec};
use replay_parity::harness::{run_detection_rate, ExperimentConfig};
use replay_parity::optimize::Weighting;

fn main() -> replay_parity::Result<()> {
    let mut cfg = ExperimentConfig::preset("eq81")?;
    cfg.trials = 300;
    cfg.variants = vec![
        VariantSpec {
            name: "passive".into(),
            weighting: Weighting::Identity,
            filter: None,
        },
        VariantSpec {
            name: "active".into(),
            weighting: Weighting::Identity,
            filter: Some(FilterSpec::Scaled { sigma: 1.0 }),
        },
    ];
    let result = run_detection_rate(&cfg)?;
    for v in ["passive", "active"] {
        for d in ["chi2", "glr"] {
            let (a, p) = result.rate(v, d).expect("curve").peak();
            println!("{v:>7} {d:>4}: peak rate {:.3} at alpha {a}", p.rate());
        }
    }
    for n in &result.notes {
        println!("note: {n}");
    }
    Ok(())
}
