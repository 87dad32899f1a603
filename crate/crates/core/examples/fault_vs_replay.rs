//! Labels the four benchmark faults and the replay from their alarm patterns.

use replay_parity::harness::config::FaultCase;
use replay_parity::harness::{run_trace, ExperimentConfig};

fn main() -> replay_parity::Result<()> {
    let mut cases = vec![ExperimentConfig::preset("eq80")?];
    for case in FaultCase::ALL {
        cases.push(ExperimentConfig::fault_preset("eq80", case)?);
    }
    for mut cfg in cases {
        cfg.seed = 3;
        let result = run_trace(&cfg)?;
        let labels: Vec<String> = result
            .traces
            .iter()
            .map(|t| format!("{} {}", t.detector, t.classification.label.as_str()))
            .collect();
        println!("{:<26} {}", cfg.name.as_deref().unwrap_or(""), labels.join(", "));
    }
    Ok(())
}
