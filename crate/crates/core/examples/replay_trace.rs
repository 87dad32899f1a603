//! One seeded replay run on the 3-state loop: χ² and GLR traces plus labels.
//!
//! `cargo run --release --example replay_trace -- [out_dir]`

use std::path::PathBuf;

use replay_parity::harness::{run_trace, write_bundle, ExperimentConfig};

fn main() -> replay_parity::Result<()> {
    let mut cfg = ExperimentConfig::preset("eq80")?;
    cfg.seed = 7;
    let result = run_trace(&cfg)?;

    for t in &result.traces {
        let c = &t.classification;
        println!("{}/{}: {} ({} alarm runs)", t.variant, t.detector, c.label.as_str(), c.runs.len());
        for r in &c.runs {
            println!("  steps {}..={}, peak at {}", r.start, r.end, r.peak);
        }
    }

    if let Some(dir) = std::env::args().nth(1).map(PathBuf::from) {
        write_bundle(&result, &dir)?;
        println!("bundle written to {}", dir.display());
    }
    Ok(())
}
