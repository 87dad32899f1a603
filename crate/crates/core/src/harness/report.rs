//! Output bundle: long-format CSVs, per-detector traces and a summary.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::run::{ExperimentResult, Mode};
use crate::error::Result;

/// Header shared by `traces.csv` and `rates.csv`.
pub const LONG_HEADER: &str = "experiment,x,series,value,ci_lo,ci_hi";
pub const BOUNDS_HEADER: &str = "variant,alpha,tr_delta_theta_inv,chi2_upper,chi2_lower,kl,lr_upper,lr_lower";

const Z95: f64 = 1.959963984540054;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes every file of the bundle. Output depends only on the result, so
/// equal seeds give byte-identical bundles.
pub fn write_bundle(result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_traces(result, dir)?;
    write_rates(result, dir)?;
    write_bounds(result, dir)?;
    for det in ["chi2", "glr"] {
        let mut out = create(dir, &format!("{det}_trace.csv"))?;
        match result.traces.iter().find(|t| t.detector == det) {
            Some(t) => t.trace.write_csv(&mut out, |k| {
                result.phases.get(k).map(|p| p.as_str().to_string()).unwrap_or_default()
            })?,
            None => writeln!(out, "k,J,threshold,alarm,phase")?,
        }
        out.flush()?;
    }
    fs::write(dir.join("summary.txt"), summary(result))?;
    Ok(())
}

fn write_traces(result: &ExperimentResult, dir: &Path) -> Result<()> {
    let mut out = create(dir, "traces.csv")?;
    writeln!(out, "{LONG_HEADER}")?;
    for t in &result.traces {
        let series = format!("{}/{}", t.variant, t.detector);
        for (i, v) in t.trace.values.iter().enumerate() {
            writeln!(out, "{},{},{series},{v},,", result.experiment, t.trace.step(i))?;
        }
    }
    out.flush()?;
    Ok(())
}

fn write_rates(result: &ExperimentResult, dir: &Path) -> Result<()> {
    let mut out = create(dir, "rates.csv")?;
    writeln!(out, "{LONG_HEADER}")?;
    let exp = &result.experiment;
    for c in &result.rates {
        for (kind, props) in [("per_step", &c.per_step), ("cumulative", &c.cumulative)] {
            for (a, p) in c.alpha.iter().zip(props) {
                let (lo, hi) = p.wilson(Z95);
                writeln!(out, "{exp},{a},{}/{}/{kind},{},{lo},{hi}", c.variant, c.detector, p.rate())?;
            }
        }
    }
    if result.mode == Mode::Rate {
        for b in &result.bounds {
            for r in &b.rows {
                let v = &b.variant;
                let a = r.alpha;
                writeln!(out, "{exp},{a},{v}/chi2/upper,{},,", r.chi2.upper)?;
                if let Some(lo) = r.chi2.lower {
                    writeln!(out, "{exp},{a},{v}/chi2/lower,{lo},,")?;
                }
                writeln!(out, "{exp},{a},{v}/lr/upper,{},,", r.lr.upper)?;
                if let Some(lo) = r.lr.lower {
                    writeln!(out, "{exp},{a},{v}/lr/lower,{lo},,")?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn write_bounds(result: &ExperimentResult, dir: &Path) -> Result<()> {
    let mut out = create(dir, "bounds.csv")?;
    writeln!(out, "{BOUNDS_HEADER}")?;
    for b in &result.bounds {
        for r in &b.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                b.variant,
                r.alpha,
                r.tr_delta,
                r.chi2.upper,
                opt(r.chi2.lower),
                r.kl,
                r.lr.upper,
                opt(r.lr.lower)
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn summary(result: &ExperimentResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "experiment: {}", result.experiment);
    let _ = writeln!(s, "mode: {}", result.mode.as_str());
    let _ = writeln!(s, "target: {}", result.target);
    let _ = writeln!(s, "seed: {}", result.seed);
    let _ = writeln!(s, "trials: {}", result.trials);
    if !result.traces.is_empty() {
        let _ = writeln!(s, "\nclassification:");
        for t in &result.traces {
            let c = &t.classification;
            let _ = writeln!(
                s,
                "  {}/{}: {} (threshold {}, {} runs, expected span {})",
                t.variant,
                t.detector,
                c.label.as_str(),
                t.trace.threshold,
                c.runs.len(),
                c.expected_span
            );
            for r in &c.runs {
                let _ = writeln!(
                    s,
                    "    run {}..={} alarms {} peak {}",
                    r.start, r.end, r.alarms, r.peak
                );
            }
        }
    }
    if !result.rates.is_empty() {
        let _ = writeln!(s, "\npeak per-step detection rate:");
        for c in &result.rates {
            let (a, p) = c.peak();
            let _ = writeln!(s, "  {}/{}: {} at alpha {a}", c.variant, c.detector, p.rate());
        }
    }
    if !result.notes.is_empty() {
        let _ = writeln!(s, "\nnotes:");
        for n in &result.notes {
            let _ = writeln!(s, "  {n}");
        }
    }
    let _ = writeln!(s, "\nconfig:\n{}", result.config_json);
    s
}
