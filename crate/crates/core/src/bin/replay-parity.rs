use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use replay_parity::harness::{self, config::SystemSpec, ExperimentConfig};
use replay_parity::Error;

#[derive(Parser)]
#[command(version, about = "Replay-attack detection experiments on parity-space residuals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its CSV bundle.
    Run {
        mode: ModeArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        trials: Option<usize>,
        /// Preset plant; replaces the system of `--config` when both are given.
        #[arg(long)]
        preset: Option<PresetArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Trace,
    Rate,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Eq80,
    Eq81,
}

impl PresetArg {
    fn name(self) -> &'static str {
        match self {
            Self::Eq80 => "eq80",
            Self::Eq81 => "eq81",
        }
    }
}

fn load(config: Option<PathBuf>, preset: Option<PresetArg>) -> Result<ExperimentConfig, Error> {
    match (config, preset) {
        (Some(path), preset) => {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let mut cfg = ExperimentConfig::from_json(&text)?;
            if let Some(p) = preset {
                cfg.system = SystemSpec::Preset(p.name().into());
            }
            Ok(cfg)
        }
        (None, Some(p)) => ExperimentConfig::preset(p.name()),
        (None, None) => Err(Error::Config("either --config or --preset is required".into())),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let Command::Run {
        mode,
        config,
        out,
        seed,
        trials,
        preset,
    } = Cli::parse().command;
    let result = load(config, preset).and_then(|mut cfg| {
        cfg.seed = seed;
        if let Some(t) = trials {
            cfg.trials = t;
        }
        cfg.validate()?;
        let res = match mode {
            ModeArg::Trace => harness::run_trace(&cfg)?,
            ModeArg::Rate => harness::run_detection_rate(&cfg)?,
        };
        harness::write_bundle(&res, &out)?;
        Ok(res)
    });
    match result {
        Ok(res) => {
            eprintln!("{}: wrote {} in {:.2} s", res.experiment, out.display(), res.runtime_secs);
            ExitCode::SUCCESS
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
