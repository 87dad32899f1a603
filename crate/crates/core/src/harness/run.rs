//! Single-run traces and Monte Carlo detection-rate experiments.

use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;

use super::config::{ExperimentConfig, VariantSpec, DEFAULT_CHI2_THRESHOLD, DEFAULT_GLR_THRESHOLD};
use crate::covariance::{theta_s, CovarianceReport};
use crate::detect::{self, classify_anomaly, Chi2Detector, Classification, DetectabilityBounds, GlrDetector, StatTrace};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, SpdFactor};
use crate::optimize::Weighting;
use crate::parity::{build_parity, ParityModel};
use crate::plant::LoopModel;
use crate::sim::{simulate, trial_seed, Phase};
use crate::stats::Proportion;

/// One weighting/filter combination, ready to detect.
#[derive(Debug, Clone)]
pub struct Variant {
    pub name: String,
    pub weighting: Weighting,
    pub model: LoopModel,
    /// Parity model carrying the chosen weight.
    pub pm: ParityModel,
    pub theta: Matrix,
    pub chi2: Chi2Detector,
    pub glr: GlrDetector,
    /// Covariance report seen through the weight, when the loop admits one.
    pub report: Option<CovarianceReport>,
    /// Factors of `Θ` and `Θ^α`, `α = 1…s`, for the ideal LR test.
    pub lr: Option<(SpdFactor, Vec<SpdFactor>)>,
    pub notes: Vec<String>,
}

const CALIBRATION_SALT: u64 = 0x5eed_ca1b;

pub fn prepare_variant(cfg: &ExperimentConfig, spec: &VariantSpec, input_replay: bool) -> Result<Variant> {
    let model = cfg.loop_model(spec.filter.as_ref())?;
    let base = build_parity(&model.monitored, cfg.s)?;
    let mut notes = Vec::new();
    let report = if model.closed.is_stationary() {
        match CovarianceReport::build(&model, &base, input_replay) {
            Ok(r) => Some(r),
            Err(e) => {
                notes.push(format!("no analytic covariance report: {e}"));
                None
            }
        }
    } else {
        notes.push(format!(
            "closed loop is not stationary (spectral radius {:.6}); bounds omitted",
            model.closed.spectral_radius()
        ));
        None
    };
    let m = spec.weighting.design(&base, &model.monitored, report.as_ref())?;
    let pm = base.with_weight(m.clone())?;
    let theta = theta_s(&pm, &model.monitored)?;
    let report = report.map(|r| r.reweighted(&m));

    let chi2_spec = cfg.detectors.chi2;
    let chi2 = match (chi2_spec.threshold, chi2_spec.gamma) {
        (Some(t), _) => Chi2Detector::with_threshold(&theta, t)?,
        (None, Some(g)) => Chi2Detector::from_false_alarm_rate(&theta, g)?,
        (None, None) => Chi2Detector::with_threshold(&theta, DEFAULT_CHI2_THRESHOLD)?,
    };

    let n_r = cfg.n_r();
    if n_r < pm.l() {
        return Err(Error::Config(format!(
            "GLR window n_r = {n_r} is shorter than the residual dimension {}",
            pm.l()
        )));
    }
    let glr_spec = cfg.detectors.glr;
    let glr = match (glr_spec.threshold, glr_spec.gamma) {
        (Some(t), _) => GlrDetector::new(&theta, n_r, t)?,
        (None, Some(g)) => {
            let windows = glr_spec.calibration_windows.unwrap_or(100_000);
            let stream = attack_free_glr(&model, &pm, &theta, n_r, windows, cfg.seed ^ CALIBRATION_SALT)?;
            let det = GlrDetector::calibrated(&theta, n_r, g, &stream)?;
            notes.push(format!(
                "GLR threshold {:.4} calibrated at γ = {g} over {windows} attack-free windows",
                det.threshold
            ));
            det
        }
        (None, None) => GlrDetector::new(&theta, n_r, DEFAULT_GLR_THRESHOLD)?,
    };
    if let Weighting::J4 { l, .. } = spec.weighting {
        if l > 1 {
            notes.push(format!("J4 weight designed with l = {l}; detectors use its single distinct row"));
        }
    }
    let lr = match &report {
        Some(r) => match lr_factors(&theta, r) {
            Ok(f) => Some(f),
            Err(e) => {
                notes.push(format!("ideal LR test unavailable: {e}"));
                None
            }
        },
        None => None,
    };
    Ok(Variant {
        name: spec.name.clone(),
        weighting: spec.weighting,
        model,
        pm,
        theta,
        chi2,
        glr,
        report,
        lr,
        notes,
    })
}

fn lr_factors(theta: &Matrix, report: &CovarianceReport) -> Result<(SpdFactor, Vec<SpdFactor>)> {
    let alphas = (1..=report.s)
        .map(|a| SpdFactor::new(&report.theta_alpha(a)))
        .collect::<Result<_>>()?;
    Ok((SpdFactor::new(theta)?, alphas))
}

/// GLR statistics over an attack-free run of `windows` full windows.
pub fn attack_free_glr(
    model: &LoopModel,
    pm: &ParityModel,
    theta: &Matrix,
    n_r: usize,
    windows: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let warm = model.warmup_steps();
    let horizon = warm + pm.s + n_r - 1 + windows;
    let traj = simulate(model, horizon, None, None, seed)?;
    let r = pm.residual_trace(&traj)?;
    let det = GlrDetector::new(theta, n_r, f64::INFINITY)?;
    let tail = r.columns(warm, r.ncols() - warm).into_owned();
    Ok(det.trace(&tail, 0)?.values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Trace,
    Rate,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Trace => "trace",
            Self::Rate => "rate",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TraceSeries {
    pub variant: String,
    pub detector: &'static str,
    pub trace: StatTrace,
    pub classification: Classification,
}

#[derive(Debug, Clone)]
pub struct RateCurve {
    pub variant: String,
    pub detector: &'static str,
    /// Replay depths `1, …, max_alpha`.
    pub alpha: Vec<usize>,
    /// Trials alarming at exactly step `T₀ + α − 1`.
    pub per_step: Vec<Proportion>,
    /// Trials alarming at some step in `T₀, …, T₀ + α − 1`.
    pub cumulative: Vec<Proportion>,
}

impl RateCurve {
    /// Depth with the highest per-step rate; ties go to the smallest depth.
    pub fn peak(&self) -> (usize, Proportion) {
        let mut best = 0;
        for (i, p) in self.per_step.iter().enumerate() {
            if p.successes > self.per_step[best].successes {
                best = i;
            }
        }
        (self.alpha[best], self.per_step[best])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundRow {
    pub alpha: usize,
    pub tr_delta: f64,
    pub kl: f64,
    pub chi2: DetectabilityBounds,
    pub lr: DetectabilityBounds,
}

#[derive(Debug, Clone)]
pub struct VariantBounds {
    pub variant: String,
    pub rows: Vec<BoundRow>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub experiment: String,
    pub mode: Mode,
    pub target: String,
    pub traces: Vec<TraceSeries>,
    /// Steps with the attack or fault active, for trace annotations.
    pub phases: Vec<Phase>,
    pub rates: Vec<RateCurve>,
    pub bounds: Vec<VariantBounds>,
    pub config_json: String,
    pub seed: u64,
    pub trials: usize,
    pub notes: Vec<String>,
    pub runtime_secs: f64,
}

impl ExperimentResult {
    pub fn rate(&self, variant: &str, detector: &str) -> Option<&RateCurve> {
        self.rates.iter().find(|c| c.variant == variant && c.detector == detector)
    }

    pub fn trace(&self, variant: &str, detector: &str) -> Option<&TraceSeries> {
        self.traces.iter().find(|t| t.variant == variant && t.detector == detector)
    }
}

pub fn variant_bounds(v: &Variant) -> Result<Option<VariantBounds>> {
    let Some(report) = &v.report else {
        return Ok(None);
    };
    let mut rows = Vec::with_capacity(report.s);
    for alpha in 1..=report.s {
        let theta_a = report.theta_alpha(alpha);
        let chi2 = detect::chi2_bounds(&v.theta, &theta_a, v.chi2.threshold)?;
        let lr = detect::lr_bounds(&v.theta, &theta_a, v.glr.threshold)?;
        rows.push(BoundRow {
            alpha,
            tr_delta: chi2.indicator,
            kl: detect::kl_divergence(&v.theta, &theta_a)?,
            chi2,
            lr,
        });
    }
    Ok(Some(VariantBounds {
        variant: v.name.clone(),
        rows,
    }))
}

fn experiment_name(cfg: &ExperimentConfig, mode: Mode) -> String {
    let base = cfg.name.clone().unwrap_or_else(|| match &cfg.system {
        super::config::SystemSpec::Preset(p) => p.clone(),
        super::config::SystemSpec::Custom(_) => "custom".into(),
    });
    let kind = match (mode, cfg.attack.is_some(), cfg.fault.is_some()) {
        (Mode::Rate, _, _) => "detection-rate",
        (Mode::Trace, true, true) => "replay-and-fault-trace",
        (Mode::Trace, true, false) => "replay-trace",
        (Mode::Trace, false, true) => "fault-trace",
        (Mode::Trace, false, false) => "null-trace",
    };
    format!("{base}/{kind}")
}

fn target(cfg: &ExperimentConfig, mode: Mode) -> String {
    match (mode, cfg.attack.is_some(), cfg.fault.is_some()) {
        (Mode::Trace, true, _) => "chi2 and GLR statistic response to a replay window: bounded tails after onset and end".into(),
        (Mode::Trace, false, true) => "chi2 and GLR statistic response to a fault over its active window".into(),
        (Mode::Trace, false, false) => "attack-free statistic traces: alarms at the false-alarm rate".into(),
        (Mode::Rate, _, _) => {
            "per-depth replay detection rate by weighting and filter variant with theoretical bound overlays".into()
        }
    }
}

/// Statistic traces for every variant on one seeded run.
pub fn run_trace(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let start = Instant::now();
    let input_replay = cfg.attack.as_ref().is_none_or(|a| a.replay_inputs);
    let scenario = cfg.attack.as_ref().map(|a| a.scenario(cfg.horizon, cfg.seed));
    let mut traces = Vec::new();
    let mut bounds = Vec::new();
    let mut notes = Vec::new();
    let mut phases = Vec::new();
    for spec in cfg.resolved_variants() {
        let v = prepare_variant(cfg, &spec, input_replay)?;
        notes.extend(v.notes.iter().map(|n| format!("{}: {n}", v.name)));
        let traj = simulate(&v.model, cfg.horizon, scenario.as_ref(), cfg.fault.as_ref(), cfg.seed)?;
        if phases.is_empty() {
            phases = traj.phase.clone();
        }
        let r = v.pm.residual_trace(&traj)?;
        let chi2 = v.chi2.trace(&r, cfg.s);
        let glr = v.glr.trace(&r, cfg.s)?;
        traces.push(TraceSeries {
            variant: v.name.clone(),
            detector: "chi2",
            classification: classify_anomaly(&chi2, cfg.s, 1),
            trace: chi2,
        });
        traces.push(TraceSeries {
            variant: v.name.clone(),
            detector: "glr",
            classification: classify_anomaly(&glr, cfg.s, v.glr.n_r),
            trace: glr,
        });
        if let Some(b) = variant_bounds(&v)? {
            bounds.push(b);
        }
    }
    Ok(ExperimentResult {
        experiment: experiment_name(cfg, Mode::Trace),
        mode: Mode::Trace,
        target: target(cfg, Mode::Trace),
        traces,
        phases,
        rates: Vec::new(),
        bounds,
        config_json: cfg.to_json()?,
        seed: cfg.seed,
        trials: 1,
        notes,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Default)]
struct TrialAlarms {
    chi2: Vec<bool>,
    glr: Vec<bool>,
    lr: Vec<bool>,
}

/// Alarms of one trial at replay depths `1, …, max_alpha`.
fn trial_alarms(v: &Variant, cfg: &ExperimentConfig, onset: usize, max_alpha: usize, trial: usize) -> Result<TrialAlarms> {
    let attack = cfg.attack.as_ref().expect("checked by caller");
    let horizon = onset + max_alpha;
    let seed = trial_seed(cfg.seed, trial as u64);
    let mut spec = attack.clone();
    spec.end = None;
    let scenario = spec.scenario(horizon, seed);
    let traj = simulate(&v.model, horizon, Some(&scenario), cfg.fault.as_ref(), seed)?;
    let r = v.pm.residual_trace(&traj)?;
    let n_r = v.glr.n_r;
    let mut out = TrialAlarms::default();
    for alpha in 1..=max_alpha {
        let col = onset + alpha - 1 - cfg.s;
        let res = r.column(col).into_owned();
        out.chi2.push(v.chi2.alarm(&res));
        let window = r.columns(col + 1 - n_r, n_r).into_owned();
        out.glr.push(v.glr.stat(&window)? > v.glr.threshold);
        if let Some((theta, alphas)) = &v.lr {
            let h = match alphas.get(alpha - 1) {
                Some(ta) => 0.5 * detect::lr_statistic(theta, ta, &res),
                None => 0.0,
            };
            out.lr.push(h > v.glr.threshold);
        }
    }
    Ok(out)
}

fn curve(variant: &str, detector: &'static str, alarms: &[Vec<bool>], max_alpha: usize) -> RateCurve {
    let n = alarms.len();
    let mut per_step = Vec::with_capacity(max_alpha);
    let mut cumulative = Vec::with_capacity(max_alpha);
    for a in 0..max_alpha {
        per_step.push(Proportion::new(alarms.iter().filter(|t| t[a]).count(), n));
        cumulative.push(Proportion::new(alarms.iter().filter(|t| t[..=a].iter().any(|&x| x)).count(), n));
    }
    RateCurve {
        variant: variant.into(),
        detector,
        alpha: (1..=max_alpha).collect(),
        per_step,
        cumulative,
    }
}

/// Monte Carlo detection rate per replay depth. Every variant sees the same
/// trial seeds. The replay runs to the end of each trial.
pub fn run_detection_rate(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let start = Instant::now();
    let attack = cfg
        .attack
        .as_ref()
        .ok_or_else(|| Error::Config("detection-rate mode needs an attack".into()))?;
    let max_alpha = cfg.max_alpha.unwrap_or(cfg.s + cfg.n_r());
    if max_alpha == 0 {
        return Err(Error::Config("max_alpha must be positive".into()));
    }
    let onset = attack.onset;
    if onset < cfg.s + cfg.n_r() {
        return Err(Error::Config(format!("onset {onset} leaves no full detector window")));
    }
    let mut rates = Vec::new();
    let mut bounds = Vec::new();
    let mut notes = Vec::new();
    for spec in cfg.resolved_variants() {
        let v = prepare_variant(cfg, &spec, attack.replay_inputs)?;
        notes.extend(v.notes.iter().map(|n| format!("{}: {n}", v.name)));
        info!("variant {}: {} trials", v.name, cfg.trials);
        let results: Vec<TrialAlarms> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| trial_alarms(&v, cfg, onset, max_alpha, t))
            .collect::<Result<_>>()?;
        let pick = |f: fn(&TrialAlarms) -> &Vec<bool>| results.iter().map(|t| f(t).clone()).collect::<Vec<_>>();
        rates.push(curve(&v.name, "chi2", &pick(|t| &t.chi2), max_alpha));
        rates.push(curve(&v.name, "glr", &pick(|t| &t.glr), max_alpha));
        if v.lr.is_some() {
            rates.push(curve(&v.name, "lr", &pick(|t| &t.lr), max_alpha));
        }
        match variant_bounds(&v)? {
            Some(b) => bounds.push(b),
            None => warn!("variant {}: no theoretical bounds", v.name),
        }
    }
    Ok(ExperimentResult {
        experiment: experiment_name(cfg, Mode::Rate),
        mode: Mode::Rate,
        target: target(cfg, Mode::Rate),
        traces: Vec::new(),
        phases: Vec::new(),
        rates,
        bounds,
        config_json: cfg.to_json()?,
        seed: cfg.seed,
        trials: cfg.trials,
        notes,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}
