//! Test statistics, thresholds, detectability bounds and the fault/replay
//! discriminator.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, SpdFactor, Vector};
use crate::stats;

/// `J = rᵀ Θ_s⁻¹ r` against a fixed threshold.
#[derive(Debug, Clone)]
pub struct Chi2Detector {
    factor: SpdFactor,
    pub gamma: Option<f64>,
    pub threshold: f64,
}

impl Chi2Detector {
    pub fn with_threshold(theta: &Matrix, threshold: f64) -> Result<Self> {
        Ok(Self {
            factor: factor_theta(theta)?,
            gamma: None,
            threshold,
        })
    }

    /// Threshold at the `(1 − γ)` quantile of `χ²(l)`.
    pub fn from_false_alarm_rate(theta: &Matrix, gamma: f64) -> Result<Self> {
        let threshold = stats::chi2_quantile(theta.nrows(), gamma)?;
        Ok(Self {
            factor: factor_theta(theta)?,
            gamma: Some(gamma),
            threshold,
        })
    }

    pub fn dof(&self) -> usize {
        self.factor.dim()
    }

    pub fn stat(&self, r: &Vector) -> f64 {
        self.factor.quad_inv(r)
    }

    pub fn alarm(&self, r: &Vector) -> bool {
        self.stat(r) > self.threshold
    }

    /// Statistic for every residual column; the first column is step `first_step`.
    pub fn trace(&self, residuals: &Matrix, first_step: usize) -> StatTrace {
        let values = residuals
            .column_iter()
            .map(|c| self.factor.quad_inv(&c.into_owned()))
            .collect();
        StatTrace {
            first_step,
            values,
            threshold: self.threshold,
        }
    }
}

fn factor_theta(theta: &Matrix) -> Result<SpdFactor> {
    let f = SpdFactor::new(theta).map_err(|_| Error::Conditioning("Θ_s is not positive definite".into()))?;
    if f.condition_estimate() > 1e14 {
        return Err(Error::Conditioning("Θ_s is numerically singular".into()));
    }
    Ok(f)
}

/// Attack-free calibration record of a GLR threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calibration {
    pub gamma: f64,
    pub windows: usize,
    pub threshold: f64,
}

/// Generalized likelihood ratio over a sliding window of `n_r` residuals.
#[derive(Debug, Clone)]
pub struct GlrDetector {
    pub theta: Matrix,
    factor: SpdFactor,
    pub n_r: usize,
    pub threshold: f64,
    pub calibration: Option<Calibration>,
}

impl GlrDetector {
    pub fn new(theta: &Matrix, n_r: usize, threshold: f64) -> Result<Self> {
        if n_r < theta.nrows() {
            return Err(Error::InvalidInput(format!(
                "window n_r = {n_r} is shorter than the residual dimension {}",
                theta.nrows()
            )));
        }
        Ok(Self {
            theta: theta.clone(),
            factor: factor_theta(theta)?,
            n_r,
            threshold,
            calibration: None,
        })
    }

    pub fn calibrated(theta: &Matrix, n_r: usize, gamma: f64, attack_free: &[f64]) -> Result<Self> {
        let threshold = calibrate_glr_threshold(attack_free, gamma)?;
        let mut det = Self::new(theta, n_r, threshold)?;
        det.calibration = Some(Calibration {
            gamma,
            windows: attack_free.len(),
            threshold,
        });
        Ok(det)
    }

    /// Statistic on a window whose columns are `r(k − n_r + 1), …, r(k)`.
    pub fn stat(&self, window: &Matrix) -> Result<f64> {
        let n_r = window.ncols();
        if n_r != self.n_r || window.nrows() != self.factor.dim() {
            return Err(Error::Dimension(format!(
                "GLR window is {:?}, expected {} x {}",
                window.shape(),
                self.factor.dim(),
                self.n_r
            )));
        }
        let theta_hat = linalg::symmetrize(&(window * window.transpose() / n_r as f64));
        let hat = SpdFactor::new(&theta_hat)
            .map_err(|_| Error::Rank("sample covariance of the GLR window is singular".into()))?;
        let mut quad = 0.0;
        for c in window.column_iter() {
            let r = c.into_owned();
            quad += self.factor.quad_inv(&r) - hat.quad_inv(&r);
        }
        Ok(0.5 * n_r as f64 * (self.factor.ln_det() - hat.ln_det()) + 0.5 * quad)
    }

    /// Statistic wherever the window is full; the first entry belongs to
    /// residual column `n_r − 1`.
    pub fn trace(&self, residuals: &Matrix, first_step: usize) -> Result<StatTrace> {
        let count = residuals.ncols().saturating_sub(self.n_r - 1);
        let mut values = Vec::with_capacity(count);
        for j in 0..count {
            values.push(self.stat(&residuals.columns(j, self.n_r).into_owned())?);
        }
        Ok(StatTrace {
            first_step: first_step + self.n_r - 1,
            values,
            threshold: self.threshold,
        })
    }
}

/// Empirical `(1 − γ)` quantile of attack-free statistics.
pub fn calibrate_glr_threshold(attack_free: &[f64], gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidInput(format!("false-alarm rate {gamma} outside (0, 1]")));
    }
    if attack_free.is_empty() || (attack_free.len() as f64) * gamma < 10.0 && gamma < 1.0 {
        return Err(Error::InvalidInput(format!(
            "{} attack-free windows are too few for γ = {gamma}",
            attack_free.len()
        )));
    }
    if gamma == 1.0 {
        return Ok(attack_free.iter().copied().fold(f64::INFINITY, f64::min));
    }
    Ok(stats::quantile(attack_free, 1.0 - gamma))
}

/// Detector statistic over consecutive steps.
#[derive(Debug, Clone, PartialEq)]
pub struct StatTrace {
    pub first_step: usize,
    pub values: Vec<f64>,
    pub threshold: f64,
}

impl StatTrace {
    pub fn step(&self, i: usize) -> usize {
        self.first_step + i
    }

    pub fn value_at(&self, k: usize) -> Option<f64> {
        k.checked_sub(self.first_step).and_then(|i| self.values.get(i).copied())
    }

    pub fn alarm_steps(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > self.threshold)
            .map(|(i, _)| self.step(i))
            .collect()
    }

    /// `k,J,threshold,alarm,phase`; `phase` labels each step.
    pub fn write_csv<W: Write>(&self, mut out: W, phase: impl Fn(usize) -> String) -> Result<()> {
        writeln!(out, "k,J,threshold,alarm,phase")?;
        for (i, v) in self.values.iter().enumerate() {
            let k = self.step(i);
            writeln!(out, "{k},{v},{},{},{}", self.threshold, u8::from(*v > self.threshold), phase(k))?;
        }
        Ok(())
    }
}

/// Theoretical detection-rate range at one replay depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectabilityBounds {
    pub upper: f64,
    pub lower: Option<f64>,
    pub lower_condition: bool,
    pub kappa: f64,
    /// `tr(Δ Θ⁻¹)` for χ², `ln det Θ/det Θ^α + tr(Δ Θ⁻¹)` for LR.
    pub indicator: f64,
    pub detectable: bool,
}

struct PencilTraces {
    l: f64,
    tr_b: f64,
    tr_b2: f64,
    ln_det_ratio: f64,
}

fn pencil_traces(theta: &Matrix, theta_alpha: &Matrix) -> Result<PencilTraces> {
    let f = SpdFactor::new(theta)?;
    let b = f.solve_mat(theta_alpha);
    let ln_det_alpha = SpdFactor::new(theta_alpha)
        .map(|g| g.ln_det())
        .map_err(|_| Error::Conditioning("Θ_s^α is not positive definite".into()))?;
    Ok(PencilTraces {
        l: theta.nrows() as f64,
        tr_b: b.trace(),
        tr_b2: (&b * &b).trace(),
        ln_det_ratio: f.ln_det() - ln_det_alpha,
    })
}

/// Markov upper bound and conditional lower bound for the χ² test.
pub fn chi2_bounds(theta: &Matrix, theta_alpha: &Matrix, threshold: f64) -> Result<DetectabilityBounds> {
    let t = pencil_traces(theta, theta_alpha)?;
    let tr_delta = t.tr_b - t.l;
    let mean = t.l + tr_delta;
    let upper = (mean / threshold).min(1.0);
    let kappa = (mean - threshold) / (2.0 * t.tr_b2);
    let lower_condition = mean - threshold >= 0.0;
    Ok(DetectabilityBounds {
        upper,
        lower: lower_condition.then(|| kappa * kappa / (1.0 + kappa * kappa)),
        lower_condition,
        kappa,
        indicator: tr_delta,
        detectable: tr_delta > 0.0,
    })
}

/// `D(f_{Θ^α} ‖ f_Θ) = ½ (ln det Θ/det Θ^α + tr(Δ Θ⁻¹))`.
pub fn kl_divergence(theta: &Matrix, theta_alpha: &Matrix) -> Result<f64> {
    let t = pencil_traces(theta, theta_alpha)?;
    Ok(0.5 * (t.ln_det_ratio + t.tr_b - t.l))
}

/// `2 tr{(Θ⁻¹Θ^α)²} + 2l − 4 tr{Θ⁻¹Θ^α}`.
pub fn lr_variance(theta: &Matrix, theta_alpha: &Matrix) -> Result<f64> {
    let t = pencil_traces(theta, theta_alpha)?;
    Ok(2.0 * t.tr_b2 + 2.0 * t.l - 4.0 * t.tr_b)
}

/// `ln det Θ/det Θ^α + rᵀΘ⁻¹r − rᵀ(Θ^α)⁻¹r`, whose variance under
/// `r ~ N(0, Θ^α)` is [`lr_variance`].
pub fn lr_statistic(theta: &SpdFactor, theta_alpha: &SpdFactor, r: &Vector) -> f64 {
    theta.ln_det() - theta_alpha.ln_det() + theta.quad_inv(r) - theta_alpha.quad_inv(r)
}

/// Bounds for the ideal likelihood-ratio test with known `Θ^α`.
pub fn lr_bounds(theta: &Matrix, theta_alpha: &Matrix, threshold: f64) -> Result<DetectabilityBounds> {
    let t = pencil_traces(theta, theta_alpha)?;
    let d = t.ln_det_ratio + t.tr_b - t.l;
    let upper = (d / (2.0 * threshold)).min(1.0);
    let kappa = (d - 2.0 * threshold) / (4.0 * t.tr_b2 + 4.0 * t.l - 8.0 * t.tr_b);
    let lower_condition = 0.5 * d - threshold >= 0.0;
    Ok(DetectabilityBounds {
        upper,
        lower: lower_condition.then(|| kappa * kappa / (1.0 + kappa * kappa)),
        lower_condition,
        kappa,
        indicator: d,
        detectable: d > 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyLabel {
    Replay,
    Fault,
    Outlier,
    None,
}

impl AnomalyLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Replay => "replay",
            Self::Fault => "fault",
            Self::Outlier => "outlier",
            Self::None => "none",
        }
    }
}

/// Consecutive alarms, merged across short dips below the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlarmRun {
    pub start: usize,
    /// Last alarming step, inclusive.
    pub end: usize,
    pub alarms: usize,
    pub peak: usize,
}

impl AlarmRun {
    pub fn span(&self) -> usize {
        self.end - self.start + 1
    }

    fn interior_peak(&self) -> bool {
        self.peak > self.start && self.peak < self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub label: AnomalyLabel,
    pub runs: Vec<AlarmRun>,
    pub expected_span: usize,
    pub notes: Vec<String>,
}

/// Alarm runs with gaps of at most `max_gap` quiet steps merged.
pub fn alarm_runs(trace: &StatTrace, max_gap: usize) -> Vec<AlarmRun> {
    let mut runs: Vec<AlarmRun> = Vec::new();
    for (i, &v) in trace.values.iter().enumerate() {
        if v <= trace.threshold {
            continue;
        }
        let k = trace.step(i);
        match runs.last_mut() {
            Some(run) if k - run.end <= max_gap + 1 => {
                run.end = k;
                run.alarms += 1;
                if v > trace.value_at(run.peak).unwrap_or(f64::NEG_INFINITY) {
                    run.peak = k;
                }
            }
            _ => runs.push(AlarmRun {
                start: k,
                end: k,
                alarms: 1,
                peak: k,
            }),
        }
    }
    runs
}

/// Dips of up to this many quiet steps stay inside one run.
pub const RUN_GAP: usize = 2;
/// Runs with fewer alarms are treated as isolated false alarms.
pub const MIN_RUN_ALARMS: usize = 3;
/// Runs spanning more than this many detector windows count as persistent.
pub const PERSISTENT_WINDOWS: usize = 2;

/// Labels a statistic trace by its response pattern.
///
/// Replay leaves bounded runs of `E = s + n_r − 1` steps (±1) at onset and
/// offset; a fault leaves a run longer than [`PERSISTENT_WINDOWS`] windows; a
/// lone bounded run peaking at its edge is an outlier. Runs of fewer than
/// [`MIN_RUN_ALARMS`] alarms are ignored. A run between `E + 1` and the
/// persistence limit is treated as bounded and noted.
pub fn classify_anomaly(trace: &StatTrace, s: usize, n_r: usize) -> Classification {
    let expected = s + n_r - 1;
    let all = alarm_runs(trace, RUN_GAP);
    let min_alarms = MIN_RUN_ALARMS.min(expected);
    let ignored = all.iter().filter(|r| r.alarms < min_alarms).count();
    let runs: Vec<AlarmRun> = all.into_iter().filter(|r| r.alarms >= min_alarms).collect();
    let mut notes = Vec::new();
    if ignored > 0 {
        notes.push(format!("{ignored} sparse alarm run(s) ignored"));
    }
    let label = if runs.is_empty() {
        AnomalyLabel::None
    } else if let Some(long) = runs.iter().find(|r| r.span() > PERSISTENT_WINDOWS * expected) {
        notes.push(format!(
            "run [{}, {}] persists beyond {PERSISTENT_WINDOWS} windows of {expected} steps",
            long.start, long.end
        ));
        AnomalyLabel::Fault
    } else if runs.len() >= 2 || runs[0].interior_peak() {
        let matched = runs.iter().filter(|r| r.span().abs_diff(expected) <= 1).count();
        for r in runs.iter().filter(|r| r.span() > expected + 1) {
            notes.push(format!("run [{}, {}] exceeds the {expected}-step window", r.start, r.end));
        }
        notes.push(format!("{} bounded run(s), {matched} of window length", runs.len()));
        AnomalyLabel::Replay
    } else {
        notes.push("single bounded run peaking at its edge".into());
        AnomalyLabel::Outlier
    };
    Classification {
        label,
        runs,
        expected_span: expected,
        notes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn noise(rows: usize, cols: usize, seed: u64) -> Matrix {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    fn spd(n: usize, seed: u64) -> Matrix {
        let a = Matrix::from_fn(n, n, |i, j| ((seed as f64 + 1.0) * (i as f64 + 0.3) * (j as f64 + 1.7)).sin());
        &a * a.transpose() + Matrix::identity(n, n) * 0.5
    }

    #[test]
    fn chi2_zero_and_threshold() {
        let d = Chi2Detector::from_false_alarm_rate(&Matrix::identity(1, 1), 0.05).unwrap();
        assert_eq!(d.stat(&Vector::zeros(1)), 0.0);
        assert!((d.threshold - 3.841458820694124).abs() < 1e-9);
        assert!(d.alarm(&Vector::from_element(1, 2.0)));
        assert!(Chi2Detector::with_threshold(&Matrix::zeros(2, 2), 1.0).is_err());
    }

    #[test]
    fn glr_zero_on_matched_window() {
        // Columns ±√n_r e_i give a sample covariance of exactly I.
        let n_r = 4;
        let mut w = Matrix::zeros(2, n_r);
        let c = (n_r as f64 / 2.0).sqrt();
        w[(0, 0)] = c;
        w[(0, 1)] = -c;
        w[(1, 2)] = c;
        w[(1, 3)] = -c;
        let det = GlrDetector::new(&Matrix::identity(2, 2), n_r, 40.0).unwrap();
        assert!(det.stat(&w).unwrap().abs() < 1e-12);
        assert!(GlrDetector::new(&Matrix::identity(5, 5), 4, 1.0).is_err());
        assert!(matches!(det.stat(&Matrix::zeros(2, 4)), Err(Error::Rank(_))));
    }

    #[test]
    fn glr_scaling_closed_form() {
        let theta = spd(3, 2);
        let det = GlrDetector::new(&theta, 5, 1.0).unwrap();
        let w = noise(3, 5, 11);
        let base = det.stat(&w).unwrap();
        let c: f64 = 1.7;
        let scaled = det.stat(&(&w * c)).unwrap();
        // Θ̂ scales by c², so the log-det term drops by n_r l ln c and the
        // Θ⁻¹ quadratic grows by c².
        let f = SpdFactor::new(&theta).unwrap();
        let quad: f64 = w.column_iter().map(|r| f.quad_inv(&r.into_owned())).sum();
        let expect = base - 5.0 * 3.0 * c.ln() + 0.5 * quad * (c * c - 1.0);
        assert!((scaled - expect).abs() < 1e-10 * expect.abs().max(1.0));
    }

    #[test]
    fn chi2_bound_arithmetic() {
        // l = 1, tr(ΔΘ⁻¹) = 39
        let b = chi2_bounds(&Matrix::identity(1, 1), &Matrix::from_element(1, 1, 40.0), 20.0).unwrap();
        assert_eq!(b.upper, 1.0);
        assert!(b.lower_condition && b.detectable);
        let kappa: f64 = 20.0 / (2.0 * 1600.0);
        assert!((b.lower.unwrap() - kappa * kappa / (1.0 + kappa * kappa)).abs() < 1e-15);
        let free = chi2_bounds(&Matrix::identity(1, 1), &Matrix::identity(1, 1), 20.0).unwrap();
        assert!((free.upper - 0.05).abs() < 1e-15);
        assert!(!free.lower_condition && free.lower.is_none());
    }

    #[test]
    fn lr_scalar_values() {
        let theta = Matrix::identity(1, 1);
        let alpha = Matrix::from_element(1, 1, 2.0);
        let kl = kl_divergence(&theta, &alpha).unwrap();
        assert!((kl - 0.5 * (0.5f64.ln() + 1.0)).abs() < 1e-15);
        assert!((kl - 0.1534264097).abs() < 1e-9);
        assert!((lr_variance(&theta, &alpha).unwrap() - 2.0).abs() < 1e-14);
        let same = spd(4, 1);
        assert!(kl_divergence(&same, &same).unwrap().abs() < 1e-12);
        assert!(lr_variance(&same, &same).unwrap().abs() < 1e-10);
        let b = lr_bounds(&theta, &alpha, 40.0).unwrap();
        assert!((b.upper - 2.0 * kl / 80.0).abs() < 1e-15);
        assert!(b.lower.is_none());
    }

    #[test]
    fn calibration_edges() {
        let xs: Vec<f64> = (0..1000).map(f64::from).collect();
        assert_eq!(calibrate_glr_threshold(&xs, 1.0).unwrap(), 0.0);
        assert_eq!(calibrate_glr_threshold(&xs, 0.1).unwrap(), 899.0);
        assert!(calibrate_glr_threshold(&xs[..50], 0.01).is_err());
    }

    fn trace_from(values: Vec<f64>) -> StatTrace {
        StatTrace {
            first_step: 100,
            values,
            threshold: 1.0,
        }
    }

    fn bump(len: usize, total: usize, at: usize, peak_at: usize) -> Vec<f64> {
        let mut v = vec![0.0; total];
        for i in 0..len {
            v[at + i] = if i == peak_at { 5.0 } else { 2.0 };
        }
        v
    }

    #[test]
    fn classify_patterns() {
        assert_eq!(classify_anomaly(&trace_from(vec![0.0; 300]), 9, 1).label, AnomalyLabel::None);

        let mut replay = bump(9, 300, 50, 4);
        for (i, v) in bump(9, 300, 150, 3).into_iter().enumerate() {
            replay[i] += v;
        }
        let c = classify_anomaly(&trace_from(replay), 9, 1);
        assert_eq!(c.label, AnomalyLabel::Replay);
        assert_eq!(c.runs.len(), 2);
        assert_eq!(c.runs[0].span(), 9);

        let fault = bump(120, 300, 40, 60);
        assert_eq!(classify_anomaly(&trace_from(fault), 9, 1).label, AnomalyLabel::Fault);

        let outlier = bump(9, 300, 50, 0);
        assert_eq!(classify_anomaly(&trace_from(outlier), 9, 1).label, AnomalyLabel::Outlier);

        let mut sparse = vec![0.0; 300];
        sparse[10] = 3.0;
        sparse[200] = 3.0;
        assert_eq!(classify_anomaly(&trace_from(sparse), 9, 1).label, AnomalyLabel::None);

        // GLR response of s + n_r − 1 steps still counts as bounded.
        let glr = bump(18, 300, 50, 9);
        assert_eq!(classify_anomaly(&trace_from(glr), 9, 10).label, AnomalyLabel::Replay);
    }

    #[test]
    fn runs_merge_short_dips() {
        let mut v = vec![0.0; 30];
        for i in [3, 4, 7, 8, 20] {
            v[i] = 2.0;
        }
        let runs = alarm_runs(&trace_from(v), RUN_GAP);
        assert_eq!(runs.len(), 2);
        assert_eq!((runs[0].start, runs[0].end, runs[0].alarms), (103, 108, 4));
    }

    proptest! {
        #[test]
        fn glr_invariant_under_recombination(seed in 0u64..500, mix in proptest::collection::vec(-1.0f64..1.0, 9)) {
            let theta = spd(3, seed);
            let t = Matrix::from_row_slice(3, 3, &mix) + Matrix::identity(3, 3) * 2.5;
            let w = noise(3, 6, seed);
            let a = GlrDetector::new(&theta, 6, 1.0).unwrap().stat(&w).unwrap();
            let b = GlrDetector::new(&(&t * &theta * t.transpose()), 6, 1.0).unwrap().stat(&(&t * &w)).unwrap();
            prop_assert!((a - b).abs() < 1e-8 * a.abs().max(1.0));
            prop_assert!(a >= -1e-9);
        }
    }
}
