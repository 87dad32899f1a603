//! Seeded closed-loop simulation with replay attacks and faults.
//!
//! Each step draws, in this order, `w(k)`, `v(k)`, the fault sample and the
//! malicious input sample, so a given seed fixes the noise realization
//! independently of which channels are attacked or filtered.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, serde_matrix, Matrix, Vector};
use crate::plant::LoopModel;

/// Seed of trial `trial` derived from a base seed.
pub fn trial_seed(base: u64, trial: u64) -> u64 {
    base ^ trial
}

/// Rule assigning the recorded step `τ_k` replayed at attack step `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReplayMap {
    /// `τ_k = k − offset`.
    FixedOffset { offset: usize },
    /// Contiguous replay starting at a seeded uniform position in the
    /// record window.
    RandomStart { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MaliciousInput {
    Zero,
    Constant { value: Vec<f64> },
    /// I.i.d. `N(0, variance)` per input channel.
    Gaussian { variance: f64 },
}

/// Two-stage replay: record `[t_r1, t_r2]`, then from `T₀` substitute the
/// recorded transmissions, optionally stopping before `end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackScenario {
    pub record_window: (usize, usize),
    pub onset: usize,
    /// First attack-free step after the replay; `None` replays to the horizon.
    #[serde(default)]
    pub end: Option<usize>,
    pub replay_map: ReplayMap,
    #[serde(default = "default_true")]
    pub replay_inputs: bool,
    #[serde(default = "default_malicious")]
    pub malicious_input: MaliciousInput,
    /// Replayed steps must leave this many recorded steps after them, and the
    /// onset must follow the record window by at least as much.
    #[serde(default = "default_margin")]
    pub margin: usize,
}

fn default_true() -> bool {
    true
}

fn default_malicious() -> MaliciousInput {
    MaliciousInput::Zero
}

fn default_margin() -> usize {
    9
}

impl AttackScenario {
    /// Fixed-offset replay over `[onset, end)` with a record window sized to
    /// fit the replayed steps and the margin.
    pub fn fixed_offset(onset: usize, end: Option<usize>, offset: usize, horizon: usize, margin: usize) -> Self {
        let last = end.unwrap_or(horizon).min(horizon).saturating_sub(1).max(onset);
        let t_r1 = onset.saturating_sub(offset).saturating_sub(margin);
        let t_r2 = last.saturating_sub(offset) + margin;
        Self {
            record_window: (t_r1, t_r2),
            onset,
            end,
            replay_map: ReplayMap::FixedOffset { offset },
            replay_inputs: true,
            malicious_input: MaliciousInput::Zero,
            margin,
        }
    }

    pub fn is_active(&self, k: usize) -> bool {
        k >= self.onset && self.end.is_none_or(|e| k < e)
    }

    fn last_step(&self, horizon: usize) -> Option<usize> {
        let stop = self.end.unwrap_or(horizon).min(horizon);
        (stop > self.onset).then(|| stop - 1)
    }

    /// Replayed step for every attack step in the horizon, checked against
    /// the record window.
    pub fn resolve(&self, horizon: usize) -> Result<Vec<Option<usize>>> {
        let (t_r1, t_r2) = self.record_window;
        if t_r1 > t_r2 {
            return Err(Error::Config(format!("record window [{t_r1}, {t_r2}] is empty")));
        }
        if self.onset < t_r2 + self.margin {
            return Err(Error::Config(format!(
                "onset {} must follow the record window end {t_r2} by at least {}",
                self.onset, self.margin
            )));
        }
        if let Some(e) = self.end {
            if e <= self.onset {
                return Err(Error::Config(format!("attack end {e} precedes onset {}", self.onset)));
            }
        }
        let mut taus = vec![None; horizon];
        let Some(last) = self.last_step(horizon) else {
            return Ok(taus);
        };
        let span = last - self.onset;
        let start = match &self.replay_map {
            ReplayMap::FixedOffset { offset } => {
                if *offset == 0 {
                    return Err(Error::Config("replay offset must be positive".into()));
                }
                self.onset.checked_sub(*offset).ok_or_else(|| {
                    Error::Config(format!("offset {offset} reaches before step 0"))
                })?
            }
            ReplayMap::RandomStart { seed } => {
                let hi = t_r2
                    .checked_sub(self.margin + span)
                    .filter(|&h| h >= t_r1)
                    .ok_or_else(|| Error::Config("record window too short for the replay".into()))?;
                ChaCha8Rng::seed_from_u64(*seed).random_range(t_r1..=hi)
            }
        };
        for (i, k) in (self.onset..=last).enumerate() {
            let tau = start + i;
            if tau < t_r1 || tau + self.margin > t_r2 {
                return Err(Error::Config(format!(
                    "step {k} replays {tau}, outside record window [{t_r1}, {t_r2}] with margin {}",
                    self.margin
                )));
            }
            taus[k] = Some(tau);
        }
        Ok(taus)
    }
}

/// `τ_k` for a fixed-offset map.
pub fn replay_tau(k: usize, offset: usize) -> Result<usize> {
    if offset == 0 {
        return Err(Error::Config("replay offset must be positive".into()));
    }
    k.checked_sub(offset)
        .ok_or_else(|| Error::Config(format!("offset {offset} reaches before step 0 at k = {k}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FaultSignal {
    Constant { value: Vec<f64> },
    /// I.i.d. `N(0, variance)` per fault channel.
    Gaussian { variance: f64 },
    /// `amplitude · sin(k / divisor)` on every channel.
    Sinusoid { amplitude: f64, divisor: f64 },
    /// Explicit samples; row `i` applies at the `i`-th active step.
    Custom { values: Vec<Vec<f64>> },
}

/// Fault `x⁺ += B_f f`, `y += D_f f`, active for `start < k < end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultConfig {
    #[serde(with = "serde_matrix")]
    pub b_f: Matrix,
    #[serde(with = "serde_matrix")]
    pub d_f: Matrix,
    pub signal: FaultSignal,
    pub active_window: (usize, usize),
}

impl FaultConfig {
    pub fn dim(&self) -> usize {
        self.b_f.ncols()
    }

    pub fn is_active(&self, k: usize) -> bool {
        k > self.active_window.0 && k < self.active_window.1
    }

    pub fn validate(&self, n: usize, p: usize) -> Result<()> {
        let nf = self.dim();
        if self.b_f.nrows() != n || self.d_f.shape() != (p, nf) || nf == 0 {
            return Err(Error::Config(format!(
                "fault maps B_f {:?}, D_f {:?} do not fit n = {n}, p = {p}",
                self.b_f.shape(),
                self.d_f.shape()
            )));
        }
        match &self.signal {
            FaultSignal::Constant { value } if value.len() != nf => {
                Err(Error::Config(format!("constant fault has {} entries, expected {nf}", value.len())))
            }
            FaultSignal::Gaussian { variance } if variance.is_nan() || *variance < 0.0 => {
                Err(Error::Config("fault variance must be nonnegative".into()))
            }
            FaultSignal::Custom { values } if values.iter().any(|v| v.len() != nf) => {
                Err(Error::Config("custom fault rows must match the fault dimension".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Nominal,
    Recording,
    Fault,
    Replay,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Nominal => "nominal",
            Phase::Recording => "recording",
            Phase::Fault => "fault",
            Phase::Replay => "replay",
        }
    }
}

/// Per-step channels, one column per step.
///
/// `tx` is what the sensor transmits (`y`, or `ζ` with a filter) and `y_d`
/// is what the detector receives on that channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x: Matrix,
    pub x_c: Matrix,
    pub u: Matrix,
    pub u_c: Matrix,
    pub u_d: Matrix,
    pub y: Matrix,
    pub y_c: Matrix,
    pub tx: Matrix,
    pub y_d: Matrix,
    pub w: Matrix,
    pub v: Matrix,
    pub f: Matrix,
    pub phase: Vec<Phase>,
    pub tau: Vec<Option<usize>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.phase.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phase.is_empty()
    }

    /// CSV with columns `k, x…, u…, y…, u_d…, y_d…, phase`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = vec!["k".to_string()];
        for (name, m) in [("x", &self.x), ("u", &self.u), ("y", &self.y), ("u_d", &self.u_d), ("y_d", &self.y_d)] {
            header.extend((0..m.nrows()).map(|i| format!("{name}{i}")));
        }
        header.push("phase".into());
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![k.to_string()];
            for m in [&self.x, &self.u, &self.y, &self.u_d, &self.y_d] {
                row.extend(m.column(k).iter().map(|v| format!("{v:e}")));
            }
            row.push(self.phase[k].as_str().into());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn noise_factor(cov: &Matrix) -> Result<Matrix> {
    match nalgebra::Cholesky::new(linalg::symmetrize(cov)) {
        Some(c) => Ok(c.l()),
        None => linalg::psd_sqrt(cov),
    }
}

fn gaussian(rng: &mut ChaCha8Rng, factor: &Matrix) -> Vector {
    let z = Vector::from_fn(factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    factor * z
}

/// Runs the loop for `horizon` steps from zero initial states.
///
/// The records of the window `[t_r1, t_r2]` must start after the warm-up of
/// the loop so that replayed data are stationary.
#[allow(clippy::needless_range_loop)]
pub fn simulate(
    model: &LoopModel,
    horizon: usize,
    scenario: Option<&AttackScenario>,
    fault: Option<&FaultConfig>,
    seed: u64,
) -> Result<Trajectory> {
    let plant = &model.plant;
    let ctrl = &model.controller;
    let (n, m, p, q) = (plant.n_states(), plant.n_inputs(), plant.n_outputs(), plant.n_noise());
    let nc = ctrl.state_dim();

    let taus = match scenario {
        Some(sc) => {
            if sc.record_window.0 < model.warmup_steps() {
                return Err(Error::Config(format!(
                    "record window starts at {} before the warm-up of {} steps",
                    sc.record_window.0,
                    model.warmup_steps()
                )));
            }
            if let MaliciousInput::Constant { value } = &sc.malicious_input {
                if value.len() != m {
                    return Err(Error::Config(format!("malicious input has {} entries, expected {m}", value.len())));
                }
            }
            sc.resolve(horizon)?
        }
        None => vec![None; horizon],
    };
    if let Some(fc) = fault {
        fc.validate(n, p)?;
    }
    let nf = fault.map_or(0, |f| f.dim());

    let w_factor = noise_factor(&plant.q)?;
    let v_factor = noise_factor(&plant.r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut traj = Trajectory {
        x: Matrix::zeros(n, horizon),
        x_c: Matrix::zeros(nc, horizon),
        u: Matrix::zeros(m, horizon),
        u_c: Matrix::zeros(m, horizon),
        u_d: Matrix::zeros(m, horizon),
        y: Matrix::zeros(p, horizon),
        y_c: Matrix::zeros(p, horizon),
        tx: Matrix::zeros(p, horizon),
        y_d: Matrix::zeros(p, horizon),
        w: Matrix::zeros(q, horizon),
        v: Matrix::zeros(p, horizon),
        f: Matrix::zeros(nf, horizon),
        phase: Vec::with_capacity(horizon),
        tau: taus.clone(),
    };

    let mut x = Vector::zeros(n);
    let mut xc = Vector::zeros(nc);
    let mut sender = model.filter.clone();
    if let Some(f) = sender.as_mut() {
        f.reset();
    }
    let mut rx_prev = Vector::zeros(p);
    let mut custom_index = 0usize;

    for k in 0..horizon {
        let w = gaussian(&mut rng, &w_factor);
        let v = gaussian(&mut rng, &v_factor);
        let mut f = Vector::zeros(nf);
        if let Some(fc) = fault {
            let sample = match &fc.signal {
                FaultSignal::Constant { value } => Vector::from_row_slice(value),
                FaultSignal::Gaussian { variance } => {
                    Vector::from_fn(nf, |_, _| rng.sample::<f64, _>(StandardNormal) * variance.sqrt())
                }
                FaultSignal::Sinusoid { amplitude, divisor } => {
                    Vector::from_element(nf, amplitude * (k as f64 / divisor).sin())
                }
                FaultSignal::Custom { values } => {
                    let row = if fc.is_active(k) { values.get(custom_index) } else { None };
                    row.map_or_else(|| Vector::zeros(nf), |r| Vector::from_row_slice(r))
                }
            };
            if fc.is_active(k) {
                f = sample;
                custom_index += 1;
            }
        }
        let attacked = taus[k].is_some();
        let mut u_a = Vector::zeros(m);
        if let Some(sc) = scenario {
            let sample = match &sc.malicious_input {
                MaliciousInput::Zero => Vector::zeros(m),
                MaliciousInput::Constant { value } => Vector::from_row_slice(value),
                MaliciousInput::Gaussian { variance } => {
                    Vector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal) * variance.sqrt())
                }
            };
            if attacked {
                u_a = sample;
            }
        }

        let mut y = &plant.c * &x + &v;
        if let Some(fc) = fault {
            y += &fc.d_f * &f;
        }
        let tx = match sender.as_mut() {
            Some(filt) if k > 0 => filt.filter_step(&y),
            Some(_) => Vector::zeros(p),
            None => y.clone(),
        };
        traj.y.set_column(k, &y);
        traj.tx.set_column(k, &tx);

        let received = match taus[k] {
            Some(tau) => traj.tx.column(tau).into_owned(),
            None => tx,
        };
        let y_c = match model.filter.as_ref() {
            None => received.clone(),
            Some(_) if k == 0 => y.clone(),
            Some(filt) => filt.recover_step(&received, &rx_prev),
        };
        rx_prev = received.clone();

        let u_c = ctrl.output(&xc, &y_c);
        let u = &u_c + &u_a;
        let u_d = match (taus[k], scenario.is_some_and(|s| s.replay_inputs)) {
            (Some(tau), true) => traj.u.column(tau).into_owned(),
            _ => u_c.clone(),
        };

        traj.x.set_column(k, &x);
        traj.x_c.set_column(k, &xc);
        traj.u.set_column(k, &u);
        traj.u_c.set_column(k, &u_c);
        traj.u_d.set_column(k, &u_d);
        traj.y_c.set_column(k, &y_c);
        traj.y_d.set_column(k, &received);
        traj.w.set_column(k, &w);
        traj.v.set_column(k, &v);
        traj.f.set_column(k, &f);
        let recording = scenario.is_some_and(|s| k >= s.record_window.0 && k <= s.record_window.1);
        traj.phase.push(if attacked {
            Phase::Replay
        } else if fault.is_some_and(|fc| fc.is_active(k)) {
            Phase::Fault
        } else if recording {
            Phase::Recording
        } else {
            Phase::Nominal
        });

        let mut x_next = &plant.a * &x + &plant.b_u * &u + &plant.b_w * &w;
        if let Some(fc) = fault {
            x_next += &fc.b_f * &f;
        }
        x = x_next;
        xc = ctrl.update(&xc, &y_c);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::MarginalFilter;

    fn eq80() -> LoopModel {
        LoopModel::preset("eq80", None).unwrap()
    }

    fn benchmark_scenario() -> AttackScenario {
        AttackScenario::fixed_offset(601, Some(651), 300, 800, 9)
    }

    #[test]
    fn tau_fixed_offset() {
        assert_eq!(replay_tau(601, 300).unwrap(), 301);
        assert!(replay_tau(601, 0).is_err());
        assert!(replay_tau(5, 10).is_err());
    }

    #[test]
    fn attack_free_channels_are_identities() {
        let t = simulate(&eq80(), 400, None, None, 3).unwrap();
        assert_eq!(t.y_d, t.y);
        assert_eq!(t.y_c, t.y);
        assert_eq!(t.u, t.u_c);
        assert_eq!(t.u_d, t.u_c);
        assert!(t.phase.iter().all(|&p| p == Phase::Nominal));
    }

    #[test]
    fn deterministic_per_seed() {
        let m = eq80();
        let sc = benchmark_scenario();
        let a = simulate(&m, 700, Some(&sc), None, 42).unwrap();
        let b = simulate(&m, 700, Some(&sc), None, 42).unwrap();
        let c = simulate(&m, 700, Some(&sc), None, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.y, c.y);
    }

    #[test]
    fn replay_substitutes_recorded_data() {
        let t = simulate(&eq80(), 700, Some(&benchmark_scenario()), None, 7).unwrap();
        for k in 601..=650 {
            assert_eq!(t.y_d.column(k), t.y.column(k - 300));
            assert_eq!(t.y_c.column(k), t.y.column(k - 300));
            assert_eq!(t.u_d.column(k), t.u.column(k - 300));
            assert_eq!(t.phase[k], Phase::Replay);
        }
        assert_eq!(t.y_d.column(651), t.y.column(651));
        assert_eq!(t.y_d.column(600), t.y.column(600));
        assert_eq!(t.phase[651], Phase::Nominal);
    }

    #[test]
    fn output_only_replay_leaves_input_channel() {
        let mut sc = benchmark_scenario();
        sc.replay_inputs = false;
        sc.malicious_input = MaliciousInput::Constant { value: vec![0.5] };
        let t = simulate(&eq80(), 700, Some(&sc), None, 7).unwrap();
        for k in 601..=650 {
            assert_eq!(t.u_d.column(k), t.u_c.column(k));
            assert!((t.u[(0, k)] - t.u_c[(0, k)] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn window_validation() {
        let m = eq80();
        let mut sc = benchmark_scenario();
        sc.record_window = (100, 400);
        assert!(matches!(simulate(&m, 700, Some(&sc), None, 0), Err(Error::Config(_))));
        let mut sc = benchmark_scenario();
        sc.record_window.1 = 340;
        assert!(matches!(simulate(&m, 700, Some(&sc), None, 0), Err(Error::Config(_))));
        let mut sc = benchmark_scenario();
        sc.replay_map = ReplayMap::FixedOffset { offset: 0 };
        assert!(simulate(&m, 700, Some(&sc), None, 0).is_err());
        let mut sc = benchmark_scenario();
        sc.onset = 360;
        assert!(simulate(&m, 700, Some(&sc), None, 0).is_err());
    }

    #[test]
    fn random_start_is_reproducible() {
        let sc = AttackScenario {
            record_window: (250, 500),
            onset: 601,
            end: Some(651),
            replay_map: ReplayMap::RandomStart { seed: 11 },
            replay_inputs: true,
            malicious_input: MaliciousInput::Zero,
            margin: 9,
        };
        let a = sc.resolve(700).unwrap();
        assert_eq!(a, sc.resolve(700).unwrap());
        let start = a[601].unwrap();
        assert!((250..=500 - 9 - 49).contains(&start));
        assert_eq!(a[650], Some(start + 49));
        let other = AttackScenario { replay_map: ReplayMap::RandomStart { seed: 12 }, ..sc };
        let starts: Vec<_> = (0..20)
            .map(|s| AttackScenario { replay_map: ReplayMap::RandomStart { seed: s }, ..other.clone() }.resolve(700).unwrap()[601])
            .collect();
        assert!(starts.iter().any(|&s| s != starts[0]));
    }

    #[test]
    fn constant_actuator_fault_moves_state_only() {
        let m = eq80();
        let fc = FaultConfig {
            b_f: m.plant.b_u.clone(),
            d_f: Matrix::zeros(1, 1),
            signal: FaultSignal::Constant { value: vec![1.0] },
            active_window: (200, 600),
        };
        let clean = simulate(&m, 700, None, None, 5).unwrap();
        let faulty = simulate(&m, 700, None, Some(&fc), 5).unwrap();
        assert_eq!(clean.x.column(201), faulty.x.column(201));
        assert!((clean.x.column(260) - faulty.x.column(260)).norm() > 1e-3);
        assert_eq!(faulty.y_d, faulty.y);
        assert_eq!(faulty.f[(0, 200)], 0.0);
        assert_eq!(faulty.f[(0, 201)], 1.0);
        assert_eq!(faulty.f[(0, 600)], 0.0);
        assert_eq!(faulty.phase[300], Phase::Fault);
    }

    #[test]
    fn filtered_loop_tracks_unfiltered_controls() {
        for sigma in [1.0, 0.999] {
            let f = MarginalFilter::scaled_identity(1, sigma).unwrap();
            let plain = LoopModel::preset("eq81", None).unwrap();
            let filt = LoopModel::preset("eq81", Some(f)).unwrap();
            let a = simulate(&plain, 10_000, None, None, 9).unwrap();
            let b = simulate(&filt, 10_000, None, None, 9).unwrap();
            let scale = a.x.amax().max(1.0);
            assert!((&a.x - &b.x).amax() <= 1e-10 * scale);
            assert!((&a.u - &b.u).amax() <= 1e-10 * scale);
            assert_eq!(b.tx[(0, 0)], 0.0);
            assert_eq!(b.y_d, b.tx);
        }
    }

    #[test]
    fn csv_layout() {
        let t = simulate(&eq80(), 5, None, None, 1).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "k,x0,x1,x2,u0,y0,u_d0,y_d0,phase");
        assert_eq!(text.lines().count(), 6);
        assert!(text.lines().nth(1).unwrap().ends_with(",nominal"));
    }
}
