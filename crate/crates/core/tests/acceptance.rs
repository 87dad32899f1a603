//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so that every line is printed. The
//! process fails when a criterion fails, except for those listed in
//! `DOCUMENTED`, whose shortfall is analysed in the decision ledger.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use replay_parity::covariance::{sample_replay_residuals, theta_s, CovarianceReport};
use replay_parity::detect::{self, alarm_runs, classify_anomaly, AnomalyLabel, StatTrace, MIN_RUN_ALARMS, RUN_GAP};
use replay_parity::harness::config::{FaultCase, FilterSpec, VariantSpec};
use replay_parity::harness::{run_detection_rate, run_trace, ExperimentConfig, ExperimentResult};
use replay_parity::linalg::{Matrix, SpdFactor, Vector};
use replay_parity::optimize::{self, Norm, Weighting};
use replay_parity::parity::{build_parity, impulse_toeplitz, observability};
use replay_parity::plant::{LoopModel, LtiSystem, MarginalFilter};
use replay_parity::sim::{simulate, trial_seed, AttackScenario};
use replay_parity::stats::{ks_two_sample, two_proportion_z, Proportion};

/// Criteria whose failure is a recorded finding rather than a defect.
const DOCUMENTED: &[usize] = &[4];

const Z_ONE_SIDED: f64 = 1.6448536269514722;

struct Outcome {
    pass: bool,
    detail: String,
}

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm()
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn c1_kernel() -> Outcome {
    let mut worst_kernel: f64 = 0.0;
    let mut worst_resid: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for name in ["eq80", "eq81"] {
        let sys = LtiSystem::preset(name).unwrap();
        for s in [3, 6, 9] {
            let pm = build_parity(&sys, s).unwrap();
            worst_kernel = worst_kernel.max((&pm.z * &pm.h0).norm() / pm.h0.norm());
            // Noise-free data from an explicit recursion with random x₀ and inputs.
            let (n, m, p) = (sys.n_states(), sys.n_inputs(), sys.n_outputs());
            let mut x = gaussian(&mut rng, n, 1);
            let u = gaussian(&mut rng, m * (s + 1), 1);
            let mut y = Matrix::zeros(p * (s + 1), 1);
            for t in 0..=s {
                y.rows_mut(t * p, p).copy_from(&(&sys.c * &x));
                x = &sys.a * &x + &sys.b_u * u.rows(t * m, m);
            }
            let hu = impulse_toeplitz(&sys.a, &sys.b_u, &sys.c, s);
            assert_eq!(observability(&sys.a, &sys.c, s), pm.h0);
            worst_resid = worst_resid.max((&pm.z * (&y - &hu * &u)).amax());
        }
    }
    Outcome {
        pass: worst_kernel <= 1e-9 && worst_resid <= 1e-10,
        detail: format!("max ‖ZH₀‖/‖H₀‖ = {worst_kernel:.2e}, max |r| noise-free = {worst_resid:.2e}"),
    }
}

struct Ensemble {
    report: CovarianceReport,
    samples: Vec<Matrix>,
    secs: f64,
}

fn ensemble() -> Ensemble {
    let t = Instant::now();
    let model = LoopModel::preset("eq80", None).unwrap();
    let pm = build_parity(&model.monitored, 9).unwrap();
    let report = CovarianceReport::build(&model, &pm, true).unwrap();
    let samples = sample_replay_residuals(&model, &pm, 10_000, 9, true, 2024).unwrap();
    Ensemble {
        report,
        samples,
        secs: t.elapsed().as_secs_f64(),
    }
}

fn c2_covariance(e: &Ensemble) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut at = 0;
    for (alpha, r) in e.samples.iter().enumerate() {
        let truth = e.report.theta_alpha(alpha);
        let err = rel(&replay_parity::covariance::second_moment(r), &truth);
        if err > worst {
            worst = err;
            at = alpha;
        }
    }
    Outcome {
        pass: worst <= 0.10,
        detail: format!("α = 0…9 over 10⁴ onsets: worst relative Frobenius error {worst:.4} at α = {at}; ensemble built in {:.1} s", e.secs),
    }
}

fn c3_mean(e: &Ensemble) -> Outcome {
    let n = e.samples[0].ncols() as f64;
    let mut worst: f64 = 0.0;
    for (alpha, r) in e.samples.iter().enumerate() {
        let truth = e.report.theta_alpha(alpha);
        let mean = r.column_mean();
        for i in 0..mean.len() {
            worst = worst.max(mean[i].abs() / (truth[(i, i)].sqrt() / n.sqrt()));
        }
    }
    Outcome {
        pass: worst <= 4.0,
        detail: format!("max |mean| / (σ/√N) = {worst:.3} over all α and components"),
    }
}

/// First alarm run overlapping `[start, start + span)`, as `(start, length)`.
fn response(trace: &StatTrace, start: usize, span: usize) -> Option<(usize, usize)> {
    alarm_runs(trace, RUN_GAP)
        .into_iter()
        .filter(|r| r.alarms >= MIN_RUN_ALARMS)
        .find(|r| r.end >= start && r.start < start + span)
        .map(|r| (r.start, r.end - r.start + 1))
}

fn c4_excursions() -> Outcome {
    let (onset, end) = (601usize, 651usize);
    let runs = 100;
    let mut hits = [[0usize; 2]; 2];
    // Ensemble view: steps where the mean statistic over all runs leaves the
    // null band.
    let mut sums: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut nulls = [0.0f64; 2];
    for seed in 0..runs as u64 {
        let mut cfg = ExperimentConfig::preset("eq80").unwrap();
        cfg.seed = seed;
        let res = run_trace(&cfg).unwrap();
        for (d, det) in ["chi2", "glr"].iter().enumerate() {
            let t = &res.trace("identity", det).unwrap().trace;
            let span = if d == 0 { 9 } else { 18 };
            for (j, start) in [onset, end].iter().enumerate() {
                if let Some((s0, len)) = response(t, *start, span) {
                    if s0.abs_diff(*start) <= 1 && len.abs_diff(span) <= 1 {
                        hits[d][j] += 1;
                    }
                }
            }
            if sums[d].is_empty() {
                sums[d] = vec![0.0; t.values.len()];
            }
            for (acc, v) in sums[d].iter_mut().zip(&t.values) {
                *acc += v;
            }
            let pre: Vec<f64> = (300..580).filter_map(|k| t.value_at(k)).collect();
            nulls[d] += replay_parity::stats::mean(&pre) / runs as f64;
        }
    }
    let res = run_trace(&ExperimentConfig::preset("eq80").unwrap()).unwrap();
    let mut spans = Vec::new();
    for (d, det) in ["chi2", "glr"].iter().enumerate() {
        let t = &res.trace("identity", det).unwrap().trace;
        let elevated: Vec<usize> = (0..sums[d].len())
            .filter(|&i| sums[d][i] / runs as f64 > 2.0 * nulls[d])
            .map(|i| t.step(i))
            .collect();
        let on = elevated.iter().filter(|&&k| (onset - 5..end - 5).contains(&k)).count();
        let off = elevated.iter().filter(|&&k| (end - 5..end + 40).contains(&k)).count();
        spans.push(format!("{det} {on}/{off}"));
    }
    let rate = |c: usize| c as f64 / runs as f64;
    let pass = hits.iter().flatten().all(|&c| rate(c) >= 0.95);
    Outcome {
        pass,
        detail: format!(
            "per-run exact-length responses: chi2 onset {:.2} offset {:.2}, glr onset {:.2} offset {:.2}; \
             ensemble mean-statistic excursion lengths onset/offset: {}",
            rate(hits[0][0]),
            rate(hits[0][1]),
            rate(hits[1][0]),
            rate(hits[1][1]),
            spans.join(", ")
        ),
    }
}

fn c5_bounds() -> Outcome {
    let mut cfg = ExperimentConfig::preset("eq80").unwrap();
    cfg.seed = 5;
    cfg.weighting = Weighting::Unified;
    let res = run_detection_rate(&cfg).unwrap();
    let b = &res.bounds[0];
    let mut violations = Vec::new();
    let mut checked = 0;
    let mut glr_info = 0;
    for (det, pick) in [("chi2", 0usize), ("lr", 1)] {
        let curve = res.rate("unified", det).unwrap();
        for row in &b.rows {
            let p = curve.per_step[row.alpha - 1];
            let sd = p.std_err();
            let bound = if pick == 0 { row.chi2 } else { row.lr };
            checked += 1;
            if p.rate() > bound.upper + 3.0 * sd {
                violations.push(format!("{det} α={} rate {} > upper {}", row.alpha, p.rate(), bound.upper));
            }
            if let Some(lo) = bound.lower {
                if p.rate() < lo - 3.0 * sd {
                    violations.push(format!("{det} α={} rate {} < lower {lo}", row.alpha, p.rate()));
                }
            }
        }
    }
    let glr = res.rate("unified", "glr").unwrap();
    for row in &b.rows {
        let p = glr.per_step[row.alpha - 1];
        if p.rate() > row.lr.upper + 3.0 * p.std_err() {
            glr_info += 1;
        }
    }
    Outcome {
        pass: violations.is_empty(),
        detail: if violations.is_empty() {
            format!(
                "{checked} (detector, α) pairs within [μ_lower − 3σ̂, μ̄ + 3σ̂]; GLR above the LR upper bound at {glr_info} depth(s) (informational)"
            )
        } else {
            violations.join("; ")
        },
    }
}

fn c6_lr_variance() -> Outcome {
    let cases = [("eq80", 9, 3), ("eq80", 9, 7), ("eq81", 4, 2)];
    let mut parts = Vec::new();
    let mut pass = true;
    for (k, (name, s, alpha)) in cases.iter().enumerate() {
        let model = LoopModel::preset(name, None).unwrap();
        let pm = build_parity(&model.monitored, *s).unwrap();
        let report = CovarianceReport::build(&model, &pm, true).unwrap();
        let theta = &report.theta;
        let theta_a = report.theta_alpha(*alpha);
        let (f, fa) = (SpdFactor::new(theta).unwrap(), SpdFactor::new(&theta_a).unwrap());
        let chol = nalgebra::Cholesky::new(theta_a.clone()).unwrap().l();
        let mut rng = ChaCha8Rng::seed_from_u64(60 + k as u64);
        let n = 100_000;
        let hs: Vec<f64> = (0..n)
            .map(|_| {
                let z = Vector::from_fn(theta.nrows(), |_, _| StandardNormal.sample(&mut rng));
                detect::lr_statistic(&f, &fa, &(&chol * z))
            })
            .collect();
        let emp = replay_parity::stats::variance(&hs);
        let formula = detect::lr_variance(theta, &theta_a).unwrap();
        let err = (emp - formula).abs() / formula;
        pass &= err <= 0.03;
        parts.push(format!("{name} α={alpha}: {emp:.4} vs {formula:.4} ({:.2}%)", 100.0 * err));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn random_rows(rng: &mut ChaCha8Rng, l: usize, n: usize) -> Matrix {
    gaussian(rng, l, n)
}

fn c7_certificates() -> Outcome {
    let mut worst: f64 = f64::INFINITY;
    let mut worst_at = String::new();
    // Margins are relative to the optimum so that rounding on large objectives
    // does not register as a loss.
    let mut record = |name: &str, preset: &str, best: f64, cand: f64| {
        let margin = (best - cand) / best.abs().max(1.0);
        if margin < worst {
            worst = margin;
            worst_at = format!("{name} on {preset}");
        }
    };
    for (preset, s) in [("eq80", 9), ("eq81", 9)] {
        let model = LoopModel::preset(preset, None).unwrap();
        let pm = build_parity(&model.monitored, s).unwrap();
        let report = CovarianceReport::build(&model, &pm, true).unwrap();
        let sqrt = optimize::t_theta_factor(&pm, &model.monitored).unwrap();
        let nz = pm.n_z();
        let t_theta = &report.t_theta;
        let t_sum = &report.t_delta_sum;
        let t_pos = report.t_delta_pos.iter().fold(Matrix::zeros(nz, nz), |a, t| a + t);
        let pos_sqrt = replay_parity::linalg::psd_sqrt(&t_pos).unwrap();
        let peak = (0..s)
            .max_by(|&a, &b| report.t_delta[a].trace().total_cmp(&report.t_delta[b].trace()))
            .unwrap();
        let t_delta = &report.t_delta[peak];
        let l2 = 2.min(nz);
        let (gamma, l4) = (3.0, 2);

        let j1 = optimize::solve_j1(&sqrt, &t_pos, Norm::Two).unwrap();
        let j1_inf = optimize::solve_j1(&sqrt, &t_pos, Norm::Inf).unwrap();
        let uni = optimize::unified_solution(&sqrt).unwrap();
        let j2 = optimize::solve_j2(t_theta, t_sum, l2).unwrap();
        let j2m = optimize::solve_j2m(t_theta, t_delta).unwrap();
        let j3 = optimize::solve_j3(t_theta, t_sum).unwrap();
        let j4 = optimize::solve_j4(t_theta, t_sum, l4, gamma).unwrap();
        let uni_j1 = optimize::j1_objective(&uni.m, &sqrt, &pos_sqrt, Norm::Two);
        let uni_j2 = optimize::j2_objective(&uni.m, t_theta, t_sum).unwrap();
        let uni_kl = optimize::kl_objective(&uni.m, t_theta, t_delta).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let l = 1 + (rng.random::<u32>() as usize) % nz;
            let m = random_rows(&mut rng, l, nz);
            record("J1(i=2)", preset, j1.objective, optimize::j1_objective(&m, &sqrt, &pos_sqrt, Norm::Two));
            record("unified J1", preset, uni_j1, optimize::j1_objective(&m, &sqrt, &pos_sqrt, Norm::Two));
            record("J1(i=∞)", preset, j1_inf.objective, optimize::j1_objective(&m, &sqrt, &pos_sqrt, Norm::Inf));
            // Any rectangular weight loses KL by data processing.
            record("J2M branch", preset, j2m.objective, optimize::kl_objective(&m, t_theta, t_delta).unwrap());
            record("unified KL", preset, uni_kl, optimize::kl_objective(&m, t_theta, t_delta).unwrap());

            let m2 = random_rows(&mut rng, l2, nz);
            record("J2", preset, j2.objective, optimize::j2_objective(&m2, t_theta, t_sum).unwrap());
            let sq = random_rows(&mut rng, nz, nz);
            record("unified J2 (l = n_z)", preset, uni_j2, optimize::j2_objective(&sq, t_theta, t_sum).unwrap());

            let m3 = random_rows(&mut rng, 1, nz) * rng.random_range(0.1..10.0);
            record("J3", preset, j3.objective, optimize::j3_objective(&m3, t_theta, t_sum));

            let m4 = random_rows(&mut rng, l4, nz);
            let scale = (gamma / (&m4 * t_theta * m4.transpose()).trace()).sqrt();
            record("J4", preset, j4.objective, optimize::j4_objective(&(m4 * scale), t_sum));
        }
    }
    Outcome {
        pass: worst >= -1e-8,
        detail: format!("worst relative margin {worst:.3e} ({worst_at}) over 10³ candidates per solver on eq80 and eq81"),
    }
}

fn peak_rates(res: &ExperimentResult, variant: &str, det: &str) -> (usize, Proportion) {
    res.rate(variant, det).unwrap().peak()
}

fn c8_unified_ordering() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for preset in ["eq80", "eq81"] {
        let mut cfg = ExperimentConfig::preset(preset).unwrap();
        cfg.seed = 8;
        cfg.variants = vec![
            VariantSpec {
                name: "identity".into(),
                weighting: Weighting::Identity,
                filter: None,
            },
            VariantSpec {
                name: "unified".into(),
                weighting: Weighting::Unified,
                filter: None,
            },
        ];
        let res = run_detection_rate(&cfg).unwrap();
        for det in ["chi2", "glr"] {
            let (ai, pi) = peak_rates(&res, "identity", det);
            let (au, pu) = peak_rates(&res, "unified", det);
            // H₁: identity beats unified; the ordering holds unless H₁ is accepted.
            let z = two_proportion_z(pi, pu);
            pass &= z <= Z_ONE_SIDED;
            parts.push(format!(
                "{preset} {det}: unified {:.3}@{au} vs identity {:.3}@{ai} (z = {z:.2})",
                pu.rate(),
                pi.rate()
            ));
        }
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn c9_active_filter() -> Outcome {
    let mut cfg = ExperimentConfig::preset("eq81").unwrap();
    cfg.seed = 9;
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
    let res = run_detection_rate(&cfg).unwrap();
    let mut parts = Vec::new();
    let mut pass = true;
    for det in ["chi2", "glr"] {
        let (ap, pp) = peak_rates(&res, "passive", det);
        let (aa, pa) = peak_rates(&res, "active", det);
        let z = two_proportion_z(pa, pp);
        pass &= z > Z_ONE_SIDED;
        parts.push(format!(
            "{det}: active {:.3}@{aa} vs passive {:.3}@{ap} (z = {z:.2})",
            pa.rate(),
            pp.rate()
        ));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn c10_classification() -> Outcome {
    let runs = 100;
    let mut parts = Vec::new();
    let mut pass = true;
    let mut cases: Vec<(String, ExperimentConfig, AnomalyLabel)> =
        vec![("replay".into(), ExperimentConfig::preset("eq80").unwrap(), AnomalyLabel::Replay)];
    for c in FaultCase::ALL {
        cases.push((c.as_str().into(), ExperimentConfig::fault_preset("eq80", c).unwrap(), AnomalyLabel::Fault));
    }
    for (name, cfg, want) in cases {
        let mut hits = [0usize; 2];
        for seed in 0..runs as u64 {
            let mut cfg = cfg.clone();
            cfg.seed = seed;
            let res = run_trace(&cfg).unwrap();
            for (d, det) in ["chi2", "glr"].iter().enumerate() {
                let t = res.trace("identity", det).unwrap();
                let n_r = if d == 0 { 1 } else { cfg.n_r() };
                let label = classify_anomaly(&t.trace, cfg.s, n_r).label;
                hits[d] += usize::from(label == want);
            }
        }
        let (a, b) = (hits[0] as f64 / runs as f64, hits[1] as f64 / runs as f64);
        pass &= a >= 0.95 && b >= 0.95;
        parts.push(format!("{name} chi2 {a:.2} glr {b:.2}"));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn c11_filter_round_trip() -> Outcome {
    let mut f = MarginalFilter::scaled_identity(1, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut prev = f.state();
    let (mut err2, mut norm2, mut max_abs) = (0.0, 0.0, 0.0f64);
    for _ in 0..10_000 {
        let y = Vector::from_fn(1, |_, _| StandardNormal.sample(&mut rng));
        let zeta = f.filter_step(&y);
        let back = f.recover_step(&zeta, &prev);
        err2 += (&back - &y).norm_squared();
        norm2 += y.norm_squared();
        max_abs = max_abs.max((&back - &y).amax());
        prev = zeta;
    }
    let worst = (err2 / norm2).sqrt();
    let plain = LoopModel::preset("eq81", None).unwrap();
    let filt = LoopModel::preset("eq81", Some(MarginalFilter::scaled_identity(1, 1.0).unwrap())).unwrap();
    let a = simulate(&plain, 10_000, None, None, 111).unwrap();
    let b = simulate(&filt, 10_000, None, None, 111).unwrap();
    let dx = (&a.x - &b.x).amax().max((&a.u - &b.u).amax());
    Outcome {
        pass: worst <= 1e-12 && dx <= 1e-10,
        detail: format!(
            "recovered/sent sequence relative error {worst:.2e} (max abs {max_abs:.2e}); max |Δx|, |Δu| with filter {dx:.2e}"
        ),
    }
}

fn c12_stealth() -> Outcome {
    let model = LoopModel::preset("eq80", None).unwrap();
    let pm = build_parity(&model.monitored, 9).unwrap();
    let theta = theta_s(&pm, &model.monitored).unwrap();
    let det = detect::Chi2Detector::with_threshold(&theta, 20.0).unwrap();
    let (onset, alpha) = (601usize, 18usize);
    let horizon = onset + alpha;
    let col = onset + alpha - 1 - pm.s;
    let n = 10_000;
    let draw = |attacked: bool| -> Vec<f64> {
        use rayon::prelude::*;
        (0..n)
            .into_par_iter()
            .map(|t| {
                let seed = trial_seed(if attacked { 12 } else { 1212 }, t as u64);
                let sc = AttackScenario::fixed_offset(onset, None, 300, horizon, pm.s);
                let traj = simulate(&model, horizon, attacked.then_some(&sc), None, seed).unwrap();
                let r = pm.residual_trace(&traj).unwrap();
                det.stat(&r.column(col).into_owned())
            })
            .collect()
    };
    let (att, free) = (draw(true), draw(false));
    let (d, p) = ks_two_sample(&att, &free);
    Outcome {
        pass: p > 0.01,
        detail: format!("α = {alpha} > s: KS D = {d:.4}, p = {p:.3} over 10⁴ + 10⁴ samples"),
    }
}

fn main() {
    let mut failed = Vec::new();
    let mut report = |id: usize, name: &str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        let tag = match (o.pass, DOCUMENTED.contains(&id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (documented)",
            (false, false) => "FAIL",
        };
        println!("[{tag}] {id:>2}. {name}: {} [{secs:.1} s]", o.detail);
        if !o.pass && !DOCUMENTED.contains(&id) {
            failed.push(id);
        }
    };
    report(1, "kernel exactness", &c1_kernel);
    let e = ensemble();
    report(2, "covariance oracle", &|| c2_covariance(&e));
    report(3, "zero-mean residual", &|| c3_mean(&e));
    report(4, "excursion lengths", &c4_excursions);
    report(5, "bound consistency", &c5_bounds);
    report(6, "LR variance formula", &c6_lr_variance);
    report(7, "optimizer certificates", &c7_certificates);
    report(8, "unified vs identity ordering", &c8_unified_ordering);
    report(9, "active filter ordering", &c9_active_filter);
    report(10, "fault/replay distinction", &c10_classification);
    report(11, "filter round trip", &c11_filter_round_trip);
    report(12, "full-replay stealth", &c12_stealth);
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
