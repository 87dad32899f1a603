//! Experiment configuration parsed from JSON.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{serde_matrix, Matrix};
use crate::optimize::Weighting;
use crate::plant::{lqg_default, lqg_synthesize, Controller, LoopModel, LtiSystem, MarginalFilter};
use crate::sim::{AttackScenario, FaultConfig, FaultSignal, MaliciousInput, ReplayMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum SystemSpec {
    Preset(String),
    Custom(Box<LtiSystem>),
}

impl SystemSpec {
    pub fn build(&self) -> Result<LtiSystem> {
        match self {
            Self::Preset(name) => LtiSystem::preset(name),
            Self::Custom(sys) => {
                sys.validate()?;
                Ok(sys.as_ref().clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ControllerSpec {
    /// LQG with identity weights unless given.
    #[default]
    Lqg,
    LqgWeighted {
        #[serde(with = "serde_matrix")]
        state_weight: Matrix,
        #[serde(with = "serde_matrix")]
        input_weight: Matrix,
    },
    Static {
        #[serde(with = "serde_matrix")]
        d: Matrix,
    },
    Observer {
        #[serde(with = "serde_matrix")]
        k: Matrix,
        #[serde(with = "serde_matrix")]
        l: Matrix,
    },
    Dynamic {
        #[serde(with = "serde_matrix")]
        a_c: Matrix,
        #[serde(with = "serde_matrix")]
        b_c: Matrix,
        #[serde(with = "serde_matrix")]
        c_c: Matrix,
        #[serde(with = "serde_matrix")]
        d_c: Matrix,
    },
}

impl ControllerSpec {
    pub fn build(&self, sys: &LtiSystem) -> Result<Controller> {
        match self {
            Self::Lqg => lqg_default(sys),
            Self::LqgWeighted {
                state_weight,
                input_weight,
            } => lqg_synthesize(sys, state_weight, input_weight),
            Self::Static { d } => Controller::static_gain(sys, d.clone()),
            Self::Observer { k, l } => Controller::observer(sys, k.clone(), l.clone()),
            Self::Dynamic { a_c, b_c, c_c, d_c } => {
                Controller::dynamic(sys, a_c.clone(), b_c.clone(), c_c.clone(), d_c.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum FilterSpec {
    /// `A_ζ = σ I`, `B_ζ = I`.
    Scaled { sigma: f64 },
    Explicit {
        #[serde(with = "serde_matrix")]
        a_zeta: Matrix,
        #[serde(with = "serde_matrix")]
        b_zeta: Matrix,
    },
}

impl FilterSpec {
    pub fn build(&self, p: usize) -> Result<MarginalFilter> {
        match self {
            Self::Scaled { sigma } => MarginalFilter::scaled_identity(p, *sigma),
            Self::Explicit { a_zeta, b_zeta } => MarginalFilter::new(a_zeta.clone(), b_zeta.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Chi2Spec {
    pub threshold: Option<f64>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct GlrSpec {
    pub threshold: Option<f64>,
    /// Calibrate the threshold at this false-alarm rate instead.
    pub gamma: Option<f64>,
    /// Defaults to `s + 1`.
    pub n_r: Option<usize>,
    /// Attack-free windows used for calibration.
    pub calibration_windows: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    #[serde(default)]
    pub chi2: Chi2Spec,
    #[serde(default)]
    pub glr: GlrSpec,
}

pub const DEFAULT_CHI2_THRESHOLD: f64 = 20.0;
pub const DEFAULT_GLR_THRESHOLD: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub onset: usize,
    /// First attack-free step after the replay.
    #[serde(default)]
    pub end: Option<usize>,
    #[serde(default = "default_offset")]
    pub offset: usize,
    #[serde(default = "default_true")]
    pub replay_inputs: bool,
    #[serde(default = "default_malicious")]
    pub malicious_input: MaliciousInput,
    #[serde(default = "default_margin")]
    pub margin: usize,
    /// Overrides the record window derived from the offset.
    #[serde(default)]
    pub record_window: Option<(usize, usize)>,
    /// Draw the first replayed step uniformly inside the record window.
    #[serde(default)]
    pub random_start: bool,
}

fn default_offset() -> usize {
    300
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

impl AttackSpec {
    pub fn scenario(&self, horizon: usize, seed: u64) -> AttackScenario {
        let mut sc = AttackScenario::fixed_offset(self.onset, self.end, self.offset, horizon, self.margin);
        if let Some(w) = self.record_window {
            sc.record_window = w;
        }
        if self.random_start {
            sc.replay_map = ReplayMap::RandomStart { seed };
        }
        sc.replay_inputs = self.replay_inputs;
        sc.malicious_input = self.malicious_input.clone();
        sc
    }
}

/// The four benchmark faults.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultCase {
    ConstantActuator,
    RandomActuator,
    SinusoidProcess,
    RandomSensor,
}

impl FaultCase {
    pub const ALL: [FaultCase; 4] = [
        Self::ConstantActuator,
        Self::RandomActuator,
        Self::SinusoidProcess,
        Self::RandomSensor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ConstantActuator => "constant-actuator",
            Self::RandomActuator => "random-actuator",
            Self::SinusoidProcess => "sinusoid-process",
            Self::RandomSensor => "random-sensor",
        }
    }

    /// Fault over `(200, 600)`. `N(0, 0.25)` is read as variance 0.25. The
    /// process direction `[1, 0, 1]ᵀ` is padded or cut to the state size.
    pub fn config(self, sys: &LtiSystem) -> FaultConfig {
        let (n, p) = (sys.n_states(), sys.n_outputs());
        let (b_f, d_f, signal) = match self {
            Self::ConstantActuator => (
                sys.b_u.columns(0, 1).into_owned(),
                Matrix::zeros(p, 1),
                FaultSignal::Constant { value: vec![1.0] },
            ),
            Self::RandomActuator => (
                sys.b_u.columns(0, 1).into_owned(),
                Matrix::zeros(p, 1),
                FaultSignal::Gaussian { variance: 0.25 },
            ),
            Self::SinusoidProcess => (
                Matrix::from_fn(n, 1, |i, _| if i == 0 || i == 2 { 1.0 } else { 0.0 }),
                Matrix::zeros(p, 1),
                FaultSignal::Sinusoid {
                    amplitude: 0.5,
                    divisor: 20.0,
                },
            ),
            Self::RandomSensor => (
                Matrix::zeros(n, 1),
                Matrix::from_element(p, 1, 1.0),
                FaultSignal::Gaussian { variance: 0.25 },
            ),
        };
        FaultConfig {
            b_f,
            d_f,
            signal,
            active_window: (200, 600),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub name: String,
    #[serde(default)]
    pub weighting: Weighting,
    #[serde(default)]
    pub filter: Option<FilterSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub system: SystemSpec,
    #[serde(default)]
    pub controller: ControllerSpec,
    #[serde(default = "default_s")]
    pub s: usize,
    #[serde(default)]
    pub detectors: DetectorSpec,
    #[serde(default)]
    pub attack: Option<AttackSpec>,
    #[serde(default)]
    pub fault: Option<FaultConfig>,
    #[serde(default)]
    pub weighting: Weighting,
    #[serde(default)]
    pub filter: Option<FilterSpec>,
    /// Detection-rate variants; empty means the top-level weighting and filter.
    #[serde(default)]
    pub variants: Vec<VariantSpec>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    /// Largest replay depth reported in detection-rate mode.
    #[serde(default)]
    pub max_alpha: Option<usize>,
}

fn default_s() -> usize {
    9
}
fn default_trials() -> usize {
    500
}
fn default_horizon() -> usize {
    1000
}

impl ExperimentConfig {
    /// Benchmark settings: `s = 9`, replay over `[601, 651)` recorded 300
    /// steps earlier, thresholds 20 and 40, 500 trials.
    pub fn preset(name: &str) -> Result<Self> {
        LtiSystem::preset(name)?;
        Ok(Self {
            name: Some(format!("{name}-replay")),
            system: SystemSpec::Preset(name.into()),
            controller: ControllerSpec::Lqg,
            s: default_s(),
            detectors: DetectorSpec {
                chi2: Chi2Spec {
                    threshold: Some(DEFAULT_CHI2_THRESHOLD),
                    gamma: None,
                },
                glr: GlrSpec {
                    threshold: Some(DEFAULT_GLR_THRESHOLD),
                    ..GlrSpec::default()
                },
            },
            attack: Some(AttackSpec {
                onset: 601,
                end: Some(651),
                offset: default_offset(),
                replay_inputs: true,
                malicious_input: MaliciousInput::Zero,
                margin: default_margin(),
                record_window: None,
                random_start: false,
            }),
            fault: None,
            weighting: Weighting::Identity,
            filter: None,
            variants: Vec::new(),
            trials: default_trials(),
            horizon: default_horizon(),
            seed: 0,
            max_alpha: None,
        })
    }

    /// Preset loop with one of the benchmark faults active over `(200, 600)`
    /// and no attack.
    pub fn fault_preset(name: &str, case: FaultCase) -> Result<Self> {
        let sys = LtiSystem::preset(name)?;
        let mut cfg = Self::preset(name)?;
        cfg.name = Some(format!("{name}-{}", case.as_str()));
        cfg.attack = None;
        cfg.fault = Some(case.config(&sys));
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.s == 0 {
            return Err(Error::Config("parity order s must be at least 1".into()));
        }
        let sys = self.system.build().map_err(cfg_err)?;
        if let Some(f) = &self.fault {
            f.validate(sys.n_states(), sys.n_outputs())?;
        }
        if let Some(a) = &self.attack {
            if a.onset >= self.horizon && self.max_alpha.is_none() {
                return Err(Error::Config(format!(
                    "attack onset {} lies beyond the horizon {}",
                    a.onset, self.horizon
                )));
            }
        }
        let mut names: Vec<&str> = self.variants.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("variant names must be unique".into()));
        }
        if let Some(n_r) = self.detectors.glr.n_r {
            if n_r == 0 {
                return Err(Error::Config("GLR window n_r must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn resolved_variants(&self) -> Vec<VariantSpec> {
        if self.variants.is_empty() {
            vec![VariantSpec {
                name: self.weighting.name().into(),
                weighting: self.weighting,
                filter: self.filter.clone(),
            }]
        } else {
            self.variants.clone()
        }
    }

    pub fn loop_model(&self, filter: Option<&FilterSpec>) -> Result<LoopModel> {
        let sys = self.system.build()?;
        let ctrl = self.controller.build(&sys)?;
        let filter = filter.map(|f| f.build(sys.n_outputs())).transpose()?;
        LoopModel::new(sys, ctrl, filter)
    }

    pub fn n_r(&self) -> usize {
        self.detectors.glr.n_r.unwrap_or(self.s + 1)
    }
}
