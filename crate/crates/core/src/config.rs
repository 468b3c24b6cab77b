//! Experiment configuration files (TOML).
//!
//! ```toml
//! seed = 7
//! output_dir = "runs/example1_v2"
//!
//! [plant]
//! sections = [{ gain = 2.0, tau = 6.0 }]
//! dead_time = 1.0
//! dt = 0.1
//! noise_std = 0.0
//!
//! [reward]
//! p = 1
//! lambda = 0.5
//!
//! [episode]
//! max_steps = 200
//! track_band = 0.1
//! track_count = 10
//!
//! [[schedule]]
//! start = 0
//! level = [-2.0, -1.0, 1.0, 2.0]
//!
//! [actor]
//! kp = 0.2
//! ki = 0.05
//! trainable = ["kp", "ki"]
//!
//! [train]
//! variant = "v2"
//! episodes = 1000
//! limits = { u_min = -10.0, u_max = 10.0 }
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::actor::{half_rule, simc_pi, ActuatorLimits, ControllerParams, FopdtModel};
use crate::analysis::{crossover_frequency, linear_grid};
use crate::env::{EpisodeConfig, Env, RewardConfig, SetpointSchedule};
use crate::plant::{PlantModel, Section};
use crate::rl::TrainConfig;

/// A configuration problem, with the 1-based source line when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "config error at line {line}: {}", self.message),
            None => write!(f, "config error: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub sections: Vec<Section>,
    #[serde(default)]
    pub dead_time: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub noise_std: f64,
}

fn default_dt() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimcConfig {
    /// Closed-loop time constant; defaults to the reduced model's dead time.
    pub tau_c: Option<f64>,
}

/// Initial controller: explicit gains, or SIMC on the half-rule reduction of
/// the plant.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorConfig {
    pub kp: Option<f64>,
    pub ki: Option<f64>,
    pub kd: Option<f64>,
    pub rho: Option<f64>,
    pub simc: Option<SimcConfig>,
    pub trainable: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundaryConfig {
    pub omega_min: f64,
    /// Defaults to the frequency where the plant phase reaches -180 degrees.
    pub omega_max: Option<f64>,
    pub points: usize,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self {
            omega_min: 0.01,
            omega_max: None,
            points: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyConfig {
    /// `[lo, hi, count]`.
    pub kp: (f64, f64, usize),
    pub ki: (f64, f64, usize),
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            kp: (-1.0, 3.0, 41),
            ki: (0.0, 1.0, 41),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub plant: PlantConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub episode: EpisodeConfig,
    pub schedule: SetpointSchedule,
    pub actor: ActorConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub classify: ClassifyConfig,
}

fn line_of_offset(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// Best-effort line of `key` inside `[table]` (or at top level).
fn locate(src: &str, table: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    let mut fallback = None;
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            let name = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if table == Some(name.as_str()) && fallback.is_none() {
                fallback = Some(i + 1);
            }
            current = Some(name);
            continue;
        }
        let in_scope = match (table, &current) {
            (None, None) => true,
            (Some(t), Some(c)) => t == c,
            _ => false,
        };
        if in_scope {
            if let Some(rest) = line.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    fallback
}

struct Validator<'a> {
    src: &'a str,
}

impl Validator<'_> {
    fn fail(&self, table: Option<&str>, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            line: locate(self.src, table, key),
            message: message.into(),
        }
    }
}

const WEIGHT_NAMES: [&str; 4] = ["kp", "ki", "kd", "rho"];

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&src)
    }

    pub fn parse(src: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(src).map_err(|e| ConfigError {
            line: e.span().map(|s| line_of_offset(src, s.start)),
            message: e.message().trim().to_string(),
        })?;
        cfg.validate(src)?;
        Ok(cfg)
    }

    fn validate(&self, src: &str) -> Result<(), ConfigError> {
        let v = Validator { src };
        self.plant_model()
            .validate()
            .map_err(|e| v.fail(Some("plant"), "sections", e.to_string()))?;
        if !(self.plant.dt > 0.0) {
            return Err(v.fail(Some("plant"), "dt", "dt must be positive"));
        }
        self.reward
            .validate()
            .map_err(|e| v.fail(Some("reward"), "p", e.to_string()))?;
        self.episode
            .validate()
            .map_err(|e| v.fail(Some("episode"), "max_steps", e.to_string()))?;
        self.schedule
            .validate()
            .map_err(|e| v.fail(Some("schedule"), "start", e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| v.fail(Some("train"), "variant", e.to_string()))?;
        self.initial_params()
            .map_err(|e| v.fail(Some("actor"), "kp", e.message))?;
        if self.boundary.points == 0 || !(self.boundary.omega_min > 0.0) {
            return Err(v.fail(Some("boundary"), "points", "boundary needs points >= 1 and omega_min > 0"));
        }
        if self.classify.kp.2 == 0 || self.classify.ki.2 == 0 {
            return Err(v.fail(Some("classify"), "kp", "classify grids need at least one point"));
        }
        Ok(())
    }

    pub fn plant_model(&self) -> PlantModel {
        PlantModel {
            sections: self.plant.sections.clone(),
            dead_time: self.plant.dead_time,
            output_noise_std: self.plant.noise_std,
        }
    }

    pub fn dt(&self) -> f64 {
        self.plant.dt
    }

    pub fn limits(&self) -> ActuatorLimits {
        self.train.limits
    }

    /// Training configuration with the experiment seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn env(&self) -> crate::Result<Env> {
        Env::new(
            &self.plant_model(),
            self.plant.dt,
            self.schedule.clone(),
            self.reward,
            self.episode,
        )
    }

    pub fn fopdt(&self) -> crate::Result<FopdtModel> {
        half_rule(&self.plant.sections, self.plant.dead_time)
    }

    pub fn trainable_mask(&self) -> Result<[bool; 4], ConfigError> {
        let names = match &self.actor.trainable {
            None => return Ok([true, true, false, true]),
            Some(names) => names,
        };
        let mut mask = [false; 4];
        for name in names {
            let idx = WEIGHT_NAMES.iter().position(|w| w == name).ok_or_else(|| ConfigError {
                line: None,
                message: format!("unknown trainable weight {name:?}; expected one of kp, ki, kd, rho"),
            })?;
            mask[idx] = true;
        }
        Ok(mask)
    }

    /// Resolves the initial controller from explicit gains or SIMC.
    pub fn initial_params(&self) -> Result<ControllerParams, ConfigError> {
        let a = &self.actor;
        let err = |message: String| ConfigError { line: None, message };
        let mask = self.trainable_mask()?;
        let (kp, ki) = match &a.simc {
            Some(simc) => {
                if a.kp.is_some() || a.ki.is_some() {
                    return Err(err("give either explicit kp/ki or simc, not both".into()));
                }
                let model = self.fopdt().map_err(|e| err(e.to_string()))?;
                let tau_c = simc.tau_c.unwrap_or(model.theta);
                let k = simc_pi(&model, tau_c).map_err(|e| err(e.to_string()))?;
                (k.kp, k.ki)
            }
            None => match (a.kp, a.ki) {
                (Some(kp), Some(ki)) => (kp, ki),
                _ => return Err(err("actor needs kp and ki, or a simc table".into())),
            },
        };
        let k = ControllerParams::new(kp, ki, a.kd.unwrap_or(0.0), a.rho.unwrap_or(0.0)).with_mask(mask);
        if !k.is_finite() || k.rho < 0.0 {
            return Err(err("actor gains must be finite with rho >= 0".into()));
        }
        Ok(k)
    }

    pub fn boundary_grid(&self) -> Vec<f64> {
        let hi = self
            .boundary
            .omega_max
            .or_else(|| crossover_frequency(&self.plant_model()))
            .unwrap_or(10.0);
        linear_grid(self.boundary.omega_min, hi, self.boundary.points)
    }

    pub fn classify_grid(&self) -> (Vec<f64>, Vec<f64>) {
        let (a, b, n) = self.classify.kp;
        let (c, d, m) = self.classify.ki;
        (linear_grid(a, b, n), linear_grid(c, d, m))
    }
}
