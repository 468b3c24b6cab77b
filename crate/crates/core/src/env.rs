//! Set-point tracking environment: the feature recursion driving the
//! controller, rewards, set-point schedules and episode termination.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{build_discrete_plant, DiscretePlant, PlantModel};

/// Controller input `s_n = (e_y, I_y, D, I_u)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureState {
    /// Set-point minus measured output.
    pub e_y: f64,
    /// Accumulated error, error * s.
    pub i_y: f64,
    /// Backward difference of the error, error / s.
    pub d: f64,
    /// Accumulated actuator deviation `sat(u) - u`, input * s.
    pub i_u: f64,
}

impl FeatureState {
    pub fn as_array(&self) -> [f64; 4] {
        [self.e_y, self.i_y, self.d, self.i_u]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            e_y: a[0],
            i_y: a[1],
            d: a[2],
            i_u: a[3],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

/// One step of the feature recursion. `e_u_new` is `sat(u) - u` of the
/// control that produced the new measurement.
pub fn update_features(prev: &FeatureState, e_y_new: f64, e_u_new: f64, dt: f64) -> Result<FeatureState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if !e_y_new.is_finite() || !e_u_new.is_finite() || !prev.is_finite() {
        return Err(Error::NonFinite("feature update".into()));
    }
    let next = FeatureState {
        e_y: e_y_new,
        i_y: prev.i_y + e_y_new * dt,
        d: (e_y_new - prev.e_y) / dt,
        i_u: prev.i_u + e_u_new * dt,
    };
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::NonFinite("feature update".into()))
    }
}

/// `r = -(|e_y|^p + lambda |u|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub p: u32,
    pub lambda: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { p: 1, lambda: 0.5 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p != 1 && self.p != 2 {
            return Err(Error::InvalidArgument(format!("reward exponent p must be 1 or 2, got {}", self.p)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        Ok(())
    }
}

pub fn compute_reward(e_y: f64, u: f64, cfg: &RewardConfig) -> f64 {
    let tracking = match cfg.p {
        1 => e_y.abs(),
        _ => e_y * e_y,
    };
    -(tracking + cfg.lambda * u.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    pub track_band: f64,
    pub track_count: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: 200,
            track_band: 0.1,
            track_count: 10,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.track_count < 1 || self.max_steps < self.track_count {
            return Err(Error::InvalidArgument(format!(
                "episode needs max_steps >= track_count >= 1, got {} and {}",
                self.max_steps, self.track_count
            )));
        }
        if !(self.track_band > 0.0) {
            return Err(Error::InvalidArgument(format!("track_band must be positive, got {}", self.track_band)));
        }
        Ok(())
    }
}

/// Step at which a schedule segment begins: fixed or drawn uniformly from an
/// inclusive range at every reset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StartStep {
    Fixed(usize),
    Uniform([usize; 2]),
}

impl StartStep {
    fn bounds(&self) -> (usize, usize) {
        match *self {
            StartStep::Fixed(n) => (n, n),
            StartStep::Uniform([lo, hi]) => (lo, hi),
        }
    }
}

/// A fixed level or a uniform choice among several.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Level {
    Fixed(f64),
    Choice(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RareLevel {
    pub probability: f64,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSegment {
    pub start: StartStep,
    pub level: Level,
    #[serde(default)]
    pub level_noise_std: f64,
    /// With this probability the whole episode uses `rare.level` for the
    /// segment instead of the regular level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rare: Option<RareLevel>,
}

impl ScheduleSegment {
    pub fn fixed(start: usize, level: f64) -> Self {
        Self {
            start: StartStep::Fixed(start),
            level: Level::Fixed(level),
            level_noise_std: 0.0,
            rare: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SetpointSchedule {
    segments: Vec<ScheduleSegment>,
}

impl SetpointSchedule {
    pub fn new(segments: Vec<ScheduleSegment>) -> Result<Self> {
        let s = Self { segments };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(level: f64) -> Self {
        Self {
            segments: vec![ScheduleSegment::fixed(0, level)],
        }
    }

    /// Single step at reset to a level drawn from `{-2, -1, 1, 2}`.
    pub fn example1() -> Self {
        Self {
            segments: vec![ScheduleSegment {
                start: StartStep::Fixed(0),
                level: Level::Choice(vec![-2.0, -1.0, 1.0, 2.0]),
                level_noise_std: 0.0,
                rare: None,
            }],
        }
    }

    /// `1 -> 1.5 (+ noise, or 3 with probability 0.1) -> 1` with random switch times.
    pub fn example2() -> Self {
        Self {
            segments: vec![
                ScheduleSegment::fixed(0, 1.0),
                ScheduleSegment {
                    start: StartStep::Uniform([50, 80]),
                    level: Level::Fixed(1.5),
                    level_noise_std: 0.05,
                    rare: Some(RareLevel {
                        probability: 0.1,
                        level: 3.0,
                    }),
                },
                ScheduleSegment {
                    start: StartStep::Uniform([120, 150]),
                    level: Level::Fixed(1.0),
                    level_noise_std: 0.0,
                    rare: None,
                },
            ],
        }
    }

    pub fn segments(&self) -> &[ScheduleSegment] {
        &self.segments
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .segments
            .first()
            .ok_or_else(|| Error::InvalidArgument("set-point schedule is empty".into()))?;
        if first.start.bounds() != (0, 0) {
            return Err(Error::InvalidArgument("first schedule segment must start at step 0".into()));
        }
        let mut prev_hi: Option<usize> = None;
        for (i, seg) in self.segments.iter().enumerate() {
            let (lo, hi) = seg.start.bounds();
            if lo > hi {
                return Err(Error::InvalidArgument(format!("segment {i}: start range is reversed")));
            }
            if let Some(p) = prev_hi {
                if lo <= p {
                    return Err(Error::InvalidArgument(format!(
                        "segment {i}: start steps must be strictly increasing"
                    )));
                }
            }
            prev_hi = Some(hi);
            match &seg.level {
                Level::Fixed(v) if !v.is_finite() => {
                    return Err(Error::InvalidArgument(format!("segment {i}: level is not finite")))
                }
                Level::Choice(v) if v.is_empty() || v.iter().any(|x| !x.is_finite()) => {
                    return Err(Error::InvalidArgument(format!("segment {i}: level choices must be finite and non-empty")))
                }
                _ => {}
            }
            if !(seg.level_noise_std >= 0.0) {
                return Err(Error::InvalidArgument(format!("segment {i}: level_noise_std must be nonnegative")));
            }
            if let Some(r) = seg.rare {
                if !(0.0..=1.0).contains(&r.probability) || !r.level.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "segment {i}: rare probability must be in [0, 1] with a finite level"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Draws switch times and levels for one episode.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SampledSchedule {
        let mut starts = Vec::with_capacity(self.segments.len());
        let mut levels = Vec::with_capacity(self.segments.len());
        for seg in &self.segments {
            let start = match seg.start {
                StartStep::Fixed(n) => n,
                StartStep::Uniform([lo, hi]) => rng.random_range(lo..=hi),
            };
            let mut level = match &seg.level {
                Level::Fixed(v) => *v,
                Level::Choice(v) => v[rng.random_range(0..v.len())],
            };
            if seg.level_noise_std > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                level += seg.level_noise_std * z;
            }
            if let Some(rare) = seg.rare {
                if rng.random::<f64>() < rare.probability {
                    level = rare.level;
                }
            }
            starts.push(start);
            levels.push(level);
        }
        SampledSchedule { starts, levels }
    }
}

/// A schedule realized for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSchedule {
    pub starts: Vec<usize>,
    pub levels: Vec<f64>,
}

impl SampledSchedule {
    fn segment_at(&self, step: usize) -> usize {
        self.starts.partition_point(|&s| s <= step).saturating_sub(1)
    }

    pub fn level_at(&self, step: usize) -> f64 {
        self.levels[self.segment_at(step)]
    }

    pub fn in_final_segment(&self, step: usize) -> bool {
        self.segment_at(step) + 1 == self.starts.len()
    }
}

/// Episode status after a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneKind {
    Running,
    /// The output stayed inside the tracking band long enough.
    Tracked,
    /// The step limit was reached.
    Timeout,
}

impl DoneKind {
    pub fn is_terminal(self) -> bool {
        self != DoneKind::Running
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DoneKind::Running => "running",
            DoneKind::Tracked => "tracked",
            DoneKind::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: FeatureState,
    pub reward: f64,
    pub done: DoneKind,
}

/// Plant + schedule + reward wrapped as an episodic MDP.
#[derive(Debug, Clone)]
pub struct Env {
    plant: DiscretePlant,
    schedule: SetpointSchedule,
    reward: RewardConfig,
    episode: EpisodeConfig,
    active: SampledSchedule,
    step: usize,
    state: FeatureState,
    y: f64,
    in_band: usize,
    done: DoneKind,
}

impl Env {
    pub fn new(
        model: &PlantModel,
        dt: f64,
        schedule: SetpointSchedule,
        reward: RewardConfig,
        episode: EpisodeConfig,
    ) -> Result<Self> {
        schedule.validate()?;
        reward.validate()?;
        episode.validate()?;
        let plant = build_discrete_plant(model, dt)?;
        let active = SampledSchedule {
            starts: vec![0],
            levels: vec![0.0],
        };
        Ok(Self {
            plant,
            schedule,
            reward,
            episode,
            active,
            step: 0,
            state: FeatureState::default(),
            y: 0.0,
            in_band: 0,
            // Must be reset before use.
            done: DoneKind::Timeout,
        })
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> FeatureState {
        let active = self.schedule.sample(rng);
        self.reset_with(active)
    }

    /// Reset with an explicit realization of the schedule.
    pub fn reset_with(&mut self, active: SampledSchedule) -> FeatureState {
        self.plant.reset();
        self.active = active;
        self.step = 0;
        self.y = self.plant.output();
        self.in_band = 0;
        self.done = DoneKind::Running;
        // No previous error exists at reset, so D starts at zero.
        self.state = FeatureState {
            e_y: self.active.level_at(0) - self.y,
            ..FeatureState::default()
        };
        self.state
    }

    /// Applies `u_sat` to the plant; `u_raw` is the pre-saturation control
    /// that produced it and feeds the back-calculation integral.
    pub fn step<R: Rng + ?Sized>(&mut self, u_sat: f64, u_raw: f64, rng: &mut R) -> Result<Transition> {
        if self.done.is_terminal() {
            return Err(Error::EpisodeFinished);
        }
        self.y = self.plant.step(u_sat, rng)?;
        self.step += 1;
        let e_y = self.active.level_at(self.step) - self.y;
        self.state = update_features(&self.state, e_y, u_sat - u_raw, self.plant.dt())?;
        let reward = compute_reward(e_y, u_sat, &self.reward);

        // Tracking only counts once the last set-point of the episode is active.
        if e_y.abs() < self.episode.track_band && self.active.in_final_segment(self.step) {
            self.in_band += 1;
        } else {
            self.in_band = 0;
        }
        self.done = if self.in_band >= self.episode.track_count {
            DoneKind::Tracked
        } else if self.step >= self.episode.max_steps {
            DoneKind::Timeout
        } else {
            DoneKind::Running
        };
        Ok(Transition {
            state: self.state,
            reward,
            done: self.done,
        })
    }

    pub fn state(&self) -> FeatureState {
        self.state
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn setpoint(&self) -> f64 {
        self.active.level_at(self.step)
    }

    pub fn output(&self) -> f64 {
        self.y
    }

    pub fn done(&self) -> DoneKind {
        self.done
    }

    pub fn dt(&self) -> f64 {
        self.plant.dt()
    }

    pub fn schedule(&self) -> &SetpointSchedule {
        &self.schedule
    }

    pub fn active_schedule(&self) -> &SampledSchedule {
        &self.active
    }

    pub fn episode_config(&self) -> &EpisodeConfig {
        &self.episode
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward
    }
}
