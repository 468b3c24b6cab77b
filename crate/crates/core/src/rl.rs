//! Deterministic policy gradient training of the PID weights: replay memory,
//! TD targets, the critic regression step, the actor ascent step and the
//! episode loop with its three actor-update cadences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::actor::{actor_forward, actor_grad, saturate, ActuatorLimits, ControllerParams};
use crate::critic::{
    critic_input, grad_wrt_action_with, q_backward_batch, soft_update, BatchScratch, Mlp, Optimizer, OptimizerConfig,
    OptimizerKind, QSample, Scratch, DEFAULT_HIDDEN, INPUT_WIDTH,
};
use crate::env::{DoneKind, Env, FeatureState};
use crate::error::{Error, Result};

/// One stored transition; `action` is the saturated input actually applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experience {
    pub state: FeatureState,
    pub action: f64,
    pub next_state: FeatureState,
    pub reward: f64,
    pub done: DoneKind,
}

/// Fixed-capacity ring buffer; the oldest experience is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    items: Vec<Experience>,
    capacity: usize,
    next: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("replay memory capacity must be positive".into()));
        }
        Ok(Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            next: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, exp: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(exp);
        } else {
            self.items[self.next] = exp;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }

    /// Uniform sampling with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<Experience>> {
        let mut out = Vec::with_capacity(batch);
        self.sample_into(batch, rng, &mut out)?;
        Ok(out)
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R, out: &mut Vec<Experience>) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::InvalidArgument("cannot sample from an empty replay memory".into()));
        }
        out.clear();
        let n = self.items.len();
        out.extend((0..batch).map(|_| self.items[rng.random_range(0..n)]));
        Ok(())
    }
}

/// When the actor weights are updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// After every time-step.
    #[serde(rename = "v1")]
    V1,
    /// After every tenth time-step.
    #[serde(rename = "v1_5")]
    V1_5,
    /// Once at the end of each episode.
    #[serde(rename = "v2")]
    V2,
}

/// Exploration noise standard deviation as fractions of the actuator range,
/// interpolated linearly from the first to the last episode.
///
/// Within an episode the noise is a stationary Gaussian AR(1) sequence,
/// `eps_n = c eps_{n-1} + sqrt(1 - c^2) sigma xi_n`, with `c = correlation`.
/// `c = 0` gives independent draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSchedule {
    pub start_frac: f64,
    pub end_frac: f64,
    pub correlation: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            start_frac: 0.1,
            end_frac: 0.01,
            correlation: 0.0,
        }
    }
}

impl NoiseSchedule {
    pub fn sigma(&self, episode: usize, episodes: usize, lim: ActuatorLimits) -> f64 {
        let t = if episodes > 1 {
            episode as f64 / (episodes - 1) as f64
        } else {
            0.0
        };
        lim.range() * (self.start_frac + (self.end_frac - self.start_frac) * t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub episodes: usize,
    pub gamma: f64,
    pub batch: usize,
    pub memory_capacity: usize,
    pub critic_hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub actor_optimizer: OptimizerKind,
    pub critic_optimizer: OptimizerKind,
    /// Momentum decay used by `sgd_momentum`.
    pub momentum: f64,
    pub actor_clip: Option<f64>,
    pub critic_clip: Option<f64>,
    /// Use slowly tracking copies of the critic and actor for TD targets.
    pub target_networks: bool,
    pub target_tau: f64,
    pub noise: NoiseSchedule,
    pub limits: ActuatorLimits,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::V2,
            episodes: 1000,
            gamma: 0.99,
            batch: 256,
            memory_capacity: 100_000,
            critic_hidden: DEFAULT_HIDDEN.to_vec(),
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            actor_optimizer: OptimizerKind::Sgd,
            critic_optimizer: OptimizerKind::Adam,
            momentum: 0.75,
            actor_clip: None,
            critic_clip: None,
            target_networks: true,
            target_tau: 1e-3,
            noise: NoiseSchedule::default(),
            limits: ActuatorLimits {
                u_min: -10.0,
                u_max: 10.0,
            },
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!("gamma must be in [0, 1], got {}", self.gamma)));
        }
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch must be at least 1".into()));
        }
        if self.memory_capacity == 0 {
            return Err(Error::InvalidArgument("memory_capacity must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.target_tau) {
            return Err(Error::InvalidArgument(format!("target_tau must be in [0, 1], got {}", self.target_tau)));
        }
        if !(self.noise.start_frac >= 0.0 && self.noise.end_frac >= 0.0) {
            return Err(Error::InvalidArgument("noise fractions must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.noise.correlation) {
            return Err(Error::InvalidArgument(format!(
                "noise correlation must be in [0, 1), got {}",
                self.noise.correlation
            )));
        }
        ActuatorLimits::new(self.limits.u_min, self.limits.u_max)?;
        self.actor_optimizer_config().validate()?;
        self.critic_optimizer_config().validate()?;
        if self.critic_hidden.contains(&0) {
            return Err(Error::InvalidArgument("critic hidden widths must be positive".into()));
        }
        Ok(())
    }

    pub fn actor_optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.actor_optimizer,
            lr: self.actor_lr,
            momentum: self.momentum,
            clip: self.actor_clip,
        }
    }

    pub fn critic_optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.critic_optimizer,
            lr: self.critic_lr,
            momentum: self.momentum,
            clip: self.critic_clip,
        }
    }
}

/// Saturated policy output `mu(s, K)`.
fn policy(k: &ControllerParams, s: &FeatureState, lim: ActuatorLimits) -> f64 {
    saturate(k.kp * s.e_y + k.ki * s.i_y + k.kd * s.d + k.rho * s.i_u, lim)
}

/// `r + gamma Q'(s', mu(s', K'))`, without bootstrapping past a tracked
/// terminal state.
pub fn td_targets(
    batch: &[Experience],
    target_critic: &Mlp,
    target_k: &ControllerParams,
    gamma: f64,
    lim: ActuatorLimits,
) -> Vec<f64> {
    let mut scratch = target_critic.scratch();
    batch
        .iter()
        .map(|e| td_target(e, target_critic, target_k, gamma, lim, &mut scratch))
        .collect()
}

fn td_target(
    e: &Experience,
    target_critic: &Mlp,
    target_k: &ControllerParams,
    gamma: f64,
    lim: ActuatorLimits,
    scratch: &mut Scratch,
) -> f64 {
    if e.done == DoneKind::Tracked || gamma == 0.0 {
        return e.reward;
    }
    let u_next = policy(target_k, &e.next_state, lim);
    let x = critic_input(&e.next_state, u_next);
    e.reward + gamma * target_critic.forward_with(&x, scratch)
}

/// Batch estimate of the policy gradient
/// `mean(dQ/du(s, mu(s, K)) * dmu/dK(s, K))`.
pub fn policy_gradient(
    k: &ControllerParams,
    batch: &[Experience],
    critic: &Mlp,
    lim: ActuatorLimits,
    scratch: &mut Scratch,
) -> Result<[f64; 4]> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut g = [0.0; 4];
    for e in batch {
        let dmu = actor_grad(k, &e.state, lim);
        if dmu.iter().all(|&v| v == 0.0) {
            continue;
        }
        let u = policy(k, &e.state, lim);
        let dq = grad_wrt_action_with(critic, &e.state, u, scratch);
        for j in 0..4 {
            g[j] += dq * dmu[j];
        }
    }
    let n = batch.len() as f64;
    for (j, gj) in g.iter_mut().enumerate() {
        *gj = if k.trainable[j] { *gj / n } else { 0.0 };
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("policy gradient {g:?}")));
    }
    Ok(g)
}

/// [`policy_gradient`] evaluated with one batched critic pass.
fn policy_gradient_batch(
    k: &ControllerParams,
    batch: &[Experience],
    critic: &Mlp,
    lim: ActuatorLimits,
    bs: &mut BatchScratch,
) -> Result<[f64; 4]> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let active: Vec<(usize, [f64; 4])> = batch
        .iter()
        .enumerate()
        .map(|(i, e)| (i, actor_grad(k, &e.state, lim)))
        .filter(|(_, dmu)| dmu.iter().any(|&v| v != 0.0))
        .collect();
    let mut g = [0.0; 4];
    if !active.is_empty() {
        bs.set_rows(active.len());
        for (row, &(i, _)) in active.iter().enumerate() {
            let s = &batch[i].state;
            bs.set_input(row, &critic_input(s, policy(k, s, lim)));
        }
        critic.forward_batch(bs);
        critic.backward_batch(&vec![1.0; active.len()], bs, None);
        for (row, (_, dmu)) in active.iter().enumerate() {
            let dq = bs.input_grad(row, INPUT_WIDTH - 1);
            for j in 0..4 {
                g[j] += dq * dmu[j];
            }
        }
    }
    let n = batch.len() as f64;
    for (j, gj) in g.iter_mut().enumerate() {
        *gj = if k.trainable[j] { *gj / n } else { 0.0 };
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("policy gradient {g:?}")));
    }
    Ok(g)
}

/// One gradient-ascent step on the controller weights. Frozen weights keep
/// their value and `rho` is projected back to be nonnegative.
pub fn actor_update(
    k: &ControllerParams,
    batch: &[Experience],
    critic: &Mlp,
    lim: ActuatorLimits,
    opt: &mut Optimizer,
) -> Result<ControllerParams> {
    let g = policy_gradient(k, batch, critic, lim, &mut critic.scratch())?;
    apply_ascent(k, g, opt)
}

fn apply_ascent(k: &ControllerParams, g: [f64; 4], opt: &mut Optimizer) -> Result<ControllerParams> {
    let before = k.as_array();
    let mut w = before;
    let descent = g.map(|v| -v);
    opt.step(&mut w, &descent)?;
    for j in 0..4 {
        if !k.trainable[j] {
            w[j] = before[j];
        }
    }
    let mut next = *k;
    next.set_array(w);
    next.project();
    if !next.is_finite() {
        return Err(Error::NonFinite(format!("controller weights after update {w:?}")));
    }
    Ok(next)
}

/// Per-episode training record; one row of `train_log.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub total_reward: f64,
    pub steps: usize,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub rho: f64,
    pub sigma: f64,
    #[serde(skip)]
    pub done: DoneKind,
    #[serde(skip)]
    pub actor_updates: usize,
    #[serde(skip)]
    pub memory_len: usize,
}

/// One time-step of a roll-out; one row of the per-step CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub n: usize,
    pub setpoint: f64,
    pub y: f64,
    pub u_raw: f64,
    pub u_sat: f64,
    pub e_y: f64,
    #[serde(rename = "I_y")]
    pub i_y: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "I_u")]
    pub i_u: f64,
    pub r: f64,
}

/// Actor, critic, their target copies, optimizers and replay memory.
#[derive(Debug, Clone)]
pub struct Agent {
    cfg: TrainConfig,
    k: ControllerParams,
    k_target: ControllerParams,
    critic: Mlp,
    critic_target: Mlp,
    critic_opt: Optimizer,
    actor_opt: Optimizer,
    memory: ReplayMemory,
    rng: ChaCha8Rng,
    env_rng: ChaCha8Rng,
    batch_scratch: BatchScratch,
    grads: Vec<f64>,
    batch_buf: Vec<Experience>,
    samples: Vec<QSample>,
    critic_updates: u64,
    actor_updates: u64,
}

impl Agent {
    pub fn new(cfg: TrainConfig, k_init: ControllerParams) -> Result<Self> {
        cfg.validate()?;
        if k_init.kp == 0.0 && k_init.ki == 0.0 && k_init.kd == 0.0 {
            return Err(Error::InvalidArgument(
                "initial gains kp = ki = kd = 0 make the controller output identically zero, \
                 so the policy gradient vanishes and the weights never move; start from nonzero gains"
                    .into(),
            ));
        }
        if !k_init.is_finite() || k_init.rho < 0.0 {
            return Err(Error::InvalidArgument("initial gains must be finite with rho >= 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut env_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        env_rng.set_stream(1);
        let critic = Mlp::new(&cfg.critic_hidden, &mut rng)?;
        Self::with_critic(cfg, k_init, critic, rng, env_rng)
    }

    /// Starts from a given critic (e.g. all zeros in tests).
    pub fn with_initial_critic(cfg: TrainConfig, k_init: ControllerParams, critic: Mlp) -> Result<Self> {
        cfg.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut env_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        env_rng.set_stream(1);
        Self::with_critic(cfg, k_init, critic, rng, env_rng)
    }

    fn with_critic(
        cfg: TrainConfig,
        k_init: ControllerParams,
        critic: Mlp,
        rng: ChaCha8Rng,
        env_rng: ChaCha8Rng,
    ) -> Result<Self> {
        let critic_opt = Optimizer::new(cfg.critic_optimizer_config(), critic.num_params())?;
        let actor_opt = Optimizer::new(cfg.actor_optimizer_config(), 4)?;
        let memory = ReplayMemory::new(cfg.memory_capacity)?;
        Ok(Self {
            k: k_init,
            k_target: k_init,
            critic_target: critic.clone(),
            batch_scratch: critic.batch_scratch(cfg.batch),
            grads: vec![0.0; critic.num_params()],
            batch_buf: Vec::with_capacity(cfg.batch),
            samples: Vec::with_capacity(cfg.batch),
            critic,
            critic_opt,
            actor_opt,
            memory,
            rng,
            env_rng,
            cfg,
            critic_updates: 0,
            actor_updates: 0,
        })
    }

    pub fn params(&self) -> ControllerParams {
        self.k
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn memory(&self) -> &ReplayMemory {
        &self.memory
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    pub fn actor_updates(&self) -> u64 {
        self.actor_updates
    }

    /// One minibatch regression step of the critic toward the TD targets,
    /// followed by the soft update of both target copies.
    fn update_critic(&mut self) -> Result<()> {
        self.memory.sample_into(self.cfg.batch, &mut self.rng, &mut self.batch_buf)?;
        let (target_critic, target_k) = if self.cfg.target_networks {
            (&self.critic_target, &self.k_target)
        } else {
            (&self.critic, &self.k)
        };
        // Bootstrapped values for every non-terminal sample in one pass.
        let bs = &mut self.batch_scratch;
        bs.set_rows(self.batch_buf.len());
        for (i, e) in self.batch_buf.iter().enumerate() {
            bs.set_input(i, &critic_input(&e.next_state, policy(target_k, &e.next_state, self.cfg.limits)));
        }
        let gamma = self.cfg.gamma;
        let next_q = if gamma == 0.0 { None } else { Some(target_critic.forward_batch(bs)) };
        self.samples.clear();
        for (i, e) in self.batch_buf.iter().enumerate() {
            let target = match next_q {
                Some(q) if e.done != DoneKind::Tracked => e.reward + gamma * q[i],
                _ => e.reward,
            };
            self.samples.push(QSample {
                state: e.state,
                action: e.action,
                target,
            });
        }
        q_backward_batch(&self.critic, &self.samples, &mut self.grads, &mut self.batch_scratch)?;
        self.critic_opt.step(self.critic.params_mut(), &self.grads)?;
        if self.cfg.target_networks {
            let tau = self.cfg.target_tau;
            soft_update(&mut self.critic_target, &self.critic, tau)?;
            let (online, target) = (self.k.as_array(), self.k_target.as_array());
            let mixed = std::array::from_fn(|j| tau * online[j] + (1.0 - tau) * target[j]);
            self.k_target.set_array(mixed);
        }
        self.critic_updates += 1;
        Ok(())
    }

    fn update_actor(&mut self) -> Result<()> {
        self.memory.sample_into(self.cfg.batch, &mut self.rng, &mut self.batch_buf)?;
        let g = policy_gradient_batch(
            &self.k,
            &self.batch_buf,
            &self.critic,
            self.cfg.limits,
            &mut self.batch_scratch,
        )?;
        self.k = apply_ascent(&self.k, g, &mut self.actor_opt)?;
        self.actor_updates += 1;
        Ok(())
    }

    /// Runs one training roll-out with exploration noise `sigma`.
    pub fn run_episode(
        &mut self,
        env: &mut Env,
        episode: usize,
        sigma: f64,
        mut steps_out: Option<&mut Vec<StepRecord>>,
    ) -> Result<EpisodeLog> {
        let lim = self.cfg.limits;
        let mut s = env.reset(&mut self.env_rng);
        let mut total = 0.0;
        let mut actor_updates = 0;
        let mut done = DoneKind::Running;
        let c = self.cfg.noise.correlation;
        let innovation = (1.0 - c * c).sqrt() * sigma;
        let mut noise = 0.0;
        while !done.is_terminal() {
            let n = env.step_index();
            let setpoint = env.setpoint();
            let y = env.output();
            let out = actor_forward(&self.k, &s, lim)?;
            if sigma > 0.0 {
                let xi: f64 = self.rng.sample(StandardNormal);
                noise = if n == 0 { sigma * xi } else { c * noise + innovation * xi };
            }
            let u_raw = out.u_raw + noise;
            let u_sat = saturate(u_raw, lim);
            let t = env.step(u_sat, u_raw, &mut self.env_rng)?;
            if !t.reward.is_finite() {
                return Err(Error::NonFinite("reward".into()));
            }
            self.memory.push(Experience {
                state: s,
                action: u_sat,
                next_state: t.state,
                reward: t.reward,
                done: t.done,
            });
            if let Some(rec) = steps_out.as_deref_mut() {
                rec.push(StepRecord {
                    n,
                    setpoint,
                    y,
                    u_raw,
                    u_sat,
                    e_y: s.e_y,
                    i_y: s.i_y,
                    d: s.d,
                    i_u: s.i_u,
                    r: t.reward,
                });
            }
            total += t.reward;
            done = t.done;
            s = t.state;

            if self.memory.len() >= self.cfg.batch {
                self.update_critic()?;
            }
            let step_no = n + 1;
            let due = match self.cfg.variant {
                Variant::V1 => true,
                Variant::V1_5 => step_no % 10 == 0,
                Variant::V2 => false,
            };
            if due && self.critic_updates > 0 {
                self.update_actor()?;
                actor_updates += 1;
            }
        }
        if self.cfg.variant == Variant::V2 && self.critic_updates > 0 {
            self.update_actor()?;
            actor_updates += 1;
        }
        Ok(EpisodeLog {
            episode,
            total_reward: total,
            steps: env.step_index(),
            kp: self.k.kp,
            ki: self.k.ki,
            kd: self.k.kd,
            rho: self.k.rho,
            sigma,
            done,
            actor_updates,
            memory_len: self.memory.len(),
        })
    }
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct TrainingArtifacts {
    pub params: ControllerParams,
    pub critic: Mlp,
    pub log: Vec<EpisodeLog>,
}

/// Trains for `cfg.episodes` episodes starting from `k_init`.
pub fn train(cfg: &TrainConfig, env: &mut Env, k_init: ControllerParams) -> Result<TrainingArtifacts> {
    train_with(cfg, env, k_init, |_, _| {})
}

/// Like [`train`], handing every episode's step records to `on_episode`.
pub fn train_with<F>(
    cfg: &TrainConfig,
    env: &mut Env,
    k_init: ControllerParams,
    mut on_episode: F,
) -> Result<TrainingArtifacts>
where
    F: FnMut(&EpisodeLog, &[StepRecord]),
{
    let mut agent = Agent::new(cfg.clone(), k_init)?;
    let mut log = Vec::with_capacity(cfg.episodes);
    let mut steps = Vec::new();
    for e in 0..cfg.episodes {
        let sigma = cfg.noise.sigma(e, cfg.episodes, cfg.limits);
        steps.clear();
        let entry = agent.run_episode(env, e, sigma, Some(&mut steps))?;
        on_episode(&entry, &steps);
        log.push(entry);
    }
    Ok(TrainingArtifacts {
        params: agent.params(),
        critic: agent.critic().clone(),
        log,
    })
}

/// Result of a noise-free roll-out with fixed gains.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub total_reward: f64,
    pub steps: usize,
    pub done: DoneKind,
    pub records: Vec<StepRecord>,
}

/// Runs the environment, already reset, to termination under fixed gains.
pub fn rollout<R: Rng + ?Sized>(env: &mut Env, k: &ControllerParams, lim: ActuatorLimits, rng: &mut R) -> Result<Evaluation> {
    let mut s = env.state();
    let mut total = 0.0;
    let mut records = Vec::new();
    let mut done = env.done();
    while !done.is_terminal() {
        let n = env.step_index();
        let setpoint = env.setpoint();
        let y = env.output();
        let out = actor_forward(k, &s, lim)?;
        let t = env.step(out.u_sat, out.u_raw, rng)?;
        records.push(StepRecord {
            n,
            setpoint,
            y,
            u_raw: out.u_raw,
            u_sat: out.u_sat,
            e_y: s.e_y,
            i_y: s.i_y,
            d: s.d,
            i_u: s.i_u,
            r: t.reward,
        });
        total += t.reward;
        done = t.done;
        s = t.state;
    }
    Ok(Evaluation {
        total_reward: total,
        steps: env.step_index(),
        done,
        records,
    })
}

/// Resets with a schedule drawn from `seed` and rolls out `k` without exploration.
pub fn evaluate(env: &mut Env, k: &ControllerParams, lim: ActuatorLimits, seed: u64) -> Result<Evaluation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    env.reset(&mut rng);
    rollout(env, k, lim, &mut rng)
}

/// Mean total reward of `k` over the evaluation episodes seeded `seeds`.
pub fn mean_eval_reward(
    env: &mut Env,
    k: &ControllerParams,
    lim: ActuatorLimits,
    seeds: impl IntoIterator<Item = u64>,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for seed in seeds {
        sum += evaluate(env, k, lim, seed)?.total_reward;
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidArgument("no evaluation episodes".into()));
    }
    Ok(sum / count as f64)
}
