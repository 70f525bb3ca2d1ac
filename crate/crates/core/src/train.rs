//! The deterministic policy gradient training loop: episodes over training
//! users, noisy proto-actions, diversified lists, simulated feedback, replay
//! and the four network updates.

use crate::agent::{
    actor_update, critic_update, soft_update, td_targets, AgentNets, NetworkShape, Optimizer, OptimizerKind,
    ReplayBuffer, Transition,
};
use crate::ann::Forest;
use crate::data::UserHistory;
use crate::diversify::recommend;
use crate::env::Simulator;
use crate::error::{Error, Result};
use crate::pmf::EmbeddingModel;
use crate::scalar::Scalar;
use crate::state::{StateEncoder, UserState};
use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

/// How many steps an episode runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeLength {
    Fixed(usize),
    /// Drawn uniformly from `min..=max` at the start of each episode.
    Uniform { min: usize, max: usize },
}

impl EpisodeLength {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        match *self {
            EpisodeLength::Fixed(t) => t,
            EpisodeLength::Uniform { min, max } => rng.random_range(min..=max),
        }
    }

    pub fn max(&self) -> usize {
        match *self {
            EpisodeLength::Fixed(t) => t,
            EpisodeLength::Uniform { max, .. } => max,
        }
    }
}

impl fmt::Display for EpisodeLength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EpisodeLength::Fixed(t) => write!(f, "{t}"),
            EpisodeLength::Uniform { min, max } => write!(f, "{min}..{max}"),
        }
    }
}

impl FromStr for EpisodeLength {
    type Err = Error;

    /// `"10"` or `"1..10"` (inclusive); `"[1,10]"` is accepted too.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_start_matches('[').trim_end_matches(']');
        let bad = || Error::Config(format!("bad episode length {s:?}"));
        let parts: Vec<&str> = if t.contains("..") {
            t.split("..").collect()
        } else {
            t.split(',').collect()
        };
        match parts.as_slice() {
            [one] => Ok(EpisodeLength::Fixed(one.trim().parse().map_err(|_| bad())?)),
            [a, b] => Ok(EpisodeLength::Uniform {
                min: a.trim().parse().map_err(|_| bad())?,
                max: b.trim().trim_start_matches('=').parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub episodes: usize,
    pub episode_length: EpisodeLength,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Transitions required before the first update.
    pub warmup: usize,
    /// Candidates retrieved per step (`k`).
    pub candidates: usize,
    /// Recommended list length (`N`).
    pub top_n: usize,
    /// Items in a user state (`n`).
    pub state_len: usize,
    pub lambda: f64,
    pub use_pe: bool,
    pub exploration: bool,
    pub sigma0: f64,
    pub sigma_decay: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub optimizer: OptimizerKind,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Drop items already in the state from the candidates.
    pub exclude_state: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 5000,
            episode_length: EpisodeLength::Uniform { min: 1, max: 10 },
            gamma: 0.9,
            tau: 0.001,
            batch_size: 64,
            buffer_capacity: 100_000,
            warmup: 640,
            candidates: 30,
            top_n: 10,
            state_len: 10,
            lambda: 1.8,
            use_pe: true,
            exploration: true,
            sigma0: 0.2,
            sigma_decay: 0.999,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            optimizer: OptimizerKind::Sgd,
            actor_hidden: vec![256, 128],
            critic_hidden: vec![256, 128],
            exclude_state: true,
            seed: 0,
        }
    }
}

fn parse_list(v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad layer list {v:?}")))
        })
        .collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail(format!("tau {} outside (0, 1]", self.tau));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return fail("batch_size must be positive and fit in the buffer".into());
        }
        if self.top_n == 0 || self.candidates < self.top_n {
            return fail(format!(
                "need 0 < top_n <= candidates, got {} and {}",
                self.top_n, self.candidates
            ));
        }
        if self.state_len == 0 {
            return fail("state_len must be positive".into());
        }
        match self.episode_length {
            EpisodeLength::Fixed(0) => return fail("episode length must be positive".into()),
            EpisodeLength::Uniform { min, max } if min == 0 || min > max => {
                return fail(format!("bad episode length range {min}..{max}"))
            }
            _ => {}
        }
        if self.sigma0 < 0.0 || !(0.0..=1.0).contains(&self.sigma_decay) {
            return fail("exploration needs sigma0 >= 0 and decay in [0, 1]".into());
        }
        if !(self.actor_lr >= 0.0 && self.critic_lr >= 0.0) {
            return fail("learning rates must be non-negative".into());
        }
        Ok(())
    }

    /// Sets one `key = value` field.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        let v = value.trim();
        match key.trim() {
            "episodes" => self.episodes = p(key, v)?,
            "episode_length" => self.episode_length = v.parse()?,
            "gamma" => self.gamma = p(key, v)?,
            "tau" => self.tau = p(key, v)?,
            "batch_size" => self.batch_size = p(key, v)?,
            "buffer_capacity" => self.buffer_capacity = p(key, v)?,
            "warmup" => self.warmup = p(key, v)?,
            "candidates" => self.candidates = p(key, v)?,
            "top_n" => self.top_n = p(key, v)?,
            "state_len" => self.state_len = p(key, v)?,
            "lambda" => self.lambda = p(key, v)?,
            "use_pe" => self.use_pe = p(key, v)?,
            "exploration" => self.exploration = p(key, v)?,
            "sigma0" => self.sigma0 = p(key, v)?,
            "sigma_decay" => self.sigma_decay = p(key, v)?,
            "actor_lr" => self.actor_lr = p(key, v)?,
            "critic_lr" => self.critic_lr = p(key, v)?,
            "optimizer" => {
                self.optimizer = match v {
                    "sgd" => OptimizerKind::Sgd,
                    "momentum" => OptimizerKind::Momentum { beta: 0.9 },
                    "adam" => OptimizerKind::adam(),
                    _ => return Err(Error::Config(format!("unknown optimizer {v:?}"))),
                }
            }
            "actor_hidden" => self.actor_hidden = parse_list(v)?,
            "critic_hidden" => self.critic_hidden = parse_list(v)?,
            "exclude_state" => self.exclude_state = p(key, v)?,
            "seed" => self.seed = p(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: no + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            self.set(k, v).map_err(|e| Error::Parse {
                line: no + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let optimizer = match self.optimizer {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Momentum { .. } => "momentum",
            OptimizerKind::Adam { .. } => "adam",
        };
        let rows: Vec<(&str, String)> = vec![
            ("episodes", self.episodes.to_string()),
            ("episode_length", self.episode_length.to_string()),
            ("gamma", self.gamma.to_string()),
            ("tau", self.tau.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("buffer_capacity", self.buffer_capacity.to_string()),
            ("warmup", self.warmup.to_string()),
            ("candidates", self.candidates.to_string()),
            ("top_n", self.top_n.to_string()),
            ("state_len", self.state_len.to_string()),
            ("lambda", self.lambda.to_string()),
            ("use_pe", self.use_pe.to_string()),
            ("exploration", self.exploration.to_string()),
            ("sigma0", self.sigma0.to_string()),
            ("sigma_decay", self.sigma_decay.to_string()),
            ("actor_lr", self.actor_lr.to_string()),
            ("critic_lr", self.critic_lr.to_string()),
            ("optimizer", optimizer.to_string()),
            ("actor_hidden", join(&self.actor_hidden)),
            ("critic_hidden", join(&self.critic_hidden)),
            ("exclude_state", self.exclude_state.to_string()),
            ("seed", self.seed.to_string()),
        ];
        rows.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn network_shape(&self, dim: usize) -> NetworkShape {
        NetworkShape {
            state_dim: self.state_len * dim,
            action_dim: dim,
            actor_hidden: self.actor_hidden.clone(),
            critic_hidden: self.critic_hidden.clone(),
        }
    }

    /// Exploration noise scale for a 0-based episode.
    pub fn sigma(&self, episode: usize) -> f64 {
        if !self.exploration {
            return 0.0;
        }
        self.sigma0 * self.sigma_decay.powi(episode.min(i32::MAX as usize) as i32)
    }
}

/// Training users whose positive history (restricted to items the model
/// knows) holds at least `state_len` items, with those item rows.
#[derive(Debug, Clone)]
pub struct EligibleUsers {
    pub users: Vec<(u32, usize, Vec<usize>)>,
}

impl EligibleUsers {
    pub fn new<F: Scalar>(
        histories: &BTreeMap<u32, UserHistory>,
        model: &EmbeddingModel<F>,
        state_len: usize,
    ) -> Self {
        let mut users = Vec::new();
        for h in histories.values() {
            let Ok(row) = model.user_row(h.user) else {
                continue;
            };
            let items: Vec<usize> = h.items().filter_map(|i| model.item_row(i).ok()).collect();
            if items.len() >= state_len {
                users.push((h.user, row, items));
            }
        }
        EligibleUsers { users }
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// Uniform over eligible users; the initial state is the first `state_len`
/// positive training items. Returns `(user id, user row, state)`.
pub fn choose_episode_user<R: Rng>(
    eligible: &EligibleUsers,
    state_len: usize,
    rng: &mut R,
) -> Result<(u32, usize, UserState)> {
    if eligible.is_empty() {
        return Err(Error::Config(format!(
            "no training user has {state_len} positive items"
        )));
    }
    let (user, row, items) = &eligible.users[rng.random_range(0..eligible.len())];
    Ok((*user, *row, UserState::new(items[..state_len].to_vec())?))
}

/// Replay entry. States are kept as item rows and re-encoded when sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTransition<F> {
    pub state: UserState,
    pub action: Vec<F>,
    pub reward: F,
    pub next_state: UserState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSnapshot {
    pub episode: usize,
    pub precision: f64,
    pub diversity: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean step reward per episode.
    pub episode_rewards: Vec<f64>,
    /// Summed reward per episode.
    pub episode_returns: Vec<f64>,
    pub episode_lengths: Vec<usize>,
    pub episode_users: Vec<u32>,
    /// Pre-step critic loss of every update.
    pub critic_losses: Vec<f64>,
    /// Actor gradient norm of every update.
    pub actor_grad_norms: Vec<f64>,
    pub snapshots: Vec<EvalSnapshot>,
    pub total_steps: usize,
    pub updates: usize,
    pub buffer_len: usize,
}

impl TrainReport {
    /// `episode,user,length,mean_reward,return` rows.
    pub fn write_episodes_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["episode", "user", "length", "mean_reward", "return"])?;
        for i in 0..self.episode_rewards.len() {
            out.write_record([
                i.to_string(),
                self.episode_users[i].to_string(),
                self.episode_lengths[i].to_string(),
                self.episode_rewards[i].to_string(),
                self.episode_returns[i].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// `update,critic_loss,actor_grad_norm` rows.
    pub fn write_updates_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["update", "critic_loss", "actor_grad_norm"])?;
        for (i, (l, g)) in self.critic_losses.iter().zip(&self.actor_grad_norms).enumerate() {
            out.write_record([i.to_string(), l.to_string(), g.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Everything the loop reads but does not change.
pub struct TrainWorld<'a, F> {
    pub histories: &'a BTreeMap<u32, UserHistory>,
    pub simulator: &'a Simulator<'a, F>,
    pub forest: &'a Forest<F>,
}

/// Trains from freshly initialized networks.
pub fn train<F: Scalar>(config: &TrainConfig, world: &TrainWorld<'_, F>) -> Result<(AgentNets<F>, TrainReport)> {
    train_with_hook(config, world, |_, _| Ok(None))
}

/// As [`train`]; `hook` runs after every episode with the episode index and
/// the current networks and may return an evaluation snapshot to record.
pub fn train_with_hook<F: Scalar>(
    config: &TrainConfig,
    world: &TrainWorld<'_, F>,
    mut hook: impl FnMut(usize, &AgentNets<F>) -> Result<Option<EvalSnapshot>>,
) -> Result<(AgentNets<F>, TrainReport)> {
    config.validate()?;
    let model = world.simulator.model();
    let dim = model.dim();
    if world.forest.dim() != dim || world.forest.len() != model.num_items() {
        return Err(Error::Config(format!(
            "index covers {} items of width {}, model has {} of width {dim}",
            world.forest.len(),
            world.forest.dim(),
            model.num_items()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut nets = AgentNets::init(&config.network_shape(dim), config.state_len, config.use_pe, &mut rng)?;
    let mut buffer = ReplayBuffer::new(config.buffer_capacity, rng.random());
    let mut actor_opt = Optimizer::new(config.optimizer, config.actor_lr);
    let mut critic_opt = Optimizer::new(config.optimizer, config.critic_lr);
    let encoder = StateEncoder::new(config.state_len, dim, config.use_pe)?;
    let mut report = TrainReport::default();
    if config.episodes == 0 {
        return Ok((nets, report));
    }

    let eligible = EligibleUsers::new(world.histories, model, config.state_len);
    info!(
        "training on {} eligible users for {} episodes",
        eligible.len(),
        config.episodes
    );
    let gamma = F::lit(config.gamma);
    let tau = F::lit(config.tau);
    let warmup = config.warmup.max(config.batch_size);
    let one = F::one();

    for episode in 0..config.episodes {
        let (user, user_row, mut state) = choose_episode_user(&eligible, config.state_len, &mut rng)?;
        let steps = config.episode_length.sample(&mut rng);
        let sigma = config.sigma(episode);
        let noise = Normal::new(0.0, sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
        let mut total = 0.0;
        for step in 0..steps {
            let abort = |reason: String, nets: &AgentNets<F>| Error::TrainingAborted {
                episode,
                step,
                reason,
                checkpoint: nets.to_checkpoint_bytes(),
            };
            let encoded = encoder.encode(&state, model)?;
            let mut action = nets.actor.forward(&encoded)?;
            if sigma > 0.0 {
                for a in action.iter_mut() {
                    *a = (*a + F::lit(noise.sample(&mut rng))).max(-one).min(one);
                }
            }
            if !crate::scalar::all_finite(&action) {
                return Err(abort("proto-action is not finite".into(), &nets));
            }
            let exclude: HashSet<usize> = if config.exclude_state {
                state.items().iter().copied().collect()
            } else {
                HashSet::new()
            };
            let list = recommend(&action, world.forest, config.candidates, config.top_n, &exclude)?;
            let outcome = world.simulator.step(user_row, &state, &list.indices())?;
            total += outcome.reward.as_f64();
            buffer.push(StoredTransition {
                state: state.clone(),
                action,
                reward: outcome.reward,
                next_state: outcome.next_state.clone(),
            });
            report.total_steps += 1;
            nets.steps += 1;
            state = outcome.next_state;

            if buffer.len() < warmup {
                continue;
            }
            let Some(idx) = buffer.sample_indices(config.batch_size) else {
                continue;
            };
            let mut batch = Vec::with_capacity(idx.len());
            for i in idx {
                let t = buffer.get(i).expect("sampled index is in range");
                batch.push(Transition {
                    state: encoder.encode(&t.state, model)?,
                    action: t.action.clone(),
                    reward: t.reward,
                    next_state: encoder.encode(&t.next_state, model)?,
                });
            }
            let y = td_targets(&batch, &nets.target_actor, &nets.target_critic, gamma)?;
            if !crate::scalar::all_finite(&y) {
                return Err(abort("TD target is not finite".into(), &nets));
            }
            let loss = match critic_update(&batch, &mut nets.critic, &y, &mut critic_opt) {
                Ok(l) => l,
                Err(Error::NonFinite(what)) => return Err(abort(format!("{what} is not finite"), &nets)),
                Err(e) => return Err(e),
            };
            let grad_norm = match actor_update(&batch, &mut nets.actor, &nets.critic, &mut actor_opt) {
                Ok(g) => g,
                Err(Error::NonFinite(what)) => return Err(abort(format!("{what} is not finite"), &nets)),
                Err(e) => return Err(e),
            };
            soft_update(&nets.critic, &mut nets.target_critic, tau)?;
            soft_update(&nets.actor, &mut nets.target_actor, tau)?;
            report.critic_losses.push(loss.as_f64());
            report.actor_grad_norms.push(grad_norm.as_f64());
            report.updates += 1;
        }
        report.episode_rewards.push(total / steps as f64);
        report.episode_returns.push(total);
        report.episode_lengths.push(steps);
        report.episode_users.push(user);
        if let Some(snap) = hook(episode, &nets)? {
            report.snapshots.push(snap);
        }
        if (episode + 1) % 500 == 0 {
            debug!(
                "episode {}: mean reward {:.4}, {} updates",
                episode + 1,
                total / steps as f64,
                report.updates
            );
        }
    }
    report.buffer_len = buffer.len();
    if report.updates == 0 {
        warn!("training ended before the replay buffer warmed up; networks are untrained");
    }
    Ok((nets, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn episode_length_parsing() {
        assert_eq!("10".parse::<EpisodeLength>().unwrap(), EpisodeLength::Fixed(10));
        assert_eq!(
            "1..10".parse::<EpisodeLength>().unwrap(),
            EpisodeLength::Uniform { min: 1, max: 10 }
        );
        assert_eq!(
            "[1,10]".parse::<EpisodeLength>().unwrap(),
            EpisodeLength::Uniform { min: 1, max: 10 }
        );
        assert!("a..b".parse::<EpisodeLength>().is_err());
    }

    #[test]
    fn config_text_round_trip() {
        let c = TrainConfig {
            seed: 7,
            optimizer: OptimizerKind::adam(),
            actor_hidden: vec![32, 16],
            episode_length: EpisodeLength::Fixed(4),
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn config_rejects_bad_input() {
        assert!(TrainConfig::from_text("gamma = 1.5").is_err());
        assert!(TrainConfig::from_text("nope = 1").is_err());
        assert!(TrainConfig::from_text("episodes").is_err());
        assert!(TrainConfig::from_text("# comment only\n\nepisodes = 3 # trailing").is_ok());
    }

    #[test]
    fn defaults_match_the_reference_setup() {
        let c = TrainConfig::default();
        assert_eq!((c.top_n, c.state_len, c.candidates), (10, 10, 30));
        assert_eq!(c.lambda, 1.8);
        assert_eq!(c.episode_length, EpisodeLength::Uniform { min: 1, max: 10 });
        assert_eq!(c.warmup, 10 * c.batch_size);
    }

    #[test]
    fn sigma_decays_per_episode() {
        let c = TrainConfig::default();
        assert_eq!(c.sigma(0), 0.2);
        assert!((c.sigma(2) - 0.2 * 0.999 * 0.999).abs() < 1e-15);
        let off = TrainConfig {
            exploration: false,
            ..c
        };
        assert_eq!(off.sigma(0), 0.0);
    }
}
