//! Offline evaluation: greedy rollouts against the simulated user scored by
//! precision, diversity and NDCG, plus report files.

use crate::agent::AgentNets;
use crate::ann::Forest;
use crate::data::UserHistory;
use crate::diversify::recommend;
use crate::env::{ild, Simulator, POSITIVE_RATING};
use crate::error::{Error, Result};
use crate::pmf::EmbeddingModel;
use crate::scalar::Scalar;
use crate::state::{StateEncoder, UserState};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashSet};
use std::io::Write;

/// Sum of the ratings that reach the positive threshold, divided by `n`.
/// Ranges over `[0, 5]`.
pub fn precision_at_n<F: Scalar>(ratings: &[F], n: usize) -> F {
    let gate = F::lit(POSITIVE_RATING);
    let sum: F = ratings.iter().copied().filter(|&r| r >= gate).sum();
    sum / F::lit(n.max(1) as f64)
}

/// Fraction of the `n` slots holding a positively rated item.
pub fn precision_frac<F: Scalar>(ratings: &[F], n: usize) -> F {
    let gate = F::lit(POSITIVE_RATING);
    F::lit(ratings.iter().filter(|&&r| r >= gate).count() as f64 / n.max(1) as f64)
}

fn dcg<F: Scalar>(gains: &[F]) -> F {
    gains
        .iter()
        .enumerate()
        .map(|(i, &g)| g / F::lit(((i + 2) as f64).log2()))
        .sum()
}

/// DCG with the raw rating as gain and a `log2(i + 1)` discount, over the
/// DCG of the same ratings sorted descending. 0 when that is 0.
pub fn ndcg_at_n<F: Scalar>(ratings: &[F]) -> F {
    let mut ideal = ratings.to_vec();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let best = dcg(&ideal);
    if best <= F::zero() {
        return F::zero();
    }
    (dcg(ratings) / best).min(F::one())
}

/// Produces a list of item rows for a user in a state.
pub trait Policy<F> {
    fn recommend(&self, user_row: usize, state: &UserState) -> Result<Vec<usize>>;
}

/// Greedy actor: no exploration noise.
pub struct ActorPolicy<'a, F> {
    pub nets: &'a AgentNets<F>,
    pub encoder: StateEncoder<F>,
    pub model: &'a EmbeddingModel<F>,
    pub forest: &'a Forest<F>,
    pub candidates: usize,
    pub top_n: usize,
    pub exclude_state: bool,
}

impl<'a, F: Scalar> ActorPolicy<'a, F> {
    /// Encodes states with positional encodings iff `use_pe`, which may
    /// differ from what the networks were trained with.
    pub fn new(
        nets: &'a AgentNets<F>,
        model: &'a EmbeddingModel<F>,
        forest: &'a Forest<F>,
        settings: &EvalSettings,
        use_pe: bool,
    ) -> Result<Self> {
        Ok(ActorPolicy {
            encoder: StateEncoder::new(settings.state_len, model.dim(), use_pe)?,
            nets,
            model,
            forest,
            candidates: settings.candidates,
            top_n: settings.top_n,
            exclude_state: settings.exclude_state,
        })
    }

    pub fn proto_action(&self, state: &UserState) -> Result<Vec<F>> {
        self.nets.actor.forward(&self.encoder.encode(state, self.model)?)
    }
}

impl<F: Scalar> Policy<F> for ActorPolicy<'_, F> {
    fn recommend(&self, _user_row: usize, state: &UserState) -> Result<Vec<usize>> {
        let action = self.proto_action(state)?;
        let exclude: HashSet<usize> = if self.exclude_state {
            state.items().iter().copied().collect()
        } else {
            HashSet::new()
        };
        Ok(recommend(&action, self.forest, self.candidates, self.top_n, &exclude)?.indices())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    /// Greedy steps per user.
    pub steps: usize,
    pub state_len: usize,
    pub candidates: usize,
    pub top_n: usize,
    pub lambda: f64,
    pub exclude_state: bool,
    /// Evaluate at most this many users (the first ones by id).
    pub max_users: Option<usize>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            steps: 10,
            state_len: 10,
            candidates: 30,
            top_n: 10,
            lambda: 1.8,
            exclude_state: true,
            max_users: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub precision_frac: f64,
    pub diversity: f64,
    pub ndcg: f64,
    pub reward: f64,
}

impl Metrics {
    fn add(&mut self, o: &Metrics) {
        self.precision += o.precision;
        self.precision_frac += o.precision_frac;
        self.diversity += o.diversity;
        self.ndcg += o.ndcg;
        self.reward += o.reward;
    }

    fn scaled(mut self, s: f64) -> Metrics {
        self.precision *= s;
        self.precision_frac *= s;
        self.diversity *= s;
        self.ndcg *= s;
        self.reward *= s;
        self
    }

    pub fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("precision_at_n", self.precision),
            ("precision_frac", self.precision_frac),
            ("diversity_at_n", self.diversity),
            ("ndcg_at_n", self.ndcg),
            ("reward", self.reward),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: u32,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMeta {
    pub config_hash: String,
    pub seed: u64,
    pub use_pe: bool,
    pub steps_per_user: usize,
    pub averaging: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_user: Vec<UserMetrics>,
    pub aggregate: Metrics,
    pub meta: EvalMeta,
}

/// Hex SHA-256 of a configuration's text form.
pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// A user to evaluate: id, model row and starting state.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalUser {
    pub user: u32,
    pub row: usize,
    pub start: UserState,
}

/// Users with held-out positives and at least `state_len` known training
/// positives; each starts from its last `state_len` training items.
pub fn eval_users<F: Scalar>(
    train: &BTreeMap<u32, UserHistory>,
    test: &BTreeMap<u32, UserHistory>,
    model: &EmbeddingModel<F>,
    state_len: usize,
) -> Result<Vec<EvalUser>> {
    let mut out = Vec::new();
    for (&user, h) in train {
        if !test.get(&user).is_some_and(|t| !t.is_empty()) {
            continue;
        }
        let Ok(row) = model.user_row(user) else {
            continue;
        };
        let items: Vec<usize> = h.items().filter_map(|i| model.item_row(i).ok()).collect();
        if items.len() < state_len {
            continue;
        }
        out.push(EvalUser {
            user,
            row,
            start: UserState::new(items[items.len() - state_len..].to_vec())?,
        });
    }
    Ok(out)
}

/// Per-step metrics of one list.
pub fn score_list<F: Scalar>(sim: &Simulator<'_, F>, user_row: usize, items: &[usize], top_n: usize) -> Metrics {
    let (ratings, _, _, reward) = sim.score(user_row, items);
    let vectors: Vec<&[F]> = items.iter().map(|&i| sim.model().item_row_vector(i)).collect();
    Metrics {
        precision: precision_at_n(&ratings, top_n).as_f64(),
        precision_frac: precision_frac(&ratings, top_n).as_f64(),
        diversity: ild(&vectors).as_f64(),
        ndcg: ndcg_at_n(&ratings).as_f64(),
        reward: reward.as_f64(),
    }
}

/// Rolls `policy` for `settings.steps` steps from each user's start state,
/// averages the per-step metrics per user and then across users.
pub fn evaluate<F: Scalar, P: Policy<F>>(
    policy: &P,
    users: &[EvalUser],
    sim: &Simulator<'_, F>,
    settings: &EvalSettings,
    meta: EvalMeta,
) -> Result<EvalReport> {
    if settings.steps == 0 {
        return Err(Error::Config("evaluation needs at least one step".into()));
    }
    let users = match settings.max_users {
        Some(m) => &users[..m.min(users.len())],
        None => users,
    };
    let mut per_user = Vec::with_capacity(users.len());
    let mut total = Metrics::default();
    for u in users {
        let mut state = u.start.clone();
        let mut sum = Metrics::default();
        for _ in 0..settings.steps {
            let items = policy.recommend(u.row, &state)?;
            sum.add(&score_list(sim, u.row, &items, settings.top_n));
            state = sim.step(u.row, &state, &items)?.next_state;
        }
        let m = sum.scaled(1.0 / settings.steps as f64);
        total.add(&m);
        per_user.push(UserMetrics { user: u.user, metrics: m });
    }
    let aggregate = if per_user.is_empty() {
        Metrics::default()
    } else {
        total.scaled(1.0 / per_user.len() as f64)
    };
    Ok(EvalReport {
        per_user,
        aggregate,
        meta,
    })
}

impl EvalReport {
    /// `metric,user,value` rows; aggregate rows use the user `all`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["metric", "user", "value"])?;
        for u in &self.per_user {
            for (name, v) in u.metrics.named() {
                out.write_record([name, &u.user.to_string(), &v.to_string()])?;
            }
        }
        for (name, v) in self.aggregate.named() {
            out.write_record([name, "all", &v.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `episode,moving_avg_reward` rows over a trailing window.
pub fn write_learning_curve<W: Write>(rewards: &[f64], window: usize, w: W) -> Result<()> {
    let window = window.max(1);
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["episode", "moving_avg_reward"])?;
    let mut acc = 0.0;
    for (i, &r) in rewards.iter().enumerate() {
        acc += r;
        if i >= window {
            acc -= rewards[i - window];
        }
        let len = (i + 1).min(window);
        out.write_record([i.to_string(), (acc / len as f64).to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Paired reports with and without positional encodings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeAblation {
    pub with_pe: EvalReport,
    pub without_pe: EvalReport,
}

impl PeAblation {
    /// `(metric, with, without, with - without)` per aggregate metric.
    pub fn deltas(&self) -> Vec<(&'static str, f64, f64, f64)> {
        self.with_pe
            .aggregate
            .named()
            .iter()
            .zip(self.without_pe.aggregate.named())
            .map(|(&(name, a), (_, b))| (name, a, b, a - b))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["metric", "with_pe", "without_pe", "delta"])?;
        for (name, a, b, d) in self.deltas() {
            out.write_record([name.to_string(), a.to_string(), b.to_string(), d.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}
