//! A small synthetic world with planted preferences: items form clusters
//! along orthogonal directions and every user likes a few clusters.

use crate::agent::OptimizerKind;
use crate::ann::{Forest, ForestParams};
use crate::data::{RatingEvent, UserHistory};
use crate::error::Result;
use crate::pmf::EmbeddingModel;
use crate::scalar::Scalar;
use crate::train::{EpisodeLength, TrainConfig};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyParams {
    pub items: usize,
    pub clusters: usize,
    pub dim: usize,
    pub users: usize,
    /// Clusters each user likes.
    pub liked_clusters: usize,
    /// Positive history length per user.
    pub history: usize,
    /// Norm of a cluster center.
    pub spread: f64,
    /// Per-coordinate item noise.
    pub noise: f64,
    /// Rating a user gives an item at its liked cluster centre.
    pub liked_rating: f64,
    pub seed: u64,
}

impl Default for ToyParams {
    fn default() -> Self {
        ToyParams {
            items: 200,
            clusters: 5,
            dim: 8,
            users: 60,
            liked_clusters: 2,
            history: 20,
            spread: 2.0,
            noise: 0.3,
            liked_rating: 4.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyWorld<F> {
    pub model: EmbeddingModel<F>,
    /// Positive training histories.
    pub histories: BTreeMap<u32, UserHistory>,
    pub forest: Forest<F>,
    /// Cluster of every item row.
    pub item_cluster: Vec<usize>,
    /// Liked clusters of every user row.
    pub user_clusters: Vec<Vec<usize>>,
}

impl<F: Scalar> ToyWorld<F> {
    pub fn generate(p: &ToyParams) -> Result<Self> {
        assert!(p.clusters <= p.dim && p.liked_clusters <= p.clusters && p.items >= p.clusters);
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let normal = Normal::new(0.0, p.noise).expect("valid noise");
        let item_cluster: Vec<usize> = (0..p.items).map(|i| i % p.clusters).collect();
        let mut items = Vec::with_capacity(p.items * p.dim);
        for &c in &item_cluster {
            for d in 0..p.dim {
                let centre = if d == c { p.spread } else { 0.0 };
                items.push(F::lit(centre + normal.sample(&mut rng)));
            }
        }
        let mut users = Vec::with_capacity(p.users * p.dim);
        let mut user_clusters = Vec::with_capacity(p.users);
        let mut histories = BTreeMap::new();
        let all: Vec<usize> = (0..p.clusters).collect();
        for u in 0..p.users {
            let liked: Vec<usize> = all.choose_multiple(&mut rng, p.liked_clusters).copied().collect();
            let weight = p.liked_rating / p.spread;
            users.extend((0..p.dim).map(|d| F::lit(if liked.contains(&d) { weight } else { 0.0 })));
            let pool: Vec<usize> = (0..p.items).filter(|i| liked.contains(&item_cluster[*i])).collect();
            let events = (0..p.history)
                .map(|t| RatingEvent {
                    user: u as u32 + 1,
                    item: pool[rng.random_range(0..pool.len())] as u32 + 1,
                    rating: 5,
                    timestamp: t as i64,
                })
                .collect();
            histories.insert(
                u as u32 + 1,
                UserHistory {
                    user: u as u32 + 1,
                    events,
                },
            );
            user_clusters.push(liked);
        }
        let model = EmbeddingModel::from_parts(
            p.dim,
            (1..=p.users as u32).collect(),
            users,
            (1..=p.items as u32).collect(),
            items,
        )?;
        let forest = Forest::build(model.item_matrix(), p.dim, &ForestParams::with_seed(p.seed ^ 0x5eed))?;
        Ok(ToyWorld {
            model,
            histories,
            forest,
            item_cluster,
            user_clusters,
        })
    }
}

/// Small networks and faster learning rates suited to the toy world.
pub fn toy_train_config(seed: u64, episodes: usize) -> TrainConfig {
    TrainConfig {
        episodes,
        episode_length: EpisodeLength::Uniform { min: 1, max: 10 },
        state_len: 5,
        actor_hidden: vec![32, 32],
        critic_hidden: vec![32, 32],
        batch_size: 32,
        warmup: 320,
        buffer_capacity: 20_000,
        tau: 0.01,
        actor_lr: 1e-3,
        critic_lr: 1e-2,
        optimizer: OptimizerKind::Sgd,
        seed,
        ..TrainConfig::default()
    }
}
