mod common;

use common::*;
use drlir_core::ann::{Forest, ForestParams};
use drlir_core::diversify::recommend;
use drlir_core::env::*;
use drlir_core::pmf::EmbeddingModel;
use drlir_core::state::UserState;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

fn random_model(seed: u64, users: usize, items: usize, dim: usize) -> EmbeddingModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EmbeddingModel::from_parts(
        dim,
        (1..=users as u32).collect(),
        random_vec(users * dim, -1.2, 1.2, &mut rng),
        (1..=items as u32).collect(),
        random_vec(items * dim, -1.2, 1.2, &mut rng),
    )
    .unwrap()
}

#[test]
fn ild_and_rating_avg_match_oracles() {
    let m = random_model(1, 5, 100, 6);
    let sim = Simulator::new(&m, 1.8);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let list: Vec<usize> = (0..10).map(|_| rng.random_range(0..100)).collect();
        let vs: Vec<Vec<f64>> = list.iter().map(|&i| m.item_row_vector(i).to_vec()).collect();
        let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
        assert!((ild(&refs) - ild_oracle(&vs)).abs() < 1e-12);
        let u = rng.random_range(0..5);
        let ratings = sim.ratings(u, &list);
        let mean = ratings.iter().sum::<f64>() / 10.0;
        assert!((rating_avg(&ratings) - mean).abs() < 1e-12);
        let (_, d, avg, r) = sim.score(u, &list);
        assert!((r - (d * avg - 1.8)).abs() < 1e-12);
    }
}

#[test]
fn reference_configuration_steps_keep_their_invariants() {
    let m = random_model(3, 20, 400, 16);
    let forest = Forest::build(m.item_matrix(), 16, &ForestParams::with_seed(4)).unwrap();
    let sim = Simulator::new(&m, 1.8);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut state = UserState::new((0..10).collect()).unwrap();
    for _ in 0..1000 {
        let user = rng.random_range(0..20);
        let q = random_vec(16, -1.0, 1.0, &mut rng);
        let exclude: HashSet<usize> = state.items().iter().copied().collect();
        let list = recommend(&q, &forest, 30, 10, &exclude).unwrap().indices();
        let o = sim.step(user, &state, &list).unwrap();
        assert_eq!(o.ratings.len(), list.len());
        assert!(o.ratings.iter().all(|r| (1.0..=5.0).contains(r)));
        let expected: Vec<usize> = list.iter().zip(&o.ratings).filter(|(_, &r)| r >= 3.0).map(|(&i, _)| i).collect();
        assert_eq!(o.positives, expected);
        assert!((o.reward - (o.ild * o.rating_avg - 1.8)).abs() < 1e-12);
        assert!(o.reward >= -1.8 && o.reward <= 3.2);
        assert_eq!(o.next_state, state.update(&o.positives));
        state = o.next_state;
    }
}

#[test]
fn step_log_file_has_one_row_per_step() {
    let m = random_model(6, 2, 30, 4);
    let sim = Simulator::new(&m, 1.8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("steps.csv");
    let mut log = StepLog::new(std::fs::File::create(&path).unwrap()).unwrap();
    let state = UserState::new(vec![0, 1, 2]).unwrap();
    for step in 0..4 {
        let o = sim.step(1, &state, &[3, 4, 5, 6]).unwrap();
        log.record(0, step, 2, &o).unwrap();
    }
    log.finish().unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().nth(4).unwrap().starts_with("0,3,2,"));
}

proptest! {
    #[test]
    fn reward_never_falls_when_one_rating_rises(
        seed in any::<u64>(),
        which in 0usize..6,
        bump in 0.0f64..4.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vs: Vec<Vec<f64>> = (0..6).map(|_| random_vec(5, -1.0, 1.0, &mut rng)).collect();
        let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
        let mut ratings: Vec<f64> = (0..6).map(|_| rng.random_range(1.0..5.0)).collect();
        let d = ild(&refs);
        let before = reward(d, rating_avg(&ratings), 1.8);
        ratings[which] = (ratings[which] + bump).min(5.0);
        prop_assert!(reward(d, rating_avg(&ratings), 1.8) >= before);
        prop_assert!((0.0..=1.0).contains(&d));
    }
}
