mod common;

use common::*;
use drlir_core::data::{build_histories, RatingEvent};
use drlir_core::pmf::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ev(user: u32, item: u32, rating: u8, timestamp: i64) -> RatingEvent {
    RatingEvent {
        user,
        item,
        rating,
        timestamp,
    }
}

#[test]
fn observation_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model: EmbeddingModel<f64> = random_model(vec![1, 2, 3], vec![1, 2, 3], 4, 1.0, &mut rng).unwrap();
    for (ur, ir, rating) in [(0, 0, 5.0), (1, 2, 1.0), (2, 1, 3.0)] {
        let u = model.user_row_vector(ur).to_vec();
        let v = model.item_row_vector(ir).to_vec();
        let (gu, gv) = observation_gradient(&u, &v, rating, 0.02, 0.05);
        let fdu = central_diff(&u, 1e-3, |x| observation_loss(x, &v, rating, 0.02, 0.05));
        let fdv = central_diff(&v, 1e-3, |x| observation_loss(&u, x, rating, 0.02, 0.05));
        assert!(rel_err(&gu, &fdu) <= 1e-4, "{gu:?} vs {fdu:?}");
        assert!(rel_err(&gv, &fdv) <= 1e-4);
    }
}

#[test]
fn training_loss_falls() {
    let events: Vec<_> = (1..=6u32)
        .flat_map(|u| (1..=8u32).map(move |i| ev(u, i, ((u + i) % 5 + 1) as u8, (u * 10 + i) as i64)))
        .collect();
    let hist = build_histories(&events);
    let mut hp = PmfHyperparams::with_seed(1);
    hp.epochs = 200;
    hp.init_scale = 0.3;
    let fit = train_pmf::<f64>(&hist, 6, &hp).unwrap();
    assert!(fit.epoch_losses.last().unwrap() < &(fit.epoch_losses[0] * 0.5));
    let (r, n) = rmse(&fit.model, &events);
    assert_eq!(n, events.len());
    assert!(r < 1.0);
}

#[test]
fn identical_histories_give_identical_predictions() {
    let base = [(1u32, 5u8), (2, 4), (3, 1)];
    let mk = |a: u32, b: u32| -> Vec<RatingEvent> {
        base.iter()
            .enumerate()
            .flat_map(|(t, &(i, r))| [ev(a, i, r, t as i64), ev(b, i, r, t as i64)])
            .chain([ev(9, 1, 2, 0), ev(9, 3, 5, 1)])
            .collect()
    };
    let hp = PmfHyperparams::with_seed(4);
    let m1 = train_pmf::<f64>(&build_histories(&mk(1, 2)), 5, &hp).unwrap().model;
    let m2 = train_pmf::<f64>(&build_histories(&mk(2, 1)), 5, &hp).unwrap().model;
    for item in 1..=3 {
        assert_eq!(m1.predict_rating(1, item).unwrap(), m2.predict_rating(1, item).unwrap());
        assert_eq!(m1.predict_rating(2, item).unwrap(), m2.predict_rating(2, item).unwrap());
    }
}

#[test]
fn movielens_item_vectors_are_finite_and_stable() {
    let events = drlir_core::data::parse_ratings(ml100k_path(), drlir_core::data::RatingFormat::Ml100k).unwrap();
    let d = drlir_core::data::prepare(&events, &Default::default());
    let mut hp = PmfHyperparams::with_seed(5);
    hp.epochs = 5;
    let m = train_pmf::<f64>(&d.ratings.train, 100, &hp).unwrap().model;
    for &item in m.item_ids() {
        let v = m.item_vector(item).unwrap();
        assert_eq!(v.len(), 100);
        assert!(v.iter().all(|x| x.is_finite()));
        assert_eq!(v, m.item_vector(item).unwrap());
    }
    for h in d.ratings.train.values() {
        for e in &h.events {
            let p = m.predict_rating(e.user, e.item).unwrap();
            assert!((1.0..=5.0).contains(&p));
        }
    }
}

#[test]
fn model_files_round_trip_with_sidecar() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let m: EmbeddingModel<f64> = random_model(vec![4, 9], vec![3, 7, 8], 5, 0.5, &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("model.bin");
    let ids = dir.path().join("model.bin.ids.json");
    drlir_core::persist::atomic_write(&bin, &m.to_bytes()).unwrap();
    drlir_core::persist::atomic_write(&ids, m.id_map_json().as_bytes()).unwrap();
    let back =
        EmbeddingModel::<f64>::from_bytes(&std::fs::read(&bin).unwrap(), &std::fs::read_to_string(&ids).unwrap()).unwrap();
    assert_eq!(back, m.quantized());
    assert_eq!(back.user_ids(), &[4, 9]);
    let as_f32 = EmbeddingModel::<f32>::from_bytes(&m.to_bytes(), &m.id_map_json()).unwrap();
    assert_eq!(as_f32.item_vector(7).unwrap()[0] as f64, back.item_vector(7).unwrap()[0]);
}

#[test]
fn f32_and_f64_training_agree_closely() {
    let events: Vec<_> = (1..=4u32)
        .flat_map(|u| (1..=5u32).map(move |i| ev(u, i, ((u * i) % 5 + 1) as u8, i as i64)))
        .collect();
    let hist = build_histories(&events);
    let hp = PmfHyperparams::with_seed(7);
    let a = train_pmf::<f64>(&hist, 8, &hp).unwrap().model;
    let b = train_pmf::<f32>(&hist, 8, &hp).unwrap().model;
    for e in &events {
        let pa = a.predict_rating(e.user, e.item).unwrap();
        let pb = b.predict_rating(e.user, e.item).unwrap() as f64;
        assert!((pa - pb).abs() < 1e-3, "{pa} vs {pb}");
    }
}
