//! Simulated user: ratings from the embedding model (or held-out data where
//! known), list diversity, average rating and the step reward.

use crate::data::UserHistory;
use crate::error::Result;
use crate::pmf::EmbeddingModel;
use crate::scalar::{cosine, Scalar};
use crate::state::UserState;
use log::warn;
use std::collections::{BTreeMap, HashMap};
use std::io::Write;

/// Ratings at or above this count as positive feedback.
pub const POSITIVE_RATING: f64 = 3.0;

/// Pairwise distance used for list diversity, `(1 - cos) / 2` in `[0, 1]`.
pub fn pair_distance<F: Scalar>(a: &[F], b: &[F]) -> F {
    (F::one() - cosine(a, b)) * F::lit(0.5)
}

/// Mean pairwise distance over unordered pairs. Lists shorter than two have
/// no pairs and score 0.
pub fn ild<F: Scalar>(vectors: &[&[F]]) -> F {
    let n = vectors.len();
    if n < 2 {
        warn!("diversity of a {n}-item list is taken as 0");
        return F::zero();
    }
    let mut sum = F::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            sum += pair_distance(vectors[i], vectors[j]);
        }
    }
    sum * F::lit(2.0) / F::lit((n * (n - 1)) as f64)
}

pub fn rating_avg<F: Scalar>(ratings: &[F]) -> F {
    if ratings.is_empty() {
        return F::zero();
    }
    ratings.iter().copied().sum::<F>() / F::lit(ratings.len() as f64)
}

/// `diversity * rating - lambda`.
pub fn reward<F: Scalar>(ild: F, rating_avg: F, lambda: F) -> F {
    ild * rating_avg - lambda
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<F> {
    /// One rating per recommended item, in list order.
    pub ratings: Vec<F>,
    /// Recommended item rows rated positively, in list order.
    pub positives: Vec<usize>,
    pub reward: F,
    pub ild: F,
    pub rating_avg: F,
    pub next_state: UserState,
}

/// Rating oracle. Known `(user row, item row)` ratings take precedence over
/// the model's predictions.
#[derive(Debug, Clone)]
pub struct Simulator<'a, F> {
    model: &'a EmbeddingModel<F>,
    known: HashMap<(usize, usize), F>,
    lambda: F,
}

impl<'a, F: Scalar> Simulator<'a, F> {
    pub fn new(model: &'a EmbeddingModel<F>, lambda: F) -> Self {
        Simulator {
            model,
            known: HashMap::new(),
            lambda,
        }
    }

    /// Adds every rating of `histories` whose user and item the model knows.
    pub fn with_known(mut self, histories: &BTreeMap<u32, UserHistory>) -> Self {
        for h in histories.values() {
            let Ok(u) = self.model.user_row(h.user) else {
                continue;
            };
            for e in &h.events {
                if let Ok(i) = self.model.item_row(e.item) {
                    self.known.insert((u, i), F::lit(e.rating as f64));
                }
            }
        }
        self
    }

    pub fn model(&self) -> &EmbeddingModel<F> {
        self.model
    }

    pub fn lambda(&self) -> F {
        self.lambda
    }

    pub fn num_known(&self) -> usize {
        self.known.len()
    }

    pub fn rating(&self, user_row: usize, item_row: usize) -> F {
        match self.known.get(&(user_row, item_row)) {
            Some(&r) => r,
            None => self.model.predict_rating_rows(user_row, item_row),
        }
    }

    pub fn ratings(&self, user_row: usize, items: &[usize]) -> Vec<F> {
        items.iter().map(|&i| self.rating(user_row, i)).collect()
    }

    /// Scores a recommended list without moving the state.
    pub fn score(&self, user_row: usize, items: &[usize]) -> (Vec<F>, F, F, F) {
        let ratings = self.ratings(user_row, items);
        let vectors: Vec<&[F]> = items.iter().map(|&i| self.model.item_row_vector(i)).collect();
        let d = ild(&vectors);
        let avg = rating_avg(&ratings);
        (ratings.clone(), d, avg, reward(d, avg, self.lambda))
    }

    pub fn step(&self, user_row: usize, state: &UserState, items: &[usize]) -> Result<StepOutcome<F>> {
        let (ratings, d, avg, r) = self.score(user_row, items);
        let threshold = F::lit(POSITIVE_RATING);
        let positives: Vec<usize> = items
            .iter()
            .zip(&ratings)
            .filter(|(_, &x)| x >= threshold)
            .map(|(&i, _)| i)
            .collect();
        debug_assert!(
            items.is_empty()
                || (r >= -self.lambda - F::lit(1e-9) && r <= F::lit(5.0) - self.lambda + F::lit(1e-9)),
            "reward {r} outside its bounds"
        );
        Ok(StepOutcome {
            next_state: state.update(&positives),
            ratings,
            positives,
            reward: r,
            ild: d,
            rating_avg: avg,
        })
    }
}

/// Writes `episode,step,user,reward,ild,rating_avg,n_positives` rows.
#[derive(Debug)]
pub struct StepLog<W: Write> {
    out: csv::Writer<W>,
}

impl<W: Write> StepLog<W> {
    pub fn new(writer: W) -> Result<Self> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["episode", "step", "user", "reward", "ild", "rating_avg", "n_positives"])?;
        Ok(StepLog { out })
    }

    pub fn record<F: Scalar>(&mut self, episode: usize, step: usize, user: u32, o: &StepOutcome<F>) -> Result<()> {
        self.out.write_record([
            episode.to_string(),
            step.to_string(),
            user.to_string(),
            o.reward.as_f64().to_string(),
            o.ild.as_f64().to_string(),
            o.rating_avg.as_f64().to_string(),
            o.positives.len().to_string(),
        ])?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        self.out
            .into_inner()
            .map_err(|e| crate::error::Error::Io(e.into_error()))
    }
}
