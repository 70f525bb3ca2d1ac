//! Probabilistic matrix factorization: user/item embeddings trained by SGD
//! on squared error with L2 penalties. The trained model doubles as the
//! simulated user's rating oracle.

use crate::data::UserHistory;
use crate::error::{Error, Result};
use crate::persist::{ByteReader, ByteWriter};
use crate::scalar::{all_finite, dot, Scalar};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};

pub const MIN_RATING: f64 = 1.0;
pub const MAX_RATING: f64 = 5.0;

const MAGIC: &[u8; 8] = b"DRLIRPMF";
const FORMAT_VERSION: u32 = 1;

/// User and item factor matrices with their raw-id mappings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel<F> {
    dim: usize,
    user_ids: Vec<u32>,
    item_ids: Vec<u32>,
    user_rows: HashMap<u32, usize>,
    item_rows: HashMap<u32, usize>,
    /// `num_users x dim`, row-major.
    user_vectors: Vec<F>,
    /// `num_items x dim`, row-major.
    item_vectors: Vec<F>,
}

impl<F: Scalar> EmbeddingModel<F> {
    /// Assembles a model from explicit rows. Ids must be unique and every
    /// component finite.
    pub fn from_parts(
        dim: usize,
        user_ids: Vec<u32>,
        user_vectors: Vec<F>,
        item_ids: Vec<u32>,
        item_vectors: Vec<F>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding width must be positive".into()));
        }
        if user_vectors.len() != user_ids.len() * dim {
            return Err(Error::Dimension {
                what: "user matrix",
                expected: user_ids.len() * dim,
                actual: user_vectors.len(),
            });
        }
        if item_vectors.len() != item_ids.len() * dim {
            return Err(Error::Dimension {
                what: "item matrix",
                expected: item_ids.len() * dim,
                actual: item_vectors.len(),
            });
        }
        if !all_finite(&user_vectors) || !all_finite(&item_vectors) {
            return Err(Error::NonFinite("embedding model".into()));
        }
        let user_rows = index_ids(&user_ids, "user")?;
        let item_rows = index_ids(&item_ids, "item")?;
        Ok(EmbeddingModel {
            dim,
            user_ids,
            item_ids,
            user_rows,
            item_rows,
            user_vectors,
            item_vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn user_ids(&self) -> &[u32] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[u32] {
        &self.item_ids
    }

    pub fn user_row(&self, user: u32) -> Result<usize> {
        self.user_rows.get(&user).copied().ok_or(Error::UnknownUser(user))
    }

    pub fn item_row(&self, item: u32) -> Result<usize> {
        self.item_rows.get(&item).copied().ok_or(Error::UnknownItem(item))
    }

    pub fn item_id(&self, row: usize) -> u32 {
        self.item_ids[row]
    }

    pub fn user_vector(&self, user: u32) -> Result<&[F]> {
        Ok(self.user_row_vector(self.user_row(user)?))
    }

    pub fn item_vector(&self, item: u32) -> Result<&[F]> {
        Ok(self.item_row_vector(self.item_row(item)?))
    }

    pub fn user_row_vector(&self, row: usize) -> &[F] {
        &self.user_vectors[row * self.dim..(row + 1) * self.dim]
    }

    pub fn item_row_vector(&self, row: usize) -> &[F] {
        &self.item_vectors[row * self.dim..(row + 1) * self.dim]
    }

    /// The whole item matrix, row-major.
    pub fn item_matrix(&self) -> &[F] {
        &self.item_vectors
    }

    /// Unclamped `U_u . V_i`.
    pub fn raw_score_rows(&self, user_row: usize, item_row: usize) -> F {
        dot(self.user_row_vector(user_row), self.item_row_vector(item_row))
    }

    /// `clamp(U_u . V_i, 1, 5)`.
    pub fn predict_rating(&self, user: u32, item: u32) -> Result<F> {
        Ok(self.predict_rating_rows(self.user_row(user)?, self.item_row(item)?))
    }

    pub fn predict_rating_rows(&self, user_row: usize, item_row: usize) -> F {
        clamp_rating(self.raw_score_rows(user_row, item_row))
    }

    /// Serializes the factor matrices: magic, version, `m`, user and item
    /// counts, then both matrices as little-endian `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.bytes(MAGIC);
        w.u32(FORMAT_VERSION);
        w.u32(self.dim as u32);
        w.u32(self.num_users() as u32);
        w.u32(self.num_items() as u32);
        for v in self.user_vectors.iter().chain(&self.item_vectors) {
            w.f32(v.to_f32().unwrap_or(f32::NAN));
        }
        w.buf
    }

    /// The sidecar id map, JSON.
    pub fn id_map_json(&self) -> String {
        serde_json::to_string(&IdMap {
            version: FORMAT_VERSION,
            users: self.user_ids.clone(),
            items: self.item_ids.clone(),
        })
        .expect("id map serializes")
    }

    pub fn from_bytes(bytes: &[u8], id_map_json: &str) -> Result<Self> {
        let ids: IdMap = serde_json::from_str(id_map_json)?;
        if ids.version != FORMAT_VERSION {
            return Err(Error::Version {
                kind: "embedding id map",
                expected: FORMAT_VERSION,
                found: ids.version,
            });
        }
        let mut r = ByteReader::new("embedding model", bytes);
        r.expect_magic(MAGIC)?;
        r.expect_version(FORMAT_VERSION)?;
        let dim = r.u32()? as usize;
        let num_users = r.u32()? as usize;
        let num_items = r.u32()? as usize;
        if num_users != ids.users.len() || num_items != ids.items.len() {
            return Err(r.error("id map does not match matrix sizes"));
        }
        let mut read = |n: usize| -> Result<Vec<F>> {
            (0..n)
                .map(|_| Ok(F::lit(r.f32()? as f64)))
                .collect()
        };
        let users = read(num_users * dim)?;
        let items = read(num_items * dim)?;
        r.finish()?;
        EmbeddingModel::from_parts(dim, ids.users, users, ids.items, items)
    }

    /// Rounds every component through `f32`, giving the exact values a
    /// save/load round trip produces.
    pub fn quantized(&self) -> Self {
        let q = |v: &Vec<F>| v.iter().map(|x| F::lit(x.to_f32().unwrap() as f64)).collect();
        EmbeddingModel {
            user_vectors: q(&self.user_vectors),
            item_vectors: q(&self.item_vectors),
            ..self.clone()
        }
    }
}

#[derive(Serialize, Deserialize)]
struct IdMap {
    version: u32,
    users: Vec<u32>,
    items: Vec<u32>,
}

fn index_ids(ids: &[u32], kind: &str) -> Result<HashMap<u32, usize>> {
    let mut map = HashMap::with_capacity(ids.len());
    for (row, &id) in ids.iter().enumerate() {
        if map.insert(id, row).is_some() {
            return Err(Error::Config(format!("duplicate {kind} id {id}")));
        }
    }
    Ok(map)
}

/// Clamps into `[1, 5]`; NaN maps to the floor.
pub fn clamp_rating<F: Scalar>(x: F) -> F {
    if x.is_nan() {
        return F::lit(MIN_RATING);
    }
    x.max(F::lit(MIN_RATING)).min(F::lit(MAX_RATING))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmfHyperparams {
    pub learning_rate: f64,
    pub l2_user: f64,
    pub l2_item: f64,
    pub epochs: usize,
    /// Factors start uniform in `(-init_scale, init_scale)`.
    pub init_scale: f64,
    pub seed: u64,
}

impl PmfHyperparams {
    /// Default knobs (lr 0.01, l2 0.02, 50 epochs, init 0.05) for a given seed.
    pub fn with_seed(seed: u64) -> Self {
        PmfHyperparams {
            learning_rate: 0.01,
            l2_user: 0.02,
            l2_item: 0.02,
            epochs: 50,
            init_scale: 0.05,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.l2_user >= 0.0
            && self.l2_item >= 0.0
            && self.init_scale > 0.0
            && self.learning_rate.is_finite();
        if !ok {
            return Err(Error::Config(format!("invalid pmf hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// One observed rating in row coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub user_row: usize,
    pub item_row: usize,
    pub rating: f64,
}

/// Loss of one observation:
/// `(r - u.v)^2 + l2_user |u|^2 + l2_item |v|^2`.
pub fn observation_loss<F: Scalar>(u: &[F], v: &[F], rating: F, l2_user: F, l2_item: F) -> F {
    let e = rating - dot(u, v);
    e * e + l2_user * dot(u, u) + l2_item * dot(v, v)
}

/// Gradient of [`observation_loss`] with respect to `u` and `v`.
pub fn observation_gradient<F: Scalar>(
    u: &[F],
    v: &[F],
    rating: F,
    l2_user: F,
    l2_item: F,
) -> (Vec<F>, Vec<F>) {
    let two = F::lit(2.0);
    let e = rating - dot(u, v);
    let gu = u.iter().zip(v).map(|(&a, &b)| -two * e * b + two * l2_user * a).collect();
    let gv = u.iter().zip(v).map(|(&a, &b)| -two * e * a + two * l2_item * b).collect();
    (gu, gv)
}

/// Fresh model with factors drawn uniformly from `(-scale, scale)`, users
/// first, then items, from `rng`.
pub fn random_model<F: Scalar, R: Rng>(
    user_ids: Vec<u32>,
    item_ids: Vec<u32>,
    dim: usize,
    scale: f64,
    rng: &mut R,
) -> Result<EmbeddingModel<F>> {
    let mut draw = |n: usize| -> Vec<F> {
        (0..n)
            .map(|_| F::lit(rng.random_range(-scale..scale)))
            .collect()
    };
    let users = draw(user_ids.len() * dim);
    let items = draw(item_ids.len() * dim);
    EmbeddingModel::from_parts(dim, user_ids, users, item_ids, items)
}

/// Runs `hp.epochs` SGD passes over `observations`, visiting them in an
/// order reshuffled each epoch by `rng`. Returns the per-epoch objective:
/// squared errors accumulated during the pass plus the L2 terms at its end.
pub fn fit_observations<F: Scalar, R: Rng>(
    model: &mut EmbeddingModel<F>,
    observations: &[Observation],
    hp: &PmfHyperparams,
    rng: &mut R,
) -> Result<Vec<f64>> {
    hp.validate()?;
    let dim = model.dim;
    let lr = F::lit(hp.learning_rate);
    let two = F::lit(2.0);
    let (l2u, l2i) = (F::lit(hp.l2_user), F::lit(hp.l2_item));
    let mut order: Vec<usize> = (0..observations.len()).collect();
    let mut losses = Vec::with_capacity(hp.epochs);
    let mut u_old = vec![F::zero(); dim];
    for epoch in 0..hp.epochs {
        order.shuffle(rng);
        let mut sq_err = 0.0f64;
        for &idx in &order {
            let obs = observations[idx];
            let e = F::lit(obs.rating) - model.raw_score_rows(obs.user_row, obs.item_row);
            sq_err += (e * e).as_f64();
            u_old.copy_from_slice(model.user_row_vector(obs.user_row));
            {
                let v = &model.item_vectors[obs.item_row * dim..(obs.item_row + 1) * dim];
                let u = &mut model.user_vectors[obs.user_row * dim..(obs.user_row + 1) * dim];
                for (a, &b) in u.iter_mut().zip(v) {
                    *a -= lr * (-two * e * b + two * l2u * *a);
                }
            }
            let v = &mut model.item_vectors[obs.item_row * dim..(obs.item_row + 1) * dim];
            for (b, &a) in v.iter_mut().zip(&u_old) {
                *b -= lr * (-two * e * a + two * l2i * *b);
            }
        }
        let reg = hp.l2_user * dot(&model.user_vectors, &model.user_vectors).as_f64()
            + hp.l2_item * dot(&model.item_vectors, &model.item_vectors).as_f64();
        let loss = sq_err + reg;
        if !loss.is_finite() {
            return Err(Error::PmfDiverged { epoch });
        }
        log::debug!("pmf epoch {epoch}: loss {loss:.4}");
        losses.push(loss);
    }
    Ok(losses)
}

#[derive(Debug, Clone)]
pub struct PmfFit<F> {
    pub model: EmbeddingModel<F>,
    pub epoch_losses: Vec<f64>,
}

/// Trains embeddings of width `dim` on every event in `train`. Users and
/// items get rows in ascending id order.
pub fn train_pmf<F: Scalar>(
    train: &BTreeMap<u32, UserHistory>,
    dim: usize,
    hp: &PmfHyperparams,
) -> Result<PmfFit<F>> {
    hp.validate()?;
    let user_ids: Vec<u32> = train
        .iter()
        .filter(|(_, h)| !h.is_empty())
        .map(|(&u, _)| u)
        .collect();
    let item_ids: Vec<u32> = train
        .values()
        .flat_map(|h| h.items())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if user_ids.is_empty() {
        return Err(Error::Config("cannot train embeddings on an empty split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut model = random_model(user_ids, item_ids, dim, hp.init_scale, &mut rng)?;
    let observations: Vec<Observation> = train
        .values()
        .flat_map(|h| h.events.iter())
        .map(|e| Observation {
            user_row: model.user_rows[&e.user],
            item_row: model.item_rows[&e.item],
            rating: e.rating as f64,
        })
        .collect();
    let epoch_losses = fit_observations(&mut model, &observations, hp, &mut rng)?;
    if !all_finite(&model.user_vectors) || !all_finite(&model.item_vectors) {
        return Err(Error::PmfDiverged { epoch: hp.epochs });
    }
    Ok(PmfFit {
        model,
        epoch_losses,
    })
}

/// Root mean squared error of clamped predictions over the events whose user
/// and item the model knows. Returns `(rmse, scored_count)`.
pub fn rmse<'a, F: Scalar>(
    model: &EmbeddingModel<F>,
    events: impl IntoIterator<Item = &'a crate::data::RatingEvent>,
) -> (f64, usize) {
    let mut sum = 0.0;
    let mut count = 0usize;
    for e in events {
        if let Ok(p) = model.predict_rating(e.user, e.item) {
            let d = p.as_f64() - e.rating as f64;
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return (0.0, 0);
    }
    ((sum / count as f64).sqrt(), count)
}
