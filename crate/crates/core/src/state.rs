//! User state: the latest `n` positive items, oldest first, and its flat
//! encoding with sinusoidal positional encodings added.

use crate::error::{Error, Result};
use crate::pmf::EmbeddingModel;
use crate::scalar::Scalar;
use log::debug;

/// Item rows (of the embedding model) of the latest positive interactions,
/// oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UserState {
    items: Vec<usize>,
}

impl UserState {
    pub fn new(items: Vec<usize>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Config("a user state needs at least one item".into()));
        }
        Ok(UserState { items })
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Drops the `r` oldest items and appends the `r` positives in order.
    /// No positives leaves the state unchanged; more than `n` positives keeps
    /// only the newest `n`.
    pub fn update(&self, positives: &[usize]) -> UserState {
        let n = self.items.len();
        let r = positives.len();
        if r == 0 {
            return self.clone();
        }
        if r > n {
            debug!("{r} positives exceed state length {n}; keeping the newest {n}");
            return UserState {
                items: positives[r - n..].to_vec(),
            };
        }
        let mut items = Vec::with_capacity(n);
        items.extend_from_slice(&self.items[r..]);
        items.extend_from_slice(positives);
        UserState { items }
    }
}

/// Sinusoidal encoding of a 1-based position: component `2i` is
/// `sin(pos / 10000^(2i/d))`, component `2i+1` the matching cosine.
pub fn positional_encoding<F: Scalar>(pos: usize, d_model: usize) -> Result<Vec<F>> {
    if d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "positional encoding needs an even width, got {d_model}"
        )));
    }
    if pos == 0 {
        return Err(Error::Config("positions are 1-based".into()));
    }
    let mut out = Vec::with_capacity(d_model);
    for i in 0..d_model / 2 {
        let angle = pos as f64 / 10000f64.powf((2 * i) as f64 / d_model as f64);
        out.push(F::lit(angle.sin()));
        out.push(F::lit(angle.cos()));
    }
    Ok(out)
}

/// Flattens states into actor input, `n * m` long.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEncoder<F> {
    state_len: usize,
    dim: usize,
    use_pe: bool,
    /// `state_len x dim` encodings for positions `1..=state_len`.
    table: Vec<F>,
}

impl<F: Scalar> StateEncoder<F> {
    pub fn new(state_len: usize, dim: usize, use_pe: bool) -> Result<Self> {
        let table = if use_pe {
            let mut t = Vec::with_capacity(state_len * dim);
            for pos in 1..=state_len {
                t.extend(positional_encoding::<F>(pos, dim)?);
            }
            t
        } else {
            Vec::new()
        };
        Ok(StateEncoder {
            state_len,
            dim,
            use_pe,
            table,
        })
    }

    pub fn state_len(&self) -> usize {
        self.state_len
    }

    pub fn output_len(&self) -> usize {
        self.state_len * self.dim
    }

    pub fn uses_pe(&self) -> bool {
        self.use_pe
    }

    pub fn encode(&self, state: &UserState, model: &EmbeddingModel<F>) -> Result<Vec<F>> {
        if state.len() != self.state_len {
            return Err(Error::Dimension {
                what: "user state",
                expected: self.state_len,
                actual: state.len(),
            });
        }
        if model.dim() != self.dim {
            return Err(Error::Dimension {
                what: "embedding width",
                expected: self.dim,
                actual: model.dim(),
            });
        }
        let mut out = Vec::with_capacity(self.output_len());
        for (slot, &row) in state.items().iter().enumerate() {
            if row >= model.num_items() {
                return Err(Error::ItemRowOutOfRange(row));
            }
            let e = model.item_row_vector(row);
            if self.use_pe {
                let pe = &self.table[slot * self.dim..(slot + 1) * self.dim];
                out.extend(e.iter().zip(pe).map(|(&a, &b)| a + b));
            } else {
                out.extend_from_slice(e);
            }
        }
        Ok(out)
    }
}

/// One-off encoding; prefer a reused [`StateEncoder`] in loops.
pub fn encode_state<F: Scalar>(
    state: &UserState,
    model: &EmbeddingModel<F>,
    use_pe: bool,
) -> Result<Vec<F>> {
    StateEncoder::new(state.len(), model.dim(), use_pe)?.encode(state, model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(items: impl IntoIterator<Item = usize>) -> UserState {
        UserState::new(items.into_iter().collect()).unwrap()
    }

    #[test]
    fn no_positives_is_a_fixpoint() {
        let s = state(1..=10);
        assert_eq!(s.update(&[]), s);
    }

    #[test]
    fn single_positive_shifts_by_one() {
        assert_eq!(state(1..=10).update(&[42]).items(), &[2, 3, 4, 5, 6, 7, 8, 9, 10, 42]);
    }

    #[test]
    fn three_positives_shift_by_three() {
        assert_eq!(state(1..=10).update(&[91, 92, 93]).items(), &[4, 5, 6, 7, 8, 9, 10, 91, 92, 93]);
    }

    #[test]
    fn too_many_positives_keep_the_newest() {
        let s = state(1..=3).update(&[7, 8, 9, 10, 11]);
        assert_eq!(s.items(), &[9, 10, 11]);
    }

    #[test]
    fn pe_first_pair_at_position_one() {
        let pe: Vec<f64> = positional_encoding(1, 100).unwrap();
        assert!((pe[0] - 0.8414709848078965).abs() < 1e-15);
        assert!((pe[1] - 0.5403023058681398).abs() < 1e-15);
    }

    #[test]
    fn pe_last_pair_at_position_one() {
        let pe: Vec<f64> = positional_encoding(1, 100).unwrap();
        // 10000^(-98/100) evaluated independently
        assert!((pe[98] - 1.2022644317210784e-4).abs() < 1e-18);
        assert!((pe[99] - 0.9999999927728012).abs() < 1e-15);
    }

    #[test]
    fn pe_at_position_one_lies_in_unit_interval() {
        let pe: Vec<f64> = positional_encoding(1, 100).unwrap();
        assert!(pe.iter().all(|&x| x > 0.0 && x <= 1.0));
    }

    #[test]
    fn pe_rejects_odd_width_and_position_zero() {
        assert!(positional_encoding::<f64>(1, 7).is_err());
        assert!(positional_encoding::<f64>(0, 8).is_err());
    }

    #[test]
    fn positions_are_distinguishable() {
        let pes: Vec<Vec<f64>> = (1..=10).map(|p| positional_encoding(p, 100).unwrap()).collect();
        for a in 0..10 {
            for b in (a + 1)..10 {
                let gap: f64 = pes[a].iter().zip(&pes[b]).map(|(x, y)| (x - y).abs()).sum();
                assert!(gap > 1e-3, "positions {} and {} collide", a + 1, b + 1);
            }
        }
    }

    fn model(items: usize, dim: usize, f: impl Fn(usize) -> f64) -> EmbeddingModel<f64> {
        EmbeddingModel::from_parts(
            dim,
            vec![1],
            vec![0.0; dim],
            (1..=items as u32).collect(),
            (0..items * dim).map(f).collect(),
        )
        .unwrap()
    }

    #[test]
    fn encoding_without_pe_is_plain_concatenation() {
        let m = model(5, 4, |i| i as f64 * 0.25);
        let s = state([3, 0, 4]);
        let enc = encode_state(&s, &m, false).unwrap();
        let expect: Vec<f64> = [3, 0, 4].iter().flat_map(|&r| m.item_row_vector(r).to_vec()).collect();
        assert_eq!(enc, expect);
    }

    #[test]
    fn zero_embeddings_encode_to_pure_pe() {
        let m = model(3, 6, |_| 0.0);
        let enc = encode_state(&state([0, 1, 2]), &m, true).unwrap();
        let pe: Vec<f64> = (1..=3).flat_map(|p| positional_encoding::<f64>(p, 6).unwrap()).collect();
        assert_eq!(enc, pe);
    }

    #[test]
    fn encoding_checks_rows_and_lengths() {
        let m = model(3, 2, |i| i as f64);
        assert!(matches!(encode_state(&state([0, 9]), &m, true), Err(Error::ItemRowOutOfRange(9))));
        let enc = StateEncoder::<f64>::new(3, 2, true).unwrap();
        assert!(enc.encode(&state([0, 1]), &m).is_err());
    }
}
