//! Candidate retrieval plus Total Diversity Effect re-ranking.
//!
//! `TDE(c_i) = sum_{j != i} (1 - cos(c_i, c_j))` over the whole candidate
//! set; the list keeps the `N` candidates with the largest TDE.

use crate::ann::{Forest, Neighbor};
use crate::error::{Error, Result};
use crate::scalar::{dot, norm, Scalar};
use log::warn;
use std::cmp::Ordering;
use std::collections::HashSet;

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<F> {
    pub index: usize,
    pub vector: Vec<F>,
    /// Angular distance to the proto-action.
    pub distance: F,
}

/// Candidates in ascending `(distance, index)` order without repeats.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet<F> {
    items: Vec<Candidate<F>>,
}

impl<F: Scalar> CandidateSet<F> {
    /// Accepts an already ordered candidate list, rejecting repeats or
    /// out-of-order entries.
    pub fn new(items: Vec<Candidate<F>>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(items.len());
        for c in &items {
            if !seen.insert(c.index) {
                return Err(Error::InvalidCandidates(format!("item {} appears twice", c.index)));
            }
            if !c.distance.is_finite() || !c.vector.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidCandidates(format!("item {} is not finite", c.index)));
            }
        }
        for w in items.windows(2) {
            if candidate_order(&w[0], &w[1]) != Ordering::Less {
                return Err(Error::InvalidCandidates(format!(
                    "item {} is out of order",
                    w[1].index
                )));
            }
        }
        Ok(CandidateSet { items })
    }

    /// Sorts into canonical order first; repeats are still rejected.
    pub fn from_unsorted(mut items: Vec<Candidate<F>>) -> Result<Self> {
        items.sort_by(candidate_order);
        Self::new(items)
    }

    pub fn from_neighbors(forest: &Forest<F>, neighbors: &[Neighbor<F>]) -> Result<Self> {
        Self::new(
            neighbors
                .iter()
                .map(|n| Candidate {
                    index: n.index,
                    vector: forest.item(n.index).to_vec(),
                    distance: n.distance,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Candidate<F>] {
        &self.items
    }
}

fn candidate_order<F: Scalar>(a: &Candidate<F>, b: &Candidate<F>) -> Ordering {
    a.distance
        .partial_cmp(&b.distance)
        .unwrap_or(Ordering::Equal)
        .then(a.index.cmp(&b.index))
}

/// TDE of every candidate, in candidate order.
pub fn tde_scores<F: Scalar>(c: &CandidateSet<F>) -> Result<Vec<F>> {
    let n = c.len();
    if n < 2 {
        return Err(Error::TdeUndefined(n));
    }
    let norms: Vec<F> = c.items.iter().map(|x| norm(&x.vector)).collect();
    let mut scores = vec![F::zero(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let denom = norms[i] * norms[j];
            let cos = if denom > F::zero() {
                dot(&c.items[i].vector, &c.items[j].vector) / denom
            } else {
                F::zero()
            };
            let d = F::one() - cos;
            scores[i] += d;
            scores[j] += d;
        }
    }
    Ok(scores)
}

/// TDE of the `i`-th candidate.
pub fn tde_score<F: Scalar>(i: usize, c: &CandidateSet<F>) -> Result<F> {
    if i >= c.len() {
        return Err(Error::InvalidCandidates(format!("index {i} out of range")));
    }
    Ok(tde_scores(c)?[i])
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecommendedItem<F> {
    pub index: usize,
    pub vector: Vec<F>,
    pub tde: F,
    pub distance: F,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecommendationList<F> {
    pub items: Vec<RecommendedItem<F>>,
}

impl<F: Scalar> RecommendationList<F> {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.items.iter().map(|x| x.index).collect()
    }

    pub fn vectors(&self) -> Vec<&[F]> {
        self.items.iter().map(|x| x.vector.as_slice()).collect()
    }
}

/// The `n` candidates with the largest TDE, descending; ties go to the
/// candidate closer to the proto-action, then the smaller index.
pub fn diversify<F: Scalar>(c: &CandidateSet<F>, n: usize) -> RecommendationList<F> {
    if n > c.len() {
        warn!("asked for {n} items from {} candidates", c.len());
    }
    let scores = match c.len() {
        0 => return RecommendationList::default(),
        1 => vec![F::zero()],
        _ => tde_scores(c).expect("two or more candidates"),
    };
    let mut order: Vec<usize> = (0..c.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| candidate_order(&c.items[a], &c.items[b]))
    });
    order.truncate(n);
    RecommendationList {
        items: order
            .into_iter()
            .map(|i| RecommendedItem {
                index: c.items[i].index,
                vector: c.items[i].vector.clone(),
                tde: scores[i],
                distance: c.items[i].distance,
            })
            .collect(),
    }
}

/// Candidates for `proto_action` with `exclude` removed. If fewer than `n`
/// survive, the query is repeated once with `2k`. At most `k` survivors are
/// kept.
pub fn retrieve_candidates<F: Scalar>(
    proto_action: &[F],
    forest: &Forest<F>,
    k: usize,
    n: usize,
    exclude: &HashSet<usize>,
) -> Result<CandidateSet<F>> {
    let survivors = |k: usize| -> Result<Vec<Neighbor<F>>> {
        Ok(forest
            .query(proto_action, k)?
            .into_iter()
            .filter(|nb| !exclude.contains(&nb.index))
            .collect())
    };
    let mut found = survivors(k)?;
    if found.len() < n && k < forest.len() {
        found = survivors(2 * k)?;
        found.truncate(k);
    }
    if found.len() < n {
        warn!("only {} candidates left after exclusion, wanted {n}", found.len());
    }
    CandidateSet::from_neighbors(forest, &found)
}

/// Retrieve `k` candidates near the proto-action and keep the `n` most
/// diverse.
pub fn recommend<F: Scalar>(
    proto_action: &[F],
    forest: &Forest<F>,
    k: usize,
    n: usize,
    exclude: &HashSet<usize>,
) -> Result<RecommendationList<F>> {
    let c = retrieve_candidates(proto_action, forest, k, n, exclude)?;
    Ok(diversify(&c, n))
}

/// The plain nearest-`n` list (no diversification), with TDE scores taken
/// over the same `k` candidates for comparison.
pub fn nearest_list<F: Scalar>(
    proto_action: &[F],
    forest: &Forest<F>,
    k: usize,
    n: usize,
    exclude: &HashSet<usize>,
) -> Result<RecommendationList<F>> {
    let c = retrieve_candidates(proto_action, forest, k, n, exclude)?;
    let scores = if c.len() >= 2 {
        tde_scores(&c)?
    } else {
        vec![F::zero(); c.len()]
    };
    Ok(RecommendationList {
        items: c
            .items
            .iter()
            .zip(scores)
            .take(n)
            .map(|(x, tde)| RecommendedItem {
                index: x.index,
                vector: x.vector.clone(),
                tde,
                distance: x.distance,
            })
            .collect(),
    })
}
