//! Random-hyperplane forest for approximate angular nearest neighbours.
//!
//! Each tree splits its items by the hyperplane equidistant between two
//! randomly sampled items, recursively, until a node holds at most
//! `leaf_size` items. Trees are grown on unit-normalized copies of the
//! vectors so that Euclidean partitions follow angular proximity. Queries
//! walk all trees through one priority queue keyed by the signed distance to
//! the splitting planes.

use crate::error::{Error, Result};
use crate::persist::{ByteReader, ByteWriter};
use crate::scalar::{dot, norm, normalized, Scalar};
use log::{debug, warn};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

const MAGIC: &[u8; 8] = b"DRLIRANN";
const FORMAT_VERSION: u32 = 1;
/// Extra attempts at a non-degenerate split before halving by index.
const SPLIT_RETRIES: usize = 3;

/// `1 - cos(a, b)`, in `[0, 2]`. A zero vector is treated as orthogonal to
/// everything, giving 1.
pub fn angular_distance<F: Scalar>(a: &[F], b: &[F]) -> F {
    let denom = norm(a) * norm(b);
    if denom <= F::zero() {
        return F::one();
    }
    let d = F::one() - dot(a, b) / denom;
    d.max(F::zero()).min(F::lit(2.0))
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode<F> {
    Split {
        /// `p1 - p2` for the two sampled (normalized) items.
        normal: Vec<F>,
        /// `normal . (p1 + p2) / 2`; a point `x` goes right iff
        /// `x . normal - offset > 0`.
        offset: F,
        inv_norm: F,
        left: u32,
        right: u32,
    },
    /// Fallback when no separating plane was found: items halved by index.
    /// Queries treat both halves as equally promising.
    Halves { left: u32, right: u32 },
    Leaf { items: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree<F> {
    nodes: Vec<TreeNode<F>>,
    root: u32,
}

impl<F: Scalar> Tree<F> {
    pub fn nodes(&self) -> &[TreeNode<F>] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.root as usize
    }

    /// Item lists of every leaf, in node order.
    pub fn leaves(&self) -> Vec<&[u32]> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Leaf { items } => Some(items.as_slice()),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub leaf_size: usize,
    pub seed: u64,
}

impl ForestParams {
    /// Five trees, leaves of at most 30 items.
    pub fn with_seed(seed: u64) -> Self {
        ForestParams {
            n_trees: 5,
            leaf_size: 30,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest<F> {
    dim: usize,
    /// Indexed vectors as given, `len x dim` row-major.
    items: Vec<F>,
    trees: Vec<Tree<F>>,
    leaf_size: usize,
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<F> {
    pub index: usize,
    pub distance: F,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueryStats {
    /// Tree nodes popped from the priority queue.
    pub visited_nodes: usize,
    /// Distinct items collected before sorting.
    pub candidates: usize,
}

struct Pending {
    priority: f64,
    tree: u32,
    node: u32,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.tree.cmp(&self.tree))
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl<F: Scalar> Forest<F> {
    /// Builds a forest over `items` (`len / dim` vectors, row-major).
    pub fn build(items: &[F], dim: usize, params: &ForestParams) -> Result<Self> {
        if dim == 0 || items.is_empty() || !items.len().is_multiple_of(dim) {
            return Err(Error::Config(format!(
                "cannot index {} values as vectors of width {dim}",
                items.len()
            )));
        }
        if params.leaf_size == 0 || params.n_trees == 0 {
            return Err(Error::Config("forest needs n_trees >= 1 and leaf_size >= 1".into()));
        }
        if !items.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("indexed vectors".into()));
        }
        let n = items.len() / dim;
        if n > u32::MAX as usize {
            return Err(Error::Config("too many items".into()));
        }
        let unit: Vec<F> = items.chunks_exact(dim).flat_map(normalized).collect();
        let mut master = ChaCha8Rng::seed_from_u64(params.seed);
        let tree_seeds: Vec<u64> = (0..params.n_trees).map(|_| master.next_u64()).collect();
        let trees = tree_seeds
            .iter()
            .map(|&s| grow_tree(&unit, dim, params.leaf_size, &mut ChaCha8Rng::seed_from_u64(s)))
            .collect();
        Ok(Forest {
            dim,
            items: items.to_vec(),
            trees,
            leaf_size: params.leaf_size,
            seed: params.seed,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn trees(&self) -> &[Tree<F>] {
        &self.trees
    }

    pub fn item(&self, index: usize) -> &[F] {
        &self.items[index * self.dim..(index + 1) * self.dim]
    }

    /// Approximate `k` nearest items to `q` by angular distance, with the
    /// default search budget of `n_trees * k` candidates.
    pub fn query(&self, q: &[F], k: usize) -> Result<Vec<Neighbor<F>>> {
        Ok(self.query_with_budget(q, k, None)?.0)
    }

    /// Walks the trees until at least `max(k, budget)` distinct candidates are
    /// collected (or every node was visited), then returns the closest
    /// `min(k, len)` sorted by `(distance, index)`.
    pub fn query_with_budget(
        &self,
        q: &[F],
        k: usize,
        budget: Option<usize>,
    ) -> Result<(Vec<Neighbor<F>>, QueryStats)> {
        if q.len() != self.dim {
            return Err(Error::Dimension {
                what: "query vector",
                expected: self.dim,
                actual: q.len(),
            });
        }
        if k == 0 {
            return Err(Error::Config("query needs k >= 1".into()));
        }
        if !q.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("query vector".into()));
        }
        let n = self.len();
        if k > n {
            debug!("k = {k} exceeds the {n} indexed items; returning all of them");
        }
        let target = k.max(budget.unwrap_or(self.trees.len() * k)).min(n);
        let q_unit = normalized(q);

        let mut seen = vec![false; n];
        let mut pool: Vec<u32> = Vec::with_capacity(target + self.leaf_size);
        let mut stats = QueryStats::default();
        let mut heap: BinaryHeap<Pending> = (0..self.trees.len())
            .map(|t| Pending {
                priority: f64::INFINITY,
                tree: t as u32,
                node: self.trees[t].root,
            })
            .collect();

        while pool.len() < target {
            let Some(Pending { priority, tree, node }) = heap.pop() else {
                break;
            };
            stats.visited_nodes += 1;
            match &self.trees[tree as usize].nodes[node as usize] {
                TreeNode::Leaf { items } => {
                    for &i in items {
                        if !seen[i as usize] {
                            seen[i as usize] = true;
                            pool.push(i);
                        }
                    }
                }
                TreeNode::Split {
                    normal,
                    offset,
                    inv_norm,
                    left,
                    right,
                } => {
                    let margin = ((dot(&q_unit, normal) - *offset) * *inv_norm).as_f64();
                    heap.push(Pending {
                        priority: priority.min(margin),
                        tree,
                        node: *right,
                    });
                    heap.push(Pending {
                        priority: priority.min(-margin),
                        tree,
                        node: *left,
                    });
                }
                TreeNode::Halves { left, right } => {
                    for child in [*left, *right] {
                        heap.push(Pending {
                            priority,
                            tree,
                            node: child,
                        });
                    }
                }
            }
        }
        stats.candidates = pool.len();

        let mut found: Vec<Neighbor<F>> = pool
            .into_iter()
            .map(|i| Neighbor {
                index: i as usize,
                distance: angular_distance(q, self.item(i as usize)),
            })
            .collect();
        sort_neighbors(&mut found);
        found.truncate(k.min(n));
        if found.len() < k.min(n) {
            warn!("forest search found {} of {} requested candidates", found.len(), k);
        }
        Ok((found, stats))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.bytes(MAGIC);
        w.u32(FORMAT_VERSION);
        w.u32(self.len() as u32);
        w.u32(self.dim as u32);
        w.u32(self.trees.len() as u32);
        w.u32(self.leaf_size as u32);
        w.u64(self.seed);
        for x in &self.items {
            w.f64(x.as_f64());
        }
        for tree in &self.trees {
            w.u32(tree.nodes.len() as u32);
            w.u32(tree.root);
            for node in &tree.nodes {
                match node {
                    TreeNode::Leaf { items } => {
                        w.u8(0);
                        w.u32(items.len() as u32);
                        items.iter().for_each(|&i| w.u32(i));
                    }
                    TreeNode::Split {
                        normal,
                        offset,
                        inv_norm,
                        left,
                        right,
                    } => {
                        w.u8(1);
                        w.u32(*left);
                        w.u32(*right);
                        w.f64(offset.as_f64());
                        w.f64(inv_norm.as_f64());
                        normal.iter().for_each(|x| w.f64(x.as_f64()));
                    }
                    TreeNode::Halves { left, right } => {
                        w.u8(2);
                        w.u32(*left);
                        w.u32(*right);
                    }
                }
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new("index", bytes);
        r.expect_magic(MAGIC)?;
        r.expect_version(FORMAT_VERSION)?;
        let n = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let n_trees = r.u32()? as usize;
        let leaf_size = r.u32()? as usize;
        let seed = r.u64()?;
        if dim == 0 || n == 0 {
            return Err(r.error("empty index"));
        }
        let items = (0..n * dim)
            .map(|_| Ok(F::lit(r.f64()?)))
            .collect::<Result<Vec<F>>>()?;
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let count = r.u32()? as usize;
            let root = r.u32()?;
            let mut nodes = Vec::with_capacity(count);
            for _ in 0..count {
                let node = match r.u8()? {
                    0 => {
                        let len = r.u32()? as usize;
                        let items = (0..len).map(|_| r.u32()).collect::<Result<Vec<u32>>>()?;
                        if items.iter().any(|&i| i as usize >= n) {
                            return Err(r.error("leaf item out of range"));
                        }
                        TreeNode::Leaf { items }
                    }
                    1 => {
                        let left = r.u32()?;
                        let right = r.u32()?;
                        let offset = F::lit(r.f64()?);
                        let inv_norm = F::lit(r.f64()?);
                        let normal = (0..dim)
                            .map(|_| Ok(F::lit(r.f64()?)))
                            .collect::<Result<Vec<F>>>()?;
                        TreeNode::Split {
                            normal,
                            offset,
                            inv_norm,
                            left,
                            right,
                        }
                    }
                    2 => TreeNode::Halves {
                        left: r.u32()?,
                        right: r.u32()?,
                    },
                    t => return Err(r.error(format!("unknown node tag {t}"))),
                };
                nodes.push(node);
            }
            let in_range = |c: &u32| (*c as usize) < count;
            let links_ok = (root as usize) < count
                && nodes.iter().all(|nd| match nd {
                    TreeNode::Split { left, right, .. } | TreeNode::Halves { left, right } => {
                        in_range(left) && in_range(right)
                    }
                    TreeNode::Leaf { .. } => true,
                });
            if !links_ok {
                return Err(r.error("node link out of range"));
            }
            trees.push(Tree { nodes, root });
        }
        r.finish()?;
        Ok(Forest {
            dim,
            items,
            trees,
            leaf_size,
            seed,
        })
    }
}

pub(crate) fn sort_neighbors<F: Scalar>(v: &mut [Neighbor<F>]) {
    v.sort_by(|a, b| {
        a.distance
            .partial_cmp(&b.distance)
            .unwrap_or(Ordering::Equal)
            .then(a.index.cmp(&b.index))
    });
}

fn grow_tree<F: Scalar>(unit: &[F], dim: usize, leaf_size: usize, rng: &mut ChaCha8Rng) -> Tree<F> {
    let n = unit.len() / dim;
    let mut nodes: Vec<TreeNode<F>> = Vec::new();
    // (slot, items) pairs still to be resolved
    let mut work: Vec<(usize, Vec<u32>)> = vec![(0, (0..n as u32).collect())];
    nodes.push(TreeNode::Leaf { items: Vec::new() });
    while let Some((slot, items)) = work.pop() {
        if items.len() <= leaf_size {
            nodes[slot] = TreeNode::Leaf { items };
            continue;
        }
        let left = nodes.len() as u32;
        let right = left + 1;
        nodes.push(TreeNode::Leaf { items: Vec::new() });
        nodes.push(TreeNode::Leaf { items: Vec::new() });
        let (left_items, right_items) = match split(unit, dim, &items, rng) {
            Some((normal, offset, l, r)) => {
                let inv_norm = F::one() / norm(&normal);
                nodes[slot] = TreeNode::Split {
                    normal,
                    offset,
                    inv_norm,
                    left,
                    right,
                };
                (l, r)
            }
            None => {
                let mut lower = items;
                lower.sort_unstable();
                let upper = lower.split_off(lower.len() / 2);
                nodes[slot] = TreeNode::Halves { left, right };
                (lower, upper)
            }
        };
        // right pushed first so the left subtree is resolved first
        work.push((right as usize, right_items));
        work.push((left as usize, left_items));
    }
    Tree { nodes, root: 0 }
}

type SplitResult<F> = (Vec<F>, F, Vec<u32>, Vec<u32>);

fn split<F: Scalar>(unit: &[F], dim: usize, items: &[u32], rng: &mut ChaCha8Rng) -> Option<SplitResult<F>> {
    let row = |i: u32| &unit[i as usize * dim..(i as usize + 1) * dim];
    let half = F::lit(0.5);
    for _ in 0..=SPLIT_RETRIES {
        let a = rng.random_range(0..items.len());
        let mut b = rng.random_range(0..items.len() - 1);
        if b >= a {
            b += 1;
        }
        let (p1, p2) = (row(items[a]), row(items[b]));
        if p1 == p2 {
            continue;
        }
        let normal: Vec<F> = p1.iter().zip(p2).map(|(&x, &y)| x - y).collect();
        let midpoint: Vec<F> = p1.iter().zip(p2).map(|(&x, &y)| (x + y) * half).collect();
        let offset = dot(&normal, &midpoint);
        let (mut left, mut right) = (Vec::new(), Vec::new());
        for &i in items {
            if dot(row(i), &normal) - offset > F::zero() {
                right.push(i);
            } else {
                left.push(i);
            }
        }
        if !left.is_empty() && !right.is_empty() {
            return Some((normal, offset, left, right));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_items(n: usize, dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn params(n_trees: usize, leaf_size: usize) -> ForestParams {
        ForestParams {
            n_trees,
            leaf_size,
            seed: 11,
        }
    }

    #[test]
    fn angular_distance_examples() {
        assert!(angular_distance::<f64>(&[1.0, 2.0], &[1.0, 2.0]).abs() < 1e-15);
        assert!((angular_distance::<f64>(&[1.0, 0.0], &[0.0, 3.0]) - 1.0).abs() < 1e-15);
        assert!((angular_distance::<f64>(&[1.0, -2.0], &[-1.0, 2.0]) - 2.0).abs() < 1e-15);
        assert_eq!(angular_distance(&[0.0, 0.0], &[1.0, 2.0]), 1.0);
    }

    #[test]
    fn single_item_forest_is_one_leaf_per_tree() {
        let f = Forest::build(&[0.3, 0.4], 2, &params(5, 1)).unwrap();
        for t in f.trees() {
            assert_eq!(t.leaves(), vec![&[0u32][..]]);
        }
    }

    #[test]
    fn small_sets_stay_in_one_leaf() {
        let items = random_items(7, 3, 1);
        let f = Forest::build(&items, 3, &params(2, 7)).unwrap();
        for t in f.trees() {
            assert_eq!(t.nodes().len(), 1);
            assert_eq!(t.leaves()[0].len(), 7);
        }
    }

    #[test]
    fn every_tree_partitions_the_items() {
        let items = random_items(500, 8, 2);
        let f = Forest::build(&items, 8, &params(4, 10)).unwrap();
        for t in f.trees() {
            let mut all: Vec<u32> = t.leaves().concat();
            assert!(t.leaves().iter().all(|l| l.len() <= 10 && !l.is_empty()));
            all.sort_unstable();
            assert_eq!(all, (0..500).collect::<Vec<u32>>());
        }
    }

    #[test]
    fn duplicate_vectors_fall_back_to_halving() {
        let items = vec![1.0f64; 4 * 20];
        let f = Forest::build(&items, 4, &params(1, 3)).unwrap();
        let t = &f.trees()[0];
        assert!(t.nodes().iter().any(|n| matches!(n, TreeNode::Halves { .. })));
        assert!(t.leaves().iter().all(|l| l.len() <= 3));
        let hits = f.query(&[1.0; 4], 20).unwrap();
        assert_eq!(hits.len(), 20);
    }

    #[test]
    fn query_of_indexed_item_returns_itself() {
        let items = random_items(40, 5, 3);
        let f = Forest::build(&items, 5, &params(1, 40)).unwrap();
        let hit = f.query(f.item(17), 1).unwrap();
        assert_eq!(hit[0].index, 17);
        assert!(hit[0].distance.abs() < 1e-12);
    }

    #[test]
    fn k_larger_than_n_returns_everything() {
        let items = random_items(12, 3, 4);
        let f = Forest::build(&items, 3, &params(3, 2)).unwrap();
        let hits = f.query(&[0.1, 0.2, 0.3], 50).unwrap();
        assert_eq!(hits.len(), 12);
        assert!(hits.windows(2).all(|w| w[0].distance <= w[1].distance));
    }

    #[test]
    fn bad_queries_are_rejected() {
        let f = Forest::build(&random_items(5, 2, 5), 2, &params(1, 2)).unwrap();
        assert!(matches!(f.query(&[1.0], 1), Err(Error::Dimension { .. })));
        assert!(f.query(&[1.0, 1.0], 0).is_err());
        assert!(f.query(&[f64::NAN, 1.0], 1).is_err());
    }

    #[test]
    fn round_trip_is_exact() {
        let items = random_items(300, 6, 6);
        let f = Forest::build(&items, 6, &params(3, 7)).unwrap();
        let back = Forest::<f64>::from_bytes(&f.to_bytes()).unwrap();
        assert_eq!(back, f);
        let q = [0.5, -0.1, 0.2, 0.9, 0.0, -0.3];
        assert_eq!(f.query(&q, 9).unwrap(), back.query(&q, 9).unwrap());
    }

    #[test]
    fn f32_forest_round_trips() {
        let items: Vec<f32> = random_items(50, 4, 8).into_iter().map(|x| x as f32).collect();
        let f = Forest::build(&items, 4, &params(2, 5)).unwrap();
        assert_eq!(Forest::<f32>::from_bytes(&f.to_bytes()).unwrap(), f);
    }

    #[test]
    fn corrupted_index_is_rejected() {
        let f = Forest::build(&random_items(20, 2, 9), 2, &params(1, 3)).unwrap();
        let mut bytes = f.to_bytes();
        bytes.pop();
        assert!(Forest::<f64>::from_bytes(&bytes).is_err());
        let mut bytes = f.to_bytes();
        bytes[8] = 9;
        assert!(matches!(Forest::<f64>::from_bytes(&bytes), Err(Error::Version { .. })));
    }
}
