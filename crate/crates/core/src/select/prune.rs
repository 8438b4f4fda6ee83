//! Penalized pruning of a dyadic tree by bottom-up dynamic programming.
//!
//! A subtree `T` is scored by `R(T) + c * Phi(T)` with
//!
//! ```text
//! Phi(T) = sum over leaves A of sqrt(2 p(A) ([[A]] ln 2 + ln(2/delta)) / n)
//! ```
//!
//! where `p(A)` is the empirical mass of the leaf and `[[A]]` its codelength.
//! The `SN` variant measures risk and mass on the pooled sample
//! (`delta = 1/n`); `SNQ` uses the target sample only (`delta = 1/n_Q`) and
//! relabels the pruned leaves from the pooled sample.

use std::collections::HashMap;

use crate::data::Dataset;
use crate::dyadic::{CellId, TreeIndex, TreeKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::cv::make_folds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SnVariant {
    Sn,
    Snq,
}

impl SnVariant {
    pub fn name(self) -> &'static str {
        match self {
            SnVariant::Sn => "SN",
            SnVariant::Snq => "SNQ",
        }
    }
}

/// Prefix codelength of a cell reached by `depth` binary splits in `dim`
/// dimensions: `ceil(depth * (1 + log2 dim))`.
pub fn codelength(depth: u32, dim: usize) -> u32 {
    (f64::from(depth) * (1.0 + (dim.max(1) as f64).log2())).ceil() as u32
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedNode<T> {
    pub cell: CellId,
    /// Empirical risk contribution if the node is a leaf (errors / n).
    pub risk: T,
    /// Empirical mass `p_n(A)` of the designated sample.
    pub mass: T,
    pub codelength: u32,
    /// Label predicted by the node as a leaf.
    pub label: u8,
    pub children: Vec<usize>,
}

/// Tree of candidate leaves; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedTree<T> {
    nodes: Vec<PenalizedNode<T>>,
    /// Sample size entering the penalty.
    n: usize,
    delta: f64,
    kind: TreeKind,
    variant: SnVariant,
}

impl<T: Scalar> PenalizedTree<T> {
    /// Builds a tree from explicit nodes (children referenced by index).
    pub fn from_nodes(nodes: Vec<PenalizedNode<T>>, n: usize, delta: f64, kind: TreeKind) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::EmptyInput);
        }
        if n == 0 {
            return Err(Error::NonPositiveN);
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0,1), got {delta}")));
        }
        let mut parent = vec![None; nodes.len()];
        for (i, node) in nodes.iter().enumerate() {
            for &c in &node.children {
                if c >= nodes.len() || c == 0 || parent[c].is_some() {
                    return Err(Error::InvalidCell(format!("bad child reference {c} from node {i}")));
                }
                parent[c] = Some(i);
            }
        }
        let tree = PenalizedTree {
            nodes,
            n,
            delta,
            kind,
            variant: SnVariant::Sn,
        };
        tree.check_kraft(&tree.full_leaves())?;
        Ok(tree)
    }

    /// Candidate tree over the occupied cells of `index`, with risks and
    /// masses from `data` according to `variant`.
    pub fn build(index: &TreeIndex, data: &Dataset<T>, variant: SnVariant) -> Result<Self> {
        let kind = index.kind();
        let dim = index.dim();
        let max_level = index.max_level();
        let pooled = TreeIndex::build(data, max_level, kind)?;
        let (scored, n) = match variant {
            SnVariant::Sn => (None, data.len()),
            SnVariant::Snq => {
                let t = data.targets();
                if t.is_empty() {
                    return Err(Error::EmptyTarget);
                }
                let n = t.len();
                (Some(TreeIndex::build(&t, max_level, kind)?), n)
            }
        };
        if n == 0 {
            return Err(Error::NonPositiveN);
        }
        let scored_index = scored.as_ref().unwrap_or(&pooled);
        let nt = T::of_count(n);

        let mut nodes: Vec<PenalizedNode<T>> = Vec::new();
        let mut position: HashMap<CellId, usize> = HashMap::new();
        let mut frontier = vec![CellId {
            level: 0,
            coords: vec![0; dim],
        }];
        while let Some(cell) = frontier.pop() {
            let here = pooled.cell_stats(&cell)?;
            let scored_stats = scored_index.cell_stats(&cell)?;
            let errors = scored_stats.label_sum.min(scored_stats.count - scored_stats.label_sum);
            let label = u8::from(2 * here.label_sum >= here.count && here.count > 0);
            let depth = kind.binary_depth(cell.level, dim);
            let id = nodes.len();
            nodes.push(PenalizedNode {
                cell: cell.clone(),
                risk: T::of(errors as f64) / nt,
                mass: T::of(scored_stats.count as f64) / nt,
                codelength: codelength(depth, dim),
                label,
                children: Vec::new(),
            });
            position.insert(cell.clone(), id);
            if cell.level < max_level {
                for child in pooled.children(&cell) {
                    if pooled.cell_stats(&child)?.count > 0 {
                        frontier.push(child);
                    }
                }
            }
        }
        for i in 0..nodes.len() {
            let cell = &nodes[i].cell;
            if cell.level == 0 {
                continue;
            }
            let parent = parent_cell(kind, dim, cell);
            let p = position[&parent];
            nodes[p].children.push(i);
        }
        for node in &mut nodes {
            node.children.sort_by(|&a, &b| a.cmp(&b));
        }
        let tree = PenalizedTree {
            nodes,
            n,
            delta: 1.0 / (n as f64).max(2.0),
            kind,
            variant,
        };
        tree.check_kraft(&tree.full_leaves())?;
        Ok(tree)
    }

    pub fn nodes(&self) -> &[PenalizedNode<T>] {
        &self.nodes
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn variant(&self) -> SnVariant {
        self.variant
    }

    /// Leaves of the unpruned tree.
    pub fn full_leaves(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].children.is_empty())
            .collect()
    }

    /// `sum 2^-[[A]]` over the given leaves must not exceed 1.
    pub fn check_kraft(&self, leaves: &[usize]) -> Result<f64> {
        let sum: f64 = leaves
            .iter()
            .map(|&i| (-f64::from(self.nodes[i].codelength)).exp2())
            .sum();
        if sum > 1.0 + 1e-12 {
            Err(Error::KraftViolation(sum))
        } else {
            Ok(sum)
        }
    }

    /// Penalty term of one leaf.
    pub fn leaf_penalty(&self, node: usize) -> T {
        leaf_penalty(self.nodes[node].mass, self.nodes[node].codelength, self.n, self.delta)
    }
}

fn parent_cell(kind: TreeKind, dim: usize, cell: &CellId) -> CellId {
    let level = cell.level - 1;
    let coords = (0..dim)
        .map(|j| {
            let shift = kind.axis_splits(cell.level, dim, j) - kind.axis_splits(level, dim, j);
            cell.coords[j] >> shift
        })
        .collect();
    CellId { level, coords }
}

/// `sqrt(2 p ([[A]] ln 2 + ln(2/delta)) / n)`.
pub fn leaf_penalty<T: Scalar>(mass: T, codelength: u32, n: usize, delta: f64) -> T {
    let bits = f64::from(codelength) * std::f64::consts::LN_2 + (2.0 / delta).ln();
    (T::of(2.0) * mass * T::of(bits) / T::of_count(n)).sqrt()
}

/// Penalty of the subtree with the given leaves.
pub fn sn_penalty<T: Scalar>(tree: &PenalizedTree<T>, leaves: &[usize]) -> Result<T> {
    if tree.n == 0 {
        return Err(Error::NonPositiveN);
    }
    tree.check_kraft(leaves)?;
    Ok(leaves
        .iter()
        .map(|&i| tree.leaf_penalty(i))
        .fold(T::zero(), |a, b| a + b))
}

/// Optimal pruning of a penalized tree.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneSolution<T> {
    /// Selected leaves (node indices), ascending.
    pub leaves: Vec<usize>,
    pub objective: T,
}

/// Minimizes `risk + c * penalty` over all prunings rooted at node 0.
/// Ties keep the smaller subtree.
pub fn optimal_pruning<T: Scalar>(tree: &PenalizedTree<T>, c: T) -> Result<PruneSolution<T>> {
    if c < T::zero() {
        return Err(Error::Config("penalty constant must be non-negative".into()));
    }
    let n = tree.nodes.len();
    // children always follow their parent in a depth-first build, but
    // explicit trees may be in any order, so process by depth
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![0usize];
    while let Some(i) = stack.pop() {
        order.push(i);
        stack.extend(tree.nodes[i].children.iter().copied());
    }
    let mut best = vec![T::zero(); n];
    let mut is_leaf = vec![true; n];
    for &i in order.iter().rev() {
        let node = &tree.nodes[i];
        let leaf_cost = node.risk + c * tree.leaf_penalty(i);
        if node.children.is_empty() {
            best[i] = leaf_cost;
            continue;
        }
        let split_cost = node.children.iter().map(|&ch| best[ch]).fold(T::zero(), |a, b| a + b);
        if split_cost < leaf_cost {
            best[i] = split_cost;
            is_leaf[i] = false;
        } else {
            best[i] = leaf_cost;
        }
    }
    let mut leaves = Vec::new();
    let mut stack = vec![0usize];
    while let Some(i) = stack.pop() {
        if is_leaf[i] {
            leaves.push(i);
        } else {
            stack.extend(tree.nodes[i].children.iter().copied());
        }
    }
    leaves.sort_unstable();
    tree.check_kraft(&leaves)?;
    Ok(PruneSolution {
        leaves,
        objective: best[0],
    })
}

/// Classifier given by the leaves of a pruned tree.
#[derive(Debug, Clone)]
pub struct PrunedTree {
    kind: TreeKind,
    dim: usize,
    max_level: u32,
    /// Leaf cells by level and coordinates, with their labels.
    leaves: HashMap<CellId, u8>,
    pub objective: f64,
    pub leaf_count: usize,
}

impl PrunedTree {
    /// Label of the selected leaf containing `x`; points in a region with
    /// no samples are labelled 0.
    pub fn predict<T: Scalar>(&self, x: &[T]) -> u8 {
        for level in 0..=self.max_level {
            let coords = (0..self.dim)
                .map(|j| crate::dyadic::axis_coord(x[j], self.kind.axis_splits(level, self.dim, j)))
                .collect();
            if let Some(&label) = self.leaves.get(&CellId { level, coords }) {
                return label;
            }
        }
        0
    }

    pub fn leaf_cells(&self) -> impl Iterator<Item = &CellId> {
        self.leaves.keys()
    }
}

/// Prunes the tree of `index` built over `data` with penalty weight `c`.
pub fn sn_prune<T: Scalar>(index: &TreeIndex, data: &Dataset<T>, c: T, variant: SnVariant) -> Result<PrunedTree> {
    let tree = PenalizedTree::build(index, data, variant)?;
    let sol = optimal_pruning(&tree, c)?;
    let leaves = sol
        .leaves
        .iter()
        .map(|&i| (tree.nodes[i].cell.clone(), tree.nodes[i].label))
        .collect();
    Ok(PrunedTree {
        kind: index.kind(),
        dim: index.dim(),
        max_level: index.max_level(),
        leaves,
        objective: sol.objective.as_f64(),
        leaf_count: sol.leaves.len(),
    })
}

/// Penalty weights `2^-6, 2^-5, ..., 2^4`.
pub fn default_penalty_grid() -> Vec<f64> {
    (-6..=4).map(|e| 2f64.powi(e)).collect()
}

/// Picks the penalty weight with the lowest mean target hold-out error over
/// stratified folds; ties go to the larger weight.
pub fn tune_penalty<T: Scalar>(
    data: &Dataset<T>,
    kind: TreeKind,
    max_level: u32,
    variant: SnVariant,
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    if grid.is_empty() {
        return Err(Error::EmptyInput);
    }
    let plan = make_folds(data, folds, seed)?;
    let mut mean = vec![0.0; grid.len()];
    for fold in 0..folds {
        let (train_pos, hold_pos) = plan.split(fold);
        let train = data.select(&train_pos);
        let holdout = data.select(&hold_pos).targets();
        if holdout.is_empty() {
            return Err(Error::EmptyTargetHoldout(fold));
        }
        let index = TreeIndex::build(&train, max_level, kind)?;
        let tree = PenalizedTree::build(&index, &train, variant)?;
        for (g, &c) in grid.iter().enumerate() {
            let sol = optimal_pruning(&tree, T::of(c))?;
            let leaves: HashMap<CellId, u8> = sol
                .leaves
                .iter()
                .map(|&i| (tree.nodes[i].cell.clone(), tree.nodes[i].label))
                .collect();
            let pruned = PrunedTree {
                kind,
                dim: index.dim(),
                max_level,
                leaves,
                objective: sol.objective.as_f64(),
                leaf_count: sol.leaves.len(),
            };
            let errors = holdout.iter().filter(|s| pruned.predict(&s.features) != s.label).count();
            mean[g] += errors as f64 / holdout.len() as f64 / folds as f64;
        }
    }
    let mut best = 0;
    for g in 1..grid.len() {
        if mean[g] <= mean[best] {
            best = g;
        }
    }
    Ok((grid[best], mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LabeledSample, Origin};

    fn node(level: u32, risk: f64, mass: f64, code: u32, children: Vec<usize>) -> PenalizedNode<f64> {
        PenalizedNode {
            cell: CellId {
                level,
                coords: vec![0],
            },
            risk,
            mass,
            codelength: code,
            label: 0,
            children,
        }
    }

    #[test]
    fn root_only_penalty() {
        let n = 50;
        let tree = PenalizedTree::from_nodes(vec![node(0, 0.1, 1.0, 1, vec![])], n, 0.5, TreeKind::Cyclical).unwrap();
        let phi = sn_penalty(&tree, &[0]).unwrap();
        let expected = (2.0 * (2f64.ln() + 4f64.ln()) / n as f64).sqrt();
        assert!((phi - expected).abs() < 1e-15);
    }

    #[test]
    fn balanced_split_penalty() {
        let (n, delta) = (200, 0.1);
        let tree = PenalizedTree::from_nodes(
            vec![
                node(0, 0.0, 1.0, 0, vec![1, 2]),
                node(1, 0.0, 0.5, codelength(1, 2), vec![]),
                node(1, 0.0, 0.5, codelength(1, 2), vec![]),
            ],
            n,
            delta,
            TreeKind::Cyclical,
        )
        .unwrap();
        assert_eq!(codelength(1, 2), 2);
        let phi = sn_penalty(&tree, &[1, 2]).unwrap();
        let expected = 2.0 * (2.0 * 0.5 * (2.0 * 2f64.ln() + (2.0 / delta).ln()) / n as f64).sqrt();
        assert!((phi - expected).abs() < 1e-15);
        // monotone in leaves: splitting strictly increases the penalty here
        assert!(phi > sn_penalty(&tree, &[0]).unwrap());
    }

    #[test]
    fn kraft_violation_detected() {
        let nodes = vec![
            node(0, 0.0, 1.0, 0, vec![1, 2, 3]),
            node(1, 0.0, 0.3, 1, vec![]),
            node(1, 0.0, 0.3, 1, vec![]),
            node(1, 0.0, 0.4, 1, vec![]),
        ];
        assert!(matches!(
            PenalizedTree::from_nodes(nodes, 10, 0.1, TreeKind::Cyclical),
            Err(Error::KraftViolation(_))
        ));
        assert!(matches!(
            PenalizedTree::from_nodes(vec![node(0, 0.0, 1.0, 0, vec![])], 0, 0.1, TreeKind::Cyclical),
            Err(Error::NonPositiveN)
        ));
    }

    /// Hand-built two-level binary tree, checked against its 5 prunings.
    #[test]
    fn two_level_tree_matches_enumeration() {
        let n = 100;
        let delta = 0.01;
        let c1 = codelength(1, 2);
        let c2 = codelength(2, 2);
        let nodes = vec![
            node(0, 0.40, 1.0, 0, vec![1, 2]),
            node(1, 0.20, 0.5, c1, vec![3, 4]),
            node(1, 0.15, 0.5, c1, vec![5, 6]),
            node(2, 0.02, 0.25, c2, vec![]),
            node(2, 0.03, 0.25, c2, vec![]),
            node(2, 0.10, 0.25, c2, vec![]),
            node(2, 0.04, 0.25, c2, vec![]),
        ];
        let tree = PenalizedTree::from_nodes(nodes, n, delta, TreeKind::Cyclical).unwrap();
        let prunings: [&[usize]; 5] = [&[0], &[1, 2], &[3, 4, 2], &[1, 5, 6], &[3, 4, 5, 6]];
        for c in [0.0, 0.05, 0.2, 0.5, 1.0, 5.0] {
            let brute = prunings
                .iter()
                .map(|leaves| {
                    let risk: f64 = leaves.iter().map(|&i| tree.nodes()[i].risk).sum();
                    risk + c * sn_penalty(&tree, leaves).unwrap()
                })
                .fold(f64::INFINITY, f64::min);
            let sol = optimal_pruning(&tree, c).unwrap();
            assert!((sol.objective - brute).abs() < 1e-12, "c={c}");
        }
    }

    fn grid_data(n: usize) -> Dataset<f64> {
        let rows = (0..n)
            .map(|i| {
                let x = (i as f64 + 0.5) / n as f64;
                let y = (i * 7919 % 13) as f64 / 13.0;
                let o = if i % 3 == 0 { Origin::Target } else { Origin::Source(1) };
                LabeledSample::new(vec![x, y], u8::from(x > 0.3 && y < 0.6), o)
            })
            .collect();
        Dataset::new(2, rows).unwrap()
    }

    #[test]
    fn zero_penalty_keeps_full_tree_and_huge_penalty_keeps_root() {
        let d = grid_data(120);
        let idx = TreeIndex::build(&d, 6, TreeKind::Cyclical).unwrap();
        let tree = PenalizedTree::build(&idx, &d, SnVariant::Sn).unwrap();
        let full = optimal_pruning(&tree, 0.0).unwrap();
        let full_risk: f64 = tree.full_leaves().iter().map(|&i| tree.nodes()[i].risk).sum();
        assert!((full.objective - full_risk).abs() < 1e-12);

        let pruned = sn_prune(&idx, &d, 1e6, SnVariant::Sn).unwrap();
        assert_eq!(pruned.leaf_count, 1);
        assert_eq!(pruned.leaf_cells().next().unwrap().level, 0);
    }

    #[test]
    fn snq_needs_targets() {
        let d = grid_data(30).sources();
        let idx = TreeIndex::build(&d, 3, TreeKind::Cyclical).unwrap();
        assert!(matches!(sn_prune(&idx, &d, 0.1, SnVariant::Snq), Err(Error::EmptyTarget)));
    }

    #[test]
    fn pruned_tree_predicts_leaf_labels() {
        let d = grid_data(200);
        let idx = TreeIndex::build(&d, 6, TreeKind::Cyclical).unwrap();
        let pruned = sn_prune(&idx, &d, 0.0, SnVariant::Sn).unwrap();
        let errors = d.iter().filter(|s| pruned.predict(&s.features) != s.label).count();
        // full-depth majority vote on noiseless data
        assert!(errors < d.len() / 10, "{errors}");
        let (c, risks) = tune_penalty(&d, TreeKind::Cyclical, 6, SnVariant::Snq, &default_penalty_grid(), 2, 1).unwrap();
        assert!(default_penalty_grid().contains(&c));
        assert_eq!(risks.len(), 11);
    }
}
