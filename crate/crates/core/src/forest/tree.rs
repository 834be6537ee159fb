//! Decision trees and the shared split-finding grower.
//!
//! A tree is grown over per-row statistic vectors: weighted one-hot class
//! counts for Gini trees, `(gradient, hessian)` pairs for Newton trees used
//! by boosting. Both strategies (depth-limited and best-first leaf-wise)
//! share the same split search.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureKind, MAX_SUBSET_CATEGORIES};
use crate::seed::mix64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SplitRule {
    /// `x <= value` goes left.
    Threshold { value: f64 },
    /// Category codes whose bit is set go left; everything else goes right.
    Categories { left_mask: u32 },
}

impl SplitRule {
    pub fn goes_left(&self, x: f64) -> bool {
        match *self {
            SplitRule::Threshold { value } => x <= value,
            SplitRule::Categories { left_mask } => {
                (0.0..32.0).contains(&x) && left_mask & (1u32 << (x as u32)) != 0
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        #[serde(flatten)]
        rule: SplitRule,
        left: usize,
        right: usize,
        gain: f64,
    },
    Leaf {
        value: Vec<f64>,
    },
}

/// Flattened binary tree; node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn leaf(value: Vec<f64>) -> Self {
        Self {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn leaf_value(&self, row: &[f64]) -> &[f64] {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    rule,
                    left,
                    right,
                    ..
                } => {
                    idx = if rule.goes_left(row[*feature]) {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], idx: usize) -> usize {
            match &nodes[idx] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn add_gains(&self, out: &mut [f64]) {
        for node in &self.nodes {
            if let Node::Split { feature, gain, .. } = node {
                out[*feature] += gain;
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Criterion {
    /// Stats are weighted class counts.
    Gini,
    /// Stats are `[gradient, hessian]`; leaf value is the regularized Newton step.
    Newton { lambda: f64 },
}

impl Criterion {
    fn score(self, s: &[f64]) -> f64 {
        match self {
            Criterion::Gini => {
                let w: f64 = s.iter().sum();
                if w <= 0.0 {
                    0.0
                } else {
                    s.iter().map(|c| c * c).sum::<f64>() / w - w
                }
            }
            Criterion::Newton { lambda } => 0.5 * s[0] * s[0] / (s[1] + lambda),
        }
    }

    fn weight(self, s: &[f64]) -> f64 {
        match self {
            Criterion::Gini => s.iter().sum(),
            Criterion::Newton { .. } => s[1],
        }
    }

    fn leaf(self, s: &[f64]) -> Vec<f64> {
        match self {
            Criterion::Gini => {
                let w: f64 = s.iter().sum();
                if w > 0.0 {
                    s.iter().map(|c| c / w).collect()
                } else {
                    vec![1.0 / s.len() as f64; s.len()]
                }
            }
            Criterion::Newton { lambda } => vec![-s[0] / (s[1] + lambda)],
        }
    }

    /// Scalar used to order categories before a prefix sweep.
    fn category_key(self, s: &[f64]) -> f64 {
        match self {
            Criterion::Gini => {
                let w: f64 = s.iter().sum();
                if w > 0.0 {
                    s.iter().enumerate().map(|(c, v)| c as f64 * v).sum::<f64>() / w
                } else {
                    0.0
                }
            }
            Criterion::Newton { lambda } => s[0] / (s[1] + lambda),
        }
    }

    fn is_pure(self, s: &[f64]) -> bool {
        match self {
            Criterion::Gini => s.iter().filter(|&&v| v > 0.0).count() <= 1,
            Criterion::Newton { .. } => false,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Growth {
    DepthWise { max_depth: usize },
    LeafWise { max_leaves: usize, max_depth: usize },
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct GrowParams {
    pub growth: Growth,
    pub min_samples_leaf: usize,
    pub min_child_weight: f64,
    pub min_gain: f64,
    /// Number of features drawn per node; `None` uses all.
    pub features_per_node: Option<usize>,
    pub seed: u64,
}

pub(crate) struct GrowData<'a> {
    pub rows: &'a [Vec<f64>],
    pub kinds: &'a [FeatureKind],
    /// Row-major `rows.len() × dim` statistic contributions.
    pub stats: &'a [f64],
    pub dim: usize,
    pub criterion: Criterion,
}

#[derive(Clone, Debug)]
struct Candidate {
    feature: usize,
    rule: SplitRule,
    gain: f64,
}

impl GrowData<'_> {
    fn row_stats(&self, i: usize) -> &[f64] {
        &self.stats[i * self.dim..(i + 1) * self.dim]
    }

    fn sum_stats(&self, idx: &[usize]) -> Vec<f64> {
        let mut s = vec![0.0; self.dim];
        for &i in idx {
            add(&mut s, self.row_stats(i));
        }
        s
    }

    fn admissible(&self, params: &GrowParams, n: usize, s: &[f64]) -> bool {
        n >= params.min_samples_leaf.max(1) && self.criterion.weight(s) >= params.min_child_weight
    }

    fn best_split(
        &self,
        idx: &[usize],
        features: &[usize],
        params: &GrowParams,
    ) -> Option<Candidate> {
        let total = self.sum_stats(idx);
        if idx.len() < 2 * params.min_samples_leaf.max(1) || self.criterion.is_pure(&total) {
            return None;
        }
        let parent = self.criterion.score(&total);
        let mut best: Option<Candidate> = None;
        for &f in features {
            let found = match self.kinds[f] {
                FeatureKind::Categorical { n_categories }
                    if n_categories <= MAX_SUBSET_CATEGORIES =>
                {
                    self.categorical_split(idx, f, &total, parent, params)
                }
                _ => self.numeric_split(idx, f, &total, parent, params),
            };
            if let Some(c) = found {
                if c.gain > params.min_gain && best.as_ref().is_none_or(|b| c.gain > b.gain) {
                    best = Some(c);
                }
            }
        }
        best
    }

    fn numeric_split(
        &self,
        idx: &[usize],
        f: usize,
        total: &[f64],
        parent: f64,
        params: &GrowParams,
    ) -> Option<Candidate> {
        let mut order = idx.to_vec();
        order.sort_by(|&a, &b| self.rows[a][f].total_cmp(&self.rows[b][f]).then(a.cmp(&b)));
        let n = order.len();
        let mut left = vec![0.0; self.dim];
        let mut right = vec![0.0; self.dim];
        let mut best: Option<(f64, f64)> = None;
        for k in 0..n - 1 {
            add(&mut left, self.row_stats(order[k]));
            let (xa, xb) = (self.rows[order[k]][f], self.rows[order[k + 1]][f]);
            if xa >= xb {
                continue;
            }
            for d in 0..self.dim {
                right[d] = total[d] - left[d];
            }
            if !self.admissible(params, k + 1, &left) || !self.admissible(params, n - k - 1, &right)
            {
                continue;
            }
            let gain = self.criterion.score(&left) + self.criterion.score(&right) - parent;
            if best.is_none_or(|(g, _)| gain > g) {
                let mid = 0.5 * (xa + xb);
                let threshold = if mid < xb { mid } else { xa };
                best = Some((gain, threshold));
            }
        }
        best.map(|(gain, value)| Candidate {
            feature: f,
            rule: SplitRule::Threshold { value },
            gain,
        })
    }

    fn categorical_split(
        &self,
        idx: &[usize],
        f: usize,
        total: &[f64],
        parent: f64,
        params: &GrowParams,
    ) -> Option<Candidate> {
        // Per-category aggregated stats and row counts.
        let mut per_cat: Vec<(u32, Vec<f64>, usize)> = Vec::new();
        {
            let mut slots: [Option<usize>; 32] = [None; 32];
            for &i in idx {
                let code = self.rows[i][f].max(0.0) as usize;
                let code = code.min(31);
                let slot = match slots[code] {
                    Some(s) => s,
                    None => {
                        per_cat.push((code as u32, vec![0.0; self.dim], 0));
                        slots[code] = Some(per_cat.len() - 1);
                        per_cat.len() - 1
                    }
                };
                add(&mut per_cat[slot].1, self.row_stats(i));
                per_cat[slot].2 += 1;
            }
        }
        per_cat.sort_by_key(|c| c.0);
        let m = per_cat.len();
        if m < 2 {
            return None;
        }
        let mut best: Option<(f64, u32)> = None;
        let consider = |left_set: &[usize], best: &mut Option<(f64, u32)>| {
            let mut left = vec![0.0; self.dim];
            let mut n_left = 0;
            let mut mask = 0u32;
            for &j in left_set {
                add(&mut left, &per_cat[j].1);
                n_left += per_cat[j].2;
                mask |= 1 << per_cat[j].0;
            }
            let right: Vec<f64> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
            if !self.admissible(params, n_left, &left)
                || !self.admissible(params, idx.len() - n_left, &right)
            {
                return;
            }
            let gain = self.criterion.score(&left) + self.criterion.score(&right) - parent;
            if best.is_none_or(|(g, _)| gain > g) {
                *best = Some((gain, mask));
            }
        };
        if matches!(self.criterion, Criterion::Gini) && m <= 10 {
            // Exhaustive: subsets that exclude the last category enumerate each partition once.
            for subset in 1u32..(1u32 << (m - 1)) {
                let left_set: Vec<usize> = (0..m - 1).filter(|&j| subset & (1 << j) != 0).collect();
                consider(&left_set, &mut best);
            }
        } else {
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| {
                self.criterion
                    .category_key(&per_cat[a].1)
                    .total_cmp(&self.criterion.category_key(&per_cat[b].1))
                    .then(a.cmp(&b))
            });
            for k in 1..m {
                consider(&order[..k], &mut best);
            }
        }
        best.map(|(gain, left_mask)| Candidate {
            feature: f,
            rule: SplitRule::Categories { left_mask },
            gain,
        })
    }

    fn node_features(&self, params: &GrowParams, node_counter: u64) -> Vec<usize> {
        let d = self.kinds.len();
        match params.features_per_node {
            Some(k) if k < d => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix64(params.seed ^ mix64(node_counter)));
                let mut chosen = sample(&mut rng, d, k.max(1)).into_vec();
                chosen.sort_unstable();
                chosen
            }
            _ => (0..d).collect(),
        }
    }
}

fn add(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

fn partition(data: &GrowData, idx: &[usize], c: &Candidate) -> (Vec<usize>, Vec<usize>) {
    idx.iter()
        .partition(|&&i| c.rule.goes_left(data.rows[i][c.feature]))
}

/// Grows one tree over the given row subset.
pub(crate) fn grow(data: &GrowData, idx: Vec<usize>, params: &GrowParams) -> DecisionTree {
    let mut nodes: Vec<Node> = Vec::new();
    let mut counter = 0u64;
    match params.growth {
        Growth::DepthWise { max_depth } => {
            let mut stack: Vec<(usize, Vec<usize>, usize)> = Vec::new();
            nodes.push(Node::Leaf { value: Vec::new() });
            stack.push((0, idx, 0));
            while let Some((id, rows, depth)) = stack.pop() {
                let split = if depth < max_depth {
                    let feats = data.node_features(params, counter);
                    counter += 1;
                    data.best_split(&rows, &feats, params)
                } else {
                    None
                };
                match split {
                    Some(c) => {
                        let (l, r) = partition(data, &rows, &c);
                        let (li, ri) = (nodes.len(), nodes.len() + 1);
                        nodes.push(Node::Leaf { value: Vec::new() });
                        nodes.push(Node::Leaf { value: Vec::new() });
                        nodes[id] = Node::Split {
                            feature: c.feature,
                            rule: c.rule,
                            left: li,
                            right: ri,
                            gain: c.gain,
                        };
                        stack.push((ri, r, depth + 1));
                        stack.push((li, l, depth + 1));
                    }
                    None => {
                        nodes[id] = Node::Leaf {
                            value: data.criterion.leaf(&data.sum_stats(&rows)),
                        };
                    }
                }
            }
        }
        Growth::LeafWise {
            max_leaves,
            max_depth,
        } => {
            struct Open {
                id: usize,
                rows: Vec<usize>,
                depth: usize,
                split: Option<Candidate>,
            }
            let evaluate = |rows: &[usize], depth: usize, counter: &mut u64| {
                if depth >= max_depth {
                    return None;
                }
                let feats = data.node_features(params, *counter);
                *counter += 1;
                data.best_split(rows, &feats, params)
            };
            nodes.push(Node::Leaf { value: Vec::new() });
            let split = evaluate(&idx, 0, &mut counter);
            let mut open = vec![Open {
                id: 0,
                rows: idx,
                depth: 0,
                split,
            }];
            let mut n_leaves = 1;
            while n_leaves < max_leaves.max(1) {
                let pick = open
                    .iter()
                    .enumerate()
                    .filter_map(|(k, o)| o.split.as_ref().map(|c| (k, c.gain, o.id)))
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(b.2.cmp(&a.2)))
                    .map(|(k, _, _)| k);
                let Some(k) = pick else { break };
                let leaf = open.swap_remove(k);
                let c = leaf.split.expect("picked leaf has a split");
                let (l, r) = partition(data, &leaf.rows, &c);
                let (li, ri) = (nodes.len(), nodes.len() + 1);
                nodes.push(Node::Leaf { value: Vec::new() });
                nodes.push(Node::Leaf { value: Vec::new() });
                nodes[leaf.id] = Node::Split {
                    feature: c.feature,
                    rule: c.rule,
                    left: li,
                    right: ri,
                    gain: c.gain,
                };
                let ls = evaluate(&l, leaf.depth + 1, &mut counter);
                let rs = evaluate(&r, leaf.depth + 1, &mut counter);
                open.push(Open {
                    id: li,
                    rows: l,
                    depth: leaf.depth + 1,
                    split: ls,
                });
                open.push(Open {
                    id: ri,
                    rows: r,
                    depth: leaf.depth + 1,
                    split: rs,
                });
                n_leaves += 1;
            }
            for o in open {
                nodes[o.id] = Node::Leaf {
                    value: data.criterion.leaf(&data.sum_stats(&o.rows)),
                };
            }
        }
    }
    DecisionTree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gini_data(rows: &[Vec<f64>], labels: &[usize]) -> Vec<f64> {
        let mut stats = vec![0.0; rows.len() * 2];
        for (i, &l) in labels.iter().enumerate() {
            stats[i * 2 + l] = 1.0;
        }
        stats
    }

    fn params(growth: Growth) -> GrowParams {
        GrowParams {
            growth,
            min_samples_leaf: 1,
            min_child_weight: 0.0,
            min_gain: 1e-12,
            features_per_node: None,
            seed: 1,
        }
    }

    #[test]
    fn single_threshold_split() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let labels: Vec<usize> = (0..10).map(|i| usize::from(i >= 6)).collect();
        let stats = gini_data(&rows, &labels);
        let kinds = [FeatureKind::Numeric];
        let data = GrowData {
            rows: &rows,
            kinds: &kinds,
            stats: &stats,
            dim: 2,
            criterion: Criterion::Gini,
        };
        let tree = grow(
            &data,
            (0..10).collect(),
            &params(Growth::DepthWise { max_depth: 3 }),
        );
        assert_eq!(tree.n_leaves(), 2);
        match &tree.nodes[0] {
            Node::Split {
                rule: SplitRule::Threshold { value },
                ..
            } => assert_eq!(*value, 5.5),
            other => panic!("unexpected root {other:?}"),
        }
        assert_eq!(tree.leaf_value(&[2.0]), &[1.0, 0.0]);
        assert_eq!(tree.leaf_value(&[8.0]), &[0.0, 1.0]);
    }

    #[test]
    fn categorical_subset_split() {
        // Categories {0, 2} are class 0; {1, 3} are class 1: no ordered threshold separates them.
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 4) as f64]).collect();
        let labels: Vec<usize> = (0..40).map(|i| (i % 4) % 2).collect();
        let stats = gini_data(&rows, &labels);
        let kinds = [FeatureKind::Categorical { n_categories: 4 }];
        let data = GrowData {
            rows: &rows,
            kinds: &kinds,
            stats: &stats,
            dim: 2,
            criterion: Criterion::Gini,
        };
        let tree = grow(
            &data,
            (0..40).collect(),
            &params(Growth::DepthWise { max_depth: 1 }),
        );
        assert_eq!(tree.n_leaves(), 2);
        for c in 0..4 {
            let v = tree.leaf_value(&[c as f64]);
            assert_eq!(v[c % 2], 1.0);
        }
    }

    #[test]
    fn leaf_wise_respects_leaf_budget() {
        let rows: Vec<Vec<f64>> = (0..64).map(|i| vec![i as f64]).collect();
        let mut stats = Vec::new();
        for i in 0..64 {
            stats.push(-((i * i) as f64));
            stats.push(1.0);
        }
        let kinds = [FeatureKind::Numeric];
        let data = GrowData {
            rows: &rows,
            kinds: &kinds,
            stats: &stats,
            dim: 2,
            criterion: Criterion::Newton { lambda: 1.0 },
        };
        let tree = grow(
            &data,
            (0..64).collect(),
            &params(Growth::LeafWise {
                max_leaves: 5,
                max_depth: 16,
            }),
        );
        assert_eq!(tree.n_leaves(), 5);
    }
}
