//! Tree growing shared by every forest in the crate. A [`SplitRule`] supplies
//! the node statistics, the split score, and the leaf value; the grower only
//! handles row bookkeeping, honesty, and minimum leaf sizes.

use ndarray::{Array2, ArrayView1};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Additive per-row statistic used while scanning candidate thresholds.
pub(crate) trait NodeStat: Copy + Default {
    fn add(&mut self, other: &Self);
    fn sub(&mut self, other: &Self);
}

pub(crate) trait SplitRule: Sync {
    type Stat: NodeStat;

    /// Per-row statistics of a node's structure rows, aligned with `rows`.
    /// `None` turns the node into a leaf.
    fn node_stats(&self, rows: &[usize]) -> Option<Vec<Self::Stat>>;

    /// Per-row statistics of a node's estimation rows, used only to validate
    /// candidate children (never to score them).
    fn est_stats(&self, rows: &[usize]) -> Option<Vec<Self::Stat>> {
        self.node_stats(rows)
    }

    /// Score of a split, higher is better; `None` for an invalid split.
    fn score(&self, left: &Self::Stat, right: &Self::Stat) -> Option<f64>;

    /// Whether an estimation-side child aggregate can support a leaf.
    fn est_child_ok(&self, _child: &Self::Stat) -> bool {
        true
    }

    /// Final check of a chosen split on the actual child row sets.
    fn accept_children(&self, _left: (&[usize], &[usize]), _right: (&[usize], &[usize])) -> bool {
        true
    }

    /// Contribution of an accepted split to feature importance.
    fn importance(&self, score: f64, _n_struct: usize) -> f64 {
        score
    }

    /// Leaf value from estimation rows; `None` if the rows cannot support one.
    fn leaf_value(&self, est_rows: &[usize]) -> Option<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub split_feature: Option<usize>,
    pub split_threshold: f64,
    pub left: u32,
    pub right: u32,
    pub leaf_value: f64,
    /// Estimation rows reaching this node.
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
    /// Unnormalized importance per feature.
    pub importance: Vec<f64>,
    pub structure_rows: Vec<u32>,
    pub estimation_rows: Vec<u32>,
}

impl Tree {
    pub fn leaf_index(&self, x: ArrayView1<f64>) -> usize {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            match node.split_feature {
                None => return i,
                Some(f) => {
                    i = if x[f] <= node.split_threshold {
                        node.left as usize
                    } else {
                        node.right as usize
                    }
                }
            }
        }
    }

    pub fn predict_row(&self, x: ArrayView1<f64>) -> f64 {
        self.nodes[self.leaf_index(x)].leaf_value
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| n.split_feature.is_none())
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().count()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub min_leaf: usize,
    pub mtry: usize,
    pub honest: bool,
}

/// Splits deeper than this do not count toward importance; shallower ones
/// are down-weighted by depth⁻².
const IMPORTANCE_DEPTH: u32 = 4;

struct Candidate {
    score: f64,
    feature: usize,
    threshold: f64,
}

struct Grower<'a, R: SplitRule> {
    x: &'a Array2<f64>,
    rule: &'a R,
    params: GrowParams,
    nodes: Vec<TreeNode>,
    importance: Vec<f64>,
}

/// Grow one tree. Returns `None` when the root cannot carry a leaf value.
pub(crate) fn grow_tree<R: SplitRule, G: Rng>(
    x: &Array2<f64>,
    rule: &R,
    structure_rows: Vec<usize>,
    estimation_rows: Vec<usize>,
    params: GrowParams,
    rng: &mut G,
) -> Option<Tree> {
    let root_value = rule.leaf_value(&estimation_rows)?;
    let mut g = Grower {
        x,
        rule,
        params,
        nodes: Vec::new(),
        importance: vec![0.0; x.ncols()],
    };
    let s = structure_rows.clone();
    let e = estimation_rows.clone();
    g.grow(s, e, root_value, 1, rng);
    Some(Tree {
        nodes: g.nodes,
        importance: g.importance,
        structure_rows: structure_rows.iter().map(|&r| r as u32).collect(),
        estimation_rows: estimation_rows.iter().map(|&r| r as u32).collect(),
    })
}

impl<R: SplitRule> Grower<'_, R> {
    fn push_leaf(&mut self, value: f64, n: usize) -> u32 {
        self.nodes.push(TreeNode {
            split_feature: None,
            split_threshold: 0.0,
            left: 0,
            right: 0,
            leaf_value: value,
            n_samples: n,
        });
        (self.nodes.len() - 1) as u32
    }

    fn grow<G: Rng>(
        &mut self,
        structure: Vec<usize>,
        estimation: Vec<usize>,
        value: f64,
        depth: u32,
        rng: &mut G,
    ) -> u32 {
        let min_leaf = self.params.min_leaf;
        if structure.len() < 2 * min_leaf || estimation.len() < 2 * min_leaf {
            return self.push_leaf(value, estimation.len());
        }
        let Some(mut candidates) = self.candidates(&structure, &estimation, rng) else {
            return self.push_leaf(value, estimation.len());
        };
        // Stable sort keeps (feature, threshold) ascending among equal scores.
        candidates.sort_by(|a, b| b.score.total_cmp(&a.score));
        for c in candidates.iter().take(8) {
            let (ls, rs): (Vec<usize>, Vec<usize>) = structure
                .iter()
                .partition(|&&r| self.x[[r, c.feature]] <= c.threshold);
            let (le, re): (Vec<usize>, Vec<usize>) = estimation
                .iter()
                .partition(|&&r| self.x[[r, c.feature]] <= c.threshold);
            if !self.rule.accept_children((&ls, &le), (&rs, &re)) {
                continue;
            }
            let (Some(lv), Some(rv)) = (self.rule.leaf_value(&le), self.rule.leaf_value(&re))
            else {
                continue;
            };
            if depth <= IMPORTANCE_DEPTH {
                let decay = 1.0 / f64::from(depth * depth);
                self.importance[c.feature] += decay * self.rule.importance(c.score, structure.len());
            }
            let id = self.nodes.len();
            self.nodes.push(TreeNode {
                split_feature: Some(c.feature),
                split_threshold: c.threshold,
                left: 0,
                right: 0,
                leaf_value: value,
                n_samples: estimation.len(),
            });
            let l = self.grow(ls, le, lv, depth + 1, rng);
            let r = self.grow(rs, re, rv, depth + 1, rng);
            self.nodes[id].left = l;
            self.nodes[id].right = r;
            return id as u32;
        }
        self.push_leaf(value, estimation.len())
    }

    fn candidates<G: Rng>(
        &self,
        structure: &[usize],
        estimation: &[usize],
        rng: &mut G,
    ) -> Option<Vec<Candidate>> {
        let p = self.x.ncols();
        let stats = self.rule.node_stats(structure)?;
        let est_stats = if self.params.honest {
            Some(self.rule.est_stats(estimation)?)
        } else {
            None
        };
        let mut features: Vec<usize> = if self.params.mtry >= p {
            (0..p).collect()
        } else {
            sample(rng, p, self.params.mtry).into_vec()
        };
        features.sort_unstable();

        let min_leaf = self.params.min_leaf;
        let mut out = Vec::new();
        let mut order: Vec<usize> = (0..structure.len()).collect();
        let mut est_order: Vec<usize> = (0..estimation.len()).collect();
        let mut total = R::Stat::default();
        for s in &stats {
            total.add(s);
        }
        let mut est_total = R::Stat::default();
        if let Some(es) = &est_stats {
            for s in es {
                est_total.add(s);
            }
        }

        for &f in &features {
            let xs = |k: usize| self.x[[structure[k], f]];
            order.sort_by(|&a, &b| xs(a).total_cmp(&xs(b)));
            let xe = |k: usize| self.x[[estimation[k], f]];
            if est_stats.is_some() {
                est_order.sort_by(|&a, &b| xe(a).total_cmp(&xe(b)));
            }
            let mut left = R::Stat::default();
            let mut est_left = R::Stat::default();
            let mut j = 0usize;
            let n = order.len();
            for i in 0..n - 1 {
                left.add(&stats[order[i]]);
                let lo = xs(order[i]);
                let hi = xs(order[i + 1]);
                if lo >= hi {
                    continue;
                }
                let n_left = i + 1;
                if n_left < min_leaf {
                    continue;
                }
                if n - n_left < min_leaf {
                    break;
                }
                let threshold = lo + (hi - lo) / 2.0;
                let threshold = if threshold >= hi { lo } else { threshold };
                if let Some(es) = &est_stats {
                    while j < est_order.len() && xe(est_order[j]) <= threshold {
                        est_left.add(&es[est_order[j]]);
                        j += 1;
                    }
                    if j < min_leaf || est_order.len() - j < min_leaf {
                        continue;
                    }
                    let mut est_right = est_total;
                    est_right.sub(&est_left);
                    if !self.rule.est_child_ok(&est_left) || !self.rule.est_child_ok(&est_right) {
                        continue;
                    }
                } else if !self.rule.est_child_ok(&left) || !{
                    let mut r = total;
                    r.sub(&left);
                    self.rule.est_child_ok(&r)
                } {
                    continue;
                }
                let mut right = total;
                right.sub(&left);
                if let Some(score) = self.rule.score(&left, &right) {
                    if score > 0.0 && score.is_finite() {
                        out.push(Candidate {
                            score,
                            feature: f,
                            threshold,
                        });
                    }
                }
            }
        }
        (!out.is_empty()).then_some(out)
    }
}

/// Plain regression rule: variance reduction, leaf mean.
pub(crate) struct VarianceRule<'a> {
    pub y: &'a [f64],
}

#[derive(Clone, Copy, Default)]
pub(crate) struct MomentStat {
    n: f64,
    s: f64,
}

impl NodeStat for MomentStat {
    fn add(&mut self, o: &Self) {
        self.n += o.n;
        self.s += o.s;
    }
    fn sub(&mut self, o: &Self) {
        self.n -= o.n;
        self.s -= o.s;
    }
}

impl SplitRule for VarianceRule<'_> {
    type Stat = MomentStat;

    fn node_stats(&self, rows: &[usize]) -> Option<Vec<MomentStat>> {
        Some(rows.iter().map(|&r| MomentStat { n: 1.0, s: self.y[r] }).collect())
    }

    // SSE decrease: sL^2/nL + sR^2/nR - s^2/n.
    fn score(&self, l: &MomentStat, r: &MomentStat) -> Option<f64> {
        let n = l.n + r.n;
        let s = l.s + r.s;
        Some(l.s * l.s / l.n + r.s * r.s / r.n - s * s / n)
    }

    fn leaf_value(&self, rows: &[usize]) -> Option<f64> {
        if rows.is_empty() {
            return None;
        }
        Some(rows.iter().map(|&r| self.y[r]).sum::<f64>() / rows.len() as f64)
    }
}

/// Binary classification rule: Gini decrease, leaf class-1 share.
pub(crate) struct GiniRule<'a> {
    pub labels: &'a [f64],
}

impl SplitRule for GiniRule<'_> {
    type Stat = MomentStat;

    fn node_stats(&self, rows: &[usize]) -> Option<Vec<MomentStat>> {
        Some(
            rows.iter()
                .map(|&r| MomentStat {
                    n: 1.0,
                    s: self.labels[r],
                })
                .collect(),
        )
    }

    // n*G(parent) - nL*G(L) - nR*G(R) with G = 2p(1-p).
    fn score(&self, l: &MomentStat, r: &MomentStat) -> Option<f64> {
        let weighted = |st: &MomentStat| {
            let p = st.s / st.n;
            st.n * 2.0 * p * (1.0 - p)
        };
        let parent = MomentStat {
            n: l.n + r.n,
            s: l.s + r.s,
        };
        Some(weighted(&parent) - weighted(l) - weighted(r))
    }

    fn leaf_value(&self, rows: &[usize]) -> Option<f64> {
        if rows.is_empty() {
            return None;
        }
        Some(rows.iter().map(|&r| self.labels[r]).sum::<f64>() / rows.len() as f64)
    }
}
