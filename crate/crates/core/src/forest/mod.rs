//! Random forests grown from scratch: regression and binary classification
//! (the first-stage nuisance learners) plus the subsampling and tree-growing
//! machinery reused by the causal forests.

pub(crate) mod tree;

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use tree::{Tree, TreeNode};
use tree::{grow_tree, GiniRule, GrowParams, SplitRule, VarianceRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaxFeatures {
    /// ceil(p/3) for regression, ceil(sqrt(p)) for classification, all
    /// features for causal forests.
    Auto,
    All,
    Count(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub min_samples_leaf: usize,
    pub subsample_fraction: f64,
    pub max_features: MaxFeatures,
    pub honest: bool,
    pub honest_fraction: f64,
    /// Trees per shared half-sample. Values above 1 enable the little-bags
    /// variance estimate; `n_trees` must be a multiple.
    pub group_size: usize,
    pub seed: u64,
}

impl ForestConfig {
    /// First-stage learners: 200 trees, leaves of at least 20 rows.
    pub fn nuisance(seed: u64) -> Self {
        ForestConfig {
            n_trees: 200,
            min_samples_leaf: 20,
            subsample_fraction: 0.5,
            max_features: MaxFeatures::Auto,
            honest: false,
            honest_fraction: 0.5,
            group_size: 1,
            seed,
        }
    }

    /// Causal forest: 500 honest trees, leaves of at least 30 rows, groups of 4.
    pub fn causal(seed: u64) -> Self {
        ForestConfig {
            n_trees: 500,
            min_samples_leaf: 30,
            subsample_fraction: 0.5,
            max_features: MaxFeatures::Auto,
            honest: true,
            honest_fraction: 0.5,
            group_size: 4,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_trees == 0 {
            return bad("n_trees must be at least 1");
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be at least 1");
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return bad("subsample_fraction must lie in (0, 1]");
        }
        if self.honest && !(self.honest_fraction > 0.0 && self.honest_fraction < 1.0) {
            return bad("honest_fraction must lie strictly between 0 and 1");
        }
        if self.group_size == 0 || self.n_trees % self.group_size != 0 {
            return bad("n_trees must be a positive multiple of group_size");
        }
        if self.group_size > 1 && self.subsample_fraction > 0.5 {
            return bad("grouped trees need subsample_fraction <= 0.5");
        }
        if let MaxFeatures::Count(0) = self.max_features {
            return bad("max_features must be at least 1");
        }
        Ok(())
    }

    pub(crate) fn mtry(&self, p: usize, kind: ForestKind) -> usize {
        match self.max_features {
            MaxFeatures::All => p,
            MaxFeatures::Count(k) => k.min(p),
            MaxFeatures::Auto => match kind {
                ForestKind::Regression => p.div_ceil(3),
                ForestKind::Classification => (p as f64).sqrt().ceil() as usize,
                ForestKind::Causal | ForestKind::FixedEffectsCausal => p,
            },
        }
        .max(1)
    }

    fn subsample_size(&self, n: usize) -> usize {
        let s = (self.subsample_fraction * n as f64).round() as usize;
        let s = s.clamp(1, n);
        if self.group_size > 1 {
            s.min(n / 2)
        } else {
            s
        }
    }

    /// Smallest row count that leaves every tree at least one valid leaf.
    pub fn min_rows(&self) -> usize {
        let mut n = self.min_samples_leaf;
        loop {
            let s = self.subsample_size(n);
            let (a, b) = self.honest_sizes(s);
            if a >= self.min_samples_leaf && b >= self.min_samples_leaf {
                return n;
            }
            n += 1;
        }
    }

    fn honest_sizes(&self, s: usize) -> (usize, usize) {
        if self.honest {
            let k = ((self.honest_fraction * s as f64).floor() as usize).clamp(1, s.saturating_sub(1).max(1));
            (k, s - k)
        } else {
            (s, s)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForestKind {
    Regression,
    Classification,
    Causal,
    FixedEffectsCausal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForestWarning {
    /// Constant target: every tree is a single leaf.
    DegenerateTarget,
    /// Only one class present; the model predicts that class's probability.
    SingleClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub kind: ForestKind,
    pub config: ForestConfig,
    pub n_features: usize,
    pub trees: Vec<Tree>,
    pub warnings: Vec<ForestWarning>,
}

pub(crate) struct Subsample {
    pub structure: Vec<usize>,
    pub estimation: Vec<usize>,
    /// The tree's stream, positioned after the subsample draws.
    pub rng: rand_chacha::ChaCha8Rng,
}

/// Structure and estimation rows for every tree. Trees in the same group share
/// one half-sample.
pub(crate) fn draw_subsamples(n: usize, cfg: &ForestConfig) -> Vec<Subsample> {
    let s = cfg.subsample_size(n);
    let halves: Vec<Vec<usize>> = if cfg.group_size > 1 {
        (0..cfg.n_trees / cfg.group_size)
            .map(|g| {
                let mut r = rng::group_rng(cfg.seed, g);
                sample(&mut r, n, n / 2).into_vec()
            })
            .collect()
    } else {
        Vec::new()
    };
    (0..cfg.n_trees)
        .map(|b| {
            let mut r = rng::tree_rng(cfg.seed, b);
            let mut rows: Vec<usize> = if cfg.group_size > 1 {
                let half = &halves[b / cfg.group_size];
                sample(&mut r, half.len(), s.min(half.len()))
                    .into_iter()
                    .map(|k| half[k])
                    .collect()
            } else {
                sample(&mut r, n, s).into_vec()
            };
            if cfg.honest {
                rows.shuffle(&mut r);
                let (k, _) = cfg.honest_sizes(rows.len());
                let mut est = rows.split_off(k);
                rows.sort_unstable();
                est.sort_unstable();
                Subsample {
                    structure: rows,
                    estimation: est,
                    rng: r,
                }
            } else {
                rows.sort_unstable();
                Subsample {
                    structure: rows.clone(),
                    estimation: rows,
                    rng: r,
                }
            }
        })
        .collect()
}

/// Grow all trees of a forest in parallel; results are in tree order and do
/// not depend on the worker count.
pub(crate) fn grow_forest<R: SplitRule>(
    x: &Array2<f64>,
    rule: &R,
    cfg: &ForestConfig,
    kind: ForestKind,
) -> Result<Vec<Tree>> {
    let params = GrowParams {
        min_leaf: cfg.min_samples_leaf,
        mtry: cfg.mtry(x.ncols(), kind),
        honest: cfg.honest,
    };
    let samples = draw_subsamples(x.nrows(), cfg);
    let trees: Vec<Option<Tree>> = samples
        .into_par_iter()
        .map(|mut s| grow_tree(x, rule, s.structure, s.estimation, params, &mut s.rng))
        .collect();
    trees
        .into_iter()
        .map(|t| t.ok_or(Error::NoTreatmentVariation))
        .collect()
}

fn check_inputs(x: &Array2<f64>, target: &[f64], cfg: &ForestConfig) -> Result<()> {
    cfg.validate()?;
    if x.nrows() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: target.len(),
        });
    }
    if x.ncols() == 0 {
        return Err(Error::InvalidConfig("feature matrix has no columns".into()));
    }
    let needed = cfg.min_rows();
    if x.nrows() < needed {
        return Err(Error::TooFewRows {
            needed,
            have: x.nrows(),
        });
    }
    if x.iter().chain(target).any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("inputs contain non-finite values".into()));
    }
    Ok(())
}

pub fn fit_regression_forest(
    features: &Array2<f64>,
    target: &[f64],
    cfg: &ForestConfig,
) -> Result<ForestModel> {
    check_inputs(features, target, cfg)?;
    let mut warnings = Vec::new();
    if target.iter().all(|&v| v == target[0]) {
        warnings.push(ForestWarning::DegenerateTarget);
    }
    let trees = grow_forest(features, &VarianceRule { y: target }, cfg, ForestKind::Regression)?;
    Ok(ForestModel {
        kind: ForestKind::Regression,
        config: *cfg,
        n_features: features.ncols(),
        trees,
        warnings,
    })
}

pub fn fit_classification_forest(
    features: &Array2<f64>,
    labels: &[f64],
    cfg: &ForestConfig,
) -> Result<ForestModel> {
    check_inputs(features, labels, cfg)?;
    if labels.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidConfig("labels must be 0/1".into()));
    }
    let mut warnings = Vec::new();
    if labels.iter().all(|&v| v == labels[0]) {
        log::warn!("classification forest fitted on a single class");
        warnings.push(ForestWarning::SingleClass);
    }
    let trees = grow_forest(
        features,
        &GiniRule { labels },
        cfg,
        ForestKind::Classification,
    )?;
    Ok(ForestModel {
        kind: ForestKind::Classification,
        config: *cfg,
        n_features: features.ncols(),
        trees,
        warnings,
    })
}

impl ForestModel {
    pub fn predict(&self, features: ArrayView2<f64>) -> Result<Vec<f64>> {
        predict_mean(&self.trees, self.n_features, features)
    }

    /// Versioned JSON dump of the node arrays, for debugging.
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Dump<'a> {
            format_version: u32,
            model: &'a ForestModel,
        }
        Ok(serde_json::to_string(&Dump {
            format_version: 1,
            model: self,
        })?)
    }
}

pub fn predict(model: &ForestModel, features: ArrayView2<f64>) -> Result<Vec<f64>> {
    model.predict(features)
}

pub(crate) fn check_dim(n_features: usize, features: &ArrayView2<f64>) -> Result<()> {
    if features.ncols() != n_features {
        return Err(Error::DimensionMismatch {
            expected: n_features,
            got: features.ncols(),
        });
    }
    Ok(())
}

pub(crate) fn predict_mean(
    trees: &[Tree],
    n_features: usize,
    features: ArrayView2<f64>,
) -> Result<Vec<f64>> {
    check_dim(n_features, &features)?;
    let b = trees.len() as f64;
    Ok(features
        .outer_iter()
        .map(|row| trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / b)
        .collect())
}

/// Per-tree predictions, `n_trees x n_rows`.
pub(crate) fn predict_per_tree(
    trees: &[Tree],
    n_features: usize,
    features: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_dim(n_features, &features)?;
    let n = features.nrows();
    let rows: Vec<Vec<f64>> = trees
        .par_iter()
        .map(|t| features.outer_iter().map(|row| t.predict_row(row)).collect())
        .collect();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((trees.len(), n), flat).expect("shape matches"))
}
