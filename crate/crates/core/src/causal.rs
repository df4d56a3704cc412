//! Honest causal forest on residualized outcome and treatment: CATE
//! estimates with half-sample variance, ATE aggregation, importance, and
//! partial dependence.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::dml::ResidualizedPanel;
use crate::error::{Error, Result};
use crate::forest::tree::{NodeStat, SplitRule};
use crate::forest::{check_dim, grow_forest, predict_per_tree, ForestConfig, ForestKind, Tree};
use crate::panel::{CountryCode, PairKey, PanelDataset};

/// Smallest Σ T̃² a leaf may carry.
pub const LEAF_EPS: f64 = 1e-10;
pub const Z95: f64 = 1.959963984540054;

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct EffectStat {
    pub n: f64,
    pub tt: f64,
    pub ty: f64,
}

impl NodeStat for EffectStat {
    fn add(&mut self, o: &Self) {
        self.n += o.n;
        self.tt += o.tt;
        self.ty += o.ty;
    }
    fn sub(&mut self, o: &Self) {
        self.n -= o.n;
        self.tt -= o.tt;
        self.ty -= o.ty;
    }
}

impl EffectStat {
    pub fn new(t: f64, y: f64) -> Self {
        EffectStat {
            n: 1.0,
            tt: t * t,
            ty: t * y,
        }
    }

    pub fn effect(&self) -> Option<f64> {
        (self.tt > LEAF_EPS).then(|| self.ty / self.tt)
    }
}

/// Split score n_L n_R / n² · (τ_L − τ_R)².
pub(crate) fn heterogeneity_score(l: &EffectStat, r: &EffectStat) -> Option<f64> {
    let (tl, tr) = (l.effect()?, r.effect()?);
    let n = l.n + r.n;
    Some(l.n * r.n / (n * n) * (tl - tr).powi(2))
}

pub(crate) fn leaf_effect(t: &[f64], y: &[f64], rows: &[usize]) -> Option<f64> {
    let mut s = EffectStat::default();
    for &r in rows {
        s.add(&EffectStat::new(t[r], y[r]));
    }
    s.effect()
}

struct CausalRule<'a> {
    t: &'a [f64],
    y: &'a [f64],
}

impl SplitRule for CausalRule<'_> {
    type Stat = EffectStat;

    fn node_stats(&self, rows: &[usize]) -> Option<Vec<EffectStat>> {
        Some(rows.iter().map(|&r| EffectStat::new(self.t[r], self.y[r])).collect())
    }

    fn score(&self, l: &EffectStat, r: &EffectStat) -> Option<f64> {
        heterogeneity_score(l, r)
    }

    fn est_child_ok(&self, c: &EffectStat) -> bool {
        c.tt > LEAF_EPS
    }

    fn importance(&self, score: f64, n_struct: usize) -> f64 {
        score * n_struct as f64
    }

    fn leaf_value(&self, rows: &[usize]) -> Option<f64> {
        leaf_effect(self.t, self.y, rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CausalForestModel {
    pub kind: ForestKind,
    pub config: ForestConfig,
    pub feature_names: Vec<String>,
    /// Observed (min, max) of each modifier in training.
    pub feature_ranges: Vec<(f64, f64)>,
    pub trees: Vec<Tree>,
}

impl CausalForestModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Trees per half-sample group.
    pub fn variance_groups(&self) -> usize {
        self.config.group_size
    }
}

pub(crate) fn check_causal_inputs(
    x: &Array2<f64>,
    y: &[f64],
    t: &[f64],
    names: &[String],
    cfg: &ForestConfig,
) -> Result<()> {
    cfg.validate()?;
    if cfg.group_size < 2 {
        return Err(Error::InvalidConfig(
            "causal forests need group_size >= 2 for variance estimates".into(),
        ));
    }
    for got in [y.len(), t.len()] {
        if got != x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got,
            });
        }
    }
    if names.len() != x.ncols() || x.ncols() == 0 {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            got: names.len(),
        });
    }
    if x.iter().chain(y).chain(t).any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("inputs contain non-finite values".into()));
    }
    if t.iter().all(|&v| v == t[0]) {
        return Err(Error::NoTreatmentVariation);
    }
    let needed = cfg.min_rows().max(2 * cfg.min_samples_leaf);
    if x.nrows() < needed {
        return Err(Error::TooFewRows {
            needed,
            have: x.nrows(),
        });
    }
    Ok(())
}

pub(crate) fn feature_ranges(x: &Array2<f64>) -> Vec<(f64, f64)> {
    x.columns()
        .into_iter()
        .map(|c| {
            c.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
        })
        .collect()
}

/// Causal forest on the residuals of `rp`, splitting on `modifiers`.
pub fn fit_causal_forest(
    ds: &PanelDataset,
    rp: &ResidualizedPanel,
    modifiers: &[String],
    cfg: &ForestConfig,
) -> Result<CausalForestModel> {
    let x = ds.matrix(modifiers, &rp.rows)?;
    fit_causal_forest_matrix(&x, &rp.y_tilde, &rp.t_tilde, modifiers, cfg)
}

pub fn fit_causal_forest_matrix(
    x: &Array2<f64>,
    y_tilde: &[f64],
    t_tilde: &[f64],
    names: &[String],
    cfg: &ForestConfig,
) -> Result<CausalForestModel> {
    check_causal_inputs(x, y_tilde, t_tilde, names, cfg)?;
    let rule = CausalRule {
        t: t_tilde,
        y: y_tilde,
    };
    let trees = grow_forest(x, &rule, cfg, ForestKind::Causal)?;
    Ok(CausalForestModel {
        kind: ForestKind::Causal,
        config: *cfg,
        feature_names: names.to_vec(),
        feature_ranges: feature_ranges(x),
        trees,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AteEstimate {
    pub point: f64,
    pub se: f64,
    pub ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CateResult {
    pub tau_hat: Vec<f64>,
    pub var_hat: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub ate: f64,
    pub ate_se: f64,
    pub ate_ci: (f64, f64),
    pub n_treated: usize,
    pub n_control: usize,
    /// Per-tree predictions (`n_trees x n_rows`), kept for aggregate CIs.
    #[serde(skip)]
    pub draws: Option<Array2<f64>>,
    pub group_size: usize,
}

impl CateResult {
    pub fn len(&self) -> usize {
        self.tau_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau_hat.is_empty()
    }

    /// Record the treated/control split of the predicted rows.
    pub fn with_treatment(mut self, t: &[f64]) -> Self {
        self.n_treated = t.iter().filter(|&&v| v == 1.0).count();
        self.n_control = t.len() - self.n_treated;
        self
    }
}

/// Half-sample ("little bags") variance of a forest average from per-tree
/// values grouped in consecutive blocks of `group_size`.
pub fn little_bags_variance(values: &[f64], group_size: usize) -> f64 {
    let l = group_size;
    let g = values.len() / l;
    if l < 2 || g < 2 {
        return f64::NAN;
    }
    let mean = values[..g * l].iter().sum::<f64>() / (g * l) as f64;
    let mut between = 0.0;
    let mut within = 0.0;
    for chunk in values[..g * l].chunks(l) {
        let m = chunk.iter().sum::<f64>() / l as f64;
        between += (m - mean).powi(2);
        within += chunk.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (l - 1) as f64;
    }
    let between = between / g as f64;
    let noise = within / g as f64 / l as f64;
    debias(between, noise, g as f64)
}

/// Posterior mean of a non-negative variance given a noisy difference
/// estimate; never negative, close to `between - noise` when that is large.
fn debias(between: f64, noise: f64, n_groups: f64) -> f64 {
    let est = between - noise;
    let se = between.max(noise) * (2.0 / n_groups).sqrt();
    if se <= 0.0 {
        return est.max(0.0);
    }
    let ratio = est / se;
    let pdf = (-ratio * ratio / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let cdf = 0.5 * statrs::function::erf::erfc(-ratio / std::f64::consts::SQRT_2);
    if cdf < 1e-300 {
        return 0.0;
    }
    (est + se * pdf / cdf).max(0.0)
}

/// CATE for every row of `x`, with per-row variance and 95% interval.
pub fn predict_cate(model: &CausalForestModel, x: ArrayView2<f64>) -> Result<CateResult> {
    check_dim(model.n_features(), &x)?;
    let draws = predict_per_tree(&model.trees, model.n_features(), x)?;
    let n = x.nrows();
    let b = draws.nrows() as f64;
    let l = model.config.group_size;
    let mut tau_hat = Vec::with_capacity(n);
    let mut var_hat = Vec::with_capacity(n);
    let mut col = vec![0.0; draws.nrows()];
    for i in 0..n {
        for (k, v) in draws.column(i).iter().enumerate() {
            col[k] = *v;
        }
        tau_hat.push(col.iter().sum::<f64>() / b);
        var_hat.push(little_bags_variance(&col, l));
    }
    let ci_lo = tau_hat.iter().zip(&var_hat).map(|(t, v)| t - Z95 * v.sqrt()).collect();
    let ci_hi = tau_hat.iter().zip(&var_hat).map(|(t, v)| t + Z95 * v.sqrt()).collect();
    let mut res = CateResult {
        tau_hat,
        var_hat,
        ci_lo,
        ci_hi,
        ate: f64::NAN,
        ate_se: f64::NAN,
        ate_ci: (f64::NAN, f64::NAN),
        n_treated: 0,
        n_control: 0,
        draws: Some(draws),
        group_size: l,
    };
    if n > 0 {
        let a = ate(&res, None)?;
        res.ate = a.point;
        res.ate_se = a.se;
        res.ate_ci = a.ci;
    }
    Ok(res)
}

/// Weighted mean of τ̂ with a CI combining the forest's half-sample variance
/// of that mean and the between-row dispersion of τ̂.
pub fn ate(result: &CateResult, weights: Option<&[f64]>) -> Result<AteEstimate> {
    weighted_mean(result, weights, true)
}

/// Weighted mean of τ̂ with only the forest's half-sample variance; used for
/// pair-level intervals, which are approximate.
pub fn weighted_mean(
    result: &CateResult,
    weights: Option<&[f64]>,
    dispersion: bool,
) -> Result<AteEstimate> {
    let n = result.len();
    let w: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: w.len(),
                });
            }
            if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidConfig("weights must be finite and non-negative".into()));
            }
            w.to_vec()
        }
        None => vec![1.0; n],
    };
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::AllZeroWeights);
    }
    let point = w.iter().zip(&result.tau_hat).map(|(w, t)| w * t).sum::<f64>() / total;
    let forest_var = match &result.draws {
        Some(d) => {
            let per_tree: Vec<f64> = d
                .outer_iter()
                .map(|row| row.iter().zip(&w).map(|(t, w)| t * w).sum::<f64>() / total)
                .collect();
            little_bags_variance(&per_tree, result.group_size)
        }
        // Without draws, treat rows as independent.
        None => w.iter().zip(&result.var_hat).map(|(w, v)| w * w * v).sum::<f64>() / (total * total),
    };
    let disp = if dispersion {
        w.iter()
            .zip(&result.tau_hat)
            .map(|(w, t)| (w * (t - point)).powi(2))
            .sum::<f64>()
            / (total * total)
    } else {
        0.0
    };
    let se = (forest_var + disp).sqrt();
    Ok(AteEstimate {
        point,
        se,
        ci: (point - Z95 * se, point + Z95 * se),
    })
}

/// Log points to percent change.
pub fn effect_pct(tau: f64) -> f64 {
    (tau.exp() - 1.0) * 100.0
}

/// Split importance weighted by heterogeneity gain and depth, normalized to
/// sum 1.
/// A forest without splits spreads importance evenly.
pub fn feature_importance(model: &CausalForestModel) -> Vec<(String, f64)> {
    let p = model.n_features();
    let mut raw = vec![0.0; p];
    for t in &model.trees {
        for (r, v) in raw.iter_mut().zip(&t.importance) {
            *r += v;
        }
    }
    let total: f64 = raw.iter().sum();
    let shares: Vec<f64> = if total > 0.0 {
        raw.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / p as f64; p]
    };
    model.feature_names.iter().cloned().zip(shares).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartialDependence {
    pub feature: String,
    pub grid: Vec<f64>,
    pub value: Vec<f64>,
    /// Mean of row-level bounds; approximate.
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub extrapolated: Vec<bool>,
}

pub fn partial_dependence(
    model: &CausalForestModel,
    feature: usize,
    grid: &[f64],
    background: ArrayView2<f64>,
) -> Result<PartialDependence> {
    check_dim(model.n_features(), &background)?;
    if feature >= model.n_features() {
        return Err(Error::DimensionMismatch {
            expected: model.n_features(),
            got: feature,
        });
    }
    if background.nrows() == 0 {
        return Err(Error::EmptyResult);
    }
    let (lo, hi) = model.feature_ranges[feature];
    let mut out = PartialDependence {
        feature: model.feature_names[feature].clone(),
        grid: grid.to_vec(),
        value: Vec::new(),
        ci_lo: Vec::new(),
        ci_hi: Vec::new(),
        extrapolated: Vec::new(),
    };
    let n = background.nrows() as f64;
    for &g in grid {
        let outside = g < lo || g > hi;
        if outside {
            log::warn!("partial dependence grid value {g} outside observed range [{lo}, {hi}]");
        }
        let mut x = background.to_owned();
        x.column_mut(feature).fill(g);
        let r = predict_cate(model, x.view())?;
        out.value.push(r.tau_hat.iter().sum::<f64>() / n);
        out.ci_lo.push(r.ci_lo.iter().sum::<f64>() / n);
        out.ci_hi.push(r.ci_hi.iter().sum::<f64>() / n);
        out.extrapolated.push(outside);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairEffect {
    pub pair: PairKey,
    pub n_rows: usize,
    pub tau: f64,
    pub effect_pct: f64,
    /// Approximate: half-sample interval of the pair's row mean.
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Mean CATE per pair. `rows[i]` is the dataset row of result row `i`.
pub fn pair_effects(result: &CateResult, ds: &PanelDataset, rows: &[usize]) -> Result<Vec<PairEffect>> {
    if rows.len() != result.len() {
        return Err(Error::DimensionMismatch {
            expected: result.len(),
            got: rows.len(),
        });
    }
    let mut by_pair: BTreeMap<PairKey, Vec<usize>> = BTreeMap::new();
    for (i, &r) in rows.iter().enumerate() {
        by_pair.entry(ds.observations()[r].pair).or_default().push(i);
    }
    by_pair
        .into_iter()
        .map(|(pair, idx)| {
            let mut w = vec![0.0; result.len()];
            for &i in &idx {
                w[i] = 1.0;
            }
            let m = weighted_mean(result, Some(&w), false)?;
            Ok(PairEffect {
                pair,
                n_rows: idx.len(),
                tau: m.point,
                effect_pct: effect_pct(m.point),
                ci_lo: m.ci.0,
                ci_hi: m.ci.1,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountryEffect {
    pub country: CountryCode,
    pub n_pairs: usize,
    /// Percent effect of the mean pair effect.
    pub effect_pct: f64,
    /// Standard deviation of pair effects, in percent.
    pub std: f64,
    pub min_pct: f64,
    pub max_pct: f64,
}

/// Aggregate pair effects to every country taking part in them.
pub fn country_effects(pairs: &[PairEffect]) -> Vec<CountryEffect> {
    let mut by: BTreeMap<CountryCode, Vec<f64>> = BTreeMap::new();
    for p in pairs {
        by.entry(p.pair.a()).or_default().push(p.tau);
        by.entry(p.pair.b()).or_default().push(p.tau);
    }
    by.into_iter()
        .map(|(country, taus)| {
            let n = taus.len() as f64;
            let mean = taus.iter().sum::<f64>() / n;
            let pcts: Vec<f64> = taus.iter().map(|&t| effect_pct(t)).collect();
            let mp = pcts.iter().sum::<f64>() / n;
            let std = if taus.len() > 1 {
                (pcts.iter().map(|p| (p - mp).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            CountryEffect {
                country,
                n_pairs: taus.len(),
                effect_pct: effect_pct(mean),
                std,
                min_pct: pcts.iter().cloned().fold(f64::INFINITY, f64::min),
                max_pct: pcts.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

/// `pair,year,tau_hat,var_hat,ci_lo,ci_hi`
pub fn write_cate_csv<W: Write>(
    result: &CateResult,
    ds: &PanelDataset,
    rows: &[usize],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["pair", "year", "tau_hat", "var_hat", "ci_lo", "ci_hi"])?;
    for (i, &r) in rows.iter().enumerate() {
        let o = &ds.observations()[r];
        w.write_record([
            o.pair.to_string(),
            o.year.to_string(),
            result.tau_hat[i].to_string(),
            result.var_hat[i].to_string(),
            result.ci_lo[i].to_string(),
            result.ci_hi[i].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// `pair,n_rows,tau,effect_pct,ci_lo,ci_hi`
pub fn write_pair_csv<W: Write>(pairs: &[PairEffect], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["pair", "n_rows", "tau", "effect_pct", "ci_lo", "ci_hi"])?;
    for p in pairs {
        w.write_record([
            p.pair.to_string(),
            p.n_rows.to_string(),
            p.tau.to_string(),
            p.effect_pct.to_string(),
            p.ci_lo.to_string(),
            p.ci_hi.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// `country,effect_pct,std,min_pct,max_pct`
pub fn write_country_csv<W: Write>(countries: &[CountryEffect], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["country", "effect_pct", "std", "min_pct", "max_pct"])?;
    for c in countries {
        w.write_record([
            c.country.to_string(),
            c.effect_pct.to_string(),
            c.std.to_string(),
            c.min_pct.to_string(),
            c.max_pct.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(r: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(r)
    }

    /// Residual-scale data: T̃ centered binary, Ỹ = τ(x) T̃ + noise.
    fn residual_data(
        n: usize,
        p: usize,
        seed: u64,
        tau: impl Fn(&[f64]) -> f64,
    ) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, p), |_| normal(&mut r));
        let mut y = Vec::with_capacity(n);
        let mut t = Vec::with_capacity(n);
        for i in 0..n {
            let ti = f64::from(r.random_bool(0.5)) - 0.5;
            let row: Vec<f64> = x.row(i).to_vec();
            y.push(tau(&row) * ti + 0.5 * normal(&mut r));
            t.push(ti);
        }
        (x, y, t)
    }

    fn names(p: usize) -> Vec<String> {
        (1..=p).map(|k| format!("x{k}")).collect()
    }

    fn cfg(seed: u64) -> ForestConfig {
        ForestConfig {
            n_trees: 200,
            ..ForestConfig::causal(seed)
        }
    }

    #[test]
    fn effect_pct_matches_reported_conversions() {
        for (tau, pct) in [
            (0.157, 17.0),
            (0.120, 12.8),
            (0.204, 22.6),
            (0.252, 28.6),
            (0.133, 14.2),
            (0.126, 13.4),
        ] {
            assert!((effect_pct(tau) - pct).abs() < 0.1, "{tau}");
        }
        assert_eq!(effect_pct(0.0), 0.0);
    }

    #[test]
    fn step_effect_is_recovered_and_drives_importance() {
        let (x, y, t) = residual_data(2000, 2, 1, |r| if r[0] > 0.0 { 0.5 } else { 0.0 });
        let m = fit_causal_forest_matrix(&x, &y, &t, &names(2), &cfg(2)).unwrap();
        let res = predict_cate(&m, x.view()).unwrap();
        let (mut hi, mut lo, mut nh, mut nl) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..2000 {
            if x[[i, 0]] > 0.0 {
                hi += res.tau_hat[i];
                nh += 1.0;
            } else {
                lo += res.tau_hat[i];
                nl += 1.0;
            }
        }
        let gap = hi / nh - lo / nl;
        assert!((gap - 0.5).abs() < 0.1, "gap {gap}");
        let imp = feature_importance(&m);
        assert!(imp[0].1 > 0.7, "{imp:?}");
        assert!((imp.iter().map(|(_, v)| v).sum::<f64>() - 1.0).abs() < 1e-9);
        for i in 0..2000 {
            assert!(res.ci_lo[i] <= res.tau_hat[i] && res.tau_hat[i] <= res.ci_hi[i]);
        }
        let min = res.tau_hat.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = res.tau_hat.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(min <= res.ate && res.ate <= max);
    }

    #[test]
    fn leaves_hold_enough_rows_and_treatment_variation() {
        let (x, y, t) = residual_data(800, 2, 3, |_| 0.2);
        let c = cfg(4);
        let m = fit_causal_forest_matrix(&x, &y, &t, &names(2), &c).unwrap();
        for tree in &m.trees {
            let s: std::collections::HashSet<u32> = tree.structure_rows.iter().copied().collect();
            assert!(tree.estimation_rows.iter().all(|r| !s.contains(r)));
            let est: Vec<usize> = tree.estimation_rows.iter().map(|&r| r as usize).collect();
            let mut counts: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
            for &r in &est {
                let leaf = tree.leaf_index(x.row(r));
                let e = counts.entry(leaf).or_default();
                e.0 += 1;
                e.1 += t[r] * t[r];
            }
            for (n, tt) in counts.values() {
                assert!(*n >= c.min_samples_leaf && *tt > LEAF_EPS);
            }
        }
    }

    #[test]
    fn zero_treatment_residuals_are_rejected() {
        let (x, y, _) = residual_data(400, 2, 5, |_| 0.0);
        let t = vec![0.0; 400];
        assert!(matches!(
            fit_causal_forest_matrix(&x, &y, &t, &names(2), &cfg(1)),
            Err(Error::NoTreatmentVariation)
        ));
        let (x, y, t) = residual_data(50, 2, 5, |_| 0.0);
        assert!(matches!(
            fit_causal_forest_matrix(&x, &y, &t, &names(2), &cfg(1)),
            Err(Error::TooFewRows { .. })
        ));
    }

    #[test]
    fn identical_rows_get_identical_results() {
        let (x, y, t) = residual_data(600, 2, 7, |r| r[0]);
        let m = fit_causal_forest_matrix(&x, &y, &t, &names(2), &cfg(8)).unwrap();
        let q = ndarray::array![[0.3, -1.0], [0.3, -1.0]];
        let r = predict_cate(&m, q.view()).unwrap();
        assert_eq!(r.tau_hat[0], r.tau_hat[1]);
        assert_eq!(r.ci_lo[0], r.ci_lo[1]);
        assert_eq!(r.ci_hi[0], r.ci_hi[1]);
        assert!(matches!(
            predict_cate(&m, ndarray::array![[1.0]].view()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn weighted_mean_identities() {
        let draws = ndarray::array![[1.0, 2.0], [1.5, 2.5], [0.5, 3.0], [1.0, 2.0]];
        let res = CateResult {
            tau_hat: vec![1.0, 2.375],
            var_hat: vec![0.1, 0.2],
            ci_lo: vec![0.0, 1.0],
            ci_hi: vec![2.0, 3.0],
            ate: 0.0,
            ate_se: 0.0,
            ate_ci: (0.0, 0.0),
            n_treated: 0,
            n_control: 0,
            draws: Some(draws),
            group_size: 2,
        };
        let one = ate(&res, Some(&[0.0, 1.0])).unwrap();
        assert_eq!(one.point, 2.375);
        let row_var = little_bags_variance(&[2.0, 2.5, 3.0, 2.0], 2);
        assert!((one.se - row_var.sqrt()).abs() < 1e-12);
        assert!(matches!(ate(&res, Some(&[0.0, 0.0])), Err(Error::AllZeroWeights)));

        let constant = CateResult {
            tau_hat: vec![0.4; 3],
            draws: None,
            var_hat: vec![0.0; 3],
            ..res.clone()
        };
        assert!((ate(&constant, None).unwrap().point - 0.4).abs() < 1e-15);

        // Duplicating a row and halving its weight keeps the point.
        let dup = CateResult {
            tau_hat: vec![1.0, 2.375, 2.375],
            var_hat: vec![0.1, 0.2, 0.2],
            draws: Some(ndarray::array![
                [1.0, 2.0, 2.0],
                [1.5, 2.5, 2.5],
                [0.5, 3.0, 3.0],
                [1.0, 2.0, 2.0]
            ]),
            ..res.clone()
        };
        let a = ate(&res, None).unwrap().point;
        let b = ate(&dup, Some(&[1.0, 0.5, 0.5])).unwrap().point;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn little_bags_separates_signal_from_tree_noise() {
        // Group means spread with variance 1; within-group noise variance 4.
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let mut vals = Vec::new();
        for _ in 0..2000 {
            let c = normal(&mut r);
            for _ in 0..4 {
                vals.push(c + 2.0 * normal(&mut r));
            }
        }
        let v = little_bags_variance(&vals, 4);
        assert!((v - 1.0).abs() < 0.15, "{v}");
        assert!(little_bags_variance(&[1.0; 8], 4) == 0.0);
    }

    #[test]
    fn partial_dependence_tracks_a_monotone_effect() {
        let (x, y, t) = residual_data(2000, 2, 11, |r| 0.1 + 0.2 * r[0]);
        let m = fit_causal_forest_matrix(&x, &y, &t, &names(2), &cfg(12)).unwrap();
        let grid: Vec<f64> = (0..11).map(|k| -1.5 + 0.3 * k as f64).collect();
        let bg = x.slice(ndarray::s![..200, ..]);
        let pd = partial_dependence(&m, 0, &grid, bg).unwrap();
        let up = pd.value.windows(2).filter(|w| w[1] >= w[0]).count();
        assert!(up as f64 >= 0.9 * 10.0, "{:?}", pd.value);
        assert!(pd.extrapolated.iter().all(|e| !e));
        let far = partial_dependence(&m, 0, &[99.0], bg).unwrap();
        assert_eq!(far.extrapolated, vec![true]);
        let one = partial_dependence(&m, 0, &[0.2], bg).unwrap();
        let mut xb = bg.to_owned();
        xb.column_mut(0).fill(0.2);
        let direct = predict_cate(&m, xb.view()).unwrap();
        let mean = direct.tau_hat.iter().sum::<f64>() / 200.0;
        assert!((one.value[0] - mean).abs() < 1e-12);
    }

    #[test]
    fn constant_effect_model_has_flat_dependence() {
        let (x, y, t) = residual_data(1000, 1, 13, |_| 0.3);
        let m = fit_causal_forest_matrix(&x, &y, &t, &names(1), &cfg(14)).unwrap();
        assert_eq!(feature_importance(&m), vec![("x1".to_string(), 1.0)]);
        let pd = partial_dependence(&m, 0, &[-1.0, 0.0, 1.0], x.view()).unwrap();
        for v in &pd.value {
            assert!((v - 0.3).abs() < 0.1, "{v}");
        }
    }
}
