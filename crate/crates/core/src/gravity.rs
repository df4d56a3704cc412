//! Benchmark gravity estimators: log-linear OLS and PPML with absorbed
//! fixed effects and pair-clustered standard errors.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::causal::effect_pct;
use crate::error::{Error, Result};
use crate::fe::{demean, DemeanOptions, Factor};
use crate::panel::{PanelDataset, TREATMENT};

const Z95: f64 = 1.959963984540054;
/// A regressor whose residual norm after projection falls below this
/// fraction of its raw norm is treated as collinear.
const COLLINEAR_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeKey {
    Pair,
    Year,
    ExporterYear,
    ImporterYear,
    /// Ordered (exporter, importer) pair; only meaningful on directional rows.
    DirectedPair,
}

impl FeKey {
    pub fn name(&self) -> &'static str {
        match self {
            FeKey::Pair => "pair",
            FeKey::Year => "year",
            FeKey::ExporterYear => "exporter-year",
            FeKey::ImporterYear => "importer-year",
            FeKey::DirectedPair => "directed-pair",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FESpec {
    pub groups: Vec<FeKey>,
}

impl FESpec {
    pub fn two_way() -> Self {
        FESpec {
            groups: vec![FeKey::Pair, FeKey::Year],
        }
    }

    pub fn three_way() -> Self {
        FESpec {
            groups: vec![FeKey::ExporterYear, FeKey::ImporterYear, FeKey::DirectedPair],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::InvalidSpec("fixed-effect specification is empty".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        self.groups.iter().map(|g| g.name()).collect::<Vec<_>>().join("+")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedEffectsSolution {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub vcov_cluster: Vec<Vec<f64>>,
    pub n_obs: usize,
    pub n_clusters: usize,
    /// Within R² (OLS only).
    pub r_squared: Option<f64>,
    /// Poisson deviance (PPML only).
    pub deviance: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Fixed-effect groups removed because their outcome sums to zero.
    pub dropped_groups: Vec<String>,
    /// Regressors removed as collinear (only when dropping was requested).
    pub dropped_collinear: Vec<String>,
    /// PPML fitted means over the rows kept after separation drops.
    #[serde(skip)]
    pub fitted: Vec<f64>,
}

impl FixedEffectsSolution {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn se(&self, i: usize) -> f64 {
        self.vcov_cluster[i][i].max(0.0).sqrt()
    }

    /// (coefficient, standard error) of a named regressor.
    pub fn coef(&self, name: &str) -> Option<(f64, f64)> {
        self.index(name).map(|i| (self.beta[i], self.se(i)))
    }

    pub fn ci(&self, i: usize) -> (f64, f64) {
        (self.beta[i] - Z95 * self.se(i), self.beta[i] + Z95 * self.se(i))
    }
}

/// Regression inputs with fixed effects already resolved to factors.
#[derive(Debug, Clone)]
pub struct Design {
    pub y: Vec<f64>,
    /// Regressor columns.
    pub x: Vec<Vec<f64>>,
    pub names: Vec<String>,
    pub factors: Vec<Factor>,
    /// Human-readable level names per factor, for drop reports.
    pub level_labels: Vec<Vec<String>>,
    pub clusters: Vec<usize>,
}

impl Design {
    fn check(&self) -> Result<()> {
        let n = self.y.len();
        if n == 0 {
            return Err(Error::EmptyResult);
        }
        if self.x.len() != self.names.len() {
            return Err(Error::DimensionMismatch {
                expected: self.names.len(),
                got: self.x.len(),
            });
        }
        let lens = self.x.iter().map(Vec::len).chain(self.factors.iter().map(Factor::len));
        for got in lens.chain([self.clusters.len()]) {
            if got != n {
                return Err(Error::DimensionMismatch { expected: n, got });
            }
        }
        if self.x.is_empty() {
            return Err(Error::InvalidSpec("no regressors".into()));
        }
        Ok(())
    }

    /// Adds an intercept when nothing is absorbed.
    fn with_intercept(mut self) -> Self {
        if self.factors.is_empty() {
            self.x.insert(0, vec![1.0; self.y.len()]);
            self.names.insert(0, "const".into());
        }
        self
    }

    fn keep_rows(&self, keep: &[bool]) -> Design {
        let pick = |v: &[f64]| v.iter().zip(keep).filter(|(_, k)| **k).map(|(a, _)| *a).collect();
        let pick_u = |v: &[usize]| -> Vec<usize> {
            v.iter().zip(keep).filter(|(_, k)| **k).map(|(a, _)| *a).collect()
        };
        Design {
            y: pick(&self.y),
            x: self.x.iter().map(|c| pick(c)).collect(),
            names: self.names.clone(),
            factors: self
                .factors
                .iter()
                .map(|f| Factor {
                    ids: pick_u(&f.ids),
                    n_levels: f.n_levels,
                })
                .collect(),
            level_labels: self.level_labels.clone(),
            clusters: pick_u(&self.clusters),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Collinear {
    Error,
    /// Drop offending regressors and record them.
    Drop,
}

/// Sequential Gram–Schmidt over (weighted) demeaned columns; returns the
/// indices kept or the first collinear name.
fn independent_columns(
    demeaned: &[Vec<f64>],
    raw: &[Vec<f64>],
    weights: Option<&[f64]>,
    names: &[String],
    policy: Collinear,
) -> Result<(Vec<usize>, Vec<String>)> {
    let sw = |i: usize| weights.map_or(1.0, |w| w[i].sqrt());
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (j, col) in demeaned.iter().enumerate() {
        let raw_norm = raw[j].iter().enumerate().map(|(i, v)| (v * sw(i)).powi(2)).sum::<f64>().sqrt();
        let mut r: Vec<f64> = col.iter().enumerate().map(|(i, v)| v * sw(i)).collect();
        for q in &basis {
            let d: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
            r.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
        }
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > COLLINEAR_TOL * raw_norm) || norm == 0.0 {
            match policy {
                Collinear::Error => return Err(Error::RankDeficient(names[j].clone())),
                Collinear::Drop => {
                    dropped.push(names[j].clone());
                    continue;
                }
            }
        }
        r.iter_mut().for_each(|v| *v /= norm);
        basis.push(r);
        kept.push(j);
    }
    if kept.is_empty() {
        return Err(Error::RankDeficient(names.join(",")));
    }
    Ok((kept, dropped))
}

fn to_matrix(cols: &[&Vec<f64>], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

/// Cluster-robust sandwich with CR1 correction; `scores` are per-row score
/// vectors (rows of the returned matrix).
fn cluster_vcov(
    bread: &DMatrix<f64>,
    scores: &DMatrix<f64>,
    clusters: &[usize],
    n_params: usize,
) -> Result<(DMatrix<f64>, usize)> {
    let f = Factor::from_ids(clusters);
    let g = f.n_levels;
    if g < 2 {
        return Err(Error::TooFewClusters(g));
    }
    let k = scores.ncols();
    let mut sums = DMatrix::zeros(g, k);
    for i in 0..scores.nrows() {
        for j in 0..k {
            sums[(f.ids[i], j)] += scores[(i, j)];
        }
    }
    let meat = sums.transpose() * &sums;
    let n = scores.nrows() as f64;
    let kk = n_params as f64;
    let c = (g as f64 / (g as f64 - 1.0)) * ((n - 1.0) / (n - kk).max(1.0));
    let v = bread * meat * bread * c;
    // Symmetrize rounding noise.
    let v = (&v + v.transpose()) * 0.5;
    Ok((v, g))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlsOptions {
    pub demean: DemeanOptions,
    pub collinear: Collinear,
}

impl Default for OlsOptions {
    fn default() -> Self {
        OlsOptions {
            demean: DemeanOptions {
                tolerance: 1e-10,
                max_iter: 1000,
            },
            collinear: Collinear::Error,
        }
    }
}

fn demean_all(
    cols: &[&[f64]],
    factors: &[&Factor],
    weights: Option<&[f64]>,
    opts: DemeanOptions,
) -> Result<Vec<Vec<f64>>> {
    if factors.is_empty() {
        return Ok(cols.iter().map(|c| c.to_vec()).collect());
    }
    cols.iter()
        .map(|c| {
            let d = demean(c, factors, weights, opts);
            if d.converged {
                Ok(d.values)
            } else {
                Err(Error::NonConvergence {
                    what: "fixed-effect demeaning",
                    iterations: d.iterations,
                    last_delta: d.last_delta,
                })
            }
        })
        .collect()
}

/// Least squares after absorbing the design's factors.
pub fn ols_absorbed(design: Design, opts: OlsOptions) -> Result<FixedEffectsSolution> {
    design.check()?;
    let d = design.with_intercept();
    let n = d.y.len();
    let factors: Vec<&Factor> = d.factors.iter().collect();
    let mut cols: Vec<&[f64]> = vec![&d.y];
    cols.extend(d.x.iter().map(Vec::as_slice));
    let mut dm = demean_all(&cols, &factors, None, opts.demean)?;
    let y_dm = dm.remove(0);
    let (kept, dropped) = independent_columns(&dm, &d.x, None, &d.names, opts.collinear)?;
    let xcols: Vec<&Vec<f64>> = kept.iter().map(|&j| &dm[j]).collect();
    let x = to_matrix(&xcols, n);
    let y = DVector::from_vec(y_dm);
    let xtx = x.transpose() * &x;
    let bread = xtx
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient(d.names.join(",")))?;
    let beta = &bread * (x.transpose() * &y);
    let resid = &y - &x * &beta;
    let scores = DMatrix::from_fn(n, kept.len(), |i, j| x[(i, j)] * resid[i]);
    let (v, g) = cluster_vcov(&bread, &scores, &d.clusters, kept.len())?;
    let ssr: f64 = resid.iter().map(|e| e * e).sum();
    let sst: f64 = y.iter().map(|v| v * v).sum();
    Ok(FixedEffectsSolution {
        names: kept.iter().map(|&j| d.names[j].clone()).collect(),
        beta: beta.iter().copied().collect(),
        vcov_cluster: matrix_rows(&v),
        n_obs: n,
        n_clusters: g,
        r_squared: Some(if sst > 0.0 { 1.0 - ssr / sst } else { 0.0 }),
        deviance: None,
        converged: true,
        iterations: 1,
        dropped_groups: Vec::new(),
        dropped_collinear: dropped,
        fitted: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpmlOptions {
    /// Relative deviance change that ends IRLS.
    pub tolerance: f64,
    pub max_iter: usize,
    pub inner: DemeanOptions,
}

impl Default for PpmlOptions {
    fn default() -> Self {
        PpmlOptions {
            tolerance: 1e-8,
            max_iter: 1000,
            inner: DemeanOptions {
                tolerance: 1e-8,
                max_iter: 1000,
            },
        }
    }
}

fn poisson_deviance(y: &[f64], mu: &[f64]) -> f64 {
    2.0 * y
        .iter()
        .zip(mu)
        .map(|(&y, &m)| if y > 0.0 { y * (y / m).ln() - (y - m) } else { m })
        .sum::<f64>()
}

/// Iteratively drop rows of fixed-effect groups whose outcomes are all zero.
fn drop_separated(design: &Design) -> (Vec<bool>, Vec<String>) {
    let n = design.y.len();
    let mut keep = vec![true; n];
    let mut dropped = Vec::new();
    loop {
        let mut changed = false;
        for (k, f) in design.factors.iter().enumerate() {
            let mut total = vec![0.0; f.n_levels];
            let mut present = vec![false; f.n_levels];
            for i in (0..n).filter(|&i| keep[i]) {
                total[f.ids[i]] += design.y[i];
                present[f.ids[i]] = true;
            }
            for level in 0..f.n_levels {
                if present[level] && total[level] <= 0.0 {
                    dropped.push(design.level_labels[k][level].clone());
                    for i in 0..n {
                        if f.ids[i] == level {
                            keep[i] = false;
                        }
                    }
                    changed = true;
                }
            }
        }
        if !changed {
            return (keep, dropped);
        }
    }
}

/// Poisson pseudo-maximum likelihood with absorbed fixed effects, by IRLS.
pub fn ppml_absorbed(design: Design, opts: PpmlOptions) -> Result<FixedEffectsSolution> {
    design.check()?;
    if design.y.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidSpec("PPML outcome must be finite and non-negative".into()));
    }
    let (keep, dropped_groups) = drop_separated(&design);
    if !dropped_groups.is_empty() {
        log::warn!("PPML dropped groups with all-zero outcome: {dropped_groups:?}");
    }
    let d = design.keep_rows(&keep).with_intercept();
    let n = d.y.len();
    if n == 0 || d.y.iter().all(|&v| v == 0.0) {
        return Err(Error::EmptyResult);
    }
    let factors: Vec<&Factor> = d.factors.iter().collect();
    let ybar = d.y.iter().sum::<f64>() / n as f64;
    let mut mu: Vec<f64> = d.y.iter().map(|&y| (y + ybar) / 2.0).collect();
    let mut eta: Vec<f64> = mu.iter().map(|m| m.ln()).collect();
    let mut dev = poisson_deviance(&d.y, &mu);
    let mut kept: Option<Vec<usize>> = None;
    let mut last = None;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iter {
        iterations = it;
        let z: Vec<f64> = (0..n).map(|i| eta[i] + (d.y[i] - mu[i]) / mu[i]).collect();
        let w = mu.clone();
        let mut cols: Vec<&[f64]> = vec![&z];
        cols.extend(d.x.iter().map(Vec::as_slice));
        let mut dm = demean_all(&cols, &factors, Some(&w), opts.inner)?;
        let z_dm = dm.remove(0);
        let idx = match &kept {
            Some(k) => k.clone(),
            None => {
                let (k, _) = independent_columns(&dm, &d.x, Some(&w), &d.names, Collinear::Error)?;
                kept = Some(k.clone());
                k
            }
        };
        let xcols: Vec<&Vec<f64>> = idx.iter().map(|&j| &dm[j]).collect();
        let x = to_matrix(&xcols, n);
        let xw = DMatrix::from_fn(n, idx.len(), |i, j| x[(i, j)] * w[i]);
        let xtwx = x.transpose() * &xw;
        let zt = DVector::from_vec(z_dm.clone());
        let rhs = xw.transpose() * &zt;
        let chol = xtwx
            .clone()
            .cholesky()
            .ok_or_else(|| Error::RankDeficient(d.names.join(",")))?;
        let beta = chol.solve(&rhs);
        let fitted = &x * &beta;
        for i in 0..n {
            // Linear predictor = working outcome minus working residual.
            eta[i] = z[i] - (z_dm[i] - fitted[i]);
            mu[i] = eta[i].exp();
        }
        let new_dev = poisson_deviance(&d.y, &mu);
        let delta = (new_dev - dev).abs() / new_dev.abs().max(0.1);
        dev = new_dev;
        last = Some((beta, x, delta));
        if delta < opts.tolerance {
            converged = true;
            break;
        }
    }
    let (beta, _, delta) = last.expect("at least one iteration");
    if !converged {
        return Err(Error::NonConvergence {
            what: "PPML",
            iterations,
            last_delta: delta,
        });
    }
    let idx = kept.expect("set on first iteration");
    // Sandwich at the converged mean, with columns demeaned under its weights.
    let cols: Vec<&[f64]> = idx.iter().map(|&j| d.x[j].as_slice()).collect();
    let dm = demean_all(&cols, &factors, Some(&mu), opts.inner)?;
    let xcols: Vec<&Vec<f64>> = dm.iter().collect();
    let x = to_matrix(&xcols, n);
    let xw = DMatrix::from_fn(n, idx.len(), |i, j| x[(i, j)] * mu[i]);
    let bread = (x.transpose() * &xw)
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient(d.names.join(",")))?;
    let scores = DMatrix::from_fn(n, idx.len(), |i, j| x[(i, j)] * (d.y[i] - mu[i]));
    let (v, g) = cluster_vcov(&bread, &scores, &d.clusters, idx.len())?;
    Ok(FixedEffectsSolution {
        names: idx.iter().map(|&j| d.names[j].clone()).collect(),
        beta: beta.iter().copied().collect(),
        vcov_cluster: matrix_rows(&v),
        n_obs: n,
        n_clusters: g,
        r_squared: None,
        deviance: Some(dev),
        converged,
        iterations,
        dropped_groups,
        dropped_collinear: Vec::new(),
        fitted: mu,
    })
}

fn labels_for<K: std::hash::Hash + Eq + Clone>(
    keys: &[K],
    label: impl Fn(&K) -> String,
) -> (Factor, Vec<String>) {
    let mut index: HashMap<K, usize> = HashMap::new();
    let mut labels = Vec::new();
    let ids = keys
        .iter()
        .map(|k| {
            *index.entry(k.clone()).or_insert_with(|| {
                labels.push(label(k));
                labels.len() - 1
            })
        })
        .collect();
    (
        Factor {
            ids,
            n_levels: labels.len(),
        },
        labels,
    )
}

/// Factors for the symmetric pair-year rows `rows` of `ds`.
fn pair_factors(ds: &PanelDataset, rows: &[usize], fe: &FESpec) -> Result<(Vec<Factor>, Vec<Vec<String>>)> {
    fe.validate()?;
    let obs = ds.observations();
    let mut factors = Vec::new();
    let mut labels = Vec::new();
    for key in &fe.groups {
        let (f, l) = match key {
            FeKey::Pair | FeKey::DirectedPair => {
                let k: Vec<_> = rows.iter().map(|&r| obs[r].pair).collect();
                labels_for(&k, |p| format!("pair {p}"))
            }
            FeKey::Year => {
                let k: Vec<_> = rows.iter().map(|&r| obs[r].year).collect();
                labels_for(&k, |y| format!("year {y}"))
            }
            FeKey::ExporterYear => {
                let k: Vec<_> = rows.iter().map(|&r| (obs[r].pair.a(), obs[r].year)).collect();
                labels_for(&k, |(c, y)| format!("exporter-year {c} {y}"))
            }
            FeKey::ImporterYear => {
                let k: Vec<_> = rows.iter().map(|&r| (obs[r].pair.b(), obs[r].year)).collect();
                labels_for(&k, |(c, y)| format!("importer-year {c} {y}"))
            }
        };
        factors.push(f);
        labels.push(l);
    }
    Ok((factors, labels))
}

fn regressor_columns(ds: &PanelDataset, regressors: &[String], rows: &[usize]) -> Result<Vec<Vec<f64>>> {
    regressors
        .iter()
        .map(|name| {
            let col = ds.column(name)?;
            rows.iter()
                .map(|&r| col[r].ok_or_else(|| Error::MissingControl(name.clone())))
                .collect()
        })
        .collect()
}

/// Log real trade on `regressors` with absorbed fixed effects, over rows with
/// positive trade.
pub fn twfe_ols(ds: &PanelDataset, regressors: &[String], fe: &FESpec) -> Result<FixedEffectsSolution> {
    let rows = ds.rows_with_outcome();
    let (factors, level_labels) = pair_factors(ds, &rows, fe)?;
    let ids = ds.pair_ids();
    ols_absorbed(
        Design {
            y: rows.iter().map(|&r| ds.y()[r].expect("outcome rows")).collect(),
            x: regressor_columns(ds, regressors, &rows)?,
            names: regressors.to_vec(),
            factors,
            level_labels,
            clusters: rows.iter().map(|&r| ids[r]).collect(),
        },
        OlsOptions::default(),
    )
}

/// Real trade in levels on `regressors` by PPML, every row included.
pub fn ppml(ds: &PanelDataset, regressors: &[String], fe: &FESpec) -> Result<FixedEffectsSolution> {
    ppml_absorbed(ppml_design(ds, regressors, fe)?, PpmlOptions::default())
}

pub fn ppml_design(ds: &PanelDataset, regressors: &[String], fe: &FESpec) -> Result<Design> {
    let rows: Vec<usize> = (0..ds.len()).collect();
    let (factors, level_labels) = pair_factors(ds, &rows, fe)?;
    Ok(Design {
        y: ds.observations().iter().map(|o| o.real_trade()).collect(),
        x: regressor_columns(ds, regressors, &rows)?,
        names: regressors.to_vec(),
        factors,
        level_labels,
        clusters: ds.pair_ids(),
    })
}

/// Directional design: each pair-year yields an a→b and a b→a row with
/// exporter-year, importer-year, and directed-pair effects.
pub fn directional_design(ds: &PanelDataset, regressor: &str) -> Result<Design> {
    let obs = ds.observations();
    let col = ds.column(regressor)?;
    let ids = ds.pair_ids();
    let mut y = Vec::with_capacity(2 * obs.len());
    let mut x = Vec::with_capacity(2 * obs.len());
    let mut ex_year = Vec::new();
    let mut im_year = Vec::new();
    let mut dir = Vec::new();
    let mut clusters = Vec::new();
    for (r, o) in obs.iter().enumerate() {
        let v = col[r].ok_or_else(|| Error::MissingControl(regressor.to_string()))?;
        for (ex, im, flow) in [(o.pair.a(), o.pair.b(), o.flow_ab), (o.pair.b(), o.pair.a(), o.flow_ba)] {
            y.push(flow / o.ppi);
            x.push(v);
            ex_year.push((ex, o.year));
            im_year.push((im, o.year));
            dir.push((ex, im));
            clusters.push(ids[r]);
        }
    }
    let (f1, l1) = labels_for(&ex_year, |(c, y)| format!("exporter-year {c} {y}"));
    let (f2, l2) = labels_for(&im_year, |(c, y)| format!("importer-year {c} {y}"));
    let (f3, l3) = labels_for(&dir, |(a, b)| format!("directed-pair {a}>{b}"));
    Ok(Design {
        y,
        x: vec![x],
        names: vec![regressor.to_string()],
        factors: vec![f1, f2, f3],
        level_labels: vec![l1, l2, l3],
        clusters,
    })
}

/// PPML on directional flows with exporter-year, importer-year, and
/// directed-pair fixed effects.
pub fn three_way_ppml(ds: &PanelDataset, treatment: &str) -> Result<FixedEffectsSolution> {
    ppml_absorbed(directional_design(ds, treatment)?, PpmlOptions::default())
}

/// One row of the estimate comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub method: String,
    pub spec: String,
    pub coef: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub effect_pct: f64,
    pub n_obs: usize,
    pub n_clusters: usize,
}

impl EstimateRow {
    pub fn new(method: &str, spec: &str, coef: f64, se: f64, n_obs: usize, n_clusters: usize) -> Self {
        EstimateRow {
            method: method.to_string(),
            spec: spec.to_string(),
            coef,
            se,
            ci_lo: coef - Z95 * se,
            ci_hi: coef + Z95 * se,
            effect_pct: effect_pct(coef),
            n_obs,
            n_clusters,
        }
    }

    /// Row for the treatment coefficient of a fixed-effects fit.
    pub fn from_solution(method: &str, spec: &str, sol: &FixedEffectsSolution, name: &str) -> Result<Self> {
        let (b, se) = sol
            .coef(name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))?;
        Ok(Self::new(method, spec, b, se, sol.n_obs, sol.n_clusters))
    }
}

/// `method,spec,coef,se,ci_lo,ci_hi,effect_pct,n_obs,n_clusters`
pub fn write_estimates_csv<W: Write>(rows: &[EstimateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record([
            "method", "spec", "coef", "se", "ci_lo", "ci_hi", "effect_pct", "n_obs", "n_clusters",
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Default regressor list: just the treatment indicator.
pub fn treatment_only() -> Vec<String> {
    vec![TREATMENT.to_string()]
}
