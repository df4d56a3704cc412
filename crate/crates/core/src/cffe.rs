//! Causal forest with fixed effects: outcome and treatment are two-way
//! (pair, year) demeaned inside every tree node before splits and leaf
//! effects are computed.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::causal::{
    check_causal_inputs, feature_ranges, heterogeneity_score, predict_cate, AteEstimate,
    CausalForestModel, EffectStat, LEAF_EPS,
};
use crate::dml::ResidualizedPanel;
use crate::error::{Error, Result};
use crate::fe::{demean, DemeanOptions, Demeaned, Factor};
use crate::forest::tree::{NodeStat, SplitRule};
use crate::forest::{grow_forest, ForestConfig, ForestKind};
use crate::panel::PanelDataset;

const Z95: f64 = 1.959963984540054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeFESolver {
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for NodeFESolver {
    fn default() -> Self {
        NodeFESolver {
            tolerance: 1e-8,
            max_sweeps: 100,
        }
    }
}

impl NodeFESolver {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.max_sweeps == 0 {
            return Err(Error::InvalidConfig(
                "fixed-effects solver needs tolerance > 0 and max_sweeps >= 1".into(),
            ));
        }
        Ok(())
    }

    fn options(&self) -> DemeanOptions {
        DemeanOptions {
            tolerance: self.tolerance,
            max_iter: self.max_sweeps,
        }
    }
}

/// Values net of pair and year means. A non-converged result still carries
/// the last iterate, with `converged == false`.
pub fn within_transform(
    values: &[f64],
    pairs: &[usize],
    years: &[usize],
    solver: &NodeFESolver,
) -> Result<Demeaned> {
    if values.is_empty() {
        return Err(Error::EmptyResult);
    }
    for got in [pairs.len(), years.len()] {
        if got != values.len() {
            return Err(Error::DimensionMismatch {
                expected: values.len(),
                got,
            });
        }
    }
    let p = Factor::from_ids(pairs);
    let y = Factor::from_ids(years);
    let d = demean(values, &[&p, &y], None, solver.options());
    if !d.converged {
        log::warn!(
            "within transform stopped after {} sweeps (last change {:e})",
            d.iterations,
            d.last_delta
        );
    }
    Ok(d)
}

struct FeRule<'a> {
    t: &'a [f64],
    y: &'a [f64],
    pairs: &'a [usize],
    years: &'a [usize],
    solver: NodeFESolver,
}

impl FeRule<'_> {
    fn distinct_ok(&self, rows: &[usize]) -> bool {
        let enough = |ids: &[usize]| {
            let first = rows.first().map(|&r| ids[r]);
            rows.iter().any(|&r| Some(ids[r]) != first)
        };
        rows.len() >= 2 && enough(self.pairs) && enough(self.years)
    }

    /// Node-local demeaned (t, y).
    fn transform(&self, rows: &[usize]) -> Option<(Vec<f64>, Vec<f64>)> {
        if !self.distinct_ok(rows) {
            return None;
        }
        let mut scratch = Vec::new();
        let p = Factor::from_bounded(rows.iter().map(|&r| self.pairs[r]), &mut scratch);
        let y = Factor::from_bounded(rows.iter().map(|&r| self.years[r]), &mut scratch);
        let tv: Vec<f64> = rows.iter().map(|&r| self.t[r]).collect();
        let yv: Vec<f64> = rows.iter().map(|&r| self.y[r]).collect();
        let opts = self.solver.options();
        let td = demean(&tv, &[&p, &y], None, opts);
        let yd = demean(&yv, &[&p, &y], None, opts);
        if !(td.converged && yd.converged) {
            log::debug!("node demeaning hit the sweep limit on {} rows", rows.len());
        }
        Some((td.values, yd.values))
    }
}

impl SplitRule for FeRule<'_> {
    type Stat = EffectStat;

    fn node_stats(&self, rows: &[usize]) -> Option<Vec<EffectStat>> {
        let (t, y) = self.transform(rows)?;
        Some(t.iter().zip(&y).map(|(&t, &y)| EffectStat::new(t, y)).collect())
    }

    fn score(&self, l: &EffectStat, r: &EffectStat) -> Option<f64> {
        heterogeneity_score(l, r)
    }

    fn est_child_ok(&self, c: &EffectStat) -> bool {
        c.tt > LEAF_EPS
    }

    fn accept_children(&self, l: (&[usize], &[usize]), r: (&[usize], &[usize])) -> bool {
        [l.0, l.1, r.0, r.1].iter().all(|rows| self.distinct_ok(rows))
    }

    fn importance(&self, score: f64, n_struct: usize) -> f64 {
        score * n_struct as f64
    }

    fn leaf_value(&self, rows: &[usize]) -> Option<f64> {
        let (t, y) = self.transform(rows)?;
        let mut s = EffectStat::default();
        for (&t, &y) in t.iter().zip(&y) {
            s.add(&EffectStat::new(t, y));
        }
        s.effect()
    }
}

/// Outcome and treatment a CFFE fit runs on: raw log trade and the adoption
/// indicator by default, or DML residuals when chaining.
#[derive(Debug, Clone, PartialEq)]
pub struct FeInputs {
    pub rows: Vec<usize>,
    pub y: Vec<f64>,
    pub t: Vec<f64>,
}

impl FeInputs {
    pub fn raw(ds: &PanelDataset) -> Self {
        let rows = ds.rows_with_outcome();
        FeInputs {
            y: rows.iter().map(|&r| ds.y()[r].expect("outcome rows")).collect(),
            t: rows.iter().map(|&r| ds.treatment()[r]).collect(),
            rows,
        }
    }

    pub fn chained(rp: &ResidualizedPanel) -> Self {
        FeInputs {
            rows: rp.rows.clone(),
            y: rp.y_tilde.clone(),
            t: rp.t_tilde.clone(),
        }
    }
}

pub fn fit_cffe(
    ds: &PanelDataset,
    modifiers: &[String],
    cfg: &ForestConfig,
    solver: &NodeFESolver,
) -> Result<CausalForestModel> {
    fit_cffe_on(ds, &FeInputs::raw(ds), modifiers, cfg, solver)
}

pub fn fit_cffe_on(
    ds: &PanelDataset,
    inputs: &FeInputs,
    modifiers: &[String],
    cfg: &ForestConfig,
    solver: &NodeFESolver,
) -> Result<CausalForestModel> {
    let x = ds.matrix(modifiers, &inputs.rows)?;
    let pair_ids = ds.pair_ids();
    let year_ids = ds.year_ids();
    let pairs: Vec<usize> = inputs.rows.iter().map(|&r| pair_ids[r]).collect();
    let years: Vec<usize> = inputs.rows.iter().map(|&r| year_ids[r]).collect();
    fit_cffe_matrix(&x, &inputs.y, &inputs.t, &pairs, &years, modifiers, cfg, solver)
}

#[allow(clippy::too_many_arguments)]
pub fn fit_cffe_matrix(
    x: &Array2<f64>,
    y: &[f64],
    t: &[f64],
    pairs: &[usize],
    years: &[usize],
    names: &[String],
    cfg: &ForestConfig,
    solver: &NodeFESolver,
) -> Result<CausalForestModel> {
    solver.validate()?;
    check_causal_inputs(x, y, t, names, cfg)?;
    for got in [pairs.len(), years.len()] {
        if got != x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got,
            });
        }
    }
    let all: Vec<usize> = (0..x.nrows()).collect();
    let rule = FeRule {
        t,
        y,
        pairs,
        years,
        solver: *solver,
    };
    match rule.transform(&all) {
        Some((tt, _)) if tt.iter().map(|v| v * v).sum::<f64>() > LEAF_EPS => {}
        _ => return Err(Error::NoTreatmentVariation),
    }
    let trees = grow_forest(x, &rule, cfg, ForestKind::FixedEffectsCausal)?;
    Ok(CausalForestModel {
        kind: ForestKind::FixedEffectsCausal,
        config: *cfg,
        feature_names: names.to_vec(),
        feature_ranges: feature_ranges(x),
        trees,
    })
}

/// ATE from per-row effects `tau_hat` with a pair-clustered standard error.
///
/// Each row contributes τ̂ᵢ + ẗᵢ(ÿᵢ − τ̂ᵢẗᵢ)/mean(ẗ²) with ÿ, ẗ the two-way
/// demeaned outcome and treatment; with a constant τ̂ this is the two-way
/// fixed-effects slope. `clusters == None` gives the heteroskedasticity-robust
/// version.
pub fn fe_ate(
    tau_hat: &[f64],
    y: &[f64],
    t: &[f64],
    pairs: &[usize],
    years: &[usize],
    clusters: Option<&[usize]>,
    solver: &NodeFESolver,
) -> Result<AteEstimate> {
    let n = tau_hat.len();
    for got in [y.len(), t.len(), pairs.len(), years.len()] {
        if got != n {
            return Err(Error::DimensionMismatch { expected: n, got });
        }
    }
    let yd = within_transform(y, pairs, years, solver)?.values;
    let td = within_transform(t, pairs, years, solver)?.values;
    let mtt = td.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if mtt <= LEAF_EPS {
        return Err(Error::NoTreatmentVariation);
    }
    let psi: Vec<f64> = (0..n)
        .map(|i| tau_hat[i] + td[i] * (yd[i] - tau_hat[i] * td[i]) / mtt)
        .collect();
    let point = psi.iter().sum::<f64>() / n as f64;
    let se = influence_se(&psi, clusters)?;
    Ok(AteEstimate {
        point,
        se,
        ci: (point - Z95 * se, point + Z95 * se),
    })
}

/// Standard error of a mean from per-row contributions, clustered when ids
/// are given (each row its own cluster otherwise), with a G/(G−1) correction.
pub fn influence_se(psi: &[f64], clusters: Option<&[usize]>) -> Result<f64> {
    let n = psi.len();
    let mean = psi.iter().sum::<f64>() / n as f64;
    let sums: Vec<f64> = match clusters {
        Some(c) => {
            if c.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: c.len(),
                });
            }
            let f = Factor::from_ids(c);
            let mut s = vec![0.0; f.n_levels];
            for i in 0..n {
                s[f.ids[i]] += psi[i] - mean;
            }
            s
        }
        None => psi.iter().map(|p| p - mean).collect(),
    };
    let g = sums.len();
    if g < 2 {
        return Err(Error::TooFewClusters(g));
    }
    let ss: f64 = sums.iter().map(|s| s * s).sum();
    Ok((g as f64 / (g as f64 - 1.0) * ss).sqrt() / n as f64)
}

/// ATE of a fitted CFFE model over the rows of `inputs`, clustered by pair.
pub fn cffe_ate(
    model: &CausalForestModel,
    ds: &PanelDataset,
    inputs: &FeInputs,
    solver: &NodeFESolver,
) -> Result<AteEstimate> {
    let x = ds.matrix(&model.feature_names, &inputs.rows)?;
    let cate = predict_cate(model, x.view())?;
    let pair_ids = ds.pair_ids();
    let year_ids = ds.year_ids();
    let pairs: Vec<usize> = inputs.rows.iter().map(|&r| pair_ids[r]).collect();
    let years: Vec<usize> = inputs.rows.iter().map(|&r| year_ids[r]).collect();
    fe_ate(
        &cate.tau_hat,
        &inputs.y,
        &inputs.t,
        &pairs,
        &years,
        Some(&pairs),
        solver,
    )
}
