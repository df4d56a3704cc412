//! Identification and robustness checks around the main estimate.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::causal::{effect_pct, weighted_mean, Z95};
use crate::dml::CrossFitPlan;
use crate::error::{Error, Result};
use crate::fe::Factor;
use crate::forest::{fit_classification_forest, ForestConfig};
use crate::gravity::{ols_absorbed, Collinear, Design, OlsOptions};
use crate::panel::{apply_filter, CountryCode, PairKey, PairPredicate, PanelDataset, SampleFilter};
use crate::pipeline::{run_pipeline, PipelineConfig, PipelineRun};
use crate::rng::derive_seed;

/// Standardized differences above this indicate meaningful imbalance.
pub const IMBALANCE_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceRow {
    pub variable: String,
    pub mean_treated: f64,
    pub mean_control: f64,
    pub diff: f64,
    /// `diff` over the pooled SD; 0 when both groups have zero variance.
    pub std_diff: f64,
    pub zero_variance: bool,
}

impl BalanceRow {
    pub fn imbalanced(&self) -> bool {
        self.std_diff.abs() > IMBALANCE_THRESHOLD
    }
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var)
}

/// Compare treated and control rows, optionally restricted to `years`.
/// Rows where a variable is undefined are skipped for that variable.
pub fn covariate_balance(
    ds: &PanelDataset,
    variables: &[String],
    years: Option<(i32, i32)>,
) -> Result<Vec<BalanceRow>> {
    let keep: Vec<bool> = ds
        .observations()
        .iter()
        .map(|o| years.is_none_or(|(lo, hi)| (lo..=hi).contains(&o.year)))
        .collect();
    let t = ds.treatment();
    variables
        .iter()
        .map(|name| {
            let col = ds.column(name)?;
            let mut treated = Vec::new();
            let mut control = Vec::new();
            for i in 0..ds.len() {
                if let (true, Some(v)) = (keep[i], col[i]) {
                    if t[i] == 1.0 {
                        treated.push(v);
                    } else {
                        control.push(v);
                    }
                }
            }
            if treated.is_empty() {
                return Err(Error::EmptyGroup("treated".into()));
            }
            if control.is_empty() {
                return Err(Error::EmptyGroup("control".into()));
            }
            let (mt, vt) = mean_var(&treated);
            let (mc, vc) = mean_var(&control);
            let pooled = ((vt + vc) / 2.0).sqrt();
            let diff = mt - mc;
            let zero_variance = pooled == 0.0;
            Ok(BalanceRow {
                variable: name.clone(),
                mean_treated: mt,
                mean_control: mc,
                diff,
                std_diff: if zero_variance { 0.0 } else { diff / pooled },
                zero_variance,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogitFit {
    /// Intercept first.
    pub coef: Vec<f64>,
    pub iterations: usize,
}

/// Logistic regression with intercept by Newton-Raphson. Diverging
/// coefficients (separation) or a singular Hessian give
/// `LogitNonConvergence`.
pub fn logit_newton(x: &[Vec<f64>], y: &[f64], max_iter: usize) -> Result<LogitFit> {
    let n = y.len();
    if x.iter().any(|c| c.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.iter().map(Vec::len).find(|&l| l != n).unwrap_or(0),
        });
    }
    let p = x.len() + 1;
    let design = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { x[j - 1][i] });
    let yv = DVector::from_column_slice(y);
    let mut beta = DVector::zeros(p);
    for it in 1..=max_iter {
        let eta = &design * &beta;
        let mu = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
        let w = mu.map(|m| m * (1.0 - m));
        let grad = design.transpose() * (&yv - &mu);
        let mut hess = DMatrix::zeros(p, p);
        for i in 0..n {
            let row = design.row(i);
            hess += w[i] * row.transpose() * row;
        }
        let step = hess.cholesky().ok_or(Error::LogitNonConvergence)?.solve(&grad);
        beta += &step;
        if beta.iter().any(|b| !b.is_finite() || b.abs() > 1e6) {
            return Err(Error::LogitNonConvergence);
        }
        if step.amax() < 1e-12 * (1.0 + beta.amax()) {
            // Fitted probabilities pinned at 0/1 mean the MLE does not exist.
            if mu.iter().all(|&m| m < 1e-8 || m > 1.0 - 1e-8) {
                return Err(Error::LogitNonConvergence);
            }
            return Ok(LogitFit {
                coef: beta.iter().copied().collect(),
                iterations: it,
            });
        }
    }
    Err(Error::LogitNonConvergence)
}

pub fn logit_predict(fit: &LogitFit, x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| {
            let eta = fit.coef[0] + x.iter().zip(&fit.coef[1..]).map(|(c, b)| c[i] * b).sum::<f64>();
            1.0 / (1.0 + (-eta).exp())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreSummary {
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize(v: &[f64]) -> ScoreSummary {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    ScoreSummary {
        n: s.len(),
        mean: s.iter().sum::<f64>() / s.len() as f64,
        min: s[0],
        p25: quantile(&s, 0.25),
        median: quantile(&s, 0.5),
        p75: quantile(&s, 0.75),
        max: s[s.len() - 1],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityMethod {
    Logit,
    Forest,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapSummary {
    pub method: PropensityMethod,
    pub treated: ScoreSummary,
    pub control: ScoreSummary,
    /// `[max(min_T, min_C), min(max_T, max_C)]`; empty when lo > hi.
    pub support: (f64, f64),
    pub treated_in_support: usize,
    pub control_in_support: usize,
    pub treated_share: f64,
    pub control_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    pub methods: Vec<OverlapSummary>,
    /// Set when the logit could not be fit (typically separation).
    pub logit_failed: bool,
    pub logit: Option<LogitFit>,
}

/// Overlap of propensity scores between treated and control rows.
pub fn overlap_summary(method: PropensityMethod, scores: &[f64], t: &[f64]) -> Result<OverlapSummary> {
    let treated: Vec<f64> = scores.iter().zip(t).filter(|(_, &t)| t == 1.0).map(|(s, _)| *s).collect();
    let control: Vec<f64> = scores.iter().zip(t).filter(|(_, &t)| t != 1.0).map(|(s, _)| *s).collect();
    if treated.is_empty() {
        return Err(Error::EmptyGroup("treated".into()));
    }
    if control.is_empty() {
        return Err(Error::EmptyGroup("control".into()));
    }
    let (st, sc) = (summarize(&treated), summarize(&control));
    let support = (st.min.max(sc.min), st.max.min(sc.max));
    let inside = |v: &[f64]| v.iter().filter(|&&s| s >= support.0 && s <= support.1).count();
    let (it, ic) = (inside(&treated), inside(&control));
    Ok(OverlapSummary {
        method,
        treated: st,
        control: sc,
        support,
        treated_in_support: it,
        control_in_support: ic,
        treated_share: it as f64 / treated.len() as f64,
        control_share: ic as f64 / control.len() as f64,
    })
}

/// Logit and/or cross-fitted forest propensity scores on `predictors`.
pub fn propensity_overlap(
    ds: &PanelDataset,
    predictors: &[String],
    methods: &[PropensityMethod],
    n_folds: usize,
    seed: u64,
) -> Result<OverlapReport> {
    let rows: Vec<usize> = (0..ds.len()).collect();
    let w = ds.matrix(predictors, &rows)?;
    let t = ds.treatment();
    let n_treated = ds.n_treated();
    if n_treated == 0 {
        return Err(Error::EmptyGroup("treated".into()));
    }
    if n_treated == ds.len() {
        return Err(Error::EmptyGroup("control".into()));
    }
    let mut report = OverlapReport {
        methods: Vec::new(),
        logit_failed: false,
        logit: None,
    };
    for &m in methods {
        match m {
            PropensityMethod::Logit => {
                let cols: Vec<Vec<f64>> = w.columns().into_iter().map(|c| c.to_vec()).collect();
                match logit_newton(&cols, t, 100) {
                    Ok(fit) => {
                        let scores = logit_predict(&fit, &cols);
                        report.methods.push(overlap_summary(m, &scores, t)?);
                        report.logit = Some(fit);
                    }
                    Err(Error::LogitNonConvergence) => {
                        log::warn!("logit propensity model did not converge; reporting forest scores only");
                        report.logit_failed = true;
                    }
                    Err(e) => return Err(e),
                }
            }
            PropensityMethod::Forest => {
                let plan = CrossFitPlan::random(ds.len(), n_folds, derive_seed(seed, "overlap-folds", 0))?;
                let mut scores = vec![0.0; ds.len()];
                for k in 0..plan.n_folds {
                    let train = plan.rows_outside(k);
                    let test = plan.rows_in(k);
                    let wt = w.select(ndarray::Axis(0), &train);
                    let tt: Vec<f64> = train.iter().map(|&r| t[r]).collect();
                    let cfg = ForestConfig::nuisance(derive_seed(seed, "overlap-forest", k as u64));
                    let model = fit_classification_forest(&wt, &tt, &cfg)?;
                    let pred = model.predict(w.select(ndarray::Axis(0), &test).view())?;
                    for (&r, p) in test.iter().zip(pred) {
                        scores[r] = p;
                    }
                }
                report.methods.push(overlap_summary(m, &scores, t)?);
            }
        }
    }
    if report.methods.is_empty() && report.logit_failed && !methods.contains(&PropensityMethod::Forest) {
        // Fall back to the forest so the report is never empty.
        return propensity_overlap(ds, predictors, &[PropensityMethod::Forest], n_folds, seed).map(|mut r| {
            r.logit_failed = true;
            r
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EventCoefficient {
    pub k: i32,
    pub coef: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventStudyResult {
    pub reference_k: i32,
    pub window: (i32, i32),
    /// One entry per event time in the window, the reference included as 0.
    pub coefficients: Vec<EventCoefficient>,
    pub pretrend_wald: f64,
    pub pretrend_df: usize,
    pub pretrend_p: f64,
    pub n_obs: usize,
    pub n_clusters: usize,
}

fn event_label(k: i32) -> String {
    format!("k={k}")
}

/// Two-way fixed-effects regression of log trade on event-time dummies for
/// adopting pairs. Event times beyond the window are pooled into its end
/// points. Standard errors and the pre-trend Wald test are pair-clustered.
pub fn event_study(ds: &PanelDataset, window: (i32, i32), reference_k: i32) -> Result<EventStudyResult> {
    let (k_lo, k_hi) = window;
    if k_lo > k_hi || !(k_lo..=k_hi).contains(&reference_k) {
        return Err(Error::InvalidConfig(format!(
            "reference event time {reference_k} outside window {window:?}"
        )));
    }
    let adoption = ds.adoption_years();
    let rows = ds.rows_with_outcome();
    let obs = ds.observations();
    let ks: Vec<i32> = (k_lo..=k_hi).filter(|&k| k != reference_k).collect();
    let event_k: Vec<Option<i32>> = rows
        .iter()
        .map(|&r| adoption.get(&obs[r].pair).map(|a| (obs[r].year - a).clamp(k_lo, k_hi)))
        .collect();
    let x: Vec<Vec<f64>> = ks
        .iter()
        .map(|&k| event_k.iter().map(|e| f64::from(*e == Some(k))).collect())
        .collect();
    let pair_ids = ds.pair_ids();
    let year_ids = ds.year_ids();
    let pairs: Vec<usize> = rows.iter().map(|&r| pair_ids[r]).collect();
    let years: Vec<usize> = rows.iter().map(|&r| year_ids[r]).collect();
    let design = Design {
        y: rows.iter().map(|&r| ds.y()[r].expect("outcome rows")).collect(),
        x,
        names: ks.iter().map(|&k| event_label(k)).collect(),
        factors: vec![Factor::from_ids(&pairs), Factor::from_ids(&years)],
        level_labels: vec![
            ds.pairs().iter().map(PairKey::to_string).collect(),
            ds.years().iter().map(i32::to_string).collect(),
        ],
        clusters: pairs,
    };
    let sol = match ols_absorbed(
        design,
        OlsOptions {
            collinear: Collinear::Drop,
            ..OlsOptions::default()
        },
    ) {
        Err(Error::RankDeficient(_)) => return Err(Error::CollinearEventDummies(ks)),
        other => other?,
    };
    if !sol.dropped_collinear.is_empty() {
        let dropped = ks
            .iter()
            .copied()
            .filter(|&k| sol.dropped_collinear.contains(&event_label(k)))
            .collect();
        return Err(Error::CollinearEventDummies(dropped));
    }
    let mut coefficients = Vec::with_capacity(ks.len() + 1);
    for k in k_lo..=k_hi {
        let (coef, se) = if k == reference_k {
            (0.0, 0.0)
        } else {
            sol.coef(&event_label(k)).expect("kept dummy")
        };
        coefficients.push(EventCoefficient {
            k,
            coef,
            se,
            ci_lo: coef - Z95 * se,
            ci_hi: coef + Z95 * se,
        });
    }
    let pre: Vec<usize> = ks
        .iter()
        .filter(|&&k| k < 0)
        .map(|&k| sol.index(&event_label(k)).expect("kept dummy"))
        .collect();
    let (wald, p) = wald_zero(&sol.beta, &sol.vcov_cluster, &pre)?;
    Ok(EventStudyResult {
        reference_k,
        window,
        coefficients,
        pretrend_wald: wald,
        pretrend_df: pre.len(),
        pretrend_p: p,
        n_obs: sol.n_obs,
        n_clusters: sol.n_clusters,
    })
}

/// Wald statistic and χ² p-value for `beta[idx] = 0`.
pub fn wald_zero(beta: &[f64], vcov: &[Vec<f64>], idx: &[usize]) -> Result<(f64, f64)> {
    if idx.is_empty() {
        return Ok((0.0, f64::NAN));
    }
    let q = idx.len();
    let b = DVector::from_iterator(q, idx.iter().map(|&i| beta[i]));
    let v = DMatrix::from_fn(q, q, |a, c| vcov[idx[a]][idx[c]]);
    let inv = v
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("pre-period covariance".into()))?;
    let w = (b.transpose() * inv * &b)[(0, 0)];
    let chi = ChiSquared::new(q as f64).expect("positive df");
    Ok((w, 1.0 - chi.cdf(w.max(0.0))))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaceboResult {
    pub fake_year: i32,
    pub n_rows: usize,
    pub n_treated: usize,
    pub ate: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub effect_pct: f64,
    pub covers_zero: bool,
}

/// Rows before the first real adoption with treatment moved to
/// `1[year >= fake_year]` for pairs that eventually adopt.
pub fn placebo_dataset(ds: &PanelDataset, fake_year: i32) -> Result<PanelDataset> {
    let adoption = ds.adoption_years();
    let first = adoption.values().min().copied().ok_or(Error::NoTreatmentVariation)?;
    if fake_year >= first {
        return Err(Error::InvalidConfig(format!(
            "placebo year {fake_year} is not before the first adoption ({first})"
        )));
    }
    let obs = ds.observations();
    let rows: Vec<usize> = (0..ds.len()).filter(|&r| obs[r].year < first).collect();
    let before = rows.iter().any(|&r| obs[r].year < fake_year);
    let after = rows.iter().any(|&r| obs[r].year >= fake_year && adoption.contains_key(&obs[r].pair));
    if rows.is_empty() || !before || !after {
        return Err(Error::NoPreTreatmentRows(fake_year));
    }
    let sub = ds.subset(&rows)?;
    let t = sub
        .observations()
        .iter()
        .map(|o| f64::from(o.year >= fake_year && adoption.contains_key(&o.pair)))
        .collect();
    sub.with_treatment(t)
}

pub fn placebo_treatment(ds: &PanelDataset, fake_year: i32, cfg: &PipelineConfig) -> Result<PlaceboResult> {
    let placebo = placebo_dataset(ds, fake_year)?;
    let run = run_pipeline(&placebo, cfg)?;
    let a = run.ate;
    Ok(PlaceboResult {
        fake_year,
        n_rows: run.rows.len(),
        n_treated: run.cate.n_treated,
        ate: a.point,
        se: a.se,
        ci_lo: a.ci.0,
        ci_hi: a.ci.1,
        effect_pct: effect_pct(a.point),
        covers_zero: a.ci.0 <= 0.0 && 0.0 <= a.ci.1,
    })
}

/// Several placebo years side by side; failures are reported per year.
pub fn placebo_treatments(
    ds: &PanelDataset,
    fake_years: &[i32],
    cfg: &PipelineConfig,
) -> Vec<(i32, Result<PlaceboResult>)> {
    fake_years
        .par_iter()
        .map(|&y| (y, placebo_treatment(ds, y, cfg)))
        .collect()
}

/// One row of a sweep: an estimate on a subsample, or the error it hit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub label: String,
    pub n_rows: usize,
    pub n_pairs: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub ate: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub effect_pct: f64,
    /// Point estimate outside the reference run's CI.
    pub outside_reference: bool,
    pub error: Option<String>,
}

impl SweepRow {
    fn from_run(label: String, ds: &PanelDataset, run: &PipelineRun, reference: Option<(f64, f64)>) -> Self {
        let a = run.ate;
        SweepRow {
            label,
            n_rows: run.rows.len(),
            n_pairs: ds.pairs().len(),
            n_treated: run.cate.n_treated,
            n_control: run.cate.n_control,
            ate: a.point,
            se: a.se,
            ci_lo: a.ci.0,
            ci_hi: a.ci.1,
            effect_pct: effect_pct(a.point),
            outside_reference: reference.is_some_and(|(lo, hi)| a.point < lo || a.point > hi),
            error: None,
        }
    }

    fn failed(label: String, err: &Error) -> Self {
        SweepRow {
            label,
            n_rows: 0,
            n_pairs: 0,
            n_treated: 0,
            n_control: 0,
            ate: f64::NAN,
            se: f64::NAN,
            ci_lo: f64::NAN,
            ci_hi: f64::NAN,
            effect_pct: f64::NAN,
            outside_reference: false,
            error: Some(err.to_string()),
        }
    }

    fn run(label: String, sub: Result<PanelDataset>, cfg: &PipelineConfig, reference: Option<(f64, f64)>) -> Self {
        match sub.and_then(|d| run_pipeline(&d, cfg).map(|r| (d, r))) {
            Ok((d, r)) => SweepRow::from_run(label, &d, &r, reference),
            Err(e) => SweepRow::failed(label, &e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeaveOneOut {
    pub full: SweepRow,
    pub rows: Vec<SweepRow>,
}

/// Rerun the pipeline dropping each country in turn.
pub fn leave_one_out(ds: &PanelDataset, cfg: &PipelineConfig) -> Result<LeaveOneOut> {
    let countries = ds.countries();
    if countries.len() < 3 {
        return Err(Error::InvalidConfig("leave-one-out needs at least 3 countries".into()));
    }
    let full_run = run_pipeline(ds, cfg)?;
    let full = SweepRow::from_run("all".into(), ds, &full_run, None);
    let reference = Some(full_run.ate.ci);
    let rows = countries
        .par_iter()
        .map(|&c| {
            let f = SampleFilter {
                drop_country: Some(c),
                ..SampleFilter::default()
            };
            SweepRow::run(c.to_string(), apply_filter(ds, &f), cfg, reference)
        })
        .collect();
    Ok(LeaveOneOut { full, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OsterInput {
    pub beta_uncontrolled: f64,
    pub r2_uncontrolled: f64,
    pub beta_controlled: f64,
    pub r2_controlled: f64,
}

impl OsterInput {
    pub fn validate(&self) -> Result<()> {
        for r in [self.r2_uncontrolled, self.r2_controlled] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidConfig(format!("R² {r} outside [0, 1]")));
            }
        }
        if self.r2_controlled < self.r2_uncontrolled {
            return Err(Error::InvalidConfig(
                "controlled R² is below the uncontrolled R²".into(),
            ));
        }
        Ok(())
    }
}

/// Bias-adjusted coefficient under proportional selection:
/// β* = β̃ − δ·(β̇ − β̃)·(R_max − R̃)/(R̃ − Ṙ).
pub fn oster_bias_adjusted(inp: &OsterInput, delta: f64, r_max: f64) -> Result<f64> {
    inp.validate()?;
    let gain = inp.r2_controlled - inp.r2_uncontrolled;
    if gain == 0.0 {
        return Err(Error::DegenerateR2);
    }
    if r_max < inp.r2_controlled || r_max > 1.0 {
        return Err(Error::InvalidConfig(format!(
            "R_max {r_max} must lie in [{}, 1]",
            inp.r2_controlled
        )));
    }
    Ok(inp.beta_controlled
        - delta * (inp.beta_uncontrolled - inp.beta_controlled) * (r_max - inp.r2_controlled) / gain)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OsterCell {
    pub delta: f64,
    pub r_max: f64,
    pub beta_star: f64,
}

pub fn oster_table(inp: &OsterInput, deltas: &[f64], r_maxes: &[f64]) -> Result<Vec<OsterCell>> {
    let mut out = Vec::with_capacity(deltas.len() * r_maxes.len());
    for &delta in deltas {
        for &r_max in r_maxes {
            out.push(OsterCell {
                delta,
                r_max,
                beta_star: oster_bias_adjusted(inp, delta, r_max)?,
            });
        }
    }
    Ok(out)
}

/// Treatment coefficients and R² of log trade on treatment alone and on
/// treatment plus `controls` (pooled OLS with intercept).
pub fn oster_inputs(ds: &PanelDataset, controls: &[String]) -> Result<OsterInput> {
    let rows = ds.rows_with_outcome();
    let y: Vec<f64> = rows.iter().map(|&r| ds.y()[r].expect("outcome rows")).collect();
    let t: Vec<f64> = rows.iter().map(|&r| ds.treatment()[r]).collect();
    let fit = |cols: Vec<Vec<f64>>, names: Vec<String>| {
        let n = y.len();
        ols_absorbed(
            Design {
                y: y.clone(),
                x: cols,
                names,
                factors: Vec::new(),
                level_labels: Vec::new(),
                clusters: (0..n).collect(),
            },
            OlsOptions::default(),
        )
    };
    let short = fit(vec![t.clone()], vec!["treatment".into()])?;
    let w = ds.matrix(controls, &rows)?;
    let mut cols = vec![t];
    let mut names = vec!["treatment".to_string()];
    for (j, c) in w.columns().into_iter().enumerate() {
        cols.push(c.to_vec());
        names.push(controls[j].clone());
    }
    let long = fit(cols, names)?;
    let beta = |s: &crate::gravity::FixedEffectsSolution| s.coef("treatment").expect("treatment kept").0;
    Ok(OsterInput {
        beta_uncontrolled: beta(&short),
        r2_uncontrolled: short.r_squared.unwrap_or(f64::NAN),
        beta_controlled: beta(&long),
        r2_controlled: long.r_squared.unwrap_or(f64::NAN),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CateGroup {
    High,
    Low,
    All,
}

impl CateGroup {
    pub fn label(&self) -> &'static str {
        match self {
            CateGroup::High => "High-CATE",
            CateGroup::Low => "Low-CATE",
            CateGroup::All => "All pairs",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicRow {
    pub period: (i32, i32),
    pub group: CateGroup,
    pub ate: f64,
    pub effect_pct: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: usize,
}

/// Pairs whose mean full-sample τ̂ is at or above the median pair mean.
pub fn high_cate_pairs(ds: &PanelDataset, full: &PipelineRun) -> BTreeSet<PairKey> {
    let mut sums: BTreeMap<PairKey, (f64, usize)> = BTreeMap::new();
    for (&r, &tau) in full.rows.iter().zip(&full.cate.tau_hat) {
        let e = sums.entry(ds.observations()[r].pair).or_default();
        e.0 += tau;
        e.1 += 1;
    }
    let means: Vec<(PairKey, f64)> = sums.into_iter().map(|(p, (s, n))| (p, s / n as f64)).collect();
    let mut sorted: Vec<f64> = means.iter().map(|m| m.1).collect();
    sorted.sort_by(f64::total_cmp);
    let median = quantile(&sorted, 0.5);
    means.into_iter().filter(|m| m.1 >= median).map(|m| m.0).collect()
}

/// Refit per period and report the ATE among high-CATE pairs, low-CATE pairs
/// and all pairs, with groups fixed by the full-sample run.
pub fn dynamic_heterogeneity(
    ds: &PanelDataset,
    full: &PipelineRun,
    periods: &[(i32, i32)],
    cfg: &PipelineConfig,
) -> Result<Vec<DynamicRow>> {
    let high = high_cate_pairs(ds, full);
    let per_period: Vec<Result<Vec<DynamicRow>>> = periods
        .par_iter()
        .map(|&(lo, hi)| {
            let rows: Vec<usize> = (0..ds.len())
                .filter(|&r| (lo..=hi).contains(&ds.observations()[r].year))
                .collect();
            let too_small = Error::PeriodTooSmall { lo, hi, n: rows.len() };
            if rows.len() < 2 * cfg.causal_forest.min_rows() {
                return Err(too_small);
            }
            let sub = ds.subset(&rows)?;
            let run = run_pipeline(&sub, cfg)?;
            let in_high: Vec<bool> = run
                .rows
                .iter()
                .map(|&r| high.contains(&sub.observations()[r].pair))
                .collect();
            [CateGroup::High, CateGroup::Low, CateGroup::All]
                .into_iter()
                .map(|g| {
                    let w: Vec<f64> = in_high
                        .iter()
                        .map(|&h| match g {
                            CateGroup::High => f64::from(h),
                            CateGroup::Low => f64::from(!h),
                            CateGroup::All => 1.0,
                        })
                        .collect();
                    let n = w.iter().filter(|&&v| v > 0.0).count();
                    let a = if g == CateGroup::All {
                        run.ate
                    } else {
                        weighted_mean(&run.cate, Some(&w), true).map_err(|e| match e {
                            Error::AllZeroWeights => Error::PeriodTooSmall { lo, hi, n: 0 },
                            e => e,
                        })?
                    };
                    Ok(DynamicRow {
                        period: (lo, hi),
                        group: g,
                        ate: a.point,
                        effect_pct: effect_pct(a.point),
                        ci_lo: a.ci.0,
                        ci_hi: a.ci.1,
                        n,
                    })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for p in per_period {
        out.extend(p?);
    }
    Ok(out)
}

/// Pipeline on samples ending in each of `end_years`, sorted ascending.
pub fn time_window_sweep(ds: &PanelDataset, end_years: &[i32], cfg: &PipelineConfig) -> Vec<SweepRow> {
    let mut ends: Vec<i32> = end_years.to_vec();
    ends.sort_unstable();
    ends.dedup();
    ends.par_iter()
        .map(|&end| {
            let f = SampleFilter {
                years: Some((i32::MIN, end)),
                ..SampleFilter::default()
            };
            SweepRow::run(end.to_string(), apply_filter(ds, &f), cfg, None)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiversionSubset {
    IntraEurozone,
    EurozoneToOutside,
    OutsideToEurozone,
}

impl DiversionSubset {
    pub const ALL: [DiversionSubset; 3] = [
        DiversionSubset::IntraEurozone,
        DiversionSubset::EurozoneToOutside,
        DiversionSubset::OutsideToEurozone,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            DiversionSubset::IntraEurozone => "Intra-Eurozone",
            DiversionSubset::EurozoneToOutside => "Eurozone -> Non-EZ",
            DiversionSubset::OutsideToEurozone => "Non-EZ -> Eurozone",
        }
    }

    pub fn filter(&self, ds: &PanelDataset) -> SampleFilter {
        let pred = match self {
            DiversionSubset::IntraEurozone => PairPredicate::intra_eurozone(ds, None),
            DiversionSubset::EurozoneToOutside => PairPredicate::eurozone_to_outside(ds, None),
            DiversionSubset::OutsideToEurozone => PairPredicate::outside_to_eurozone(ds, None),
        };
        SampleFilter {
            pair_predicate: Some(pred),
            ..SampleFilter::default()
        }
    }

    /// The subset with its treatment: joint membership for intra pairs, the
    /// eurozone side's membership for cross pairs.
    pub fn dataset(&self, ds: &PanelDataset) -> Result<PanelDataset> {
        let sub = apply_filter(ds, &self.filter(ds))?;
        let t = sub
            .observations()
            .iter()
            .map(|o| {
                f64::from(match self {
                    DiversionSubset::IntraEurozone => o.treated(),
                    DiversionSubset::EurozoneToOutside => o.euro_a,
                    DiversionSubset::OutsideToEurozone => o.euro_b,
                })
            })
            .collect();
        sub.with_treatment(t)
    }
}

pub fn trade_diversion(ds: &PanelDataset, cfg: &PipelineConfig) -> Vec<SweepRow> {
    DiversionSubset::ALL
        .par_iter()
        .map(|s| SweepRow::run(s.label().to_string(), s.dataset(ds), cfg, None))
        .collect()
}

/// Countries that never adopt, for reporting alongside sweeps.
pub fn outside_countries(ds: &PanelDataset) -> Vec<CountryCode> {
    PairPredicate::membership(ds, None).1.into_iter().collect()
}

pub fn write_balance_csv<W: Write>(rows: &[BalanceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variable", "mean_treated", "mean_control", "diff", "std_diff", "imbalanced"])
        ?;
    for r in rows {
        w.write_record([
            r.variable.clone(),
            r.mean_treated.to_string(),
            r.mean_control.to_string(),
            r.diff.to_string(),
            r.std_diff.to_string(),
            r.imbalanced().to_string(),
        ])
        ?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))
}

pub fn write_event_study_csv<W: Write>(res: &EventStudyResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "coef", "se", "ci_lo", "ci_hi", "reference"])?;
    for c in &res.coefficients {
        w.write_record([
            c.k.to_string(),
            c.coef.to_string(),
            c.se.to_string(),
            c.ci_lo.to_string(),
            c.ci_hi.to_string(),
            (c.k == res.reference_k).to_string(),
        ])
        ?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))
}

pub fn write_sweep_csv<W: Write>(key: &str, rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        key,
        "n_rows",
        "n_pairs",
        "n_treated",
        "n_control",
        "ate",
        "se",
        "ci_lo",
        "ci_hi",
        "effect_pct",
        "outside_reference",
        "error",
    ])
    ?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.n_rows.to_string(),
            r.n_pairs.to_string(),
            r.n_treated.to_string(),
            r.n_control.to_string(),
            r.ate.to_string(),
            r.se.to_string(),
            r.ci_lo.to_string(),
            r.ci_hi.to_string(),
            r.effect_pct.to_string(),
            r.outside_reference.to_string(),
            r.error.clone().unwrap_or_default(),
        ])
        ?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))
}

pub fn write_dynamic_csv<W: Write>(rows: &[DynamicRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["period", "cate_group", "ate", "effect_pct", "ci_lo", "ci_hi", "n"])
        ?;
    for r in rows {
        w.write_record([
            format!("{}-{}", r.period.0, r.period.1),
            r.group.label().to_string(),
            r.ate.to_string(),
            r.effect_pct.to_string(),
            r.ci_lo.to_string(),
            r.ci_hi.to_string(),
            r.n.to_string(),
        ])
        ?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))
}

pub fn write_oster_csv<W: Write>(cells: &[OsterCell], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["delta", "r_max", "beta_star"])?;
    for c in cells {
        w.write_record([c.delta.to_string(), c.r_max.to_string(), format!("{:.6}", c.beta_star)])
            ?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, DgpSpec, TauFn};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(r: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(r)
    }

    fn small_cfg(seed: u64) -> PipelineConfig {
        let mut cfg = PipelineConfig::new(seed).with_trees(40).with_modifiers(&["x1", "x2"]);
        cfg.outcome_forest.n_trees = 40;
        cfg.treatment_forest.n_trees = 40;
        cfg
    }

    fn step(seed: u64) -> PanelDataset {
        generate(&DgpSpec::named("step", seed).unwrap()).unwrap().0
    }

    const PAPER_OSTER: OsterInput = OsterInput {
        beta_uncontrolled: 0.019,
        r2_uncontrolled: 0.0,
        beta_controlled: 0.382,
        r2_controlled: 0.789,
    };

    #[test]
    fn balance_standardizes_by_pooled_sd() {
        let ds = step(1);
        let vars = vec!["x1".to_string(), "log_gdp_product".to_string()];
        let rows = covariate_balance(&ds, &vars, None).unwrap();
        assert_eq!(rows.len(), 2);
        // x1 is drawn independently of treatment.
        assert!(rows[0].std_diff.abs() < 0.15);

        // Shift x2 by exactly one SD in the treated group.
        let obs: Vec<_> = ds
            .observations()
            .iter()
            .map(|o| {
                let mut o = o.clone();
                if o.treated() {
                    *o.extra_modifiers.get_mut("x2").unwrap() += 1.0;
                }
                o
            })
            .collect();
        let shifted = PanelDataset::from_observations(obs, ds.pretreatment_window()).unwrap();
        let b = covariate_balance(&shifted, &["x2".to_string()], None).unwrap();
        assert!((b[0].std_diff - 1.0).abs() < 0.1, "{}", b[0].std_diff);
        assert!(b[0].imbalanced());

        let flipped = ds.with_treatment(ds.treatment().iter().map(|t| 1.0 - t).collect()).unwrap();
        let f = covariate_balance(&flipped, &vars, None).unwrap();
        for (a, b) in rows.iter().zip(&f) {
            assert_eq!(a.std_diff, -b.std_diff);
        }

        let pre = covariate_balance(&ds, &vars, Some((1995, 1998)));
        assert!(matches!(pre, Err(Error::EmptyGroup(g)) if g == "treated"));
    }

    #[test]
    fn constant_variable_is_flagged() {
        let ds = step(2);
        let b = covariate_balance(&ds, &[crate::panel::TREATMENT.to_string()], Some((2000, 2014)));
        // Treatment is constant within each group.
        let b = b.unwrap();
        assert!(b[0].zero_variance);
        assert_eq!(b[0].std_diff, 0.0);
    }

    /// Newton iterations written out for one feature with explicit 2x2
    /// inversion.
    fn logit_oracle(x: &[f64], y: &[f64]) -> (f64, f64) {
        let (mut a, mut b) = (0.0, 0.0);
        for _ in 0..100 {
            let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (xi, yi) in x.iter().zip(y) {
                let p = 1.0 / (1.0 + (-(a + b * xi)).exp());
                g0 += yi - p;
                g1 += (yi - p) * xi;
                let w = p * (1.0 - p);
                h00 += w;
                h01 += w * xi;
                h11 += w * xi * xi;
            }
            let det = h00 * h11 - h01 * h01;
            a += (h11 * g0 - h01 * g1) / det;
            b += (h00 * g1 - h01 * g0) / det;
        }
        (a, b)
    }

    #[test]
    fn logit_matches_newton_oracle() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..500).map(|_| normal(&mut r)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|xi| f64::from(r.random::<f64>() < 1.0 / (1.0 + (-(0.3 + 1.2 * xi)).exp())))
            .collect();
        let fit = logit_newton(&[x.clone()], &y, 100).unwrap();
        let (a, b) = logit_oracle(&x, &y);
        assert!((fit.coef[0] - a).abs() < 1e-8);
        assert!((fit.coef[1] - b).abs() < 1e-8);
    }

    #[test]
    fn separated_logit_fails() {
        let x: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&v| f64::from(v >= 20.0)).collect();
        assert!(matches!(logit_newton(&[x], &y, 100), Err(Error::LogitNonConvergence)));
    }

    #[test]
    fn overlap_support_bounds() {
        let t = [1.0, 1.0, 0.0, 0.0];
        let same = overlap_summary(PropensityMethod::Logit, &[0.2, 0.8, 0.2, 0.8], &t).unwrap();
        assert_eq!(same.treated_share, 1.0);
        assert_eq!(same.control_share, 1.0);
        assert_eq!(same.support, (0.2, 0.8));
        let apart = overlap_summary(PropensityMethod::Logit, &[0.8, 0.9, 0.1, 0.2], &t).unwrap();
        assert!(apart.support.0 > apart.support.1);
        assert_eq!(apart.treated_in_support + apart.control_in_support, 0);
    }

    #[test]
    fn overlap_report_on_panel() {
        let ds = step(4);
        let preds: Vec<String> = ["log_gdp_product", "log_gdp_per_capita", "year"].map(String::from).into();
        let rep = propensity_overlap(&ds, &preds, &[PropensityMethod::Logit, PropensityMethod::Forest], 3, 1).unwrap();
        assert_eq!(rep.methods.len(), 2);
        for m in &rep.methods {
            assert!(m.treated_share > 0.0 && m.treated_share <= 1.0);
            assert!(m.treated.min >= 0.0 && m.treated.max <= 1.0);
        }
    }

    /// Null effects, pair and year effects, adoption in 1999 for half the
    /// pairs; `ramp` adds `0.02·(k+1)` from k = 0.
    fn event_panel(seed: u64, ramp: bool, all_adopt: bool) -> PanelDataset {
        event_panel_sd(seed, ramp, all_adopt, 0.1)
    }

    fn event_panel_sd(seed: u64, ramp: bool, all_adopt: bool, sd: f64) -> PanelDataset {
        use crate::panel::{Observation, DEFAULT_PRE_WINDOW};
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let codes = crate::synth::COUNTRY_POOL;
        let mut obs = Vec::new();
        for i in 0..10 {
            for j in i + 1..10 {
                let pair = PairKey::new(
                    CountryCode::new(codes[i]).unwrap(),
                    CountryCode::new(codes[j]).unwrap(),
                )
                .unwrap();
                let adopter = all_adopt || (i < 6 && j < 6);
                let fe = normal(&mut r);
                for year in 1995..=2008 {
                    let k = year - 1999;
                    let euro = adopter && k >= 0;
                    let effect = if ramp && euro { 0.02 * (k + 1) as f64 } else { 0.0 };
                    let y = 10.0 + fe + 0.05 * (year - 1995) as f64 + effect + sd * normal(&mut r);
                    let mut o = crate::panel::test_support::obs(codes[i], codes[j], year, y.exp(), (euro, euro));
                    o.pair = pair;
                    obs.push(o);
                }
            }
        }
        let _: &Observation = &obs[0];
        PanelDataset::from_observations(obs, DEFAULT_PRE_WINDOW).unwrap()
    }

    #[test]
    fn event_study_reference_is_zero_and_ramp_is_monotone() {
        let mut monotone = 0;
        for seed in 0..20 {
            let ds = event_panel_sd(seed, true, false, 0.01);
            let es = event_study(&ds, (-4, 9), -1).unwrap();
            let r = es.coefficients.iter().find(|c| c.k == -1).unwrap();
            assert_eq!((r.coef, r.se), (0.0, 0.0));
            assert_eq!(es.pretrend_df, 3);
            let post: Vec<f64> = es.coefficients.iter().filter(|c| c.k >= 0).map(|c| c.coef).collect();
            if post.windows(2).all(|w| w[1] > w[0]) {
                monotone += 1;
            }
        }
        assert!(monotone >= 18, "{monotone}");
    }

    #[test]
    fn event_study_pretrend_size() {
        let rejections = (0..200)
            .filter(|&s| event_study(&event_panel(100 + s, false, false), (-4, 9), -1).unwrap().pretrend_p < 0.05)
            .count();
        // Nominal 5% with binomial slack for 200 draws.
        assert!((2..=20).contains(&rejections), "{rejections}");
    }

    #[test]
    fn event_study_without_controls_is_collinear() {
        let ds = event_panel(1, false, true);
        assert!(matches!(event_study(&ds, (-4, 9), -1), Err(Error::CollinearEventDummies(k)) if !k.is_empty()));
        assert!(event_study(&ds, (-4, 9), 12).is_err());
    }

    #[test]
    fn wald_matches_chi_square_reference() {
        // Two independent unit-variance coefficients: W = b1² + b2².
        let (w, p) = wald_zero(&[1.0, 2.0, 9.0], &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]], &[0, 1]).unwrap();
        assert!((w - 5.0).abs() < 1e-12);
        assert!((p - (-2.5f64).exp()).abs() < 1e-12);
        let chi3 = ChiSquared::new(3.0).unwrap();
        assert!((1.0 - chi3.cdf(10.03) - 0.018).abs() < 0.001);
    }

    #[test]
    fn oster_reproduces_published_cells() {
        let cases = [
            (0.5, [0.385, 0.408, 0.431]),
            (1.0, [0.387, 0.433, 0.479]),
            (1.5, [0.390, 0.459, 0.528]),
            (2.0, [0.392, 0.484, 0.576]),
        ];
        for (delta, want) in cases {
            for (r_max, w) in [0.8, 0.9, 1.0].into_iter().zip(want) {
                let b = oster_bias_adjusted(&PAPER_OSTER, delta, r_max).unwrap();
                assert!((b - w).abs() <= 0.001, "δ={delta} R={r_max}: {b}");
            }
        }
        assert_eq!(oster_bias_adjusted(&PAPER_OSTER, 0.0, 1.0).unwrap(), 0.382);
        let flat = OsterInput {
            r2_controlled: 0.3,
            r2_uncontrolled: 0.3,
            ..PAPER_OSTER
        };
        assert!(matches!(oster_bias_adjusted(&flat, 1.0, 0.5), Err(Error::DegenerateR2)));
        assert!(oster_bias_adjusted(&PAPER_OSTER, 1.0, 0.5).is_err());
        assert_eq!(oster_table(&PAPER_OSTER, &[0.5, 1.0], &[0.8, 0.9, 1.0]).unwrap().len(), 6);
    }

    proptest! {
        #[test]
        fn oster_is_affine(bu in -1.0..1.0f64, bc in -1.0..1.0f64, ru in 0.0..0.4f64, gain in 0.05..0.5f64,
                           d1 in 0.0..3.0f64, d2 in 0.0..3.0f64, s in 0.0..1.0f64) {
            let inp = OsterInput { beta_uncontrolled: bu, r2_uncontrolled: ru, beta_controlled: bc, r2_controlled: ru + gain };
            let rm = inp.r2_controlled + s * (1.0 - inp.r2_controlled);
            let f = |d: f64, r: f64| oster_bias_adjusted(&inp, d, r).unwrap();
            let mid = f((d1 + d2) / 2.0, rm);
            prop_assert!((mid - (f(d1, rm) + f(d2, rm)) / 2.0).abs() < 1e-12);
            let r2 = inp.r2_controlled + (rm - inp.r2_controlled) / 2.0;
            let midr = f(d1, (rm + r2) / 2.0);
            prop_assert!((midr - (f(d1, rm) + f(d1, r2)) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn oster_inputs_from_panel() {
        let ds = step(5);
        let controls: Vec<String> = ["log_gdp_product", "log_gdp_per_capita"].map(String::from).into();
        let inp = oster_inputs(&ds, &controls).unwrap();
        assert!(inp.r2_controlled > inp.r2_uncontrolled);
        assert!(inp.validate().is_ok());
    }

    #[test]
    fn placebo_redefines_treatment_before_adoption() {
        let ds = step(6);
        let p = placebo_dataset(&ds, 1997).unwrap();
        assert!(p.observations().iter().all(|o| o.year < 1999));
        let adopters = ds.adoption_years();
        for (o, t) in p.observations().iter().zip(p.treatment()) {
            assert_eq!(*t == 1.0, o.year >= 1997 && adopters.contains_key(&o.pair));
        }
        assert!(matches!(placebo_dataset(&ds, 1995), Err(Error::NoPreTreatmentRows(1995))));
        assert!(matches!(placebo_dataset(&ds, 1990), Err(Error::NoPreTreatmentRows(1990))));
        assert!(placebo_dataset(&ds, 1999).is_err());

        let runs = placebo_treatments(&ds, &[1996, 1997], &small_cfg(1));
        assert_eq!(runs.iter().map(|r| r.0).collect::<Vec<_>>(), vec![1996, 1997]);
        for (_, r) in runs {
            let r = r.unwrap();
            assert_eq!(r.n_rows, 400);
            assert!(r.ci_lo <= r.ate && r.ate <= r.ci_hi);
        }
    }

    #[test]
    fn leave_one_out_has_a_row_per_country() {
        let spec = DgpSpec {
            n_countries: 8,
            max_pairs: None,
            tau: TauFn::Constant { value: 0.2 },
            ..DgpSpec::named("null", 7).unwrap()
        };
        let (ds, _) = generate(&spec).unwrap();
        let loo = leave_one_out(&ds, &small_cfg(2)).unwrap();
        assert_eq!(loo.rows.len(), 8);
        let labels: Vec<String> = loo.rows.iter().map(|r| r.label.clone()).collect();
        assert_eq!(labels, ds.countries().iter().map(|c| c.to_string()).collect::<Vec<_>>());
        for r in &loo.rows {
            assert!(r.error.is_some() || r.n_pairs == 21, "{r:?}");
        }
    }

    #[test]
    fn windows_sorted_and_single_window_matches_plain_run() {
        let ds = step(8);
        let cfg = small_cfg(3);
        let rows = time_window_sweep(&ds, &[2014, 2008], &cfg);
        assert_eq!(rows.iter().map(|r| r.label.as_str()).collect::<Vec<_>>(), vec!["2008", "2014"]);
        let plain = run_pipeline(&ds, &cfg).unwrap();
        assert_eq!(rows[1].ate, plain.ate.point);
        assert_eq!(rows[1].n_rows, ds.len());
    }

    #[test]
    fn dynamic_single_period_reproduces_full_run() {
        let ds = step(9);
        let cfg = small_cfg(4);
        let full = run_pipeline(&ds, &cfg).unwrap();
        let rows = dynamic_heterogeneity(&ds, &full, &[(1995, 2014)], &cfg).unwrap();
        assert_eq!(rows.len(), 3);
        let all = rows.iter().find(|r| r.group == CateGroup::All).unwrap();
        assert_eq!(all.ate, full.ate.point);
        assert_eq!(all.n, ds.len());
        let high = rows.iter().find(|r| r.group == CateGroup::High).unwrap();
        let low = rows.iter().find(|r| r.group == CateGroup::Low).unwrap();
        assert_eq!(high.n + low.n, ds.len());
        assert!(matches!(
            dynamic_heterogeneity(&ds, &full, &[(2014, 2014)], &cfg),
            Err(Error::PeriodTooSmall { lo: 2014, hi: 2014, .. })
        ));
    }

    #[test]
    fn diversion_subsets_use_the_eurozone_side() {
        let ds = generate(&DgpSpec::named("crisis", 1).unwrap()).unwrap().0;
        for s in DiversionSubset::ALL {
            let sub = s.dataset(&ds).unwrap();
            for (o, t) in sub.observations().iter().zip(sub.treatment()) {
                let want = match s {
                    DiversionSubset::IntraEurozone => o.euro_a && o.euro_b,
                    DiversionSubset::EurozoneToOutside => o.euro_a,
                    DiversionSubset::OutsideToEurozone => o.euro_b,
                };
                assert_eq!(*t == 1.0, want);
            }
        }
    }
}
