//! Cross-fitted residualization of outcome and treatment on controls.

use std::io::Write;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::forest::{fit_classification_forest, fit_regression_forest, ForestConfig};
use crate::panel::PanelDataset;
use crate::rng;

pub const DEFAULT_FOLDS: usize = 5;
/// Propensity predictions are clamped to this range before residualizing.
pub const PROPENSITY_CLIP: (f64, f64) = (0.01, 0.99);

#[derive(Debug, Clone, PartialEq)]
pub struct CrossFitPlan {
    pub n_folds: usize,
    pub fold_of_row: Vec<usize>,
    pub seed: u64,
}

impl CrossFitPlan {
    /// Row-level random folds of (near-)equal size.
    pub fn random(n: usize, n_folds: usize, seed: u64) -> Result<Self> {
        Self::check(n, n_folds)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::rng(rng::derive_seed(seed, "folds", 0)));
        let mut fold_of_row = vec![0; n];
        for (k, &r) in order.iter().enumerate() {
            fold_of_row[r] = k % n_folds;
        }
        Ok(CrossFitPlan {
            n_folds,
            fold_of_row,
            seed,
        })
    }

    /// Folds that keep every cluster (e.g. pair) whole.
    pub fn clustered(clusters: &[usize], n_folds: usize, seed: u64) -> Result<Self> {
        let mut ids: Vec<usize> = clusters.to_vec();
        ids.sort_unstable();
        ids.dedup();
        Self::check(ids.len(), n_folds)?;
        ids.shuffle(&mut rng::rng(rng::derive_seed(seed, "folds", 1)));
        let fold_of: std::collections::HashMap<usize, usize> =
            ids.iter().enumerate().map(|(k, &c)| (c, k % n_folds)).collect();
        Ok(CrossFitPlan {
            n_folds,
            fold_of_row: clusters.iter().map(|c| fold_of[c]).collect(),
            seed,
        })
    }

    /// Plan over the rows of `ds` that carry a log outcome.
    pub fn for_dataset(ds: &PanelDataset, n_folds: usize, seed: u64, cluster: bool) -> Result<Self> {
        let rows = ds.rows_with_outcome();
        if cluster {
            let ids = ds.pair_ids();
            let c: Vec<usize> = rows.iter().map(|&r| ids[r]).collect();
            Self::clustered(&c, n_folds, seed)
        } else {
            Self::random(rows.len(), n_folds, seed)
        }
    }

    fn check(units: usize, n_folds: usize) -> Result<()> {
        if n_folds < 2 {
            return Err(Error::InvalidConfig("cross-fitting needs at least 2 folds".into()));
        }
        if units < n_folds {
            return Err(Error::TooFewRows {
                needed: n_folds,
                have: units,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.fold_of_row.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of_row.is_empty()
    }

    pub fn rows_in(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&r| self.fold_of_row[r] == fold).collect()
    }

    pub fn rows_outside(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&r| self.fold_of_row[r] != fold).collect()
    }
}

/// Outcome and treatment net of their conditional means given controls.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualizedPanel {
    /// Dataset row behind each residual.
    pub rows: Vec<usize>,
    pub y: Vec<f64>,
    pub t: Vec<f64>,
    pub y_tilde: Vec<f64>,
    pub t_tilde: Vec<f64>,
    pub m_hat: Vec<f64>,
    pub e_hat: Vec<f64>,
    /// `None` when nuisances were injected.
    pub plan: Option<CrossFitPlan>,
    pub n_clamped: usize,
}

/// Least-squares slope of the outcome residual on the treatment residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartialLinearFit {
    pub tau: f64,
    /// Heteroskedasticity-robust (HC0) standard error.
    pub se: f64,
}

impl ResidualizedPanel {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Partially-linear final stage with a constant effect.
    pub fn partial_linear(&self) -> Result<PartialLinearFit> {
        let stt: f64 = self.t_tilde.iter().map(|t| t * t).sum();
        if stt <= 1e-12 {
            return Err(Error::NoTreatmentVariation);
        }
        let sty: f64 = self.t_tilde.iter().zip(&self.y_tilde).map(|(t, y)| t * y).sum();
        let tau = sty / stt;
        let meat: f64 = self
            .t_tilde
            .iter()
            .zip(&self.y_tilde)
            .map(|(t, y)| (t * (y - tau * t)).powi(2))
            .sum();
        Ok(PartialLinearFit {
            tau,
            se: meat.sqrt() / stt,
        })
    }

    /// Audit export: `row_id,y_tilde,t_tilde,m_hat,e_hat,fold`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row_id", "y_tilde", "t_tilde", "m_hat", "e_hat", "fold"])?;
        for i in 0..self.len() {
            let fold = self
                .plan
                .as_ref()
                .map_or(String::new(), |p| p.fold_of_row[i].to_string());
            w.write_record([
                self.rows[i].to_string(),
                self.y_tilde[i].to_string(),
                self.t_tilde[i].to_string(),
                self.m_hat[i].to_string(),
                self.e_hat[i].to_string(),
                fold,
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Out-of-fold predictions of E[y|w] and P(t=1|w).
pub fn cross_fit(
    w: &Array2<f64>,
    y: &[f64],
    t: &[f64],
    plan: &CrossFitPlan,
    cfg_outcome: &ForestConfig,
    cfg_treatment: &ForestConfig,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let n = w.nrows();
    if y.len() != n || t.len() != n || plan.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len().min(t.len()).min(plan.len()),
        });
    }
    if !t.iter().any(|&v| v == 1.0) || !t.iter().any(|&v| v == 0.0) {
        return Err(Error::NoTreatmentVariation);
    }
    let mut m_hat = vec![0.0; n];
    let mut e_hat = vec![0.0; n];
    let mut clamped = 0;
    for k in 0..plan.n_folds {
        let train = plan.rows_outside(k);
        let test = plan.rows_in(k);
        if test.is_empty() {
            continue;
        }
        let t_train: Vec<f64> = train.iter().map(|&r| t[r]).collect();
        for class in [0u8, 1u8] {
            if !t_train.iter().any(|&v| v == f64::from(class)) {
                return Err(Error::FoldMissingClass {
                    fold: k,
                    missing: class,
                    n_train: train.len(),
                });
            }
        }
        let w_train = w.select(Axis(0), &train);
        let w_test = w.select(Axis(0), &test);
        let y_train: Vec<f64> = train.iter().map(|&r| y[r]).collect();
        let co = ForestConfig {
            seed: rng::derive_seed(cfg_outcome.seed, "outcome-fold", k as u64),
            ..*cfg_outcome
        };
        let ct = ForestConfig {
            seed: rng::derive_seed(cfg_treatment.seed, "treatment-fold", k as u64),
            ..*cfg_treatment
        };
        let m = fit_regression_forest(&w_train, &y_train, &co)?.predict(w_test.view())?;
        let e = fit_classification_forest(&w_train, &t_train, &ct)?.predict(w_test.view())?;
        for (j, &r) in test.iter().enumerate() {
            m_hat[r] = m[j];
            let clipped = e[j].clamp(PROPENSITY_CLIP.0, PROPENSITY_CLIP.1);
            if clipped != e[j] {
                clamped += 1;
            }
            e_hat[r] = clipped;
        }
    }
    if clamped > 0 {
        log::info!("{clamped} propensity predictions clamped to {PROPENSITY_CLIP:?}");
    }
    Ok((m_hat, e_hat, clamped))
}

/// Cross-fitted residualization of the dataset's log outcome and treatment
/// on `controls`. `plan` indexes the rows with a defined outcome.
pub fn residualize(
    ds: &PanelDataset,
    controls: &[String],
    plan: &CrossFitPlan,
    cfg_outcome: &ForestConfig,
    cfg_treatment: &ForestConfig,
) -> Result<ResidualizedPanel> {
    let rows = ds.rows_with_outcome();
    let w = ds.matrix(controls, &rows)?;
    let y: Vec<f64> = rows.iter().map(|&r| ds.y()[r].expect("outcome rows")).collect();
    let t: Vec<f64> = rows.iter().map(|&r| ds.treatment()[r]).collect();
    let (m_hat, e_hat, n_clamped) = cross_fit(&w, &y, &t, plan, cfg_outcome, cfg_treatment)?;
    Ok(build(rows, y, t, m_hat, e_hat, Some(plan.clone()), n_clamped))
}

fn build(
    rows: Vec<usize>,
    y: Vec<f64>,
    t: Vec<f64>,
    m_hat: Vec<f64>,
    e_hat: Vec<f64>,
    plan: Option<CrossFitPlan>,
    n_clamped: usize,
) -> ResidualizedPanel {
    let y_tilde = y.iter().zip(&m_hat).map(|(a, b)| a - b).collect();
    let t_tilde = t.iter().zip(&e_hat).map(|(a, b)| a - b).collect();
    ResidualizedPanel {
        rows,
        y,
        t,
        y_tilde,
        t_tilde,
        m_hat,
        e_hat,
        plan,
        n_clamped,
    }
}

/// Residualize against known nuisance functions of the dataset row index,
/// bypassing the forests.
pub fn inject_nuisance(
    ds: &PanelDataset,
    m: impl Fn(usize) -> f64,
    e: impl Fn(usize) -> f64,
) -> Result<ResidualizedPanel> {
    let rows = ds.rows_with_outcome();
    let y: Vec<f64> = rows.iter().map(|&r| ds.y()[r].expect("outcome rows")).collect();
    let t: Vec<f64> = rows.iter().map(|&r| ds.treatment()[r]).collect();
    let m_hat: Vec<f64> = rows.iter().map(|&r| m(r)).collect();
    let e_hat: Vec<f64> = rows.iter().map(|&r| e(r)).collect();
    inject_values(rows, y, t, m_hat, e_hat)
}

/// Matrix-level injection with precomputed nuisance values.
pub fn inject_values(
    rows: Vec<usize>,
    y: Vec<f64>,
    t: Vec<f64>,
    m_hat: Vec<f64>,
    e_hat: Vec<f64>,
) -> Result<ResidualizedPanel> {
    let n = rows.len();
    for v in [y.len(), t.len(), m_hat.len(), e_hat.len()] {
        if v != n {
            return Err(Error::DimensionMismatch { expected: n, got: v });
        }
    }
    if let Some((i, &v)) = e_hat
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::PropensityOutOfRange { row: rows[i], value: v });
    }
    Ok(build(rows, y, t, m_hat, e_hat, None, 0))
}
