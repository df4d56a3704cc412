//! End-to-end estimation: residualize, grow the causal forest, predict CATEs
//! and average them.

use serde::{Deserialize, Serialize};

use crate::causal::{fit_causal_forest, predict_cate, AteEstimate, CateResult, CausalForestModel};
use crate::cffe::{cffe_ate, fit_cffe_on, FeInputs, NodeFESolver};
use crate::dml::{residualize, CrossFitPlan, ResidualizedPanel, DEFAULT_FOLDS};
use crate::error::Result;
use crate::forest::ForestConfig;
use crate::panel::{PanelDataset, DEFAULT_CONTROLS, DEFAULT_MODIFIERS};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForestMethod {
    /// Causal forest on cross-fitted residuals.
    Dml,
    /// Fixed-effects causal forest on raw log trade and the adoption dummy.
    Cffe,
    /// Fixed-effects causal forest on cross-fitted residuals.
    CffeChained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub method: ForestMethod,
    pub controls: Vec<String>,
    pub modifiers: Vec<String>,
    pub n_folds: usize,
    /// Keep each pair inside one fold.
    pub cluster_folds: bool,
    pub outcome_forest: ForestConfig,
    pub treatment_forest: ForestConfig,
    pub causal_forest: ForestConfig,
    pub solver: NodeFESolver,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(seed: u64) -> Self {
        let mut cfg = PipelineConfig {
            method: ForestMethod::Dml,
            controls: DEFAULT_CONTROLS.iter().map(|s| s.to_string()).collect(),
            modifiers: DEFAULT_MODIFIERS.iter().map(|s| s.to_string()).collect(),
            n_folds: DEFAULT_FOLDS,
            cluster_folds: false,
            outcome_forest: ForestConfig::nuisance(0),
            treatment_forest: ForestConfig::nuisance(0),
            causal_forest: ForestConfig::causal(0),
            solver: NodeFESolver::default(),
            seed: 0,
        };
        cfg.reseed(seed);
        cfg
    }

    /// Set the master seed and rederive every component seed from it.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.outcome_forest.seed = derive_seed(seed, "outcome-forest", 0);
        self.treatment_forest.seed = derive_seed(seed, "treatment-forest", 0);
        self.causal_forest.seed = derive_seed(seed, "causal-forest", 0);
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.reseed(seed);
        self
    }

    pub fn with_method(mut self, method: ForestMethod) -> Self {
        self.method = method;
        self
    }

    pub fn with_modifiers(mut self, modifiers: &[&str]) -> Self {
        self.modifiers = modifiers.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_trees(mut self, n_trees: usize) -> Self {
        self.causal_forest.n_trees = n_trees;
        self
    }

    fn fold_seed(&self) -> u64 {
        derive_seed(self.seed, "folds", 0)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    /// Dataset rows the estimates refer to (rows with a defined outcome).
    pub rows: Vec<usize>,
    pub residuals: Option<ResidualizedPanel>,
    pub model: CausalForestModel,
    pub cate: CateResult,
    pub ate: AteEstimate,
}

pub fn run_pipeline(ds: &PanelDataset, cfg: &PipelineConfig) -> Result<PipelineRun> {
    let residuals = match cfg.method {
        ForestMethod::Cffe => None,
        ForestMethod::Dml | ForestMethod::CffeChained => {
            let rows = ds.rows_with_outcome();
            let plan = if cfg.cluster_folds {
                CrossFitPlan::for_dataset(ds, cfg.n_folds, cfg.fold_seed(), true)?
            } else {
                CrossFitPlan::random(rows.len(), cfg.n_folds, cfg.fold_seed())?
            };
            Some(residualize(
                ds,
                &cfg.controls,
                &plan,
                &cfg.outcome_forest,
                &cfg.treatment_forest,
            )?)
        }
    };
    let (rows, model, fe_inputs) = match (cfg.method, &residuals) {
        (ForestMethod::Dml, Some(rp)) => (
            rp.rows.clone(),
            fit_causal_forest(ds, rp, &cfg.modifiers, &cfg.causal_forest)?,
            None,
        ),
        (ForestMethod::CffeChained, Some(rp)) => {
            let inputs = FeInputs::chained(rp);
            let model = fit_cffe_on(ds, &inputs, &cfg.modifiers, &cfg.causal_forest, &cfg.solver)?;
            (inputs.rows.clone(), model, Some(inputs))
        }
        _ => {
            let inputs = FeInputs::raw(ds);
            let model = fit_cffe_on(ds, &inputs, &cfg.modifiers, &cfg.causal_forest, &cfg.solver)?;
            (inputs.rows.clone(), model, Some(inputs))
        }
    };
    let x = ds.matrix(&cfg.modifiers, &rows)?;
    let t: Vec<f64> = rows.iter().map(|&r| ds.treatment()[r]).collect();
    let mut cate = predict_cate(&model, x.view())?.with_treatment(&t);
    let ate = match &fe_inputs {
        Some(inputs) => cffe_ate(&model, ds, inputs, &cfg.solver)?,
        None => AteEstimate {
            point: cate.ate,
            se: cate.ate_se,
            ci: cate.ate_ci,
        },
    };
    cate.ate = ate.point;
    cate.ate_se = ate.se;
    cate.ate_ci = ate.ci;
    Ok(PipelineRun {
        rows,
        residuals,
        model,
        cate,
        ate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, DgpSpec};

    #[test]
    fn reseeding_changes_every_component() {
        let a = PipelineConfig::new(1);
        let b = PipelineConfig::new(2);
        assert_ne!(a.outcome_forest.seed, b.outcome_forest.seed);
        assert_ne!(a.causal_forest.seed, b.causal_forest.seed);
        assert_ne!(a.outcome_forest.seed, a.treatment_forest.seed);
        assert_eq!(PipelineConfig::new(7), PipelineConfig::new(3).with_seed(7));
    }

    #[test]
    fn pipeline_is_deterministic() {
        let (ds, _) = generate(&DgpSpec::named("step", 1).unwrap()).unwrap();
        let cfg = PipelineConfig::new(5).with_trees(40);
        let a = run_pipeline(&ds, &cfg).unwrap();
        let b = run_pipeline(&ds, &cfg).unwrap();
        assert_eq!(a.cate.tau_hat, b.cate.tau_hat);
        assert_eq!(a.ate, b.ate);
        assert_eq!(a.rows.len(), ds.len());
        assert_eq!(a.cate.n_treated, ds.n_treated());
    }

    #[test]
    fn every_method_runs() {
        let (ds, _) = generate(&DgpSpec::named("crisis", 2).unwrap()).unwrap();
        for m in [ForestMethod::Dml, ForestMethod::Cffe, ForestMethod::CffeChained] {
            let run = run_pipeline(&ds, &PipelineConfig::new(1).with_trees(20).with_method(m)).unwrap();
            assert!(run.ate.point.is_finite() && run.ate.se > 0.0, "{m:?}");
            assert_eq!(run.residuals.is_some(), m != ForestMethod::Cffe);
        }
    }
}
