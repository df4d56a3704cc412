use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use hetfx::causal::{
    effect_pct, feature_importance, write_cate_csv, write_country_csv, write_pair_csv,
};
use hetfx::counterfactual::{
    build_trajectory, predict_counterfactual, support_report, untreated_rows,
    write_country_counterfactual_csv, write_support_csv, write_trajectory_csv, TauPath,
};
use hetfx::diagnostics::{
    covariate_balance, dynamic_heterogeneity, event_study, leave_one_out, oster_inputs, oster_table,
    placebo_treatments, propensity_overlap, time_window_sweep, trade_diversion, write_balance_csv,
    write_dynamic_csv, write_event_study_csv, write_oster_csv, write_sweep_csv, OsterInput,
    PropensityMethod,
};
use hetfx::gravity::{
    ppml, three_way_ppml, treatment_only, twfe_ols, write_estimates_csv, EstimateRow, FESpec,
};
use hetfx::panel::{
    apply_filter, ingest_csv, ingest_csv_with_report, write_csv, CountryCode, IngestConfig,
    PanelDataset, SampleFilter, PRE_TRADE_INTENSITY, TREATMENT,
};
use hetfx::pipeline::{run_pipeline, ForestMethod, PipelineConfig, PipelineRun};
use hetfx::synth::{generate, DgpSpec, Truth};

use crate::args::*;
use crate::error::CliError;
use crate::output::{table, Output, RunConfig};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(&a),
        Command::Estimate(a) => estimate(&a),
        Command::Diagnose { which } => match which {
            Diagnose::Balance(a) => balance(&a),
            Diagnose::Overlap(a) => overlap(&a),
            Diagnose::EventStudy(a) => event(&a),
            Diagnose::Placebo(a) => placebo(&a),
            Diagnose::Loo(a) => loo(&a),
            Diagnose::Oster(a) => oster(&a),
            Diagnose::Dynamic(a) => dynamic(&a),
            Diagnose::Windows(a) => windows(&a),
            Diagnose::Diversion(a) => diversion(&a),
        },
        Command::Counterfactual(a) => counterfactual(&a),
        Command::Synth {
            which: Synth::Generate(a),
        } => synth(&a),
        Command::SeedSweep(a) => seed_sweep(&a),
    }
}

fn data_inputs(d: &DataArgs) -> Vec<&Path> {
    let mut v = vec![d.input.as_path()];
    v.extend(d.deflator.as_deref());
    v
}

fn open<A: Serialize>(command: &str, args: &A, inputs: &[&Path], out: &OutArgs) -> Result<Output> {
    let cfg = RunConfig::new(command, args, inputs)?;
    Output::create(&out.out, &cfg, out.seed)
}

fn ingest_config(deflator: Option<&Path>, pre_window: (i32, i32)) -> IngestConfig {
    IngestConfig {
        deflator: deflator.map(Path::to_path_buf),
        pretreatment_window: pre_window,
        years: None,
    }
}

fn country(code: &str) -> Result<CountryCode> {
    CountryCode::new(code).map_err(|_| CliError::Usage(format!("`{code}` is not a two-letter country code")))
}

fn load(d: &DataArgs) -> Result<PanelDataset> {
    let ds = ingest_csv(&d.input, &ingest_config(d.deflator.as_deref(), d.pre_window))?;
    let f = &d.filter;
    if f.countries.is_empty() && f.years.is_none() && f.drop_country.is_none() {
        return Ok(ds);
    }
    let filter = SampleFilter {
        countries: if f.countries.is_empty() {
            None
        } else {
            Some(f.countries.iter().map(|c| country(c)).collect::<Result<BTreeSet<_>>>()?)
        },
        years: f.years,
        drop_country: f.drop_country.as_deref().map(country).transpose()?,
        pair_predicate: None,
    };
    Ok(apply_filter(&ds, &filter)?)
}

fn pipeline_config(f: &ForestArgs, seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(seed).with_method(match f.forest {
        ForestChoice::Cf => ForestMethod::Dml,
        ForestChoice::Cffe => ForestMethod::Cffe,
    });
    cfg.modifiers = f.modifiers.clone();
    cfg.controls = f.controls.clone();
    cfg.n_folds = f.folds;
    cfg.cluster_folds = f.cluster_folds;
    cfg.outcome_forest.n_trees = f.nuisance_trees;
    cfg.treatment_forest.n_trees = f.nuisance_trees;
    cfg.causal_forest.n_trees = f.trees;
    cfg.causal_forest.min_samples_leaf = f.min_leaf;
    cfg
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let out = open("ingest", a, &data_inputs(&a.data), &a.out)?;
    let (ds, report) = ingest_csv_with_report(
        &a.data.input,
        &ingest_config(a.data.deflator.as_deref(), a.data.pre_window),
    )?;
    out.csv("panel.csv", |b| write_csv(&ds, b))?;
    let reverse: Vec<String> = report
        .reverse_reported
        .iter()
        .map(|(p, y)| format!("{p} {y}"))
        .collect();
    out.json(
        "ingest_report.json",
        &json!({
            "rows_read": report.rows_read,
            "pair_years": ds.len(),
            "pairs": ds.pairs().len(),
            "countries": ds.countries().len(),
            "years": ds.years(),
            "treated_rows": ds.n_treated(),
            "mirror_rows_ignored": report.mirror_rows_ignored,
            "reverse_reported": reverse,
        }),
    )
}

fn importance_csv(run: &PipelineRun, b: &mut Vec<u8>) -> hetfx::Result<()> {
    table(
        &["feature", "importance"],
        feature_importance(&run.model)
            .into_iter()
            .map(|(f, v)| vec![f, v.to_string()]),
        b,
    )
}

fn estimate(a: &EstimateArgs) -> Result<()> {
    let out = open("estimate", a, &data_inputs(&a.data), &a.out)?;
    let ds = load(&a.data)?;
    let regressors = treatment_only();
    let fixed = |label: &str, spec: &str, sol: hetfx::gravity::FixedEffectsSolution| -> Result<()> {
        let row = EstimateRow::from_solution(label, spec, &sol, TREATMENT)?;
        out.csv("estimates.csv", |b| write_estimates_csv(std::slice::from_ref(&row), b))?;
        out.json("summary.json", &json!({ "estimate": row, "fit": sol }))
    };
    match a.method {
        Method::Twfe => {
            let fe = FESpec::two_way();
            fixed("twfe", &fe.label(), twfe_ols(&ds, &regressors, &fe)?)
        }
        Method::Ppml => {
            let fe = FESpec::two_way();
            fixed("ppml", &fe.label(), ppml(&ds, &regressors, &fe)?)
        }
        Method::Ppml3 => fixed("ppml3", &FESpec::three_way().label(), three_way_ppml(&ds, TREATMENT)?),
        Method::Cf | Method::Cffe => {
            let mut cfg = pipeline_config(&a.forest, a.out.seed);
            cfg.method = match (a.method, a.chain) {
                (Method::Cf, _) => ForestMethod::Dml,
                (_, false) => ForestMethod::Cffe,
                (_, true) => ForestMethod::CffeChained,
            };
            let run = run_pipeline(&ds, &cfg)?;
            let label = if a.method == Method::Cf { "cf" } else { "cffe" };
            let row = EstimateRow {
                ci_lo: run.ate.ci.0,
                ci_hi: run.ate.ci.1,
                ..EstimateRow::new(label, &cfg.modifiers.join("+"), run.ate.point, run.ate.se, run.rows.len(), ds.pairs().len())
            };
            out.csv("estimates.csv", |b| write_estimates_csv(std::slice::from_ref(&row), b))?;
            out.csv("cate.csv", |b| write_cate_csv(&run.cate, &ds, &run.rows, b))?;
            let pairs = hetfx::causal::pair_effects(&run.cate, &ds, &run.rows)?;
            out.csv("pairs.csv", |b| write_pair_csv(&pairs, b))?;
            out.csv("countries.csv", |b| write_country_csv(&hetfx::causal::country_effects(&pairs), b))?;
            out.csv("importance.csv", |b| importance_csv(&run, b))?;
            if let Some(rp) = &run.residuals {
                out.csv("residuals.csv", |b| rp.write_csv(b))?;
            }
            out.json(
                "summary.json",
                &json!({
                    "estimate": row,
                    "n_treated": run.cate.n_treated,
                    "n_control": run.cate.n_control,
                    "importance": feature_importance(&run.model),
                    "pipeline": cfg,
                }),
            )
        }
    }
}

fn balance(a: &BalanceArgs) -> Result<()> {
    let out = open("diagnose balance", a, &data_inputs(&a.data), &a.out)?;
    let ds = load(&a.data)?;
    let vars = if a.vars.is_empty() {
        let mut v: Vec<String> = hetfx::panel::DEFAULT_CONTROLS
            .iter()
            .filter(|c| **c != hetfx::panel::YEAR)
            .map(|s| s.to_string())
            .collect();
        v.push(PRE_TRADE_INTENSITY.to_string());
        v
    } else {
        a.vars.clone()
    };
    let rows = covariate_balance(&ds, &vars, a.within)?;
    out.csv("balance.csv", |b| write_balance_csv(&rows, b))
}

fn overlap(a: &OverlapArgs) -> Result<()> {
    let out = open("diagnose overlap", a, &data_inputs(&a.data), &a.out)?;
    let ds = load(&a.data)?;
    let methods: Vec<PropensityMethod> = a
        .models
        .iter()
        .map(|m| match m {
            ScoreModel::Logit => PropensityMethod::Logit,
            ScoreModel::Forest => PropensityMethod::Forest,
        })
        .collect();
    let report = propensity_overlap(&ds, &a.predictors, &methods, a.folds, a.out.seed)?;
    let mut rows = Vec::new();
    for m in &report.methods {
        let name = serde_json::to_value(m.method).map_err(hetfx::Error::from)?;
        let name = name.as_str().unwrap_or_default().to_string();
        for (group, s, inside, share) in [
            ("treated", &m.treated, m.treated_in_support, m.treated_share),
            ("control", &m.control, m.control_in_support, m.control_share),
        ] {
            rows.push(vec![
                name.clone(),
                group.to_string(),
                s.n.to_string(),
                s.mean.to_string(),
                s.min.to_string(),
                s.p25.to_string(),
                s.median.to_string(),
                s.p75.to_string(),
                s.max.to_string(),
                m.support.0.to_string(),
                m.support.1.to_string(),
                inside.to_string(),
                share.to_string(),
            ]);
        }
    }
    out.csv("overlap.csv", |b| {
        table(
            &[
                "model", "group", "n", "mean", "min", "p25", "median", "p75", "max", "support_lo",
                "support_hi", "in_support", "share_in_support",
            ],
            rows,
            b,
        )
    })?;
    out.json("overlap.json", &report)
}

fn event(a: &EventStudyArgs) -> Result<()> {
    let out = open("diagnose event-study", a, &data_inputs(&a.data), &a.out)?;
    let ds = load(&a.data)?;
    let res = event_study(&ds, (a.k_min, a.k_max), a.reference)?;
    out.csv("event_study.csv", |b| write_event_study_csv(&res, b))?;
    out.json(
        "pretrend.json",
        &json!({
            "reference_k": res.reference_k,
            "window": res.window,
            "wald": res.pretrend_wald,
            "df": res.pretrend_df,
            "p_value": res.pretrend_p,
            "n_obs": res.n_obs,
            "n_clusters": res.n_clusters,
        }),
    )
}

fn placebo(a: &PlaceboArgs) -> Result<()> {
    let out = open("diagnose placebo", a, &data_inputs(&a.data), &a.out)?;
    let ds = load(&a.data)?;
    let cfg = pipeline_config(&a.forest, a.out.seed);
    let results = placebo_treatments(&ds, &a.fake_years, &cfg);
    let rows = results.into_iter().map(|(year, r)| match r {
        Ok(p) => vec![
            year.to_string(),
            p.n_rows.to_string(),
            p.n_treated.to_string(),
            p.ate.to_string(),
            p.se.to_string(),
            p.ci_lo.to_string(),
            p.ci_hi.to_string(),
            p.effect_pct.to_string(),
            p.covers_zero.to_string(),
            String::new(),
        ],
        Err(e) => {
            let mut v = vec![year.to_string()];
            v.extend(std::iter::repeat_n(String::new(), 8));
            v.push(e.to_string());
            v
        }
    });
    out.csv("placebo.csv", |b| {
        table(
            &[
                "fake_year", "n_rows", "n_treated", "ate", "se", "ci_lo", "ci_hi", "effect_pct", "covers_zero",
                "error",
            ],
            rows,
            b,
        )
    })
}

fn loo(a: &LooArgs) -> Result<()> {
    let out = open("diagnose loo", a, &data_inputs(&a.data), &a.out)?;
    let ds = load(&a.data)?;
    let res = leave_one_out(&ds, &pipeline_config(&a.forest, a.out.seed))?;
    let mut rows = vec![res.full];
    rows.extend(res.rows);
    out.csv("loo.csv", |b| write_sweep_csv("dropped", &rows, b))
}

fn oster(a: &OsterArgs) -> Result<()> {
    let mut inputs: Vec<&Path> = a.input.iter().map(|p| p.as_path()).collect();
    inputs.extend(a.deflator.as_deref());
    let out = open("diagnose oster", a, &inputs, &a.out)?;
    let inp = match (&a.input, a.beta_u, a.r2_u, a.beta_c, a.r2_c) {
        (Some(path), ..) => {
            let ds = ingest_csv(path, &ingest_config(a.deflator.as_deref(), a.pre_window))?;
            oster_inputs(&ds, &a.controls)?
        }
        (None, Some(bu), Some(ru), Some(bc), Some(rc)) => OsterInput {
            beta_uncontrolled: bu,
            r2_uncontrolled: ru,
            beta_controlled: bc,
            r2_controlled: rc,
        },
        _ => {
            return Err(CliError::Usage(
                "pass --input or all of --beta-u, --r2-u, --beta-c, --r2-c".into(),
            ))
        }
    };
    let cells = oster_table(&inp, &a.delta, &a.rmax)?;
    out.csv("oster.csv", |b| write_oster_csv(&cells, b))?;
    out.json("oster_inputs.json", &inp)?;
    if let [c] = cells.as_slice() {
        println!("{:.3}", c.beta_star);
    } else {
        println!("delta\tr_max\tbeta_star");
        for c in &cells {
            println!("{}\t{}\t{:.3}", c.delta, c.r_max, c.beta_star);
        }
    }
    Ok(())
}

fn dynamic(a: &DynamicArgs) -> Result<()> {
    let out = open("diagnose dynamic", a, &data_inputs(&a.data), &a.out)?;
    let ds = load(&a.data)?;
    let cfg = pipeline_config(&a.forest, a.out.seed);
    let full = run_pipeline(&ds, &cfg)?;
    let rows = dynamic_heterogeneity(&ds, &full, &a.periods, &cfg)?;
    out.csv("dynamic.csv", |b| write_dynamic_csv(&rows, b))
}

fn windows(a: &WindowsArgs) -> Result<()> {
    let out = open("diagnose windows", a, &data_inputs(&a.data), &a.out)?;
    let ds = load(&a.data)?;
    let rows = time_window_sweep(&ds, &a.end_years, &pipeline_config(&a.forest, a.out.seed));
    out.csv("windows.csv", |b| write_sweep_csv("end_year", &rows, b))
}

fn diversion(a: &DiversionArgs) -> Result<()> {
    let out = open("diagnose diversion", a, &data_inputs(&a.data), &a.out)?;
    let ds = load(&a.data)?;
    let rows = trade_diversion(&ds, &pipeline_config(&a.forest, a.out.seed));
    out.csv("diversion.csv", |b| write_sweep_csv("subset", &rows, b))
}

fn counterfactual(a: &CounterfactualArgs) -> Result<()> {
    let out = open("counterfactual", a, &data_inputs(&a.data), &a.out)?;
    let ds = load(&a.data)?;
    let cfg = pipeline_config(&a.forest, a.out.seed);
    let run = run_pipeline(&ds, &cfg)?;
    let rows = untreated_rows(&ds);
    let pred = predict_counterfactual(&run.model, &ds, &rows)?;
    let support = support_report(&ds, &cfg.modifiers, &rows)?;

    let adoption = match a.adoption_year {
        Some(y) => y,
        None => *ds
            .adoption_years()
            .values()
            .min()
            .ok_or(hetfx::Error::NoTreatmentVariation)?,
    };
    let base = a.base_year.unwrap_or(a.data.pre_window.1);
    let tau: BTreeMap<_, _> = pred.pairs.iter().map(|p| (p.pair, p.tau)).collect();
    let path_for = |keep: &dyn Fn(&hetfx::panel::PairKey) -> bool| -> Vec<_> {
        tau.iter()
            .filter(|(p, _)| keep(p))
            .map(|(p, t)| (*p, TauPath::Constant(*t)))
            .collect()
    };
    let mut trajectories = vec![build_trajectory(&ds, "ALL", &path_for(&|_| true), adoption, base)?];
    for c in &pred.countries {
        let pairs = path_for(&|p| p.involves(c.country));
        trajectories.push(build_trajectory(&ds, c.country.as_str(), &pairs, adoption, base)?);
    }

    out.csv("cf_pairs.csv", |b| write_pair_csv(&pred.pairs, b))?;
    out.csv("cf_countries.csv", |b| write_country_counterfactual_csv(&pred.countries, b))?;
    out.csv("support.csv", |b| write_support_csv(&support, b))?;
    out.csv("trajectories.csv", |b| write_trajectory_csv(&trajectories, b))?;
    let outside: Vec<String> = pred
        .outside_training_range
        .iter()
        .map(|&r| {
            let o = &ds.observations()[r];
            format!("{} {}", o.pair, o.year)
        })
        .collect();
    out.json(
        "counterfactual.json",
        &json!({
            "rows": pred.rows.len(),
            "pairs": pred.pairs.len(),
            "mean_tau": pred.cate.ate,
            "mean_effect_pct": effect_pct(pred.cate.ate),
            "adoption_year": adoption,
            "base_year": base,
            "outside_training_range": outside,
        }),
    )
}

fn write_truth(ds: &PanelDataset, truth: &Truth, b: &mut Vec<u8>) -> hetfx::Result<()> {
    table(
        &["pair", "year", "treatment", "tau", "y0", "y1", "m", "e"],
        ds.observations().iter().enumerate().map(|(i, o)| {
            vec![
                o.pair.to_string(),
                o.year.to_string(),
                ds.treatment()[i].to_string(),
                truth.tau[i].to_string(),
                truth.y0[i].to_string(),
                truth.y1[i].to_string(),
                truth.m[i].to_string(),
                truth.e[i].to_string(),
            ]
        }),
        b,
    )
}

fn synth_spec(a: &SynthArgs) -> Result<DgpSpec> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::read(p, e))?;
            serde_json::from_str::<DgpSpec>(&text).map_err(hetfx::Error::from)?
        }
        None => DgpSpec::named(a.dgp.as_str(), a.out.seed)?,
    };
    spec.seed = a.out.seed;
    if a.pairs.is_some() {
        spec.max_pairs = a.pairs;
    }
    if a.rows.is_some() {
        spec.target_rows = a.rows;
    }
    Ok(spec)
}

fn synth(a: &SynthArgs) -> Result<()> {
    let inputs: Vec<&Path> = a.spec.iter().map(|p| p.as_path()).collect();
    let out = open("synth generate", a, &inputs, &a.out)?;
    let spec = synth_spec(a)?;
    let (ds, truth) = generate(&spec)?;
    out.csv("panel.csv", |b| write_csv(&ds, b))?;
    out.csv("truth.csv", |b| write_truth(&ds, &truth, b))?;
    out.json("spec.json", &json!({ "spec": spec, "ate": truth.ate }))
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    n: usize,
    mean: f64,
    sd: f64,
    cv: f64,
    min: f64,
    max: f64,
    mean_effect_pct: f64,
}

fn summarize(v: &[f64]) -> SweepSummary {
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    SweepSummary {
        n,
        mean,
        sd,
        cv: sd / mean.abs(),
        min: v.iter().cloned().fold(f64::INFINITY, f64::min),
        max: v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        mean_effect_pct: effect_pct(mean),
    }
}

fn seed_sweep(a: &SeedSweepArgs) -> Result<()> {
    if a.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let mut inputs: Vec<&Path> = a.input.iter().map(|p| p.as_path()).collect();
    inputs.extend(a.deflator.as_deref());
    let out = open("seed-sweep", a, &inputs, &a.out)?;
    let ds = match &a.input {
        Some(p) => ingest_csv(p, &ingest_config(a.deflator.as_deref(), a.pre_window))?,
        None => {
            let spec = DgpSpec {
                target_rows: Some(a.rows),
                ..DgpSpec::named(a.dgp.as_str(), a.data_seed)?
            };
            generate(&spec)?.0
        }
    };
    let seeds: Vec<u64> = (0..a.n as u64).map(|i| a.out.seed + i).collect();
    let runs: Vec<hetfx::Result<PipelineRun>> = seeds
        .par_iter()
        .map(|&s| run_pipeline(&ds, &pipeline_config(&a.forest, s)))
        .collect();
    let mut rows = Vec::with_capacity(a.n);
    let mut ates = Vec::with_capacity(a.n);
    for (&s, r) in seeds.iter().zip(runs) {
        let r = r?;
        ates.push(r.ate.point);
        rows.push(vec![
            s.to_string(),
            r.ate.point.to_string(),
            r.ate.se.to_string(),
            r.ate.ci.0.to_string(),
            r.ate.ci.1.to_string(),
            effect_pct(r.ate.point).to_string(),
        ]);
    }
    out.csv("seed_sweep.csv", |b| table(&["seed", "ate", "se", "ci_lo", "ci_hi", "effect_pct"], rows, b))?;
    let s = summarize(&ates);
    out.csv("seed_sweep_summary.csv", |b| {
        table(
            &["statistic", "value"],
            [
                ("seeds", s.n.to_string()),
                ("mean_ate", s.mean.to_string()),
                ("sd", s.sd.to_string()),
                ("cv", s.cv.to_string()),
                ("min", s.min.to_string()),
                ("max", s.max.to_string()),
                ("mean_effect_pct", s.mean_effect_pct.to_string()),
            ]
            .into_iter()
            .map(|(k, v)| vec![k.to_string(), v]),
            b,
        )
    })?;
    println!(
        "ATE mean {:.4}  sd {:.4}  CV {:.1}%  ({} seeds)",
        s.mean,
        s.sd,
        100.0 * s.cv,
        s.n
    );
    Ok(())
}
