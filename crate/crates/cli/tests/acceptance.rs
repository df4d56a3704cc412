//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a subset:
//! `cargo test -p hetfx-cli --test acceptance -- 3 4`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use hetfx::causal::{ate, effect_pct, feature_importance, fit_causal_forest, predict_cate};
use hetfx::cffe::{within_transform, NodeFESolver};
use hetfx::diagnostics::{event_study, oster_bias_adjusted, placebo_treatment, OsterInput};
use hetfx::dml::inject_nuisance;
use hetfx::forest::ForestConfig;
use hetfx::gravity::{ppml, twfe_ols, FESpec};
use hetfx::panel::{CountryCode, Observation, PairKey, PanelDataset};
use hetfx::pipeline::{run_pipeline, ForestMethod, PipelineConfig};
use hetfx::synth::{generate, DgpSpec, TauFn};

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "bias-adjusted bounds table", limit: secs(1), run: c1_oster },
        Criterion { id: 2, name: "percentage effects", limit: secs(1), run: c2_effect_pct },
        Criterion { id: 3, name: "absorbed PPML vs dummy Poisson", limit: secs(5), run: c3_ppml },
        Criterion { id: 4, name: "demeaned OLS vs dummy OLS", limit: secs(1), run: c4_twfe },
        Criterion { id: 5, name: "injected nuisance ATE", limit: secs(60), run: c5_injected },
        Criterion { id: 6, name: "step heterogeneity", limit: secs(120), run: c6_step_gap },
        Criterion { id: 7, name: "ATE interval coverage", limit: secs(30 * 60), run: c7_coverage },
        Criterion { id: 8, name: "crisis bias and recovery", limit: secs(30 * 60), run: c8_crisis },
        Criterion { id: 9, name: "null placebo and pretrends", limit: secs(20 * 60), run: c9_null },
        Criterion { id: 10, name: "seed stability", limit: secs(15 * 60), run: c10_seed_cv },
        Criterion { id: 11, name: "thread-count invariance", limit: secs(15 * 60), run: c11_threads },
    ];
    let only: BTreeSet<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();

    let mut failed = 0;
    for c in criteria.iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
        let t0 = Instant::now();
        let res = (c.run)();
        let elapsed = t0.elapsed();
        let (ok, detail) = match res {
            Ok(d) if elapsed <= c.limit => (true, d),
            Ok(d) => (false, format!("{d}; exceeded {:.0?}", c.limit)),
            Err(d) => (false, d),
        };
        failed += usize::from(!ok);
        println!(
            "[{}] {:>2} {}: {} ({:.2?})",
            if ok { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            detail,
            elapsed
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn ensure(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn lib<T>(r: hetfx::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------
// Published tables

fn c1_oster() -> Outcome {
    let input = OsterInput {
        beta_uncontrolled: 0.019,
        r2_uncontrolled: 0.0,
        beta_controlled: 0.382,
        r2_controlled: 0.789,
    };
    let table = [
        (0.5, [0.385, 0.408, 0.431]),
        (1.0, [0.387, 0.433, 0.479]),
        (1.5, [0.390, 0.459, 0.528]),
        (2.0, [0.392, 0.484, 0.576]),
    ];
    let mut worst: f64 = 0.0;
    for (delta, row) in table {
        for (rmax, want) in [0.8, 0.9, 1.0].into_iter().zip(row) {
            let got = lib(oster_bias_adjusted(&input, delta, rmax))?;
            worst = worst.max((got - want).abs());
        }
    }
    ensure(worst <= 0.001 + 1e-12, format!("12 cells, max |diff| {worst:.5} (tol 0.001)"))
}

fn c2_effect_pct() -> Outcome {
    let pairs = [(0.157, 17.0), (0.120, 12.8), (0.204, 22.6), (0.252, 28.6), (0.133, 14.2), (0.126, 13.4)];
    let worst = pairs.iter().map(|&(tau, pct)| (effect_pct(tau) - pct).abs()).fold(0.0, f64::max);
    ensure(worst <= 0.1 + 1e-9, format!("{} values, max |diff| {worst:.3}pp (tol 0.1)", pairs.len()))
}

// ---------------------------------------------------------------------------
// Tiny panels and dummy-variable oracles

const ADOPTERS: [&str; 3] = ["AT", "BE", "DE"];

/// Pairs among `countries`, `years` consecutive years from 1995, adoption
/// in 1999 for the countries in [`ADOPTERS`]. Trade is drawn around a
/// gravity mean; `zeros` lists (pair index, year index) cells set to zero.
fn tiny_panel(countries: &[&str], n_pairs: usize, n_years: i32, seed: u64, zeros: &[(usize, i32)]) -> PanelDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes: Vec<CountryCode> = countries.iter().map(|c| CountryCode::new(c).unwrap()).collect();
    let mut pairs = Vec::new();
    for i in 0..codes.len() {
        for j in i + 1..codes.len() {
            pairs.push(PairKey::new(codes[i], codes[j]).unwrap());
        }
    }
    pairs.truncate(n_pairs);
    let gdp: BTreeMap<(CountryCode, i32), f64> = codes
        .iter()
        .flat_map(|&c| (0..n_years).map(move |t| (c, t)))
        .map(|k| (k, 1e5 * (1.0 + rng.random::<f64>())))
        .collect();
    let pair_fe: Vec<f64> = pairs.iter().map(|_| rng.random_range(-0.5..0.5)).collect();
    let mut obs = Vec::new();
    for (p, &pair) in pairs.iter().enumerate() {
        for t in 0..n_years {
            let year = 1995 + t;
            let euro = |c: CountryCode| year >= 1999 && ADOPTERS.contains(&c.as_str());
            let (ga, gb) = (gdp[&(pair.a(), t)], gdp[&(pair.b(), t)]);
            let treated = euro(pair.a()) && euro(pair.b());
            let mean = (3.0 + pair_fe[p] + 0.05 * f64::from(t) + 0.2 * f64::from(u8::from(treated))
                + 0.8 * (ga * gb).ln()
                - 0.8 * 2.0 * 1e5f64.ln())
            .exp();
            let trade = if zeros.contains(&(p, t)) { 0.0 } else { mean * rng.random_range(0.6..1.4) };
            obs.push(Observation {
                pair,
                year,
                flow_ab: trade / 2.0,
                flow_ba: trade / 2.0,
                trade_nominal: trade,
                ppi: 100.0,
                gdp_a: ga,
                gdp_b: gb,
                pop_a: 10.0,
                pop_b: 20.0,
                euro_a: euro(pair.a()),
                euro_b: euro(pair.b()),
                extra_modifiers: BTreeMap::new(),
            });
        }
    }
    PanelDataset::from_observations(obs, (1995, 1996)).unwrap()
}

/// Regressor columns followed by every pair dummy and all but the first
/// year dummy.
fn dummy_design(ds: &PanelDataset, rows: &[usize], regressors: &[String]) -> DMatrix<f64> {
    let x = ds.matrix(regressors, rows).unwrap();
    let pair_ids = ds.pair_ids();
    let year_ids = ds.year_ids();
    let (k, np, ny) = (regressors.len(), ds.pairs().len(), ds.years().len());
    DMatrix::from_fn(rows.len(), k + np + ny - 1, |i, j| {
        let r = rows[i];
        if j < k {
            x[[i, j]]
        } else if j < k + np {
            f64::from(u8::from(pair_ids[r] == j - k))
        } else {
            f64::from(u8::from(year_ids[r] == j - k - np + 1))
        }
    })
}

fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    x.clone().svd(true, true).solve(y, 1e-12).unwrap()
}

/// Poisson MLE by plain Newton steps on the full dummy design.
fn poisson_newton(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>, String> {
    // Start from an OLS fit of log(y + mean) so the first step is sane.
    let ybar = y.mean();
    let mut beta = ols(x, &y.map(|v| (v + ybar).ln()));
    for _ in 0..200 {
        let mu = (x * &beta).map(f64::exp);
        let grad = x.transpose() * (y - &mu);
        let hess = x.transpose() * DMatrix::from_diagonal(&mu) * x;
        let step = hess.cholesky().ok_or("oracle Hessian not positive definite")?.solve(&grad);
        beta += &step;
        if step.amax() < 1e-13 {
            return Ok(beta);
        }
    }
    Err("oracle Newton did not converge".into())
}

fn c3_ppml() -> Outcome {
    let regs = vec!["treatment".to_string(), "log_gdp_product".to_string()];
    let panels = [
        tiny_panel(&["AT", "BE", "DE", "FR"], 6, 10, 1, &[]),
        tiny_panel(&["AT", "BE", "DE", "FR"], 4, 5, 2, &[]),
        tiny_panel(&["AT", "BE", "DE", "FR", "UK"], 5, 8, 3, &[(3, 2), (4, 6)]),
    ];
    let mut coef_gap: f64 = 0.0;
    let mut add_gap: f64 = 0.0;
    for ds in &panels {
        if ds.len() > 60 {
            return Err(format!("panel has {} rows", ds.len()));
        }
        let fit = lib(ppml(ds, &regs, &FESpec::two_way()))?;
        if !fit.converged {
            return Err("absorbed PPML did not converge".into());
        }
        let rows: Vec<usize> = (0..ds.len()).collect();
        let x = dummy_design(ds, &rows, &regs);
        let y = DVector::from_iterator(rows.len(), ds.observations().iter().map(|o| o.real_trade()));
        let oracle = poisson_newton(&x, &y)?;
        for (i, name) in regs.iter().enumerate() {
            let (b, _) = fit.coef(name).ok_or(format!("missing {name}"))?;
            coef_gap = coef_gap.max((b - oracle[i]).abs());
        }
        // Pair and year effects make the fitted values add up to the data
        // in every pair and every year.
        let ids = [ds.pair_ids(), ds.year_ids()];
        for g in &ids {
            let mut sums: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
            for (r, &id) in g.iter().enumerate() {
                let e = sums.entry(id).or_default();
                e.0 += y[r];
                e.1 += fit.fitted[r];
            }
            for (obs, fitted) in sums.values() {
                add_gap = add_gap.max((obs - fitted).abs() / obs.abs().max(1e-300));
            }
        }
    }
    ensure(
        coef_gap <= 1e-6 && add_gap <= 1e-6,
        format!("3 panels, max coef diff {coef_gap:.1e}, max adding-up rel diff {add_gap:.1e} (tol 1e-6)"),
    )
}

fn c4_twfe() -> Outcome {
    let ds = tiny_panel(&["AT", "BE", "DE", "FR"], 4, 5, 11, &[]);
    let regs = vec!["treatment".to_string(), "log_gdp_product".to_string()];
    let fit = lib(twfe_ols(&ds, &regs, &FESpec::two_way()))?;
    let rows = ds.rows_with_outcome();
    if rows.len() != 20 {
        return Err(format!("expected 20 rows, got {}", rows.len()));
    }
    let x = dummy_design(&ds, &rows, &regs);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| ds.y()[r].unwrap()));
    let oracle = ols(&x, &y);
    let mut coef_gap: f64 = 0.0;
    for (i, name) in regs.iter().enumerate() {
        coef_gap = coef_gap.max((fit.coef(name).unwrap().0 - oracle[i]).abs());
    }

    // Within transform of the outcome against residuals from regressing it
    // on the dummies alone.
    let d = x.columns(regs.len(), x.ncols() - regs.len()).into_owned();
    let resid = &y - &d * ols(&d, &y);
    let pair_ids = ds.pair_ids();
    let year_ids = ds.year_ids();
    let within = lib(within_transform(y.as_slice(), &pair_ids, &year_ids, &NodeFESolver::default()))?;
    let within_gap = within.values.iter().zip(resid.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(
        coef_gap <= 1e-8 && within_gap <= 1e-8,
        format!("max coef diff {coef_gap:.1e}, max within diff {within_gap:.1e} (tol 1e-8)"),
    )
}

// ---------------------------------------------------------------------------
// Simulated processes

fn step_4000(seed: u64, tau: Option<TauFn>) -> Result<(PanelDataset, hetfx::synth::Truth), String> {
    let mut spec = lib(DgpSpec::named("step", seed))?;
    spec.max_pairs = Some(200);
    if let Some(t) = tau {
        spec.tau = t;
    }
    lib(generate(&spec))
}

fn c5_injected() -> Outcome {
    let (ds, truth) = step_4000(0, Some(TauFn::Constant { value: 0.3 }))?;
    let rp = lib(inject_nuisance(&ds, |r| truth.m[r], |r| truth.e[r]))?;
    let pl = lib(rp.partial_linear())?;

    // Least-squares slope of (Y - m) on (T - e), solved directly from the
    // truth vectors.
    let rows = ds.rows_with_outcome();
    let yt = DVector::from_iterator(rows.len(), rows.iter().map(|&r| ds.y()[r].unwrap() - truth.m[r]));
    let tt = DMatrix::from_iterator(rows.len(), 1, rows.iter().map(|&r| ds.treatment()[r] - truth.e[r]));
    let oracle = ols(&tt, &yt)[0];
    let fwl_gap = (pl.tau - oracle).abs();

    let names = vec!["x1".to_string(), "x2".to_string()];
    let model = lib(fit_causal_forest(&ds, &rp, &names, &ForestConfig::causal(0)))?;
    let x = lib(ds.matrix(&names, &rp.rows))?;
    let cate = lib(predict_cate(&model, x.view()))?;
    let cf = lib(ate(&cate, None))?.point;
    ensure(
        fwl_gap <= 1e-8 && (cf - 0.3).abs() <= 0.05,
        format!(
            "n={}, LS {:.4} vs oracle diff {fwl_gap:.1e} (tol 1e-8); forest ATE {cf:.4} (want 0.30±0.05)",
            rows.len(),
            pl.tau
        ),
    )
}

fn c6_step_gap() -> Outcome {
    let (ds, _) = step_4000(0, None)?;
    let cfg = PipelineConfig::new(0).with_modifiers(&["x1", "x2"]);
    let run = lib(run_pipeline(&ds, &cfg))?;
    let x1 = lib(ds.column("x1"))?;
    let (mut hi, mut lo) = (Vec::new(), Vec::new());
    for (i, &r) in run.rows.iter().enumerate() {
        if x1[r].unwrap() > 0.0 {
            hi.push(run.cate.tau_hat[i]);
        } else {
            lo.push(run.cate.tau_hat[i]);
        }
    }
    let gap = mean(&hi) - mean(&lo);
    let imp = feature_importance(&run.model);
    let imp_x1 = imp.iter().find(|(n, _)| n == "x1").map(|p| p.1).unwrap_or(0.0);
    ensure(
        (gap - 0.5).abs() <= 0.1 && imp_x1 > 0.7,
        format!("n={}, CATE gap {gap:.3} (want 0.5±0.1), importance(x1) {imp_x1:.3} (want >0.7)", run.rows.len()),
    )
}

fn c7_coverage() -> Outcome {
    let reps = 200u64;
    let hits: Vec<Result<(bool, usize), String>> = (0..reps)
        .into_par_iter()
        .map(|seed| {
            let (ds, truth) = lib(generate(&lib(DgpSpec::named("step", seed))?))?;
            let run = lib(run_pipeline(&ds, &PipelineConfig::new(seed).with_modifiers(&["x1", "x2"])))?;
            Ok((run.ate.ci.0 <= truth.ate && truth.ate <= run.ate.ci.1, run.rows.len()))
        })
        .collect();
    let hits: Vec<(bool, usize)> = hits.into_iter().collect::<Result<_, _>>()?;
    let covered = hits.iter().filter(|h| h.0).count();
    let rate = covered as f64 / reps as f64;
    ensure(
        (0.85..=0.99).contains(&rate),
        format!("n={}, {covered}/{reps} intervals cover the true ATE (want 85-99%)", hits[0].1),
    )
}

fn crisis(seed: u64) -> Result<PanelDataset, String> {
    let spec = DgpSpec {
        target_rows: Some(2149),
        ..lib(DgpSpec::named("crisis", seed))?
    };
    Ok(lib(generate(&spec))?.0)
}

fn c8_crisis() -> Outcome {
    let reps = 100u64;
    let runs: Vec<Result<(f64, f64), String>> = (0..reps)
        .into_par_iter()
        .map(|seed| {
            let ds = crisis(seed)?;
            let cfg = PipelineConfig::new(seed);
            let naive = lib(run_pipeline(&ds, &cfg))?.ate.point;
            let fe = lib(run_pipeline(&ds, &cfg.with_method(ForestMethod::Cffe)))?.ate.point;
            Ok((naive, fe))
        })
        .collect();
    let runs: Vec<(f64, f64)> = runs.into_iter().collect::<Result<_, _>>()?;
    let both = runs.iter().filter(|(n, f)| *n <= 0.08 && (f - 0.13).abs() <= 0.03).count();
    let naive: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let fe: Vec<f64> = runs.iter().map(|r| r.1).collect();
    ensure(
        both >= 95,
        format!(
            "{both}/{reps} reps with naive <= 0.08 and CFFE in 0.13±0.03 (want >=95); means naive {:.3}, CFFE {:.3}",
            mean(&naive),
            mean(&fe)
        ),
    )
}

fn c9_null() -> Outcome {
    let reps = 200u64;
    let runs: Vec<Result<(bool, bool), String>> = (0..reps)
        .into_par_iter()
        .map(|seed| {
            let (ds, _) = lib(generate(&lib(DgpSpec::named("null", seed))?))?;
            let cfg = PipelineConfig::new(seed).with_modifiers(&["x1", "x2"]);
            let placebo = lib(placebo_treatment(&ds, 1997, &cfg))?;
            let es = lib(event_study(&ds, (-4, 5), -1))?;
            Ok((placebo.covers_zero, es.pretrend_p < 0.05))
        })
        .collect();
    let runs: Vec<(bool, bool)> = runs.into_iter().collect::<Result<_, _>>()?;
    let cover = runs.iter().filter(|r| r.0).count();
    let reject = runs.iter().filter(|r| r.1).count();
    let reject_rate = reject as f64 / reps as f64;
    ensure(
        cover as f64 >= 0.90 * reps as f64 && (0.03..=0.08).contains(&reject_rate),
        format!("placebo covers 0 in {cover}/{reps} (want >=90%); pretrend rejects in {reject}/{reps} (want 3-8%)"),
    )
}

fn c10_seed_cv() -> Outcome {
    let ds = crisis(42)?;
    let runs: Vec<Result<(f64, f64), String>> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let cfg = PipelineConfig::new(seed);
            let fe = lib(run_pipeline(&ds, &cfg.clone().with_method(ForestMethod::Cffe)))?.ate.point;
            let naive = lib(run_pipeline(&ds, &cfg))?.ate.point;
            Ok((fe, naive))
        })
        .collect();
    let runs: Vec<(f64, f64)> = runs.into_iter().collect::<Result<_, _>>()?;
    let fe: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let naive: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let cv_fe = cv(&fe);
    ensure(
        cv_fe <= 0.05,
        format!(
            "n={}, CFFE ATE mean {:.4}, CV {:.2}% (want <=5%); naive mean {:.4}, CV {:.1}% (info)",
            ds.len(),
            mean(&fe),
            100.0 * cv_fe,
            mean(&naive),
            100.0 * cv(&naive)
        ),
    )
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn cv(v: &[f64]) -> f64 {
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    var.sqrt() / m.abs()
}

// ---------------------------------------------------------------------------
// Command line

fn hetfx(args: &[&str], threads: &str) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_hetfx"))
        .args(args)
        .env("HETFX_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        files.insert(path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).unwrap());
    }
    files
}

fn c11_threads() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let panel = root.join("input");
    hetfx(&["synth", "generate", "--dgp", "crisis", "--pairs", "40", "--out", panel.to_str().unwrap()], "1")?;
    let input = panel.join("panel.csv");
    let p = input.to_str().unwrap();
    let small = ["--trees", "60", "--nuisance-trees", "60"];
    // (arguments, whether the command takes forest sizes)
    let commands: Vec<(Vec<&str>, bool)> = vec![
        (vec!["synth", "generate", "--dgp", "step", "--pairs", "30"], false),
        (vec!["estimate", "--method", "cf", "--input", p], true),
        (vec!["estimate", "--method", "cffe", "--input", p], true),
        (vec!["estimate", "--method", "ppml3", "--input", p], true),
        (vec!["diagnose", "overlap", "--input", p], false),
        (vec!["diagnose", "placebo", "--input", p], true),
        (vec!["diagnose", "loo", "--input", p], true),
        (vec!["counterfactual", "--input", p], true),
        (vec!["seed-sweep", "--n", "3", "--input", p, "--forest", "cffe"], true),
    ];
    let mut files = 0;
    for (i, (cmd, forests)) in commands.iter().enumerate() {
        let mut outputs = Vec::new();
        for threads in ["1", "4"] {
            let out = root.join(format!("c{i}-t{threads}"));
            let mut args = cmd.clone();
            args.extend(["--out", out.to_str().unwrap()]);
            if *forests {
                args.extend(small);
            }
            hetfx(&args, threads)?;
            outputs.push(read_dir(&out));
        }
        if outputs[0] != outputs[1] {
            let differing: Vec<&String> = outputs[0]
                .iter()
                .filter(|(k, v)| outputs[1].get(*k) != Some(v))
                .map(|(k, _)| k)
                .collect();
            return Err(format!("{cmd:?} differs between 1 and 4 threads in {differing:?}"));
        }
        files += outputs[0].len();
    }
    Ok(format!("{} commands, {files} files byte-identical at 1 and 4 threads", commands.len()))
}
