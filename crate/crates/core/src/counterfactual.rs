//! Effects predicted for pairs that never adopted, their covariate support,
//! and actual-versus-counterfactual trade paths.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::causal::{
    country_effects, effect_pct, pair_effects, predict_cate, weighted_mean, CateResult,
    CausalForestModel, CountryEffect, PairEffect,
};
use crate::error::{Error, Result};
use crate::panel::{CountryCode, PairKey, PanelDataset};

/// Rows of pairs that are never treated.
pub fn untreated_rows(ds: &PanelDataset) -> Vec<usize> {
    let adopters = ds.adoption_years();
    (0..ds.len())
        .filter(|&r| !adopters.contains_key(&ds.observations()[r].pair))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountryCounterfactual {
    pub country: CountryCode,
    pub n_pairs: usize,
    pub effect_pct: f64,
    /// Approximate: half-sample interval of the equally weighted pair mean.
    pub ci_lo_pct: f64,
    pub ci_hi_pct: f64,
    pub std: f64,
    pub min_pct: f64,
    pub max_pct: f64,
}

#[derive(Debug, Clone)]
pub struct CounterfactualPrediction {
    pub rows: Vec<usize>,
    pub cate: CateResult,
    pub pairs: Vec<PairEffect>,
    /// Countries that never adopt, each over its pairs in `rows`.
    pub countries: Vec<CountryCounterfactual>,
    /// Rows with a modifier outside the training range.
    pub outside_training_range: Vec<usize>,
}

/// Apply a trained CATE model to `rows` of `ds`.
pub fn predict_counterfactual(
    model: &CausalForestModel,
    ds: &PanelDataset,
    rows: &[usize],
) -> Result<CounterfactualPrediction> {
    if rows.is_empty() {
        return Err(Error::EmptyResult);
    }
    let x = ds.matrix(&model.feature_names, rows)?;
    let cate = predict_cate(model, x.view())?;
    let outside: Vec<usize> = rows
        .iter()
        .zip(x.outer_iter())
        .filter(|(_, row)| {
            row.iter()
                .zip(&model.feature_ranges)
                .any(|(v, (lo, hi))| v < lo || v > hi)
        })
        .map(|(&r, _)| r)
        .collect();
    for &r in &outside {
        let o = &ds.observations()[r];
        log::warn!("{} {} lies outside the training range of the modifiers", o.pair, o.year);
    }
    let pairs = pair_effects(&cate, ds, rows)?;
    let countries = country_counterfactuals(&cate, ds, rows, &pairs)?;
    Ok(CounterfactualPrediction {
        rows: rows.to_vec(),
        cate,
        pairs,
        countries,
        outside_training_range: outside,
    })
}

fn country_counterfactuals(
    cate: &CateResult,
    ds: &PanelDataset,
    rows: &[usize],
    pairs: &[PairEffect],
) -> Result<Vec<CountryCounterfactual>> {
    let n_rows: BTreeMap<PairKey, usize> = pairs.iter().map(|p| (p.pair, p.n_rows)).collect();
    let members = ds.country_adoption_years();
    country_effects(pairs)
        .into_iter()
        .filter(|c| !members.contains_key(&c.country))
        .map(|CountryEffect { country, n_pairs, effect_pct: pct, std, min_pct, max_pct }| {
            // Each pair weighs the same regardless of its row count.
            let w: Vec<f64> = rows
                .iter()
                .map(|&r| {
                    let p = ds.observations()[r].pair;
                    if p.involves(country) {
                        1.0 / n_rows[&p] as f64
                    } else {
                        0.0
                    }
                })
                .collect();
            let m = weighted_mean(cate, Some(&w), false)?;
            Ok(CountryCounterfactual {
                country,
                n_pairs,
                effect_pct: pct,
                ci_lo_pct: effect_pct(m.ci.0),
                ci_hi_pct: effect_pct(m.ci.1),
                std,
                min_pct,
                max_pct,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupportRow {
    /// Every modifier inside the reference sample's min-max box.
    pub in_support: bool,
    /// Euclidean distance to the nearest reference row in standardized units.
    pub nn_distance: f64,
}

/// Support of `query` rows relative to `reference` rows (the treated
/// training sample). Columns are standardized by the reference mean and SD;
/// constant columns are only centered.
pub fn support_analysis(reference: ArrayView2<f64>, query: ArrayView2<f64>) -> Result<Vec<SupportRow>> {
    let p = reference.ncols();
    if query.ncols() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: query.ncols(),
        });
    }
    if reference.nrows() == 0 {
        return Err(Error::EmptyResult);
    }
    let n = reference.nrows() as f64;
    let mut scale = Vec::with_capacity(p);
    let mut bounds = Vec::with_capacity(p);
    for col in reference.columns() {
        let mean = col.sum() / n;
        let sd = if reference.nrows() > 1 {
            (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        scale.push((mean, if sd > 0.0 { sd } else { 1.0 }));
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        bounds.push((lo, hi));
    }
    let standardize = |m: ArrayView2<f64>| -> Array2<f64> {
        Array2::from_shape_fn(m.dim(), |(i, j)| (m[(i, j)] - scale[j].0) / scale[j].1)
    };
    let mut refs: Vec<Vec<f64>> = standardize(reference).outer_iter().map(|r| r.to_vec()).collect();
    // Sorted on the first coordinate so the search can stop early.
    refs.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let firsts: Vec<f64> = refs.iter().map(|r| r[0]).collect();
    let q = standardize(query);
    Ok(q.outer_iter()
        .zip(query.outer_iter())
        .map(|(z, raw)| {
            let in_support = raw.iter().zip(&bounds).all(|(v, (lo, hi))| v >= lo && v <= hi);
            let z = z.to_vec();
            let start = firsts.partition_point(|&f| f < z[0]);
            let mut best = f64::INFINITY;
            let dist2 = |r: &[f64]| r.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            for r in refs[start..].iter() {
                if (r[0] - z[0]).powi(2) >= best {
                    break;
                }
                best = best.min(dist2(r));
            }
            for r in refs[..start].iter().rev() {
                if (r[0] - z[0]).powi(2) >= best {
                    break;
                }
                best = best.min(dist2(r));
            }
            SupportRow {
                in_support,
                nn_distance: best.sqrt(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairSupport {
    pub pair: PairKey,
    pub in_support: bool,
    pub avg_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountrySupport {
    pub country: CountryCode,
    pub n_pairs: usize,
    pub n_in_support: usize,
    pub share: f64,
    pub avg_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportReport {
    pub pairs: Vec<PairSupport>,
    pub countries: Vec<CountrySupport>,
}

/// Support of the `query_rows` of `ds` relative to its treated rows, on the
/// model's modifiers. A pair is in support when all its rows are.
pub fn support_report(ds: &PanelDataset, modifiers: &[String], query_rows: &[usize]) -> Result<SupportReport> {
    let treated: Vec<usize> = (0..ds.len()).filter(|&r| ds.treatment()[r] == 1.0).collect();
    let reference = ds.matrix(modifiers, &treated)?;
    let query = ds.matrix(modifiers, query_rows)?;
    let rows = support_analysis(reference.view(), query.view())?;
    let mut by_pair: BTreeMap<PairKey, (bool, f64, usize)> = BTreeMap::new();
    for (&r, s) in query_rows.iter().zip(&rows) {
        let e = by_pair.entry(ds.observations()[r].pair).or_insert((true, 0.0, 0));
        e.0 &= s.in_support;
        e.1 += s.nn_distance;
        e.2 += 1;
    }
    let pairs: Vec<PairSupport> = by_pair
        .into_iter()
        .map(|(pair, (ok, d, n))| PairSupport {
            pair,
            in_support: ok,
            avg_distance: d / n as f64,
        })
        .collect();
    let countries: BTreeSet<CountryCode> = pairs.iter().flat_map(|p| [p.pair.a(), p.pair.b()]).collect();
    let countries = countries
        .into_iter()
        .map(|c| {
            let mine: Vec<&PairSupport> = pairs.iter().filter(|p| p.pair.involves(c)).collect();
            let n = mine.len();
            let k = mine.iter().filter(|p| p.in_support).count();
            CountrySupport {
                country: c,
                n_pairs: n,
                n_in_support: k,
                share: k as f64 / n as f64,
                avg_distance: mine.iter().map(|p| p.avg_distance).sum::<f64>() / n as f64,
            }
        })
        .collect();
    Ok(SupportReport { pairs, countries })
}

/// Effect applied to a pair's trade from the adoption year on.
#[derive(Debug, Clone, PartialEq)]
pub enum TauPath {
    /// One level shift for all post years.
    Constant(f64),
    /// Year-specific effects; years without an entry get none.
    PerYear(BTreeMap<i32, f64>),
}

impl TauPath {
    fn at(&self, year: i32) -> f64 {
        match self {
            TauPath::Constant(t) => *t,
            TauPath::PerYear(m) => m.get(&year).copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub year: i32,
    pub actual_index: f64,
    pub counterfactual_index: f64,
    /// Running sum of counterfactual minus actual real trade.
    pub foregone_cum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub entity: String,
    pub base_year: i32,
    pub adoption_year: i32,
    pub points: Vec<TrajectoryPoint>,
}

/// Real trade of `pairs` summed per year, with a counterfactual that scales
/// each pair by `exp(τ)` from `adoption_year` on. Both paths are indexed to
/// actual trade in `base_year` = 100.
pub fn build_trajectory(
    ds: &PanelDataset,
    entity: &str,
    pairs: &[(PairKey, TauPath)],
    adoption_year: i32,
    base_year: i32,
) -> Result<Trajectory> {
    let taus: BTreeMap<PairKey, &TauPath> = pairs.iter().map(|(p, t)| (*p, t)).collect();
    let mut actual: BTreeMap<i32, f64> = BTreeMap::new();
    let mut counter: BTreeMap<i32, f64> = BTreeMap::new();
    let mut at_base: BTreeSet<PairKey> = BTreeSet::new();
    for o in ds.observations() {
        let Some(tau) = taus.get(&o.pair) else { continue };
        let v = o.real_trade();
        let cf = if o.year >= adoption_year { v * tau.at(o.year).exp() } else { v };
        *actual.entry(o.year).or_default() += v;
        *counter.entry(o.year).or_default() += cf;
        if o.year == base_year {
            at_base.insert(o.pair);
        }
    }
    let missing = || Error::MissingBaseYear {
        entity: entity.to_string(),
        year: base_year,
    };
    if at_base.len() != taus.len() {
        return Err(missing());
    }
    let base = actual[&base_year];
    if base <= 0.0 {
        return Err(missing());
    }
    let mut cum = 0.0;
    let points = actual
        .iter()
        .map(|(&year, &a)| {
            let c = counter[&year];
            cum += c - a;
            TrajectoryPoint {
                year,
                actual_index: 100.0 * a / base,
                counterfactual_index: 100.0 * c / base,
                foregone_cum: cum,
            }
        })
        .collect();
    Ok(Trajectory {
        entity: entity.to_string(),
        base_year,
        adoption_year,
        points,
    })
}

/// `entity,year,actual_index,counterfactual_index,foregone_cum`
pub fn write_trajectory_csv<W: Write>(trajectories: &[Trajectory], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["entity", "year", "actual_index", "counterfactual_index", "foregone_cum"])?;
    for t in trajectories {
        for p in &t.points {
            w.write_record([
                t.entity.clone(),
                p.year.to_string(),
                p.actual_index.to_string(),
                p.counterfactual_index.to_string(),
                p.foregone_cum.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// `country,n_pairs,n_in_support,share_in_support,avg_distance`
pub fn write_support_csv<W: Write>(report: &SupportReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["country", "n_pairs", "n_in_support", "share_in_support", "avg_distance"])?;
    for c in &report.countries {
        w.write_record([
            c.country.to_string(),
            c.n_pairs.to_string(),
            c.n_in_support.to_string(),
            c.share.to_string(),
            c.avg_distance.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// `country,effect_pct,ci_lo_pct,ci_hi_pct,std,min_pct,max_pct`
pub fn write_country_counterfactual_csv<W: Write>(rows: &[CountryCounterfactual], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["country", "effect_pct", "ci_lo_pct", "ci_hi_pct", "std", "min_pct", "max_pct"])?;
    for c in rows {
        w.write_record([
            c.country.to_string(),
            c.effect_pct.to_string(),
            c.ci_lo_pct.to_string(),
            c.ci_hi_pct.to_string(),
            c.std.to_string(),
            c.min_pct.to_string(),
            c.max_pct.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
