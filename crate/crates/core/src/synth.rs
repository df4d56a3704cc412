//! Synthetic pair-year panels with known treatment effects.
//!
//! Log trade is `pair effect + year shock + f(W) + τ(x)·T + noise` with
//! `f(W) = 0.8·log GDP product + 0.3·log GDP per capita + 0.01·(year − lo)`
//! (up to constants).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{CountryCode, Observation, PairKey, PanelDataset, DEFAULT_PRE_WINDOW};
use crate::rng;

/// Founders first, then later adopters, then countries outside the euro.
pub const COUNTRY_POOL: [&str; 28] = [
    "AT", "BE", "DE", "ES", "FI", "FR", "IE", "IT", "LU", "NL", "PT", "EL", "SI", "CY", "MT", "SK",
    "EE", "LV", "LT", "BG", "CZ", "DK", "HR", "HU", "PL", "RO", "SE", "UK",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TauFn {
    Constant { value: f64 },
    /// `high` when x1 > 0, `low` otherwise.
    Step { low: f64, high: f64 },
    Linear { intercept: f64, slope: f64 },
}

impl TauFn {
    pub fn eval(&self, x1: f64) -> f64 {
        match *self {
            TauFn::Constant { value } => value,
            TauFn::Step { low, high } => {
                if x1 > 0.0 {
                    high
                } else {
                    low
                }
            }
            TauFn::Linear { intercept, slope } => intercept + slope * x1,
        }
    }

    /// Mean over x1 ~ N(0, 1).
    pub fn mean(&self) -> f64 {
        match *self {
            TauFn::Constant { value } => value,
            TauFn::Step { low, high } => (low + high) / 2.0,
            TauFn::Linear { intercept, .. } => intercept,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum YearShock {
    None,
    /// Common drop of `depth` log points in years `from..=to`.
    Dip { depth: f64, from: i32, to: i32 },
}

impl YearShock {
    pub fn eval(&self, year: i32) -> f64 {
        match *self {
            YearShock::None => 0.0,
            YearShock::Dip { depth, from, to } => {
                if (from..=to).contains(&year) {
                    -depth
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Adoption {
    /// Countries are high or low income with equal odds; each joins in
    /// `year` with probability `p_high` or `p_low`.
    ByIncome { year: i32, p_high: f64, p_low: f64 },
    /// Listed countries join in the given years; the rest never do.
    Fixed { years: BTreeMap<String, i32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub name: String,
    /// Country codes; empty means the first `n_countries` of [`COUNTRY_POOL`].
    #[serde(default)]
    pub countries: Vec<String>,
    pub n_countries: usize,
    pub years: (i32, i32),
    pub adoption: Adoption,
    pub tau: TauFn,
    pub pair_fe_sd: f64,
    pub year_shock: YearShock,
    pub noise_sd: f64,
    /// Country-year noise on log GDP per capita.
    #[serde(default = "default_gdp_noise")]
    pub gdp_noise_sd: f64,
    /// Random-walk innovations in log GDP per capita; pairs drift across each
    /// other so the controls do not pinpoint individual pairs.
    #[serde(default = "default_gdp_drift")]
    pub gdp_drift_sd: f64,
    /// Pair-effect shift of adopting pairs (negative values make adopters
    /// trade less for reasons the controls do not capture).
    pub confounding: f64,
    /// Keep a random subset of this many pairs.
    #[serde(default)]
    pub max_pairs: Option<usize>,
    /// Drop random post-window rows down to this many.
    #[serde(default)]
    pub target_rows: Option<usize>,
    pub seed: u64,
}

fn default_gdp_noise() -> f64 {
    0.02
}

fn default_gdp_drift() -> f64 {
    0.01
}

pub const DGP_NAMES: [&str; 3] = ["null", "step", "crisis"];

impl DgpSpec {
    /// The canonical benchmark processes: `null` (τ = 0), `step`
    /// (τ = 0.5·1[x1 > 0]) and `crisis` (τ = 0.13; adopting pairs trade less
    /// for reasons outside the controls, and late adopters join during a
    /// common crisis dip).
    pub fn named(name: &str, seed: u64) -> Result<Self> {
        let income = Adoption::ByIncome {
            year: 1999,
            p_high: 0.8,
            p_low: 0.3,
        };
        let base = DgpSpec {
            name: name.to_string(),
            countries: Vec::new(),
            n_countries: 28,
            years: (1995, 2014),
            adoption: income,
            tau: TauFn::Constant { value: 0.0 },
            pair_fe_sd: 0.0,
            year_shock: YearShock::None,
            noise_sd: 0.5,
            gdp_noise_sd: default_gdp_noise(),
            gdp_drift_sd: default_gdp_drift(),
            confounding: 0.0,
            max_pairs: Some(100),
            target_rows: None,
            seed,
        };
        match name {
            "null" => Ok(base),
            "step" => Ok(DgpSpec {
                tau: TauFn::Step { low: 0.0, high: 0.5 },
                ..base
            }),
            "crisis" => {
                let mut years = BTreeMap::new();
                for c in ["AT", "BE", "DE", "ES", "FR", "IT", "NL", "PT"] {
                    years.insert(c.to_string(), 1999);
                }
                for (c, y) in [("SI", 2007), ("SK", 2009), ("EE", 2011), ("LV", 2011)] {
                    years.insert(c.to_string(), y);
                }
                let countries: Vec<String> = years
                    .keys()
                    .cloned()
                    .chain(["DK", "PL", "SE", "UK"].map(String::from))
                    .collect();
                Ok(DgpSpec {
                    n_countries: countries.len(),
                    countries,
                    adoption: Adoption::Fixed { years },
                    tau: TauFn::Constant { value: 0.13 },
                    pair_fe_sd: 0.3,
                    year_shock: YearShock::Dip {
                        depth: 0.3,
                        from: 2009,
                        to: 2013,
                    },
                    noise_sd: 0.05,
                    gdp_drift_sd: 0.003,
                    confounding: -0.5,
                    max_pairs: None,
                    ..base
                })
            }
            other => Err(Error::InvalidSpec(format!(
                "unknown DGP `{other}` (expected one of {DGP_NAMES:?})"
            ))),
        }
    }

    pub fn country_codes(&self) -> Result<Vec<CountryCode>> {
        let codes: Vec<&str> = if self.countries.is_empty() {
            if self.n_countries > COUNTRY_POOL.len() {
                return Err(Error::InvalidSpec(format!(
                    "at most {} countries without an explicit list",
                    COUNTRY_POOL.len()
                )));
            }
            COUNTRY_POOL[..self.n_countries].to_vec()
        } else {
            self.countries.iter().map(String::as_str).collect()
        };
        codes.into_iter().map(CountryCode::new).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        let codes = self.country_codes()?;
        if codes.len() < 2 {
            return bad("need at least two countries".into());
        }
        if !self.countries.is_empty() && self.countries.len() != self.n_countries {
            return bad("n_countries disagrees with the country list".into());
        }
        let (lo, hi) = self.years;
        if lo > hi {
            return bad(format!("year range {lo}..{hi} is reversed"));
        }
        if DEFAULT_PRE_WINDOW.0 < lo || DEFAULT_PRE_WINDOW.1 > hi {
            return bad(format!(
                "years must cover the pre-treatment window {DEFAULT_PRE_WINDOW:?}"
            ));
        }
        for (name, v) in [
            ("pair_fe_sd", self.pair_fe_sd),
            ("noise_sd", self.noise_sd),
            ("gdp_noise_sd", self.gdp_noise_sd),
            ("gdp_drift_sd", self.gdp_drift_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative"));
            }
        }
        match &self.adoption {
            Adoption::ByIncome { year, p_high, p_low } => {
                if *year <= DEFAULT_PRE_WINDOW.1 || *year > hi {
                    return bad(format!("adoption year {year} outside the post-window range"));
                }
                for p in [p_high, p_low] {
                    if !(0.0..=1.0).contains(p) {
                        return bad("adoption probabilities must lie in [0, 1]".into());
                    }
                }
            }
            Adoption::Fixed { years } => {
                for (c, y) in years {
                    let code = CountryCode::new(c)?;
                    if !codes.contains(&code) {
                        return bad(format!("adopter {c} is not in the country list"));
                    }
                    if *y <= DEFAULT_PRE_WINDOW.1 || *y > hi {
                        return bad(format!("adoption year {y} of {c} outside the post-window range"));
                    }
                }
            }
        }
        if let Some(m) = self.max_pairs {
            if m < 2 {
                return bad("max_pairs must be at least 2".into());
            }
        }
        Ok(())
    }
}

/// Ground truth aligned with the generated dataset's rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Truth {
    pub tau: Vec<f64>,
    /// Potential log outcomes without and with treatment.
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    /// E[Y | W], ignoring pair effects.
    pub m: Vec<f64>,
    /// P(T = 1 | W); the realized treatment under fixed adoption.
    pub e: Vec<f64>,
    /// Population mean effect.
    pub ate: f64,
}

struct Country {
    code: CountryCode,
    log_pop: f64,
    income: f64,
    p_adopt: f64,
    adopt: Option<i32>,
}

/// Draw a dataset and its truth. Deterministic in `spec.seed`.
pub fn generate(spec: &DgpSpec) -> Result<(PanelDataset, Truth)> {
    spec.validate()?;
    let (lo, hi) = spec.years;
    let codes = spec.country_codes()?;
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let mut r = rng::rng(rng::derive_seed(spec.seed, "synth-countries", 0));

    let mut countries: Vec<Country> = codes
        .iter()
        .map(|&code| Country {
            code,
            log_pop: 15.0 + 0.3 * std.sample(&mut r),
            income: 0.0,
            p_adopt: 0.0,
            adopt: None,
        })
        .collect();
    match &spec.adoption {
        Adoption::ByIncome { year, p_high, p_low } => {
            // Redraw until both adopters and outsiders exist.
            loop {
                for c in countries.iter_mut() {
                    let high = r.random_bool(0.5);
                    c.income = if high { 0.5 } else { -0.5 } + r.random_range(-0.2..0.2);
                    c.p_adopt = if high { *p_high } else { *p_low };
                    c.adopt = r.random_bool(c.p_adopt).then_some(*year);
                }
                let k = countries.iter().filter(|c| c.adopt.is_some()).count();
                if k >= 2 && k < countries.len() {
                    break;
                }
            }
        }
        Adoption::Fixed { years } => {
            for c in countries.iter_mut() {
                c.income = 0.3 * std.sample(&mut r);
                c.adopt = years.get(c.code.as_str()).copied();
                c.p_adopt = f64::from(c.adopt.is_some());
            }
        }
    }

    let n_years = (hi - lo + 1) as usize;
    let mut gr = rng::rng(rng::derive_seed(spec.seed, "synth-gdp", 0));
    let log_pc: Vec<Vec<f64>> = countries
        .iter()
        .map(|c| {
            let mut drift = 0.0;
            (0..n_years)
                .map(|k| {
                    drift += spec.gdp_drift_sd * std.sample(&mut gr);
                    10.0 + c.income + 0.02 * k as f64 + drift + spec.gdp_noise_sd * std.sample(&mut gr)
                })
                .collect()
        })
        .collect();

    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for i in 0..countries.len() {
        for j in i + 1..countries.len() {
            pairs.push((i, j));
        }
    }
    let mut pr = rng::rng(rng::derive_seed(spec.seed, "synth-pairs", 0));
    if let Some(m) = spec.max_pairs {
        if m < pairs.len() {
            pairs.shuffle(&mut pr);
            pairs.truncate(m);
        }
    }
    let mut keyed: Vec<(PairKey, usize, usize)> = pairs
        .into_iter()
        .map(|(i, j)| Ok((PairKey::new(countries[i].code, countries[j].code)?, i, j)))
        .collect::<Result<_>>()?;
    keyed.sort_by_key(|k| k.0);

    let mut obs = Vec::new();
    let mut truth_rows = Vec::new();
    let mut nr = rng::rng(rng::derive_seed(spec.seed, "synth-noise", 0));
    for (key, i, j) in keyed {
        let (ci, cj) = (&countries[i], &countries[j]);
        let adopt = match (ci.adopt, cj.adopt) {
            (Some(a), Some(b)) => Some(a.max(b)),
            _ => None,
        };
        let shift = if adopt.is_some() { spec.confounding } else { 0.0 };
        let pair_fe = spec.pair_fe_sd * std.sample(&mut nr) + shift;
        // Country order inside the key.
        let (ca, cb) = if key.a() == ci.code { (i, j) } else { (j, i) };
        for k in 0..n_years {
            let year = lo + k as i32;
            let (pa, pb) = (log_pc[ca][k], log_pc[cb][k]);
            let lgdp_pc = pa + pb;
            let (na, nb) = (countries[ca].log_pop, countries[cb].log_pop);
            let lgdp = lgdp_pc + na + nb;
            let x1 = std.sample(&mut nr);
            let x2 = std.sample(&mut nr);
            let tau = spec.tau.eval(x1);
            let t = adopt.is_some_and(|a| year >= a);
            let f = 0.8 * (lgdp - 50.0) + 0.3 * (lgdp_pc - 20.0) + 0.01 * k as f64;
            let shock = spec.year_shock.eval(year);
            let y0 = 10.0 + pair_fe + shock + f + spec.noise_sd * std.sample(&mut nr);
            let y = if t { y0 + tau } else { y0 };
            let e = match spec.adoption {
                Adoption::ByIncome { year: ay, .. } => {
                    if year >= ay {
                        countries[ca].p_adopt * countries[cb].p_adopt
                    } else {
                        0.0
                    }
                }
                Adoption::Fixed { .. } => f64::from(t),
            };
            let m = 10.0 + shock + f + spec.tau.mean() * e;
            let ppi = 1.0 + 0.02 * k as f64;
            let share = nr.random_range(0.3..0.7);
            let nominal = y.exp() * ppi;
            // Ingestion rebuilds the total from the two flows.
            let (ab, ba) = (nominal * share, nominal * (1.0 - share));
            let mut extra = BTreeMap::new();
            extra.insert("x1".to_string(), x1);
            extra.insert("x2".to_string(), x2);
            let euro = |c: usize| countries[c].adopt.is_some_and(|a| year >= a);
            obs.push(Observation {
                pair: key,
                year,
                flow_ab: ab,
                flow_ba: ba,
                trade_nominal: ab + ba,
                ppi,
                gdp_a: (pa + na).exp(),
                gdp_b: (pb + nb).exp(),
                pop_a: na.exp(),
                pop_b: nb.exp(),
                euro_a: euro(ca),
                euro_b: euro(cb),
                extra_modifiers: extra,
            });
            truth_rows.push((tau, y0, m, e));
        }
    }

    if let Some(target) = spec.target_rows {
        let droppable: Vec<usize> = (0..obs.len())
            .filter(|&i| obs[i].year > DEFAULT_PRE_WINDOW.1)
            .collect();
        let excess = obs.len().saturating_sub(target);
        if excess > droppable.len() {
            return Err(Error::InvalidSpec(format!(
                "cannot reach {target} rows without emptying the pre-treatment window"
            )));
        }
        let mut dr = rng::rng(rng::derive_seed(spec.seed, "synth-drop", 0));
        let mut drop: Vec<usize> = rand::seq::index::sample(&mut dr, droppable.len(), excess)
            .into_iter()
            .map(|k| droppable[k])
            .collect();
        drop.sort_unstable();
        let mut keep = vec![true; obs.len()];
        for d in drop {
            keep[d] = false;
        }
        let mut k = keep.iter();
        obs.retain(|_| *k.next().unwrap());
        let mut k = keep.iter();
        truth_rows.retain(|_| *k.next().unwrap());
    }

    let ds = PanelDataset::from_observations(obs, DEFAULT_PRE_WINDOW)?;
    let t = ds.treatment();
    let truth = Truth {
        tau: truth_rows.iter().map(|r| r.0).collect(),
        y0: truth_rows.iter().map(|r| r.1).collect(),
        y1: truth_rows.iter().map(|r| r.1 + r.0).collect(),
        m: truth_rows.iter().map(|r| r.2).collect(),
        e: truth_rows.iter().map(|r| r.3).collect(),
        ate: spec.tau.mean(),
    };
    debug_assert!(truth
        .y0
        .iter()
        .zip(&truth.tau)
        .zip(t)
        .zip(ds.y())
        .all(|(((y0, tau), t), y)| (y0 + tau * t - y.unwrap()).abs() < 1e-9));
    Ok((ds, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::TREATMENT;

    #[test]
    fn named_processes_build() {
        for name in DGP_NAMES {
            let spec = DgpSpec::named(name, 1).unwrap();
            let (ds, truth) = generate(&spec).unwrap();
            assert_eq!(ds.len(), truth.tau.len());
            assert!(ds.n_treated() > 0 && ds.n_treated() < ds.len());
        }
        assert!(DgpSpec::named("nope", 1).is_err());
        let (ds, _) = generate(&DgpSpec::named("step", 3).unwrap()).unwrap();
        assert_eq!(ds.len(), 2000);
        assert_eq!(ds.pairs().len(), 100);
    }

    #[test]
    fn truth_follows_the_effect_function() {
        let (ds, truth) = generate(&DgpSpec::named("step", 2).unwrap()).unwrap();
        let x1 = ds.column("x1").unwrap();
        for i in 0..ds.len() {
            let expected = if x1[i].unwrap() > 0.0 { 0.5 } else { 0.0 };
            assert_eq!(truth.tau[i], expected);
            assert!((truth.y1[i] - truth.y0[i] - expected).abs() < 1e-12);
            let y = ds.y()[i].unwrap();
            let observed = if ds.treatment()[i] == 1.0 { truth.y1[i] } else { truth.y0[i] };
            assert!((y - observed).abs() < 1e-9);
        }
    }

    #[test]
    fn noiseless_constant_effect_is_exact() {
        let spec = DgpSpec {
            noise_sd: 0.0,
            tau: TauFn::Constant { value: 0.2 },
            ..DgpSpec::named("null", 4).unwrap()
        };
        let (ds, truth) = generate(&spec).unwrap();
        for i in 0..ds.len() {
            let y = ds.y()[i].unwrap();
            // Without noise or pair effects, y − m is the effect on treated rows
            // net of the propensity term.
            let resid = y - (truth.m[i] - 0.2 * truth.e[i]);
            let want = 0.2 * ds.treatment()[i];
            assert!((resid - want).abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_same_data() {
        let spec = DgpSpec::named("crisis", 9).unwrap();
        let (a, ta) = generate(&spec).unwrap();
        let (b, tb) = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = generate(&DgpSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn row_target_and_adoption_years() {
        let spec = DgpSpec {
            target_rows: Some(2149),
            ..DgpSpec::named("crisis", 5).unwrap()
        };
        let (ds, truth) = generate(&spec).unwrap();
        assert_eq!(ds.len(), 2149);
        assert_eq!(truth.tau.len(), 2149);
        let adopt = ds.country_adoption_years();
        assert_eq!(adopt[&CountryCode::new("SI").unwrap()], 2007);
        assert_eq!(adopt[&CountryCode::new("DE").unwrap()], 1999);
        assert!(!adopt.contains_key(&CountryCode::new("UK").unwrap()));
        let t = ds.column(TREATMENT).unwrap();
        assert_eq!(t.len(), 2149);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let base = DgpSpec::named("step", 1).unwrap();
        for bad in [
            DgpSpec { noise_sd: -1.0, ..base.clone() },
            DgpSpec { years: (1997, 2010), ..base.clone() },
            DgpSpec { n_countries: 40, ..base.clone() },
            DgpSpec {
                adoption: Adoption::ByIncome { year: 2030, p_high: 0.5, p_low: 0.5 },
                ..base.clone()
            },
        ] {
            assert!(matches!(generate(&bad), Err(Error::InvalidSpec(_))), "{bad:?}");
        }
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = DgpSpec::named("crisis", 3).unwrap();
        let s = serde_json::to_string(&spec).unwrap();
        let back: DgpSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(spec, back);
    }
}
