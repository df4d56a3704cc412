//! Panel data model for bilateral trade: canonical pair keys, observations,
//! and the derived outcome, treatment and modifier columns.

mod filter;
mod ingest;

pub use filter::{apply_filter, PairPredicate, SampleFilter};
pub use ingest::{ingest_csv, ingest_csv_with_report, write_csv, IngestConfig, IngestReport};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const LOG_TRADE: &str = "log_trade";
pub const TREATMENT: &str = "treatment";
pub const LOG_GDP_PRODUCT: &str = "log_gdp_product";
pub const LOG_GDP_PER_CAPITA: &str = "log_gdp_per_capita";
pub const PRE_TRADE_INTENSITY: &str = "pre_trade_intensity";
pub const YEAR: &str = "year";

/// Default effect modifiers X.
pub const DEFAULT_MODIFIERS: [&str; 3] = [LOG_GDP_PRODUCT, LOG_GDP_PER_CAPITA, PRE_TRADE_INTENSITY];
/// Default first-stage controls W.
pub const DEFAULT_CONTROLS: [&str; 3] = [LOG_GDP_PRODUCT, LOG_GDP_PER_CAPITA, YEAR];

pub const DEFAULT_PRE_WINDOW: (i32, i32) = (1995, 1998);

/// Two-letter uppercase country identifier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CountryCode([u8; 2]);

impl CountryCode {
    pub fn new(code: &str) -> Result<Self> {
        code.parse()
    }

    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.0).expect("country codes are ASCII")
    }
}

impl FromStr for CountryCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let b = s.as_bytes();
        if b.len() == 2 && b.iter().all(u8::is_ascii_uppercase) {
            Ok(CountryCode([b[0], b[1]]))
        } else {
            Err(Error::InvalidSpec(format!(
                "country code `{s}` is not two uppercase ASCII letters"
            )))
        }
    }
}

impl fmt::Display for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_str())
    }
}

impl Serialize for CountryCode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for CountryCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Unordered country pair, stored with `a < b`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairKey {
    a: CountryCode,
    b: CountryCode,
}

impl PairKey {
    pub fn new(x: CountryCode, y: CountryCode) -> Result<Self> {
        match x.cmp(&y) {
            std::cmp::Ordering::Less => Ok(PairKey { a: x, b: y }),
            std::cmp::Ordering::Greater => Ok(PairKey { a: y, b: x }),
            std::cmp::Ordering::Equal => Err(Error::InvalidSpec(format!(
                "a pair needs two distinct countries, got {x} twice"
            ))),
        }
    }

    pub fn a(&self) -> CountryCode {
        self.a
    }

    pub fn b(&self) -> CountryCode {
        self.b
    }

    pub fn involves(&self, c: CountryCode) -> bool {
        self.a == c || self.b == c
    }

    /// The partner of `c` in this pair, if `c` belongs to it.
    pub fn other(&self, c: CountryCode) -> Option<CountryCode> {
        if self.a == c {
            Some(self.b)
        } else if self.b == c {
            Some(self.a)
        } else {
            None
        }
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.a, self.b)
    }
}

impl fmt::Debug for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.a, self.b)
    }
}

impl FromStr for PairKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (x, y) = s
            .split_once('-')
            .ok_or_else(|| Error::InvalidSpec(format!("pair `{s}` is not of the form AA-BB")))?;
        PairKey::new(x.parse()?, y.parse()?)
    }
}

/// One pair-year. Directional flows are kept so that exporter/importer fixed
/// effects can be built; `trade_nominal` is their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub pair: PairKey,
    pub year: i32,
    /// Exports of `pair.a()` to `pair.b()`.
    pub flow_ab: f64,
    /// Exports of `pair.b()` to `pair.a()`.
    pub flow_ba: f64,
    pub trade_nominal: f64,
    pub ppi: f64,
    pub gdp_a: f64,
    pub gdp_b: f64,
    pub pop_a: f64,
    pub pop_b: f64,
    pub euro_a: bool,
    pub euro_b: bool,
    pub extra_modifiers: BTreeMap<String, f64>,
}

impl Observation {
    pub fn treated(&self) -> bool {
        self.euro_a && self.euro_b
    }

    /// Real trade in levels.
    pub fn real_trade(&self) -> f64 {
        self.trade_nominal / self.ppi
    }

    pub fn log_real_trade(&self) -> Option<f64> {
        (self.trade_nominal > 0.0).then(|| (self.trade_nominal / self.ppi).ln())
    }

    pub fn log_gdp_product(&self) -> f64 {
        self.gdp_a.ln() + self.gdp_b.ln()
    }

    pub fn log_gdp_per_capita(&self) -> f64 {
        (self.gdp_a / self.pop_a).ln() + (self.gdp_b / self.pop_b).ln()
    }

    pub fn is_euro(&self, c: CountryCode) -> Option<bool> {
        if self.pair.a() == c {
            Some(self.euro_a)
        } else if self.pair.b() == c {
            Some(self.euro_b)
        } else {
            None
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let positive = [
            ("ppi", self.ppi),
            ("gdp_a", self.gdp_a),
            ("gdp_b", self.gdp_b),
            ("pop_a", self.pop_a),
            ("pop_b", self.pop_b),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidSpec(format!(
                    "{} {}: {name} must be strictly positive, got {v}",
                    self.pair, self.year
                )));
            }
        }
        if !(self.flow_ab >= 0.0 && self.flow_ba >= 0.0) {
            return Err(Error::InvalidSpec(format!(
                "{} {}: trade flows must be non-negative",
                self.pair, self.year
            )));
        }
        Ok(())
    }
}

/// Rectangular pair x year panel with derived columns.
///
/// Immutable once built; every estimator reads from it concurrently.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    observations: Vec<Observation>,
    y: Vec<Option<f64>>,
    treatment: Vec<f64>,
    pre_intensity: Vec<f64>,
    pretreatment_window: (i32, i32),
    extra_names: Vec<String>,
}

impl PanelDataset {
    /// Build a dataset from observations, computing every derived column.
    /// Rows are sorted by (pair, year).
    pub fn from_observations(
        mut observations: Vec<Observation>,
        pretreatment_window: (i32, i32),
    ) -> Result<Self> {
        if pretreatment_window.0 > pretreatment_window.1 {
            return Err(Error::InvalidConfig(format!(
                "pre-treatment window {pretreatment_window:?} is reversed"
            )));
        }
        observations.sort_by(|x, y| (x.pair, x.year).cmp(&(y.pair, y.year)));
        for w in observations.windows(2) {
            if w[0].pair == w[1].pair && w[0].year == w[1].year {
                return Err(Error::DuplicatePairYear {
                    reporter: w[0].pair.a().to_string(),
                    partner: w[0].pair.b().to_string(),
                    year: w[0].year,
                    line: 0,
                });
            }
        }
        for o in &observations {
            o.validate()?;
        }
        let extra_names: BTreeSet<String> = observations
            .iter()
            .flat_map(|o| o.extra_modifiers.keys().cloned())
            .collect();
        let y = observations.iter().map(Observation::log_real_trade).collect();
        let treatment = observations
            .iter()
            .map(|o| if o.treated() { 1.0 } else { 0.0 })
            .collect();
        let n = observations.len();
        let mut ds = PanelDataset {
            observations,
            y,
            treatment,
            pre_intensity: vec![f64::NAN; n],
            pretreatment_window,
            extra_names: extra_names.into_iter().collect(),
        };
        ds.pre_intensity = ds.pair_window_means(pretreatment_window)?;
        Ok(ds)
    }

    fn pair_window_means(&self, window: (i32, i32)) -> Result<Vec<f64>> {
        let mut acc: HashMap<PairKey, (f64, usize)> = HashMap::new();
        for (o, y) in self.observations.iter().zip(&self.y) {
            if let Some(y) = y {
                if o.year >= window.0 && o.year <= window.1 {
                    let e = acc.entry(o.pair).or_insert((0.0, 0));
                    e.0 += y;
                    e.1 += 1;
                }
            }
        }
        self.observations
            .iter()
            .map(|o| match acc.get(&o.pair) {
                Some(&(s, c)) => Ok(s / c as f64),
                None => Err(Error::EmptyPretreatmentWindow(o.pair)),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    /// Log real trade; `None` for zero-trade rows.
    pub fn y(&self) -> &[Option<f64>] {
        &self.y
    }

    pub fn treatment(&self) -> &[f64] {
        &self.treatment
    }

    pub fn pre_intensity(&self) -> &[f64] {
        &self.pre_intensity
    }

    pub fn pretreatment_window(&self) -> (i32, i32) {
        self.pretreatment_window
    }

    pub fn extra_names(&self) -> &[String] {
        &self.extra_names
    }

    pub fn pairs(&self) -> Vec<PairKey> {
        let set: BTreeSet<PairKey> = self.observations.iter().map(|o| o.pair).collect();
        set.into_iter().collect()
    }

    pub fn countries(&self) -> Vec<CountryCode> {
        let set: BTreeSet<CountryCode> = self
            .observations
            .iter()
            .flat_map(|o| [o.pair.a(), o.pair.b()])
            .collect();
        set.into_iter().collect()
    }

    pub fn years(&self) -> Vec<i32> {
        let set: BTreeSet<i32> = self.observations.iter().map(|o| o.year).collect();
        set.into_iter().collect()
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&t| t > 0.5).count()
    }

    /// Indices of rows with a defined log outcome.
    pub fn rows_with_outcome(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.y[i].is_some()).collect()
    }

    /// Dense pair ids (0-based, in pair order) per row.
    pub fn pair_ids(&self) -> Vec<usize> {
        let index: HashMap<PairKey, usize> =
            self.pairs().into_iter().enumerate().map(|(i, p)| (p, i)).collect();
        self.observations.iter().map(|o| index[&o.pair]).collect()
    }

    /// Dense year ids (0-based, ascending years) per row.
    pub fn year_ids(&self) -> Vec<usize> {
        let index: HashMap<i32, usize> =
            self.years().into_iter().enumerate().map(|(i, y)| (y, i)).collect();
        self.observations.iter().map(|o| index[&o.year]).collect()
    }

    /// First year each pair is treated; pairs never treated are absent.
    pub fn adoption_years(&self) -> BTreeMap<PairKey, i32> {
        let mut out = BTreeMap::new();
        for o in &self.observations {
            if o.treated() {
                out.entry(o.pair)
                    .and_modify(|y: &mut i32| *y = (*y).min(o.year))
                    .or_insert(o.year);
            }
        }
        out
    }

    /// First year each country is observed as a euro member.
    pub fn country_adoption_years(&self) -> BTreeMap<CountryCode, i32> {
        let mut out: BTreeMap<CountryCode, i32> = BTreeMap::new();
        for o in &self.observations {
            for (c, e) in [(o.pair.a(), o.euro_a), (o.pair.b(), o.euro_b)] {
                if e {
                    out.entry(c)
                        .and_modify(|y| *y = (*y).min(o.year))
                        .or_insert(o.year);
                }
            }
        }
        out
    }

    /// Named numeric column, `None` entries where undefined.
    pub fn column(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let obs = &self.observations;
        Ok(match name {
            LOG_TRADE => self.y.clone(),
            TREATMENT => self.treatment.iter().map(|&t| Some(t)).collect(),
            LOG_GDP_PRODUCT => obs.iter().map(|o| Some(o.log_gdp_product())).collect(),
            LOG_GDP_PER_CAPITA => obs.iter().map(|o| Some(o.log_gdp_per_capita())).collect(),
            PRE_TRADE_INTENSITY => self.pre_intensity.iter().map(|&v| Some(v)).collect(),
            YEAR => obs.iter().map(|o| Some(f64::from(o.year))).collect(),
            "real_trade" => obs.iter().map(|o| Some(o.real_trade())).collect(),
            other => {
                let key = other.strip_prefix("extra_").unwrap_or(other);
                if !self.extra_names.iter().any(|n| n == key) {
                    return Err(Error::UnknownColumn(other.to_string()));
                }
                obs.iter()
                    .map(|o| o.extra_modifiers.get(key).copied())
                    .collect()
            }
        })
    }

    /// Row-major matrix of the named columns over `rows`.
    pub fn matrix(&self, columns: &[String], rows: &[usize]) -> Result<ndarray::Array2<f64>> {
        let mut out = ndarray::Array2::zeros((rows.len(), columns.len()));
        for (j, name) in columns.iter().enumerate() {
            let col = self.column(name)?;
            for (i, &r) in rows.iter().enumerate() {
                out[[i, j]] = col[r].ok_or_else(|| Error::MissingControl(name.clone()))?;
            }
        }
        Ok(out)
    }

    /// Keep only the rows at `rows` (sorted, unique). Derived columns, including
    /// the pre-treatment intensity, are carried over unchanged.
    pub fn subset(&self, rows: &[usize]) -> Result<PanelDataset> {
        if rows.is_empty() {
            return Err(Error::EmptyResult);
        }
        Ok(PanelDataset {
            observations: rows.iter().map(|&i| self.observations[i].clone()).collect(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            treatment: rows.iter().map(|&i| self.treatment[i]).collect(),
            pre_intensity: rows.iter().map(|&i| self.pre_intensity[i]).collect(),
            pretreatment_window: self.pretreatment_window,
            extra_names: self.extra_names.clone(),
        })
    }

    /// Replace the treatment column (placebo designs). Must be 0/1.
    pub fn with_treatment(&self, treatment: Vec<f64>) -> Result<PanelDataset> {
        if treatment.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: treatment.len(),
            });
        }
        if treatment.iter().any(|&t| t != 0.0 && t != 1.0) {
            return Err(Error::InvalidConfig("treatment must be 0/1".into()));
        }
        let mut out = self.clone();
        out.treatment = treatment;
        Ok(out)
    }
}

/// Recompute the pair-level pre-treatment trade intensity over `window`.
pub fn compute_pre_trade_intensity(ds: &PanelDataset, window: (i32, i32)) -> Result<PanelDataset> {
    if window.0 > window.1 {
        return Err(Error::InvalidConfig(format!("window {window:?} is reversed")));
    }
    let mut out = ds.clone();
    out.pre_intensity = ds.pair_window_means(window)?;
    out.pretreatment_window = window;
    Ok(out)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn cc(s: &str) -> CountryCode {
        s.parse().unwrap()
    }

    pub fn obs(a: &str, b: &str, year: i32, trade: f64, euro: (bool, bool)) -> Observation {
        Observation {
            pair: PairKey::new(cc(a), cc(b)).unwrap(),
            year,
            flow_ab: trade / 2.0,
            flow_ba: trade / 2.0,
            trade_nominal: trade,
            ppi: 100.0,
            gdp_a: 1.0e6,
            gdp_b: 2.0e6,
            pop_a: 10.0,
            pop_b: 20.0,
            euro_a: euro.0,
            euro_b: euro.1,
            extra_modifiers: BTreeMap::new(),
        }
    }
}
