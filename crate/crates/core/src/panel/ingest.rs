use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::{CountryCode, Observation, PairKey, PanelDataset, DEFAULT_PRE_WINDOW};

const REQUIRED: [&str; 11] = [
    "reporter",
    "partner",
    "year",
    "exports",
    "imports",
    "gdp_reporter",
    "gdp_partner",
    "pop_reporter",
    "pop_partner",
    "euro_reporter",
    "euro_partner",
];

#[derive(Debug, Clone)]
pub struct IngestConfig {
    /// `year,ppi` side file; used when the main file has no `ppi` column.
    pub deflator: Option<PathBuf>,
    pub pretreatment_window: (i32, i32),
    /// Rows outside this range are skipped.
    pub years: Option<(i32, i32)>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            deflator: None,
            pretreatment_window: DEFAULT_PRE_WINDOW,
            years: None,
        }
    }
}

/// Bookkeeping about how directional rows were merged.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub rows_read: usize,
    /// Pair-years where only the alphabetically-second reporter was present.
    pub reverse_reported: Vec<(PairKey, i32)>,
    /// Rows ignored because the canonical reporter's row was also present.
    pub mirror_rows_ignored: usize,
}

struct RawRow {
    line: u64,
    reporter: CountryCode,
    exports: f64,
    imports: f64,
    gdp_r: f64,
    gdp_p: f64,
    pop_r: f64,
    pop_p: f64,
    euro_r: bool,
    euro_p: bool,
    ppi: Option<f64>,
    extras: BTreeMap<String, f64>,
}

pub fn ingest_csv(path: &Path, config: &IngestConfig) -> Result<PanelDataset> {
    ingest_csv_with_report(path, config).map(|(ds, _)| ds)
}

pub fn ingest_csv_with_report(
    path: &Path,
    config: &IngestConfig,
) -> Result<(PanelDataset, IngestReport)> {
    let deflator = match &config.deflator {
        Some(p) => Some(read_deflator(p)?),
        None => None,
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (body, skipped) = strip_metadata(&text);
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let header = reader.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let mut idx = HashMap::new();
    for name in REQUIRED {
        let i = col(name).ok_or_else(|| Error::BadHeader(format!("missing column `{name}`")))?;
        idx.insert(name, i);
    }
    let ppi_col = col("ppi");
    let mut extra_cols = Vec::new();
    for (i, h) in header.iter().enumerate() {
        if let Some(name) = h.strip_prefix("extra_") {
            if name.is_empty() {
                return Err(Error::BadHeader("empty extra_ column name".into()));
            }
            extra_cols.push((i, name.to_string()));
        } else if !REQUIRED.contains(&h) && h != "ppi" {
            return Err(Error::BadHeader(format!("unexpected column `{h}`")));
        }
    }
    if ppi_col.is_none() && deflator.is_none() {
        return Err(Error::MissingDeflator(i32::MIN));
    }

    let mut report = IngestReport::default();
    let mut forward: HashMap<(PairKey, i32), RawRow> = HashMap::new();
    let mut reverse: HashMap<(PairKey, i32), RawRow> = HashMap::new();

    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line()) + skipped;
        report.rows_read += 1;
        let field = |name: &str| rec.get(idx[name]).unwrap_or("");
        let malformed = |column: &str, reason: String| Error::MalformedRow {
            line,
            column: column.to_string(),
            reason,
        };
        let code = |name: &str| -> Result<CountryCode> {
            field(name)
                .parse::<CountryCode>()
                .map_err(|_| malformed(name, format!("`{}` is not a country code", field(name))))
        };
        let num = |name: &str| -> Result<f64> {
            let s = field(name);
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(malformed(name, format!("`{s}` is not a finite number"))),
            }
        };
        let flag = |name: &str| -> Result<bool> {
            match field(name) {
                "0" => Ok(false),
                "1" => Ok(true),
                s => Err(malformed(name, format!("`{s}` is not 0/1"))),
            }
        };

        let reporter = code("reporter")?;
        let partner = code("partner")?;
        let year: i32 = field("year")
            .parse()
            .map_err(|_| malformed("year", format!("`{}` is not an integer", field("year"))))?;
        if let Some((lo, hi)) = config.years {
            if year < lo || year > hi {
                continue;
            }
        }
        let pair = PairKey::new(reporter, partner)
            .map_err(|_| malformed("partner", "reporter equals partner".into()))?;
        let exports = num("exports")?;
        let imports = num("imports")?;
        for (name, v) in [("exports", exports), ("imports", imports)] {
            if v < 0.0 {
                return Err(malformed(name, "negative trade".into()));
            }
        }
        let gdp_r = num("gdp_reporter")?;
        let gdp_p = num("gdp_partner")?;
        if gdp_r <= 0.0 || gdp_p <= 0.0 {
            return Err(Error::NonPositiveGdp { line });
        }
        let pop_r = num("pop_reporter")?;
        let pop_p = num("pop_partner")?;
        for (name, v) in [("pop_reporter", pop_r), ("pop_partner", pop_p)] {
            if v <= 0.0 {
                return Err(malformed(name, "population must be positive".into()));
            }
        }
        let ppi = match ppi_col {
            Some(i) => {
                let s = rec.get(i).unwrap_or("");
                match s.parse::<f64>() {
                    Ok(v) if v > 0.0 && v.is_finite() => Some(v),
                    _ => return Err(malformed("ppi", format!("`{s}` is not a positive number"))),
                }
            }
            None => None,
        };
        let mut extras = BTreeMap::new();
        for (i, name) in &extra_cols {
            let s = rec.get(*i).unwrap_or("");
            let v = s
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(&format!("extra_{name}"), format!("`{s}` is not a finite number")))?;
            extras.insert(name.clone(), v);
        }
        let raw = RawRow {
            line,
            reporter,
            exports,
            imports,
            gdp_r,
            gdp_p,
            pop_r,
            pop_p,
            euro_r: flag("euro_reporter")?,
            euro_p: flag("euro_partner")?,
            ppi,
            extras,
        };
        let target = if reporter == pair.a() {
            &mut forward
        } else {
            &mut reverse
        };
        if target.contains_key(&(pair, year)) {
            return Err(Error::DuplicatePairYear {
                reporter: reporter.to_string(),
                partner: partner.to_string(),
                year,
                line,
            });
        }
        target.insert((pair, year), raw);
    }

    let mut observations = Vec::with_capacity(forward.len() + reverse.len());
    for ((pair, year), raw) in &forward {
        if reverse.contains_key(&(*pair, *year)) {
            report.mirror_rows_ignored += 1;
        }
        observations.push(to_observation(*pair, *year, raw, deflator.as_ref())?);
    }
    for ((pair, year), raw) in &reverse {
        if !forward.contains_key(&(*pair, *year)) {
            log::warn!("{pair} {year}: only the reverse direction is reported; using it");
            report.reverse_reported.push((*pair, *year));
            observations.push(to_observation(*pair, *year, raw, deflator.as_ref())?);
        }
    }
    report.reverse_reported.sort();
    let ds = PanelDataset::from_observations(observations, config.pretreatment_window)?;
    Ok((ds, report))
}

fn to_observation(
    pair: PairKey,
    year: i32,
    raw: &RawRow,
    deflator: Option<&BTreeMap<i32, f64>>,
) -> Result<Observation> {
    let ppi = match raw.ppi {
        Some(v) => v,
        None => *deflator
            .and_then(|d| d.get(&year))
            .ok_or(Error::MissingDeflator(year))?,
    };
    let forward = raw.reporter == pair.a();
    let (flow_ab, flow_ba) = if forward {
        (raw.exports, raw.imports)
    } else {
        (raw.imports, raw.exports)
    };
    let swap = |r: f64, p: f64| if forward { (r, p) } else { (p, r) };
    let (gdp_a, gdp_b) = swap(raw.gdp_r, raw.gdp_p);
    let (pop_a, pop_b) = swap(raw.pop_r, raw.pop_p);
    let (euro_a, euro_b) = if forward {
        (raw.euro_r, raw.euro_p)
    } else {
        (raw.euro_p, raw.euro_r)
    };
    debug_assert!(raw.line > 0);
    Ok(Observation {
        pair,
        year,
        flow_ab,
        flow_ba,
        trade_nominal: flow_ab + flow_ba,
        ppi,
        gdp_a,
        gdp_b,
        pop_a,
        pop_b,
        euro_a,
        euro_b,
        extra_modifiers: raw.extras.clone(),
    })
}

/// Files written by the command-line tool start with a JSON metadata line.
/// Returns the CSV part and the number of lines skipped.
fn strip_metadata(text: &str) -> (&str, u64) {
    if text.starts_with('{') {
        (text.split_once('\n').map_or("", |(_, rest)| rest), 1)
    } else {
        (text, 0)
    }
}

fn read_deflator(path: &Path) -> Result<BTreeMap<i32, f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (body, skipped) = strip_metadata(&text);
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["year", "ppi"] {
        return Err(Error::BadHeader("deflator file must have header `year,ppi`".into()));
    }
    let mut out = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line()) + skipped;
        let year = rec[0].parse::<i32>().map_err(|_| Error::MalformedRow {
            line,
            column: "year".into(),
            reason: format!("`{}` is not an integer", &rec[0]),
        })?;
        let ppi = rec[1]
            .parse::<f64>()
            .ok()
            .filter(|v| *v > 0.0 && v.is_finite())
            .ok_or_else(|| Error::MalformedRow {
                line,
                column: "ppi".into(),
                reason: format!("`{}` is not a positive number", &rec[1]),
            })?;
        out.insert(year, ppi);
    }
    Ok(out)
}

/// Write a dataset in the ingestion schema, one row per pair-year with the
/// canonical country as reporter and an inline `ppi` column.
pub fn write_csv<W: Write>(ds: &PanelDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = REQUIRED.iter().map(|s| s.to_string()).collect();
    header.push("ppi".into());
    header.extend(ds.extra_names().iter().map(|n| format!("extra_{n}")));
    w.write_record(&header)?;
    let b = |v: bool| if v { "1" } else { "0" };
    for o in ds.observations() {
        let mut rec = vec![
            o.pair.a().to_string(),
            o.pair.b().to_string(),
            o.year.to_string(),
            o.flow_ab.to_string(),
            o.flow_ba.to_string(),
            o.gdp_a.to_string(),
            o.gdp_b.to_string(),
            o.pop_a.to_string(),
            o.pop_b.to_string(),
            b(o.euro_a).to_string(),
            b(o.euro_b).to_string(),
            o.ppi.to_string(),
        ];
        for n in ds.extra_names() {
            rec.push(o.extra_modifiers.get(n).map_or(String::new(), |v| v.to_string()));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
