use std::collections::BTreeSet;

use crate::error::{Error, Result};

use super::{CountryCode, PairKey, PanelDataset};

/// Pair-class rule. Country sets are resolved up front so that filtering is a
/// pure set operation (and hence idempotent).
#[derive(Debug, Clone, PartialEq)]
pub enum PairPredicate {
    /// Both countries in `eurozone`.
    IntraEurozone { eurozone: BTreeSet<CountryCode> },
    /// Canonical reporter in `eurozone`, partner in `outside`.
    EurozoneToOutside {
        eurozone: BTreeSet<CountryCode>,
        outside: BTreeSet<CountryCode>,
    },
    /// Canonical reporter in `outside`, partner in `eurozone`.
    OutsideToEurozone {
        eurozone: BTreeSet<CountryCode>,
        outside: BTreeSet<CountryCode>,
    },
    Pairs(BTreeSet<PairKey>),
}

impl PairPredicate {
    /// Countries that adopted by `cutoff` (any year when `None`) and countries
    /// never observed as members.
    pub fn membership(
        ds: &PanelDataset,
        cutoff: Option<i32>,
    ) -> (BTreeSet<CountryCode>, BTreeSet<CountryCode>) {
        let adoption = ds.country_adoption_years();
        let eurozone = adoption
            .iter()
            .filter(|(_, &y)| cutoff.is_none_or(|c| y <= c))
            .map(|(&c, _)| c)
            .collect();
        let outside = ds
            .countries()
            .into_iter()
            .filter(|c| !adoption.contains_key(c))
            .collect();
        (eurozone, outside)
    }

    pub fn intra_eurozone(ds: &PanelDataset, cutoff: Option<i32>) -> Self {
        PairPredicate::IntraEurozone {
            eurozone: Self::membership(ds, cutoff).0,
        }
    }

    pub fn eurozone_to_outside(ds: &PanelDataset, cutoff: Option<i32>) -> Self {
        let (eurozone, outside) = Self::membership(ds, cutoff);
        PairPredicate::EurozoneToOutside { eurozone, outside }
    }

    pub fn outside_to_eurozone(ds: &PanelDataset, cutoff: Option<i32>) -> Self {
        let (eurozone, outside) = Self::membership(ds, cutoff);
        PairPredicate::OutsideToEurozone { eurozone, outside }
    }

    pub fn matches(&self, p: &PairKey) -> bool {
        match self {
            PairPredicate::IntraEurozone { eurozone } => {
                eurozone.contains(&p.a()) && eurozone.contains(&p.b())
            }
            PairPredicate::EurozoneToOutside { eurozone, outside } => {
                eurozone.contains(&p.a()) && outside.contains(&p.b())
            }
            PairPredicate::OutsideToEurozone { eurozone, outside } => {
                outside.contains(&p.a()) && eurozone.contains(&p.b())
            }
            PairPredicate::Pairs(set) => set.contains(p),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleFilter {
    /// Keep only pairs whose both countries are in this set.
    pub countries: Option<BTreeSet<CountryCode>>,
    pub years: Option<(i32, i32)>,
    pub drop_country: Option<CountryCode>,
    pub pair_predicate: Option<PairPredicate>,
}

impl SampleFilter {
    pub fn validate(&self) -> Result<()> {
        if let Some((lo, hi)) = self.years {
            if lo > hi {
                return Err(Error::InvalidFilter(format!("year range {lo}-{hi} is reversed")));
            }
        }
        if let (Some(set), Some(c)) = (&self.countries, self.drop_country) {
            if set.contains(&c) {
                return Err(Error::InvalidFilter(format!(
                    "{c} is both included and dropped"
                )));
            }
        }
        Ok(())
    }

    pub fn keeps(&self, pair: &PairKey, year: i32) -> bool {
        if let Some((lo, hi)) = self.years {
            if year < lo || year > hi {
                return false;
            }
        }
        if let Some(set) = &self.countries {
            if !set.contains(&pair.a()) || !set.contains(&pair.b()) {
                return false;
            }
        }
        if let Some(c) = self.drop_country {
            if pair.involves(c) {
                return false;
            }
        }
        self.pair_predicate.as_ref().is_none_or(|p| p.matches(pair))
    }
}

/// Rows passing every predicate. The pre-treatment intensity is a fixed pair
/// attribute and is not recomputed.
pub fn apply_filter(ds: &PanelDataset, f: &SampleFilter) -> Result<PanelDataset> {
    f.validate()?;
    let rows: Vec<usize> = ds
        .observations()
        .iter()
        .enumerate()
        .filter(|(_, o)| f.keeps(&o.pair, o.year))
        .map(|(i, _)| i)
        .collect();
    ds.subset(&rows)
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::*;

    const EU15: [&str; 15] = [
        "AT", "BE", "DE", "DK", "EL", "ES", "FI", "FR", "IE", "IT", "LU", "NL", "PT", "SE", "UK",
    ];

    fn adoption(c: &str) -> Option<i32> {
        match c {
            "DK" | "SE" | "UK" => None,
            "EL" => Some(2001),
            _ => Some(1999),
        }
    }

    fn eu15() -> PanelDataset {
        let mut rows = Vec::new();
        for (i, a) in EU15.iter().enumerate() {
            for b in &EU15[i + 1..] {
                for year in 1995..=2015 {
                    let e = |c: &str| adoption(c).is_some_and(|y| year >= y);
                    rows.push(obs(a, b, year, 1.0e9, (e(a), e(b))));
                }
            }
        }
        PanelDataset::from_observations(rows, (1995, 1998)).unwrap()
    }

    #[test]
    fn dropping_luxembourg_leaves_91_pairs() {
        let ds = eu15();
        assert_eq!(ds.pairs().len(), 105);
        let f = SampleFilter {
            drop_country: Some(cc("LU")),
            ..Default::default()
        };
        let out = apply_filter(&ds, &f).unwrap();
        assert_eq!(out.pairs().len(), 91);
        assert!(out.pairs().iter().all(|p| !p.involves(cc("LU"))));
    }

    #[test]
    fn founding_members_form_55_intra_pairs() {
        let ds = eu15();
        let f = SampleFilter {
            pair_predicate: Some(PairPredicate::intra_eurozone(&ds, Some(1999))),
            ..Default::default()
        };
        let out = apply_filter(&ds, &f).unwrap();
        assert_eq!(out.pairs().len(), 55);
        assert_eq!(out.len(), 55 * 21);
        let cross_a = apply_filter(
            &ds,
            &SampleFilter {
                pair_predicate: Some(PairPredicate::eurozone_to_outside(&ds, Some(1999))),
                ..Default::default()
            },
        )
        .unwrap();
        let cross_b = apply_filter(
            &ds,
            &SampleFilter {
                pair_predicate: Some(PairPredicate::outside_to_eurozone(&ds, Some(1999))),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(cross_a.pairs().len() + cross_b.pairs().len(), 33);
    }

    #[test]
    fn filter_is_idempotent() {
        let ds = eu15();
        let f = SampleFilter {
            years: Some((1997, 2007)),
            drop_country: Some(cc("DE")),
            pair_predicate: Some(PairPredicate::intra_eurozone(&ds, None)),
            ..Default::default()
        };
        let once = apply_filter(&ds, &f).unwrap();
        let twice = apply_filter(&once, &f).unwrap();
        assert_eq!(once, twice);
        assert_eq!(once.pre_intensity(), &vec![(1.0e9f64 / 100.0).ln(); once.len()][..]);
    }

    #[test]
    fn empty_and_conflicting_filters() {
        let ds = eu15();
        let f = SampleFilter {
            years: Some((1900, 1901)),
            ..Default::default()
        };
        assert!(matches!(apply_filter(&ds, &f), Err(Error::EmptyResult)));
        let g = SampleFilter {
            countries: Some([cc("DE"), cc("FR")].into_iter().collect()),
            drop_country: Some(cc("DE")),
            ..Default::default()
        };
        assert!(matches!(apply_filter(&ds, &g), Err(Error::InvalidFilter(_))));
    }
}
