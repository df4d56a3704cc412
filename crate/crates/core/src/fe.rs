//! Multi-way fixed-effects demeaning by alternating projections.

use crate::error::{Error, Result};

/// A categorical factor with dense level ids `0..n_levels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub ids: Vec<usize>,
    pub n_levels: usize,
}

impl Factor {
    /// Densify arbitrary ids, numbering levels by first appearance.
    pub fn from_ids(raw: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let ids = raw
            .iter()
            .map(|r| {
                let next = map.len();
                *map.entry(*r).or_insert(next)
            })
            .collect();
        Factor {
            ids,
            n_levels: map.len(),
        }
    }

    /// Densify global ids bounded by `bound`, using a caller scratch buffer
    /// to avoid hashing in hot loops.
    pub(crate) fn from_bounded(raw: impl Iterator<Item = usize>, scratch: &mut Vec<usize>) -> Self {
        const UNSET: usize = usize::MAX;
        let mut touched = Vec::new();
        let ids = raw
            .map(|r| {
                if r >= scratch.len() {
                    scratch.resize(r + 1, UNSET);
                }
                if scratch[r] == UNSET {
                    scratch[r] = touched.len();
                    touched.push(r);
                }
                scratch[r]
            })
            .collect();
        let n_levels = touched.len();
        for r in touched {
            scratch[r] = UNSET;
        }
        Factor { ids, n_levels }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemeanOptions {
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for DemeanOptions {
    fn default() -> Self {
        DemeanOptions {
            tolerance: 1e-10,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demeaned {
    pub values: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest absolute adjustment in the final sweep.
    pub last_delta: f64,
}

/// Remove the (optionally weighted) fixed effects of every factor from
/// `values`. Stops once a full sweep changes no value by `tolerance` or more.
pub fn demean(
    values: &[f64],
    factors: &[&Factor],
    weights: Option<&[f64]>,
    opts: DemeanOptions,
) -> Demeaned {
    let mut v = values.to_vec();
    let n = v.len();
    let mut sums: Vec<Vec<f64>> = factors.iter().map(|f| vec![0.0; f.n_levels]).collect();
    let wsum: Vec<Vec<f64>> = factors
        .iter()
        .map(|f| {
            let mut s = vec![0.0; f.n_levels];
            for i in 0..n {
                s[f.ids[i]] += weights.map_or(1.0, |w| w[i]);
            }
            s
        })
        .collect();
    let mut last_delta = 0.0;
    for it in 1..=opts.max_iter {
        last_delta = 0.0f64;
        for (k, f) in factors.iter().enumerate() {
            let s = &mut sums[k];
            s.iter_mut().for_each(|x| *x = 0.0);
            match weights {
                Some(w) => (0..n).for_each(|i| s[f.ids[i]] += w[i] * v[i]),
                None => (0..n).for_each(|i| s[f.ids[i]] += v[i]),
            }
            for (m, &ws) in s.iter_mut().zip(&wsum[k]) {
                *m = if ws > 0.0 { *m / ws } else { 0.0 };
                last_delta = last_delta.max(m.abs());
            }
            for i in 0..n {
                v[i] -= s[f.ids[i]];
            }
        }
        // A single factor is exact after one pass.
        if last_delta < opts.tolerance || factors.len() <= 1 {
            return Demeaned {
                values: v,
                iterations: it,
                converged: true,
                last_delta,
            };
        }
    }
    Demeaned {
        values: v,
        iterations: opts.max_iter,
        converged: false,
        last_delta,
    }
}

/// [`demean`] that turns non-convergence into an error.
pub fn demean_strict(
    values: &[f64],
    factors: &[&Factor],
    weights: Option<&[f64]>,
    opts: DemeanOptions,
    what: &'static str,
) -> Result<Vec<f64>> {
    let d = demean(values, factors, weights, opts);
    if d.converged {
        Ok(d.values)
    } else {
        Err(Error::NonConvergence {
            what,
            iterations: d.iterations,
            last_delta: d.last_delta,
        })
    }
}
