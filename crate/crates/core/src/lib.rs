//! Heterogeneous treatment effects of a binary pair-level treatment on panel
//! trade data.
//!
//! The estimation stack: cross-fitted residualization of outcome and treatment
//! on controls ([`dml`]), an honest causal forest on the residuals
//! ([`causal`]), a forest that absorbs pair and year fixed effects inside each
//! node ([`cffe`]), and gravity benchmarks ([`gravity`]). [`diagnostics`] and
//! [`counterfactual`] build the identification checks and out-of-sample
//! predictions on top; [`synth`] generates panels with known ground truth.

pub mod causal;
pub mod cffe;
pub mod diagnostics;
pub mod counterfactual;
pub mod dml;
pub mod error;
pub mod fe;
pub mod forest;
pub mod gravity;
pub mod panel;
pub mod pipeline;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
