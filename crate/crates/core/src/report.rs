//! Per-class and macro-averaged evaluation of trained mixtures.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::GlyphImage;
use crate::error::Result;
use crate::metrics::cluster_scores;
use crate::raster::Raster;
use crate::mixture::{assign_cluster, objective_estimate, LambdaTable, MixtureState, Variant};
use crate::trainer::{fit_lambdas, prepare_images};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Draws of `z` per component for the NLL bound.
    pub nll_samples: usize,
    /// Adam steps on `γ` before scoring. `None`: 0 when a matching lambda
    /// table is supplied, 100 when starting from zero.
    pub lambda_steps: Option<usize>,
    pub lambda_learning_rate: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            nll_samples: 10,
            lambda_steps: None,
            lambda_learning_rate: 1e-2,
            threshold: crate::corpus::DEFAULT_THRESHOLD,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_measure: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mutual_info: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fowlkes_mallows: Option<f64>,
    /// Mean per-example upper bound on the negative log likelihood, in nats.
    pub nll_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: Variant,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_measure: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mutual_info: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fowlkes_mallows: Option<f64>,
    pub nll_bound: f64,
    pub per_class: BTreeMap<String, ClassReport>,
}

#[derive(Clone, Debug)]
pub struct ClassEval {
    pub assignments: Vec<usize>,
    pub lambdas: LambdaTable<f64>,
    pub report: ClassReport,
}

/// Fits or refines `γ`, then assigns clusters with `z` at its posterior mean.
pub fn assign_class(
    xs: &[Raster<f64>],
    state: &MixtureState<f64>,
    lambdas: Option<&LambdaTable<f64>>,
    opts: &EvalOptions,
) -> Result<(Vec<usize>, LambdaTable<f64>)> {
    let start = lambdas.filter(|t| t.examples() == xs.len());
    let steps = opts
        .lambda_steps
        .unwrap_or(if start.is_some() { 0 } else { 100 });
    let table = fit_lambdas(xs, state, start, steps, opts.lambda_learning_rate)?;
    let assignments = xs
        .iter()
        .enumerate()
        .map(|(d, x)| assign_cluster(x, state, table.row(d)))
        .collect::<Result<Vec<_>>>()?;
    Ok((assignments, table))
}

/// Scores one class: assignments as in [`assign_class`], clustering metrics
/// when every image has a true font, and the NLL bound.
pub fn evaluate_class(
    images: &[GlyphImage],
    state: &MixtureState<f64>,
    lambdas: Option<&LambdaTable<f64>>,
    opts: &EvalOptions,
) -> Result<ClassEval> {
    let xs = prepare_images::<f64>(images, opts.threshold)?;
    let (assignments, table) = assign_class(&xs, state, lambdas, opts)?;
    let objective = objective_estimate(&xs, state, &table, opts.nll_samples, opts.seed)?;
    let nll_bound = -objective.iter().sum::<f64>() / xs.len() as f64;

    let truth: Option<Vec<usize>> = images.iter().map(|g| g.true_font).collect();
    let scores = truth
        .map(|t| cluster_scores(&t, &assignments))
        .transpose()?;
    Ok(ClassEval {
        assignments,
        lambdas: table,
        report: ClassReport {
            n: xs.len(),
            v_measure: scores.map(|s| s.v_measure),
            mutual_info: scores.map(|s| s.mutual_info),
            fowlkes_mallows: scores.map(|s| s.fowlkes_mallows),
            nll_bound,
        },
    })
}

fn macro_mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Macro averages over classes; a clustering metric is reported only when
/// every class has it.
pub fn macro_report(variant: Variant, k: usize, per_class: BTreeMap<String, ClassReport>) -> MetricsReport {
    let n = per_class.len().max(1) as f64;
    MetricsReport {
        variant,
        k,
        v_measure: macro_mean(per_class.values().map(|c| c.v_measure)),
        mutual_info: macro_mean(per_class.values().map(|c| c.mutual_info)),
        fowlkes_mallows: macro_mean(per_class.values().map(|c| c.fowlkes_mallows)),
        nll_bound: per_class.values().map(|c| c.nll_bound).sum::<f64>() / n,
        per_class,
    }
}
