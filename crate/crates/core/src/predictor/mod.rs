//! Remaining-workflow output length estimates, and rank-fidelity
//! evaluation of estimators.

mod eval;
mod kendall;

use std::collections::BTreeMap;

use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::ModelId;
use crate::seed;
use crate::workload::{Request, TraceRecord, WorkloadError};

pub use eval::{evaluate_predictors, write_report_csv, PredictorReport, ReportRow};
pub use kendall::kendall_tau_distance;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("no training data for model {model} at any fallback level")]
    EmptyTrainingSet { model: String },
    #[error("length mismatch: {predicted} predictions vs {truth} truths")]
    LengthMismatch { predicted: usize, truth: usize },
    #[error("need at least two items, got {0}")]
    TooFewItems(usize),
    #[error("invalid predictor: {0}")]
    Invalid(String),
    #[error(transparent)]
    Trace(#[from] WorkloadError),
}

/// Predicted output tokens of the current stage and all later stages.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LengthEstimate {
    pub tokens: f64,
}

/// Linear-interpolation quantile of an unsorted sample.
pub fn quantile(values: &mut [f64], level: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let h = (values.len() - 1) as f64 * level;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(values[lo] + (h - lo as f64) * (values[hi] - values[lo]))
}

/// Per-key quantiles of remaining output tokens learned from a trace.
///
/// Lookups fall back from (workflow, stage, model) to (stage, model) to
/// (model) to the global quantile.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTable {
    level: f64,
    by_workflow_stage_model: BTreeMap<(String, u32, ModelId), f64>,
    by_stage_model: BTreeMap<(u32, ModelId), f64>,
    by_model: BTreeMap<ModelId, f64>,
    global: Option<f64>,
}

impl QuantileTable {
    pub fn train(trace: &[TraceRecord], level: f64) -> Result<Self, PredictorError> {
        if !(level > 0.0 && level < 1.0) {
            return Err(PredictorError::Invalid(format!(
                "quantile level {level} outside (0,1)"
            )));
        }
        let mut full: BTreeMap<(String, u32, ModelId), Vec<f64>> = BTreeMap::new();
        let mut stage_model: BTreeMap<(u32, ModelId), Vec<f64>> = BTreeMap::new();
        let mut model: BTreeMap<ModelId, Vec<f64>> = BTreeMap::new();
        let mut global = Vec::new();
        for rec in trace {
            for m in rec.models() {
                for stage in 1..=rec.num_stages() {
                    let y = rec.remaining_tokens(stage, m)? as f64;
                    full.entry((rec.workflow_id.clone(), stage, m.clone()))
                        .or_default()
                        .push(y);
                    stage_model.entry((stage, m.clone())).or_default().push(y);
                    model.entry(m.clone()).or_default().push(y);
                    global.push(y);
                }
            }
        }
        let reduce = |v: &mut Vec<f64>| quantile(v, level).expect("groups are non-empty");
        Ok(Self {
            level,
            by_workflow_stage_model: full.into_iter().map(|(k, mut v)| (k, reduce(&mut v))).collect(),
            by_stage_model: stage_model.into_iter().map(|(k, mut v)| (k, reduce(&mut v))).collect(),
            by_model: model.into_iter().map(|(k, mut v)| (k, reduce(&mut v))).collect(),
            global: quantile(&mut global, level),
        })
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn lookup(&self, workflow_id: &str, stage: u32, model: &ModelId) -> Option<f64> {
        self.by_workflow_stage_model
            .get(&(workflow_id.to_string(), stage, model.clone()))
            .or_else(|| self.by_stage_model.get(&(stage, model.clone())))
            .or_else(|| self.by_model.get(model))
            .or(self.global.as_ref())
            .copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictorKind {
    /// Exact remaining tokens from the trace.
    Oracle,
    EmpiricalQuantile(QuantileTable),
    /// Oracle value times a lognormal factor with log-space std `sigma`.
    NoisyOracle { sigma: f64, seed: u64 },
    /// The request's own input length.
    InputLengthProxy,
}

impl PredictorKind {
    pub fn name(&self) -> &'static str {
        match self {
            PredictorKind::Oracle => "oracle",
            PredictorKind::EmpiricalQuantile(_) => "empirical_quantile",
            PredictorKind::NoisyOracle { .. } => "noisy_oracle",
            PredictorKind::InputLengthProxy => "input_length",
        }
    }

    pub fn predict(
        &self,
        req: &Request,
        rec: &TraceRecord,
        model: &ModelId,
    ) -> Result<LengthEstimate, PredictorError> {
        let tokens = match self {
            PredictorKind::Oracle => rec.remaining_tokens(req.stage_index, model)? as f64,
            PredictorKind::EmpiricalQuantile(table) => table
                .lookup(&req.meta.workflow_id, req.stage_index, model)
                .ok_or_else(|| PredictorError::EmptyTrainingSet {
                    model: model.to_string(),
                })?,
            PredictorKind::NoisyOracle { sigma, seed } => {
                let truth = rec.remaining_tokens(req.stage_index, model)? as f64;
                let noise = LogNormal::new(0.0, *sigma)
                    .map_err(|e| PredictorError::Invalid(format!("sigma {sigma}: {e}")))?;
                let stage = req.stage_index.to_string();
                let mut rng =
                    seed::rng_for(*seed, &["predictor", &rec.program_id, &stage, model.as_str()]);
                truth * noise.sample(&mut rng)
            }
            PredictorKind::InputLengthProxy => req.input_tokens as f64,
        };
        Ok(LengthEstimate { tokens })
    }
}
