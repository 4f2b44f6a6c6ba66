//! Workflows, stage requests and ground-truth traces.
//!
//! A trace holds, for every program, the output length each model would
//! produce at each stage and whether that model's final answer is correct.
//! The simulator replays those numbers; schedulers only ever see token
//! counts, never prompt text.

mod arrivals;
mod synth;
mod trace;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{ModelId, RequestId};

pub use arrivals::{generate_arrivals, ArrivalProcess};
pub use synth::{dataset_preset, synthesize_trace, LengthStats, SynthConfig};
pub use trace::{load_trace, load_trace_for_pool, parse_trace, validate_against_pool, write_trace};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("validation failed{}: {reason}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Validation { line: Option<usize>, reason: String },
    #[error("invalid length stats for {model}: mean={mean}, std={std}")]
    InvalidStats { model: String, mean: f64, std: f64 },
    #[error("program {program} has no stage {stage}")]
    UnknownStage { program: String, stage: u32 },
    #[error("model {model} has no entry in program {program}")]
    UnknownModel { program: String, model: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = WorkloadError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub index: u32,
    pub role: String,
}

/// Ordered agent stages of one workflow template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowSpec {
    pub workflow_id: String,
    pub stages: Vec<StageSpec>,
}

impl WorkflowSpec {
    /// Build a template from role names; stages are numbered from 1.
    pub fn new(workflow_id: impl Into<String>, roles: &[&str]) -> Result<Self> {
        let spec = Self {
            workflow_id: workflow_id.into(),
            stages: roles
                .iter()
                .enumerate()
                .map(|(i, r)| StageSpec {
                    index: i as u32 + 1,
                    role: (*r).to_string(),
                })
                .collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(WorkloadError::InvalidConfig(format!(
                "workflow {} has no stages",
                self.workflow_id
            )));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.index != i as u32 + 1 {
                return Err(WorkloadError::InvalidConfig(format!(
                    "workflow {}: stage indices must be contiguous from 1",
                    self.workflow_id
                )));
            }
        }
        Ok(())
    }

    pub fn num_stages(&self) -> u32 {
        self.stages.len() as u32
    }
}

/// Task family of the shipped workflow templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskFamily {
    Code,
    Math,
}

/// The 4-, 2- and 1-stage ReAct-style templates for a task family.
pub fn builtin_templates(family: TaskFamily) -> Vec<WorkflowSpec> {
    let (prefix, roles4, roles2, roles1): (&str, [&str; 4], [&str; 2], [&str; 1]) = match family {
        TaskFamily::Code => (
            "code",
            ["planner", "coder", "qa_agent", "coder"],
            ["planner", "coder"],
            ["coder"],
        ),
        TaskFamily::Math => (
            "math",
            ["planner", "solver", "verifier", "solver"],
            ["planner", "solver"],
            ["solver"],
        ),
    };
    vec![
        WorkflowSpec::new(format!("{prefix}-4"), &roles4).expect("static template"),
        WorkflowSpec::new(format!("{prefix}-2"), &roles2).expect("static template"),
        WorkflowSpec::new(format!("{prefix}-1"), &roles1).expect("static template"),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_tokens: Option<u64>,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestMeta {
    pub workflow_id: String,
    pub role: String,
    pub num_stages: u32,
    pub decoding: DecodingParams,
}

/// One stage invocation of a workflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    /// Assigned by the simulator when the request enters the system.
    pub id: RequestId,
    pub program_id: String,
    pub stage_index: u32,
    pub input_tokens: u64,
    pub meta: RequestMeta,
    pub arrival_time: f64,
}

impl Request {
    pub fn is_final_stage(&self) -> bool {
        self.stage_index == self.meta.num_stages
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageOutput {
    pub out_tokens: u64,
    pub carried_context_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage_index: u32,
    #[serde(default)]
    pub role: String,
    pub base_input_tokens: u64,
    pub models: BTreeMap<ModelId, StageOutput>,
}

/// Ground truth for one program: per-stage, per-model outputs and per-model
/// task success.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub program_id: String,
    pub workflow_id: String,
    pub user_arrival_time_ms: f64,
    pub stages: Vec<StageRecord>,
    pub success: BTreeMap<ModelId, u8>,
    pub difficulty: String,
}

impl TraceRecord {
    pub fn num_stages(&self) -> u32 {
        self.stages.len() as u32
    }

    pub fn models(&self) -> impl Iterator<Item = &ModelId> {
        self.success.keys()
    }

    pub fn stage(&self, index: u32) -> Result<&StageRecord> {
        index
            .checked_sub(1)
            .and_then(|i| self.stages.get(i as usize))
            .ok_or_else(|| WorkloadError::UnknownStage {
                program: self.program_id.clone(),
                stage: index,
            })
    }

    pub fn output(&self, stage: u32, model: &ModelId) -> Result<StageOutput> {
        self.stage(stage)?
            .models
            .get(model)
            .copied()
            .ok_or_else(|| WorkloadError::UnknownModel {
                program: self.program_id.clone(),
                model: model.to_string(),
            })
    }

    pub fn out_tokens(&self, stage: u32, model: &ModelId) -> Result<u64> {
        Ok(self.output(stage, model)?.out_tokens)
    }

    /// Output tokens of `stage` and every later stage under `model`.
    pub fn remaining_tokens(&self, stage: u32, model: &ModelId) -> Result<u64> {
        let n = self.num_stages();
        if stage == 0 || stage > n {
            return Err(WorkloadError::UnknownStage {
                program: self.program_id.clone(),
                stage,
            });
        }
        (stage..=n).map(|j| self.out_tokens(j, model)).sum()
    }

    /// Total workflow output under one model.
    pub fn total_tokens(&self, model: &ModelId) -> Result<u64> {
        self.remaining_tokens(1, model)
    }

    pub fn succeeded(&self, model: &ModelId) -> Result<bool> {
        self.success
            .get(model)
            .map(|s| *s == 1)
            .ok_or_else(|| WorkloadError::UnknownModel {
                program: self.program_id.clone(),
                model: model.to_string(),
            })
    }

    /// Check structural invariants; `line` is only used for error reporting.
    pub fn validate(&self, line: Option<usize>) -> Result<()> {
        let fail = |reason: String| Err(WorkloadError::Validation { line, reason });
        if self.program_id.is_empty() {
            return fail("empty program_id".into());
        }
        if !self.user_arrival_time_ms.is_finite() || self.user_arrival_time_ms < 0.0 {
            return fail(format!(
                "program {}: user_arrival_time_ms must be finite and >= 0",
                self.program_id
            ));
        }
        if self.stages.is_empty() {
            return fail(format!("program {}: no stages", self.program_id));
        }
        if self.success.is_empty() {
            return fail(format!("program {}: empty success map", self.program_id));
        }
        for (model, s) in &self.success {
            if *s > 1 {
                return fail(format!(
                    "program {}: success[{model}] = {s}, expected 0 or 1",
                    self.program_id
                ));
            }
        }
        let pool: BTreeSet<&ModelId> = self.success.keys().collect();
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.stage_index != i as u32 + 1 {
                return fail(format!(
                    "program {}: stage indices must be contiguous from 1 (found {} at position {})",
                    self.program_id,
                    stage.stage_index,
                    i + 1
                ));
            }
            if stage.base_input_tokens == 0 {
                return fail(format!(
                    "program {} stage {}: base_input_tokens must be > 0",
                    self.program_id, stage.stage_index
                ));
            }
            let stage_models: BTreeSet<&ModelId> = stage.models.keys().collect();
            if let Some(missing) = pool.difference(&stage_models).next() {
                return fail(format!(
                    "program {} stage {}: missing model entry {missing}",
                    self.program_id, stage.stage_index
                ));
            }
            if let Some(extra) = stage_models.difference(&pool).next() {
                return fail(format!(
                    "program {} stage {}: model {extra} has no success label",
                    self.program_id, stage.stage_index
                ));
            }
        }
        Ok(())
    }
}

fn meta_for(rec: &TraceRecord, stage: &StageRecord) -> RequestMeta {
    RequestMeta {
        workflow_id: rec.workflow_id.clone(),
        role: stage.role.clone(),
        num_stages: rec.num_stages(),
        decoding: DecodingParams::default(),
    }
}

/// The stage-1 request of a program. The id is filled in by the simulator.
pub fn first_stage_request(rec: &TraceRecord, arrival_time: f64) -> Result<Request> {
    let stage = rec.stage(1)?;
    Ok(Request {
        id: RequestId(0),
        program_id: rec.program_id.clone(),
        stage_index: 1,
        input_tokens: stage.base_input_tokens,
        meta: meta_for(rec, stage),
        arrival_time,
    })
}

/// Stage `completed_stage + 1` of a program whose stages all ran on
/// `assigned_model`, or `None` after the last stage.
pub fn next_stage_request(
    rec: &TraceRecord,
    completed_stage: u32,
    completion_time: f64,
    assigned_model: &ModelId,
) -> Result<Option<Request>> {
    let models = vec![assigned_model.clone(); completed_stage as usize];
    next_stage_request_with_history(rec, completed_stage, completion_time, &models)
}

/// Like [`next_stage_request`], but prior stages may have run on different
/// models (`executed_on[j]` is the model of stage `j + 1`). Context carried
/// into the next stage is taken from whichever model produced it.
pub fn next_stage_request_with_history(
    rec: &TraceRecord,
    completed_stage: u32,
    completion_time: f64,
    executed_on: &[ModelId],
) -> Result<Option<Request>> {
    let n = rec.num_stages();
    if completed_stage == 0 || completed_stage > n {
        return Err(WorkloadError::UnknownStage {
            program: rec.program_id.clone(),
            stage: completed_stage,
        });
    }
    if completed_stage == n {
        return Ok(None);
    }
    if executed_on.len() < completed_stage as usize {
        return Err(WorkloadError::InvalidConfig(format!(
            "program {}: {} completed stages but only {} executing models given",
            rec.program_id,
            completed_stage,
            executed_on.len()
        )));
    }
    let next = rec.stage(completed_stage + 1)?;
    let mut input = next.base_input_tokens;
    for j in 1..=completed_stage {
        input += rec.output(j, &executed_on[j as usize - 1])?.carried_context_tokens;
    }
    Ok(Some(Request {
        id: RequestId(0),
        program_id: rec.program_id.clone(),
        stage_index: completed_stage + 1,
        input_tokens: input,
        meta: meta_for(rec, next),
        arrival_time: completion_time,
    }))
}
