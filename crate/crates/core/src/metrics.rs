//! Per-run results and the quantities derived from them.
//!
//! Latency per token divides a program's makespan by that program's own
//! total output tokens, then averages over programs.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EngineEvent;
use crate::ids::{ModelId, RequestId};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("run has no completed programs")]
    EmptyResult,
    #[error("program {0} produced no output tokens")]
    ZeroTokens(String),
    #[error("runs are not comparable: {0}")]
    MismatchedRuns(String),
    #[error("no operating points")]
    NoPoints,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageResult {
    pub stage_index: u32,
    pub request_id: RequestId,
    pub model: ModelId,
    pub input_tokens: u64,
    pub out_tokens: u64,
    pub predicted_tokens: f64,
    pub priority: f64,
    /// When the stage request was issued by the application.
    pub issued_at: f64,
    /// When it entered the engine queue (after any scheduling overhead).
    pub enqueued_at: f64,
    pub admitted_at: f64,
    pub finished_at: f64,
}

impl StageResult {
    pub fn queue_wait(&self) -> f64 {
        self.admitted_at - self.enqueued_at
    }

    pub fn service_time(&self) -> f64 {
        self.finished_at - self.admitted_at
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProgramResult {
    pub program_id: String,
    pub workflow_id: String,
    pub arrival_ms: f64,
    pub completion_ms: f64,
    /// C_p
    pub makespan_ms: f64,
    pub total_output_tokens: u64,
    pub success: u8,
    pub stages: Vec<StageResult>,
}

impl ProgramResult {
    pub fn queue_time(&self) -> f64 {
        self.stages.iter().map(StageResult::queue_wait).sum()
    }

    pub fn service_time(&self) -> f64 {
        self.stages.iter().map(StageResult::service_time).sum()
    }

    pub fn latency_per_token(&self) -> Result<f64, MetricsError> {
        if self.total_output_tokens == 0 {
            return Err(MetricsError::ZeroTokens(self.program_id.clone()));
        }
        Ok(self.makespan_ms / self.total_output_tokens as f64)
    }

    /// Models in stage order.
    pub fn models(&self) -> impl Iterator<Item = &ModelId> {
        self.stages.iter().map(|s| &s.model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EngineResult {
    pub model: ModelId,
    pub served: u64,
    pub tokens_emitted: u64,
    pub iterations: u64,
    pub busy_slot_ms: f64,
    /// Occupied batch slots over `max_batch_size * horizon`.
    pub utilization: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OverheadTotals {
    pub router_calls: u64,
    pub predictor_calls: u64,
    pub router_ms: f64,
    pub predictor_ms: f64,
    pub total_ms: f64,
    /// `total_ms / Σ C_p`
    pub fraction_of_makespan: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionRecord {
    pub time: f64,
    pub request_id: RequestId,
    pub program_id: String,
    pub stage_index: u32,
    pub model: ModelId,
    pub priority: f64,
    pub estimated_loads: BTreeMap<ModelId, f64>,
    pub scores: Option<BTreeMap<ModelId, f64>>,
    pub used_cached_assignment: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnapshotModel {
    pub model: ModelId,
    pub in_flight_sum: f64,
    /// Entries held in the monitor's in-flight map.
    pub in_flight_entries: usize,
    /// Recomputed from the engine's queued and running entries.
    pub live_predicted_sum: f64,
    pub live_requests: usize,
    pub waiting: usize,
    pub running: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub time: f64,
    pub models: Vec<SnapshotModel>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunLog {
    pub decisions: Vec<DecisionRecord>,
    pub engine_events: Vec<EngineEvent>,
    pub snapshots: Vec<Snapshot>,
}

impl RunLog {
    /// One JSON object per line: decisions, then engine events, then
    /// snapshots.
    pub fn write_ndjson(&self, mut out: impl Write) -> std::io::Result<()> {
        #[derive(Serialize)]
        #[serde(tag = "record", rename_all = "snake_case")]
        enum Line<'a> {
            Decision(&'a DecisionRecord),
            Engine(&'a EngineEvent),
            Snapshot(&'a Snapshot),
        }
        let lines = self
            .decisions
            .iter()
            .map(Line::Decision)
            .chain(self.engine_events.iter().map(Line::Engine))
            .chain(self.snapshots.iter().map(Line::Snapshot));
        for line in lines {
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub policy: String,
    pub seed: u64,
    /// Sorted by program id.
    pub programs: Vec<ProgramResult>,
    pub engines: Vec<EngineResult>,
    pub overhead: OverheadTotals,
    pub horizon_ms: f64,
    pub log: RunLog,
}

impl RunResult {
    pub fn mean_queue_time(&self) -> Result<f64, MetricsError> {
        if self.programs.is_empty() {
            return Err(MetricsError::EmptyResult);
        }
        Ok(self.programs.iter().map(ProgramResult::queue_time).sum::<f64>()
            / self.programs.len() as f64)
    }

    pub fn program(&self, id: &str) -> Option<&ProgramResult> {
        self.programs
            .binary_search_by(|p| p.program_id.as_str().cmp(id))
            .ok()
            .map(|i| &self.programs[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub label: String,
    pub policy: String,
    pub latency_slack: Option<f64>,
    pub confidence_margin: Option<f64>,
    pub rps: Option<f64>,
    pub programs: usize,
    pub mean_latency_per_token: f64,
    pub mean_makespan_ms: f64,
    pub mean_score: f64,
    pub mean_queue_ms: f64,
    pub overhead_fraction: f64,
}

pub fn summarize(result: &RunResult) -> Result<OperatingPoint, MetricsError> {
    let n = result.programs.len();
    if n == 0 {
        return Err(MetricsError::EmptyResult);
    }
    let mut lpt = 0.0;
    let mut makespan = 0.0;
    let mut score = 0.0;
    for p in &result.programs {
        lpt += p.latency_per_token()?;
        makespan += p.makespan_ms;
        score += f64::from(p.success);
    }
    let nf = n as f64;
    Ok(OperatingPoint {
        label: result.policy.clone(),
        policy: result.policy.clone(),
        latency_slack: None,
        confidence_margin: None,
        rps: None,
        programs: n,
        mean_latency_per_token: lpt / nf,
        mean_makespan_ms: makespan / nf,
        mean_score: score / nf,
        mean_queue_ms: result.mean_queue_time()?,
        overhead_fraction: result.overhead.fraction_of_makespan,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reduction {
    pub from: String,
    pub to: String,
    /// `(mean[from] - mean[to]) / mean[from]`, as a fraction.
    pub reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueueTimeReport {
    pub mean_queue_ms: BTreeMap<String, f64>,
    pub reductions: Vec<Reduction>,
}

impl QueueTimeReport {
    pub fn reduction(&self, from: &str, to: &str) -> Option<f64> {
        self.reductions
            .iter()
            .find(|r| r.from == from && r.to == to)
            .map(|r| r.reduction)
    }
}

/// Mean queue time per policy plus every pairwise reduction. All runs must
/// cover the same programs with the same arrival times.
pub fn queue_time_report(
    results: &BTreeMap<String, RunResult>,
) -> Result<QueueTimeReport, MetricsError> {
    let mut iter = results.values();
    let first = iter.next().ok_or(MetricsError::EmptyResult)?;
    for other in iter {
        let same = other.programs.len() == first.programs.len()
            && other
                .programs
                .iter()
                .zip(&first.programs)
                .all(|(a, b)| a.program_id == b.program_id && a.arrival_ms == b.arrival_ms);
        if !same {
            return Err(MetricsError::MismatchedRuns(format!(
                "{} and {} cover different programs or arrivals",
                first.policy, other.policy
            )));
        }
    }
    let mean_queue_ms = results
        .iter()
        .map(|(k, r)| Ok((k.clone(), r.mean_queue_time()?)))
        .collect::<Result<BTreeMap<_, _>, MetricsError>>()?;
    let mut reductions = Vec::new();
    for (a, qa) in &mean_queue_ms {
        for (b, qb) in &mean_queue_ms {
            if a != b {
                let reduction = if *qa == 0.0 { 0.0 } else { (qa - qb) / qa };
                reductions.push(Reduction {
                    from: a.clone(),
                    to: b.clone(),
                    reduction,
                });
            }
        }
    }
    Ok(QueueTimeReport {
        mean_queue_ms,
        reductions,
    })
}

fn dominates(a: &OperatingPoint, b: &OperatingPoint) -> bool {
    a.mean_latency_per_token <= b.mean_latency_per_token
        && a.mean_score >= b.mean_score
        && (a.mean_latency_per_token < b.mean_latency_per_token || a.mean_score > b.mean_score)
}

/// Points not dominated in (lower latency per token, higher score), in
/// input order.
pub fn frontier(points: &[OperatingPoint]) -> Vec<OperatingPoint> {
    points
        .iter()
        .filter(|p| !points.iter().any(|q| dominates(q, p)))
        .cloned()
        .collect()
}

pub fn write_points_csv(points: &[OperatingPoint], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ProgramRow<'a> {
    program_id: &'a str,
    workflow_id: &'a str,
    arrival_ms: f64,
    makespan_ms: f64,
    total_output_tokens: u64,
    success: u8,
    queue_ms: f64,
    service_ms: f64,
    models: String,
}

pub fn write_programs_csv(result: &RunResult, out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in &result.programs {
        w.serialize(ProgramRow {
            program_id: &p.program_id,
            workflow_id: &p.workflow_id,
            arrival_ms: p.arrival_ms,
            makespan_ms: p.makespan_ms,
            total_output_tokens: p.total_output_tokens,
            success: p.success,
            queue_ms: p.queue_time(),
            service_ms: p.service_time(),
            models: p.models().map(ModelId::as_str).collect::<Vec<_>>().join("|"),
        })?;
    }
    w.flush()?;
    Ok(())
}
