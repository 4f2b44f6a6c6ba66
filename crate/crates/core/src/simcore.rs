//! Discrete-event loop tying workload, balancer and engines together.
//!
//! Events at equal timestamps run in kind order: completions, then
//! arrivals (including next-stage requests spawned by those completions),
//! then delayed dispatches, then at most one refill per engine, then
//! snapshots. Remaining ties fall back to insertion order.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::Serialize;
use thiserror::Error;

use crate::balancer::{schedule_request, BalancerConfig, BalancerError};
use crate::engine::{AgingConfig, Engine, Job};
use crate::ids::{ModelId, RequestId};
use crate::metrics::{
    DecisionRecord, EngineResult, OverheadTotals, ProgramResult, RunLog, RunResult, Snapshot,
    SnapshotModel, StageResult,
};
use crate::monitor::{Monitor, MonitorError};
use crate::predictor::PredictorKind;
use crate::profiles::Pool;
use crate::router::RouterKind;
use crate::workload::{
    first_stage_request, next_stage_request_with_history, validate_against_pool, Request,
    TraceRecord, WorkloadError,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Balancer(#[from] BalancerError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error("program {0} has no arrival time")]
    MissingArrival(String),
    #[error("arrival for unknown program {0}")]
    UnknownProgram(String),
    #[error("duplicate arrival for program {0}")]
    DuplicateArrival(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    /// Routed, predicted and aged scheduling with sticky per-program
    /// assignment.
    Predictive {
        balancer: BalancerConfig,
        router: RouterKind,
        predictor: PredictorKind,
        aging: AgingConfig,
    },
    /// Least-loaded dispatch, ordered by request arrival.
    Fcfs,
    /// Least-loaded dispatch, ordered by the true output length of the
    /// current stage.
    Sjf,
    /// Least-loaded dispatch, ordered by the true remaining workflow
    /// output.
    StjfOracle,
    /// Least-loaded dispatch; a program drops one level per `quantum_tokens`
    /// of output it has already received, lower levels run later.
    Mlfq { levels: u32, quantum_tokens: u64 },
    /// Least-loaded dispatch with the given weights, arrival order within an
    /// engine.
    LeastLoaded {
        weight_waiting: f64,
        weight_running: f64,
    },
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Predictive { .. } => "predictive",
            Policy::Fcfs => "fcfs",
            Policy::Sjf => "sjf",
            Policy::StjfOracle => "stjf_oracle",
            Policy::Mlfq { .. } => "mlfq",
            Policy::LeastLoaded { .. } => "least_loaded",
        }
    }

    pub fn mlfq_default() -> Self {
        Policy::Mlfq {
            levels: 3,
            quantum_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub seed: u64,
    /// Delay between a stage completing and the next stage being issued.
    pub think_time_ms: f64,
    /// Simulated cost of one router call.
    pub router_latency_ms: f64,
    /// Simulated cost of one predictor call.
    pub predictor_latency_ms: f64,
    pub snapshot_interval_ms: Option<f64>,
    /// Least-loaded weights (waiting, running) used by the baselines.
    pub dispatch_weights: (f64, f64),
    /// Before each routing decision, shrink every running request's
    /// in-flight volume by the tokens it has already produced.
    pub decay_in_flight: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            think_time_ms: 0.0,
            router_latency_ms: 0.0,
            predictor_latency_ms: 0.0,
            snapshot_interval_ms: None,
            dispatch_weights: (1.0, 1.0),
            decay_in_flight: false,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<(), SimError> {
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SimError::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        nonneg("think_time_ms", self.think_time_ms)?;
        nonneg("router_latency_ms", self.router_latency_ms)?;
        nonneg("predictor_latency_ms", self.predictor_latency_ms)?;
        nonneg("dispatch weight", self.dispatch_weights.0)?;
        nonneg("dispatch weight", self.dispatch_weights.1)?;
        if let Some(i) = self.snapshot_interval_ms {
            if !(i > 0.0 && i.is_finite()) {
                return Err(SimError::InvalidConfig(format!("snapshot interval {i}")));
            }
        }
        Ok(())
    }
}

/// Least-loaded choice by `w_w * waiting + w_r * running`; ties go to the
/// smallest model id.
pub fn baseline_dispatch<'a>(
    engines: impl IntoIterator<Item = (&'a ModelId, usize, usize)>,
    weight_waiting: f64,
    weight_running: f64,
) -> Option<&'a ModelId> {
    let mut best: Option<(&ModelId, f64)> = None;
    for (m, waiting, running) in engines {
        let load = weight_waiting * waiting as f64 + weight_running * running as f64;
        let better = match best {
            None => true,
            Some((bm, bl)) => load < bl || (load == bl && m < bm),
        };
        if better {
            best = Some((m, load));
        }
    }
    best.map(|(m, _)| m)
}

/// Arrival times taken from the trace itself.
pub fn trace_arrivals(trace: &[TraceRecord]) -> Vec<(String, f64)> {
    trace
        .iter()
        .map(|r| (r.program_id.clone(), r.user_arrival_time_ms))
        .collect()
}

#[derive(Debug, Clone)]
enum EventKind {
    StageComplete { model: ModelId, request: RequestId },
    Arrival { request: Box<Request> },
    Dispatch { request: RequestId },
    EngineRefill { model: ModelId },
    SnapshotTick,
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            EventKind::StageComplete { .. } => 0,
            EventKind::Arrival { .. } => 1,
            EventKind::Dispatch { .. } => 2,
            EventKind::EngineRefill { .. } => 3,
            EventKind::SnapshotTick => 4,
        }
    }
}

#[derive(Debug)]
struct Event {
    time: f64,
    rank: u8,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.rank.cmp(&other.rank))
            .then(self.seq.cmp(&other.seq))
    }
}

/// A stage request between its decision and its completion.
#[derive(Debug, Clone)]
struct Live {
    program_idx: usize,
    request: Request,
    model: ModelId,
    out_tokens: u64,
    predicted: f64,
    priority: f64,
    enqueued_at: Option<f64>,
}

#[derive(Debug, Clone, Default)]
struct ProgramState {
    arrival: f64,
    executed_on: Vec<ModelId>,
    stages: Vec<StageResult>,
    attained_tokens: u64,
    done: Option<(f64, u8)>,
}

struct Sim<'a> {
    trace: &'a [TraceRecord],
    index: BTreeMap<&'a str, usize>,
    pool: &'a Pool,
    policy: &'a Policy,
    cfg: &'a SimConfig,
    now: f64,
    seq: u64,
    next_request: u64,
    heap: BinaryHeap<Reverse<Event>>,
    refill_pending: BTreeSet<ModelId>,
    engines: BTreeMap<ModelId, Engine>,
    monitor: Monitor,
    live: BTreeMap<RequestId, Live>,
    programs: Vec<ProgramState>,
    remaining: usize,
    log: RunLog,
    overhead: OverheadTotals,
}

impl<'a> Sim<'a> {
    fn push(&mut self, time: f64, kind: EventKind) {
        let ev = Event {
            time,
            rank: kind.rank(),
            seq: self.seq,
            kind,
        };
        self.seq += 1;
        self.heap.push(Reverse(ev));
    }

    fn request_refill(&mut self, model: &ModelId) {
        if self.refill_pending.insert(model.clone()) {
            self.push(self.now, EventKind::EngineRefill { model: model.clone() });
        }
    }

    fn on_arrival(&mut self, mut req: Request) -> Result<(), SimError> {
        req.id = RequestId(self.next_request);
        self.next_request += 1;
        let pidx = self.index[req.program_id.as_str()];
        let rec = &self.trace[pidx];

        let (model, priority, predicted, record, overhead) = match self.policy {
            Policy::Predictive {
                balancer,
                router,
                predictor,
                ..
            } => {
                if self.cfg.decay_in_flight {
                    self.decay()?;
                }
                let mut sink: Vec<(ModelId, Request, f64)> = Vec::with_capacity(1);
                let d = schedule_request(
                    &req,
                    rec,
                    &mut self.monitor,
                    &mut sink,
                    self.pool,
                    router,
                    predictor,
                    balancer,
                )?;
                let mut overhead = self.cfg.predictor_latency_ms;
                self.overhead.predictor_calls += 1;
                self.overhead.predictor_ms += self.cfg.predictor_latency_ms;
                if !d.used_cached_assignment {
                    overhead += self.cfg.router_latency_ms;
                    self.overhead.router_calls += 1;
                    self.overhead.router_ms += self.cfg.router_latency_ms;
                }
                let record = DecisionRecord {
                    time: self.now,
                    request_id: req.id,
                    program_id: req.program_id.clone(),
                    stage_index: req.stage_index,
                    model: d.model.clone(),
                    priority: d.priority,
                    estimated_loads: d.estimated_loads,
                    scores: d.scores.map(|s| s.scores),
                    used_cached_assignment: d.used_cached_assignment,
                };
                (d.model, d.priority, d.priority, record, overhead)
            }
            baseline => {
                let (ww, wr) = match baseline {
                    Policy::LeastLoaded {
                        weight_waiting,
                        weight_running,
                    } => (*weight_waiting, *weight_running),
                    _ => self.cfg.dispatch_weights,
                };
                let model = baseline_dispatch(
                    self.engines.iter().map(|(m, e)| (m, e.waiting(), e.running())),
                    ww,
                    wr,
                )
                .expect("pool is non-empty")
                .clone();
                let stage_out = rec.out_tokens(req.stage_index, &model)? as f64;
                let priority = match baseline {
                    Policy::Fcfs => req.arrival_time,
                    Policy::LeastLoaded { .. } => 0.0,
                    Policy::Sjf => stage_out,
                    Policy::StjfOracle => rec.remaining_tokens(req.stage_index, &model)? as f64,
                    Policy::Mlfq {
                        levels,
                        quantum_tokens,
                    } => {
                        let attained = self.programs[pidx].attained_tokens;
                        let level = (attained / (*quantum_tokens).max(1)).min(u64::from(levels.saturating_sub(1)));
                        level as f64
                    }
                    Policy::Predictive { .. } => unreachable!(),
                };
                self.monitor.record_dispatch(&model, req.id, stage_out)?;
                self.monitor
                    .programs
                    .track_request(&req.program_id, req.meta.num_stages, req.id, &model);
                let record = DecisionRecord {
                    time: self.now,
                    request_id: req.id,
                    program_id: req.program_id.clone(),
                    stage_index: req.stage_index,
                    model: model.clone(),
                    priority,
                    estimated_loads: BTreeMap::new(),
                    scores: None,
                    used_cached_assignment: false,
                };
                (model, priority, stage_out, record, 0.0)
            }
        };
        self.log.decisions.push(record);

        let out_tokens = rec.out_tokens(req.stage_index, &model)?;
        let id = req.id;
        self.live.insert(
            id,
            Live {
                program_idx: pidx,
                request: req,
                model,
                out_tokens,
                predicted,
                priority,
                enqueued_at: None,
            },
        );
        if overhead > 0.0 {
            self.push(self.now + overhead, EventKind::Dispatch { request: id });
        } else {
            self.enqueue(id);
        }
        Ok(())
    }

    fn decay(&mut self) -> Result<(), SimError> {
        for engine in self.engines.values_mut() {
            engine.advance_clock(self.now);
            for r in engine.running_entries() {
                let id = r.entry.job.id;
                let emitted = engine.emitted_by(id).unwrap_or(0) as f64;
                let live = &self.live[&id];
                self.monitor
                    .in_flight
                    .update(id, (live.predicted - emitted).max(0.0))?;
            }
        }
        Ok(())
    }

    fn enqueue(&mut self, id: RequestId) {
        let now = self.now;
        let live = self.live.get_mut(&id).expect("live request");
        live.enqueued_at = Some(now);
        let job = Job {
            id,
            program_id: live.request.program_id.clone(),
            stage_index: live.request.stage_index,
            input_tokens: live.request.input_tokens,
            output_tokens: live.out_tokens,
            predicted_tokens: live.predicted,
        };
        let (priority, arrival, model) = (live.priority, live.request.arrival_time, live.model.clone());
        let engine = self.engines.get_mut(&model).expect("engine per pool model");
        engine.enqueue(job, priority, arrival, now);
        if engine.free_slots() > 0 {
            self.request_refill(&model);
        }
    }

    fn on_refill(&mut self, model: ModelId) {
        self.refill_pending.remove(&model);
        let engine = self.engines.get_mut(&model).expect("engine");
        let admitted = engine.scheduling_iteration(self.now);
        let finishes: Vec<(RequestId, f64)> = admitted
            .iter()
            .map(|id| {
                let r = engine
                    .running_entries()
                    .iter()
                    .find(|r| r.entry.job.id == *id)
                    .expect("admitted request is running");
                (*id, r.finish_time)
            })
            .collect();
        for (id, t) in finishes {
            self.push(t, EventKind::StageComplete { model: model.clone(), request: id });
        }
    }

    fn on_complete(&mut self, model: ModelId, id: RequestId) -> Result<(), SimError> {
        let engine = self.engines.get_mut(&model).expect("engine");
        let c = engine
            .complete(id, self.now)
            .expect("completion event for a running request");
        let live = self.live.remove(&id).expect("live request");
        let final_stage = self
            .monitor
            .record_completion(&model, id, c.job.output_tokens, self.now)?;

        let pidx = live.program_idx;
        let rec = &self.trace[pidx];
        let state = &mut self.programs[pidx];
        state.executed_on.push(model.clone());
        state.attained_tokens += c.job.output_tokens;
        state.stages.push(StageResult {
            stage_index: live.request.stage_index,
            request_id: id,
            model: model.clone(),
            input_tokens: live.request.input_tokens,
            out_tokens: c.job.output_tokens,
            predicted_tokens: live.predicted,
            priority: live.priority,
            issued_at: live.request.arrival_time,
            enqueued_at: c.enqueued_at,
            admitted_at: c.admitted_at,
            finished_at: c.finish_time,
        });

        let next = next_stage_request_with_history(
            rec,
            live.request.stage_index,
            self.now + self.cfg.think_time_ms,
            &state.executed_on,
        )?;
        match next {
            Some(req) => {
                let t = req.arrival_time;
                self.push(t, EventKind::Arrival { request: Box::new(req) });
            }
            None => {
                debug_assert!(final_stage);
                let success = u8::from(rec.succeeded(&model)?);
                self.monitor
                    .programs
                    .set_final_success(&rec.program_id, success == 1)?;
                state.done = Some((self.now, success));
                self.remaining -= 1;
            }
        }
        self.request_refill(&model);
        Ok(())
    }

    fn snapshot(&mut self) {
        let mut pending: BTreeMap<&ModelId, (f64, usize)> = BTreeMap::new();
        for l in self.live.values().filter(|l| l.enqueued_at.is_none()) {
            let e = pending.entry(&l.model).or_default();
            e.0 += l.predicted;
            e.1 += 1;
        }
        let models = self
            .engines
            .iter()
            .map(|(m, e)| {
                let (p_sum, p_n) = pending.get(m).copied().unwrap_or_default();
                SnapshotModel {
                    model: m.clone(),
                    in_flight_sum: self.monitor.in_flight_sum(m.as_str()).unwrap_or(0.0),
                    in_flight_entries: self.monitor.in_flight.entries(m.as_str()).map_or(0, |e| e.len()),
                    live_predicted_sum: e.live_predicted_tokens() + p_sum,
                    live_requests: e.waiting() + e.running() + p_n,
                    waiting: e.waiting(),
                    running: e.running(),
                }
            })
            .collect();
        self.log.snapshots.push(Snapshot {
            time: self.now,
            models,
        });
    }
}

/// Simulate `trace` on `pool` under `policy` until every program finishes.
pub fn run(
    trace: &[TraceRecord],
    pool: &Pool,
    policy: &Policy,
    arrivals: &[(String, f64)],
    cfg: &SimConfig,
) -> Result<RunResult, SimError> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(SimError::InvalidConfig("empty pool".into()));
    }
    validate_against_pool(trace, pool.models())?;
    if let Policy::Predictive { balancer, router, .. } = policy {
        balancer.validate()?;
        router.validate().map_err(BalancerError::from)?;
    }

    let mut index = BTreeMap::new();
    for (i, r) in trace.iter().enumerate() {
        if index.insert(r.program_id.as_str(), i).is_some() {
            return Err(SimError::InvalidConfig(format!("duplicate program {}", r.program_id)));
        }
    }
    let aging = match policy {
        Policy::Predictive { aging, .. } => *aging,
        _ => AgingConfig::disabled(),
    };
    let engines = pool
        .profiles()
        .map(|p| (p.model_id.clone(), Engine::new(p.clone(), aging)))
        .collect();

    let mut sim = Sim {
        trace,
        index,
        pool,
        policy,
        cfg,
        now: 0.0,
        seq: 0,
        next_request: 0,
        heap: BinaryHeap::new(),
        refill_pending: BTreeSet::new(),
        engines,
        monitor: Monitor::new(pool.models()),
        live: BTreeMap::new(),
        programs: vec![ProgramState::default(); trace.len()],
        remaining: trace.len(),
        log: RunLog::default(),
        overhead: OverheadTotals::default(),
    };

    let mut seen = vec![false; trace.len()];
    for (program, t) in arrivals {
        let i = *sim
            .index
            .get(program.as_str())
            .ok_or_else(|| SimError::UnknownProgram(program.clone()))?;
        if std::mem::replace(&mut seen[i], true) {
            return Err(SimError::DuplicateArrival(program.clone()));
        }
        if !(t.is_finite() && *t >= 0.0) {
            return Err(SimError::InvalidConfig(format!("arrival time {t} for {program}")));
        }
        sim.programs[i].arrival = *t;
        let req = first_stage_request(&trace[i], *t)?;
        sim.push(*t, EventKind::Arrival { request: Box::new(req) });
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(SimError::MissingArrival(trace[i].program_id.clone()));
    }
    if cfg.snapshot_interval_ms.is_some() {
        sim.push(0.0, EventKind::SnapshotTick);
    }

    while let Some(Reverse(ev)) = sim.heap.pop() {
        debug_assert!(ev.time >= sim.now);
        sim.now = ev.time;
        match ev.kind {
            EventKind::Arrival { request } => sim.on_arrival(*request)?,
            EventKind::Dispatch { request } => sim.enqueue(request),
            EventKind::EngineRefill { model } => sim.on_refill(model),
            EventKind::StageComplete { model, request } => sim.on_complete(model, request)?,
            EventKind::SnapshotTick => {
                sim.snapshot();
                if sim.remaining > 0 {
                    let next = sim.now + cfg.snapshot_interval_ms.expect("ticks only when set");
                    sim.push(next, EventKind::SnapshotTick);
                }
            }
        }
    }
    if sim.remaining != 0 || !sim.live.is_empty() {
        return Err(SimError::InvalidConfig(format!(
            "{} programs never finished",
            sim.remaining
        )));
    }
    sim.snapshot();
    Ok(finish(sim))
}

fn finish(mut sim: Sim<'_>) -> RunResult {
    let horizon = sim.now;
    let mut programs: Vec<ProgramResult> = sim
        .programs
        .iter()
        .zip(sim.trace)
        .map(|(s, rec)| {
            let (completion, success) = s.done.expect("every program drained");
            ProgramResult {
                program_id: rec.program_id.clone(),
                workflow_id: rec.workflow_id.clone(),
                arrival_ms: s.arrival,
                completion_ms: completion,
                makespan_ms: completion - s.arrival,
                total_output_tokens: s.stages.iter().map(|x| x.out_tokens).sum(),
                success,
                stages: s.stages.clone(),
            }
        })
        .collect();
    programs.sort_by(|a, b| a.program_id.cmp(&b.program_id));

    let total_makespan: f64 = programs.iter().map(|p| p.makespan_ms).sum();
    sim.overhead.total_ms = sim.overhead.router_ms + sim.overhead.predictor_ms;
    sim.overhead.fraction_of_makespan = if total_makespan > 0.0 {
        sim.overhead.total_ms / total_makespan
    } else {
        0.0
    };

    let mut engine_events = Vec::new();
    let engines = sim
        .engines
        .iter_mut()
        .map(|(m, e)| {
            engine_events.extend(e.drain_log());
            let capacity = e.profile().max_batch_size as f64 * horizon;
            EngineResult {
                model: m.clone(),
                served: e.served(),
                tokens_emitted: e.tokens_emitted(),
                iterations: e.iterations(),
                busy_slot_ms: e.busy_slot_ms(),
                utilization: if capacity > 0.0 { e.busy_slot_ms() / capacity } else { 0.0 },
            }
        })
        .collect();
    engine_events.sort_by(|a, b| a.time.total_cmp(&b.time));
    sim.log.engine_events = engine_events;

    RunResult {
        policy: sim.policy.name().to_string(),
        seed: sim.cfg.seed,
        programs,
        engines,
        overhead: sim.overhead,
        horizon_ms: horizon,
        log: sim.log,
    }
}
