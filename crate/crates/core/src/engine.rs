//! One simulated inference engine: a starvation-aware priority queue in
//! front of a continuous-batching run set.
//!
//! Every running request decodes one token per `decode_ms_per_token`
//! regardless of how full the batch is, after a one-shot prefill of
//! `prefill_ms_per_token * input_tokens`. Under this rate model a full
//! batch drains exactly at the TTLT estimate the balancer uses, and a
//! request's finish time is fixed the moment it is admitted.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::ids::{ModelId, RequestId};
use crate::profiles::ModelProfile;

/// What the running quantum counts before a promoted entry is demoted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantumMode {
    /// Iterations spent in the running batch.
    #[default]
    Running,
    /// Iterations spent still queued at an elevated level.
    Queued,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgingConfig {
    /// S: skipped iterations before promotion; `None` disables aging.
    pub starvation_threshold: Option<u32>,
    /// Q: iterations at an elevated level before demotion.
    pub running_quantum: u32,
    #[serde(default)]
    pub quantum_mode: QuantumMode,
}

impl AgingConfig {
    pub fn disabled() -> Self {
        Self {
            starvation_threshold: None,
            running_quantum: 1,
            quantum_mode: QuantumMode::Running,
        }
    }

    pub fn new(starvation_threshold: u32, running_quantum: u32) -> Self {
        assert!(starvation_threshold >= 1 && running_quantum >= 1);
        Self {
            starvation_threshold: Some(starvation_threshold),
            running_quantum,
            quantum_mode: QuantumMode::Running,
        }
    }
}

impl Default for AgingConfig {
    fn default() -> Self {
        Self::new(64, 8)
    }
}

/// The engine's view of a request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Job {
    pub id: RequestId,
    pub program_id: String,
    pub stage_index: u32,
    pub input_tokens: u64,
    /// Ground-truth output length; drives execution only.
    pub output_tokens: u64,
    /// The scheduler's estimate, carried for bookkeeping.
    pub predicted_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueueEntry {
    pub job: Job,
    pub priority: f64,
    pub arrival: f64,
    pub enqueued_at: f64,
    pub starvation_count: u32,
    /// 0 is normal; each promotion subtracts one.
    pub starvation_level: i32,
    pub quantum_counter: u32,
    seq: u64,
}

impl QueueEntry {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.starvation_level
            .cmp(&other.starvation_level)
            .then(self.priority.total_cmp(&other.priority))
            .then(self.arrival.total_cmp(&other.arrival))
            .then(self.seq.cmp(&other.seq))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunningEntry {
    pub entry: QueueEntry,
    pub admitted_at: f64,
    pub finish_time: f64,
    prefill_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Completion {
    pub job: Job,
    pub enqueued_at: f64,
    pub admitted_at: f64,
    pub finish_time: f64,
}

impl Completion {
    pub fn queue_wait(&self) -> f64 {
        self.admitted_at - self.enqueued_at
    }

    pub fn service_time(&self) -> f64 {
        self.finish_time - self.admitted_at
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineEventKind {
    Enqueue,
    Promote,
    Demote,
    Admit,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EngineEvent {
    pub time: f64,
    pub engine: ModelId,
    pub kind: EngineEventKind,
    pub request_id: RequestId,
    pub level: i32,
    pub priority: f64,
}

#[derive(Debug, Clone)]
pub struct Engine {
    profile: ModelProfile,
    aging: AgingConfig,
    now: f64,
    queue: Vec<QueueEntry>,
    running: Vec<RunningEntry>,
    seq: u64,
    iterations: u64,
    log: Vec<EngineEvent>,
    tokens_completed: u64,
    busy_slot_ms: f64,
    served: u64,
}

impl Engine {
    pub fn new(profile: ModelProfile, aging: AgingConfig) -> Self {
        Self {
            profile,
            aging,
            now: 0.0,
            queue: Vec::new(),
            running: Vec::new(),
            seq: 0,
            iterations: 0,
            log: Vec::new(),
            tokens_completed: 0,
            busy_slot_ms: 0.0,
            served: 0,
        }
    }

    pub fn model(&self) -> &ModelId {
        &self.profile.model_id
    }

    pub fn profile(&self) -> &ModelProfile {
        &self.profile
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn waiting(&self) -> usize {
        self.queue.len()
    }

    pub fn running(&self) -> usize {
        self.running.len()
    }

    pub fn free_slots(&self) -> usize {
        self.profile.max_batch_size - self.running.len()
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    pub fn served(&self) -> u64 {
        self.served
    }

    pub fn busy_slot_ms(&self) -> f64 {
        self.busy_slot_ms
    }

    /// Queue in dequeue order.
    pub fn queued(&self) -> &[QueueEntry] {
        &self.queue
    }

    pub fn running_entries(&self) -> &[RunningEntry] {
        &self.running
    }

    /// Take the events logged since the last call.
    pub fn drain_log(&mut self) -> Vec<EngineEvent> {
        std::mem::take(&mut self.log)
    }

    fn record(&mut self, kind: EngineEventKind, request_id: RequestId, level: i32, priority: f64) {
        self.log.push(EngineEvent {
            time: self.now,
            engine: self.profile.model_id.clone(),
            kind,
            request_id,
            level,
            priority,
        });
    }

    /// Move the clock without completing anything; used to read partial
    /// progress at an arbitrary instant.
    pub fn advance_clock(&mut self, now: f64) {
        self.set_clock(now);
    }

    fn set_clock(&mut self, now: f64) {
        debug_assert!(now >= self.now, "engine clock moved backwards: {now} < {}", self.now);
        self.now = self.now.max(now);
    }

    /// Insert a request keyed by (level, priority, arrival); equal keys keep
    /// insertion order.
    pub fn enqueue(&mut self, job: Job, priority: f64, arrival: f64, now: f64) {
        self.set_clock(now);
        let entry = QueueEntry {
            job,
            priority,
            arrival,
            enqueued_at: self.now,
            starvation_count: 0,
            starvation_level: 0,
            quantum_counter: 0,
            seq: self.seq,
        };
        self.seq += 1;
        let pos = self
            .queue
            .partition_point(|e| e.key_cmp(&entry) != Ordering::Greater);
        self.record(EngineEventKind::Enqueue, entry.job.id, 0, priority);
        self.queue.insert(pos, entry);
    }

    /// One refill opportunity: admit from the head into free slots, then
    /// age everything left behind and tick quanta of promoted entries.
    pub fn scheduling_iteration(&mut self, now: f64) -> Vec<RequestId> {
        self.set_clock(now);
        if self.queue.is_empty() && self.running.iter().all(|r| r.entry.starvation_level == 0) {
            return Vec::new();
        }
        self.iterations += 1;

        let take = self.free_slots().min(self.queue.len());
        let admitted: Vec<QueueEntry> = self.queue.drain(..take).collect();
        let mut ids = Vec::with_capacity(admitted.len());
        for entry in admitted {
            let prefill_ms = self.profile.prefill_ms_per_token * entry.job.input_tokens as f64;
            let finish_time = self.now
                + prefill_ms
                + entry.job.output_tokens as f64 * self.profile.decode_ms_per_token;
            ids.push(entry.job.id);
            self.record(EngineEventKind::Admit, entry.job.id, entry.starvation_level, entry.priority);
            self.running.push(RunningEntry {
                entry,
                admitted_at: self.now,
                finish_time,
                prefill_ms,
            });
        }

        let quantum = self.aging.running_quantum;
        let mut events = Vec::new();
        for e in &mut self.queue {
            e.starvation_count += 1;
            if let Some(s) = self.aging.starvation_threshold {
                if self.aging.quantum_mode == QuantumMode::Queued && e.starvation_level < 0 {
                    e.quantum_counter += 1;
                    if e.quantum_counter >= quantum {
                        e.starvation_level += 1;
                        e.quantum_counter = 0;
                        events.push((EngineEventKind::Demote, e.job.id, e.starvation_level, e.priority));
                    }
                }
                if e.starvation_count >= s {
                    e.starvation_level -= 1;
                    e.starvation_count = 0;
                    e.quantum_counter = 0;
                    events.push((EngineEventKind::Promote, e.job.id, e.starvation_level, e.priority));
                }
            }
        }
        if self.aging.quantum_mode == QuantumMode::Running {
            for r in &mut self.running {
                let e = &mut r.entry;
                if e.starvation_level < 0 {
                    e.quantum_counter += 1;
                    if e.quantum_counter >= quantum {
                        e.starvation_level += 1;
                        e.quantum_counter = 0;
                        events.push((EngineEventKind::Demote, e.job.id, e.starvation_level, e.priority));
                    }
                }
            }
        }
        for (kind, id, level, priority) in events {
            self.record(kind, id, level, priority);
        }
        self.queue.sort_by(QueueEntry::key_cmp);
        ids
    }

    /// Earliest finish time among running requests.
    pub fn next_completion_time(&self) -> Option<f64> {
        self.running
            .iter()
            .map(|r| r.finish_time)
            .min_by(f64::total_cmp)
    }

    fn finish_at(&mut self, idx: usize) -> Completion {
        let r = self.running.swap_remove(idx);
        self.tokens_completed += r.entry.job.output_tokens;
        self.busy_slot_ms += r.finish_time - r.admitted_at;
        self.served += 1;
        let saved_now = self.now;
        self.now = r.finish_time.max(saved_now);
        self.record(EngineEventKind::Complete, r.entry.job.id, r.entry.starvation_level, r.entry.priority);
        self.now = saved_now;
        Completion {
            job: r.entry.job,
            enqueued_at: r.entry.enqueued_at,
            admitted_at: r.admitted_at,
            finish_time: r.finish_time,
        }
    }

    /// Move the clock forward by `dt` and return every request that
    /// finished, in finish order, stamped with its exact finish time.
    pub fn advance(&mut self, dt: f64) -> Vec<Completion> {
        assert!(dt > 0.0, "advance needs dt > 0");
        self.advance_to(self.now + dt)
    }

    pub fn advance_to(&mut self, t: f64) -> Vec<Completion> {
        let mut due: Vec<(f64, u64, RequestId)> = self
            .running
            .iter()
            .filter(|r| r.finish_time <= t)
            .map(|r| (r.finish_time, r.entry.seq, r.entry.job.id))
            .collect();
        due.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut out = Vec::with_capacity(due.len());
        for (_, _, id) in due {
            let idx = self
                .running
                .iter()
                .position(|r| r.entry.job.id == id)
                .expect("due request is running");
            out.push(self.finish_at(idx));
        }
        self.set_clock(t);
        out
    }

    /// Complete one specific request at its finish time `t`.
    pub fn complete(&mut self, id: RequestId, t: f64) -> Option<Completion> {
        let idx = self.running.iter().position(|r| r.entry.job.id == id)?;
        debug_assert!(self.running[idx].finish_time <= t);
        let c = self.finish_at(idx);
        self.set_clock(t);
        Some(c)
    }

    /// Tokens produced so far, counting partial progress of running
    /// requests (whole tokens only).
    pub fn tokens_emitted(&self) -> u64 {
        let partial: u64 = self
            .running
            .iter()
            .filter_map(|r| self.emitted_by(r.entry.job.id))
            .sum();
        self.tokens_completed + partial
    }

    /// Whole tokens a running request has produced so far.
    pub fn emitted_by(&self, id: RequestId) -> Option<u64> {
        let r = self.running.iter().find(|r| r.entry.job.id == id)?;
        let decoding = self.now - r.admitted_at - r.prefill_ms;
        Some(if decoding <= 0.0 {
            0
        } else {
            ((decoding / self.profile.decode_ms_per_token).floor() as u64).min(r.entry.job.output_tokens)
        })
    }

    /// Sum of predicted tokens over everything queued or running here.
    pub fn live_predicted_tokens(&self) -> f64 {
        self.queue.iter().map(|e| e.job.predicted_tokens).sum::<f64>()
            + self
                .running
                .iter()
                .map(|r| r.entry.job.predicted_tokens)
                .sum::<f64>()
    }
}
