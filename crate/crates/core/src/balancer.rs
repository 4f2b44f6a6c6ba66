//! Load-aware model selection and priority assignment.
//!
//! Each model's backlog is estimated as time-to-last-token of its admitted
//! predicted work, `L[m] = P_m * decode_ms_per_token / max_batch_size`. A
//! new program goes to the highest-confidence model whose backlog stays
//! within `(1 + slack)` of the least-loaded model's and whose confidence
//! beats that model's by at least the margin; later stages of the same
//! program reuse the assignment.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::ids::ModelId;
use crate::monitor::{InFlightMap, Monitor, MonitorError};
use crate::num::Scalar;
use crate::predictor::{PredictorError, PredictorKind};
use crate::profiles::Pool;
use crate::router::{ConfidenceVector, RouterError, RouterKind};
use crate::workload::{Request, TraceRecord};

#[derive(Debug, Error)]
pub enum BalancerError {
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error("scores and loads cover different models: {0}")]
    PoolMismatch(String),
    #[error("cannot represent {0} in the scalar type")]
    Conversion(f64),
    #[error("invalid balancer config: {0}")]
    InvalidConfig(String),
    #[error("dispatch failed: {0}")]
    Dispatch(String),
}

pub type LoadMap<T = f64> = BTreeMap<ModelId, T>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BalancerConfig<T = f64> {
    /// tau >= 0: headroom over the least-loaded model's backlog.
    pub latency_slack: T,
    /// Delta s in [0, 1]: confidence gain needed to leave the least-loaded model.
    pub confidence_margin: T,
}

impl<T: Scalar> BalancerConfig<T> {
    pub fn new(latency_slack: T, confidence_margin: T) -> Result<Self, BalancerError> {
        let cfg = Self {
            latency_slack,
            confidence_margin,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BalancerError> {
        if self.latency_slack.partial_cmp(&T::zero()).is_none_or(Ordering::is_lt) {
            return Err(BalancerError::InvalidConfig(format!(
                "latency slack {:?} must be >= 0",
                self.latency_slack
            )));
        }
        if !(self.confidence_margin >= T::zero() && self.confidence_margin <= T::one()) {
            return Err(BalancerError::InvalidConfig(format!(
                "confidence margin {:?} must be in [0,1]",
                self.confidence_margin
            )));
        }
        Ok(())
    }
}

impl Default for BalancerConfig<f64> {
    fn default() -> Self {
        Self {
            latency_slack: 0.5,
            confidence_margin: 0.1,
        }
    }
}

/// Outcome of scheduling one request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision<T = f64> {
    pub model: ModelId,
    /// Predicted remaining workflow tokens; smaller runs first.
    pub priority: T,
    /// Backlog estimates seen by the selection; empty when the assignment
    /// was reused.
    pub estimated_loads: LoadMap<T>,
    pub scores: Option<ConfidenceVector<T>>,
    pub used_cached_assignment: bool,
}

/// Receives dispatched requests, one priority queue per model.
pub trait DispatchQueue<T> {
    fn dispatch(
        &mut self,
        model: &ModelId,
        request: &Request,
        priority: T,
        arrival: f64,
    ) -> Result<(), BalancerError>;
}

/// Records dispatches in order; handy for driving the balancer without an
/// engine behind it.
impl<T: Scalar> DispatchQueue<T> for Vec<(ModelId, Request, T)> {
    fn dispatch(
        &mut self,
        model: &ModelId,
        request: &Request,
        priority: T,
        _arrival: f64,
    ) -> Result<(), BalancerError> {
        self.push((model.clone(), request.clone(), priority));
        Ok(())
    }
}

/// Per-model TTLT backlog from in-flight predicted tokens.
pub fn estimate_load<T: Scalar>(pool: &Pool<T>, in_flight: &InFlightMap<T>) -> LoadMap<T> {
    pool.profiles()
        .map(|p| {
            let volume = in_flight
                .in_flight_sum(p.model_id.as_str())
                .unwrap_or_else(|_| T::zero());
            let batch = T::from_usize(p.max_batch_size).expect("batch size fits the scalar type");
            (p.model_id.clone(), volume * p.decode_ms_per_token / batch)
        })
        .collect()
}

/// Least-loaded model; ties go to the smallest model id.
pub fn fastest_model<T: Scalar>(loads: &LoadMap<T>) -> Option<&ModelId> {
    let mut best: Option<(&ModelId, T)> = None;
    for (m, l) in loads {
        if best.is_none_or(|(_, b)| *l < b) {
            best = Some((m, *l));
        }
    }
    best.map(|(m, _)| m)
}

/// Pick a model from confidence scores and backlog estimates.
///
/// Starting from the least-loaded model, scan models by descending score
/// (ties by model id) and take the first whose load is within
/// `(1 + slack) * L_fast` and whose score is at least
/// `q[fast] + margin`; otherwise keep the least-loaded model.
pub fn select_model<T: Scalar>(
    scores: &ConfidenceVector<T>,
    loads: &LoadMap<T>,
    cfg: &BalancerConfig<T>,
) -> Result<ModelId, BalancerError> {
    if scores.scores.len() != loads.len() || !loads.keys().all(|m| scores.scores.contains_key(m)) {
        return Err(BalancerError::PoolMismatch(format!(
            "scores {:?} vs loads {:?}",
            scores.scores.keys().collect::<Vec<_>>(),
            loads.keys().collect::<Vec<_>>()
        )));
    }
    let fast = fastest_model(loads)
        .ok_or_else(|| BalancerError::PoolMismatch("empty pool".into()))?;
    let load_limit = (T::one() + cfg.latency_slack) * loads[fast];
    let score_floor = scores.scores[fast] + cfg.confidence_margin;

    let mut by_score: Vec<(&ModelId, T)> = scores.scores.iter().map(|(m, q)| (m, *q)).collect();
    by_score.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.0.cmp(b.0))
    });
    for (m, q) in by_score {
        if loads[m] <= load_limit && q >= score_floor {
            return Ok(m.clone());
        }
    }
    Ok(fast.clone())
}

/// Route and prioritize one request, then record it as in-flight and hand
/// it to the chosen model's queue.
#[allow(clippy::too_many_arguments)]
pub fn schedule_request<T: Scalar>(
    req: &Request,
    rec: &TraceRecord,
    monitor: &mut Monitor<T>,
    queues: &mut impl DispatchQueue<T>,
    pool: &Pool<T>,
    router: &RouterKind,
    predictor: &PredictorKind,
    cfg: &BalancerConfig<T>,
) -> Result<Decision<T>, BalancerError> {
    let convert = |x: f64| T::from_f64(x).ok_or(BalancerError::Conversion(x));

    let (model, estimated_loads, scores, cached) = match monitor.assignments.get(&req.program_id) {
        Some(m) => (m.clone(), LoadMap::new(), None, true),
        None => {
            let raw = router.score(req, rec, pool)?;
            let scores = ConfidenceVector::new(
                raw.scores
                    .into_iter()
                    .map(|(m, q)| Ok((m, convert(q)?)))
                    .collect::<Result<_, BalancerError>>()?,
            );
            let loads = estimate_load(pool, &monitor.in_flight);
            let chosen = select_model(&scores, &loads, cfg)?;
            monitor.assignments.assign(&req.program_id, chosen.clone())?;
            (chosen, loads, Some(scores), false)
        }
    };

    let priority = convert(predictor.predict(req, rec, &model)?.tokens)?;
    monitor.record_dispatch(&model, req.id, priority)?;
    monitor
        .programs
        .track_request(&req.program_id, req.meta.num_stages, req.id, &model);
    queues.dispatch(&model, req, priority, req.arrival_time)?;

    Ok(Decision {
        model,
        priority,
        estimated_loads,
        scores,
        used_cached_assignment: cached,
    })
}
