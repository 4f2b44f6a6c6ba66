//! Activity monitor: program-to-model assignments, in-flight predicted
//! token volume per model, and the per-program stage table.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::ids::{ModelId, RequestId};
use crate::num::{self, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum MonitorError {
    #[error("request {0} is already in flight")]
    DuplicateRequest(RequestId),
    #[error("request {0} is not in flight")]
    UnknownRequest(RequestId),
    #[error("unknown model {0}")]
    UnknownModel(String),
    #[error("request {request} is in flight on {actual}, not {claimed}")]
    ModelMismatch {
        request: RequestId,
        claimed: String,
        actual: String,
    },
    #[error("program {program} is already assigned to {existing}")]
    AssignmentConflict { program: String, existing: String },
    #[error("program {0} is not tracked")]
    UnknownProgram(String),
    #[error("stage completion times must be non-decreasing for program {0}")]
    NonMonotonicCompletion(String),
    #[error("negative predicted tokens for request {0}")]
    NegativeTokens(RequestId),
}

/// Program id to model. An entry is written once and never changed.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AssignmentMap {
    entries: BTreeMap<String, ModelId>,
}

impl AssignmentMap {
    pub fn get(&self, program: &str) -> Option<&ModelId> {
        self.entries.get(program)
    }

    pub fn contains(&self, program: &str) -> bool {
        self.entries.contains_key(program)
    }

    pub fn assign(&mut self, program: &str, model: ModelId) -> Result<(), MonitorError> {
        match self.entries.get(program) {
            Some(existing) if *existing != model => Err(MonitorError::AssignmentConflict {
                program: program.to_string(),
                existing: existing.to_string(),
            }),
            Some(_) => Ok(()),
            None => {
                self.entries.insert(program.to_string(), model);
                Ok(())
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Per model, request id to predicted tokens, for requests dispatched and
/// not yet completed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InFlightMap<T = f64> {
    per_model: BTreeMap<ModelId, BTreeMap<RequestId, T>>,
    #[serde(skip)]
    owner: BTreeMap<RequestId, ModelId>,
}

impl<T: Scalar> InFlightMap<T> {
    pub fn new<'a>(models: impl IntoIterator<Item = &'a ModelId>) -> Self {
        Self {
            per_model: models.into_iter().map(|m| (m.clone(), BTreeMap::new())).collect(),
            owner: BTreeMap::new(),
        }
    }

    pub fn record_dispatch(
        &mut self,
        model: &ModelId,
        request: RequestId,
        predicted_tokens: T,
    ) -> Result<(), MonitorError> {
        if predicted_tokens < T::zero() {
            return Err(MonitorError::NegativeTokens(request));
        }
        if self.owner.contains_key(&request) {
            return Err(MonitorError::DuplicateRequest(request));
        }
        let map = self
            .per_model
            .get_mut(model)
            .ok_or_else(|| MonitorError::UnknownModel(model.to_string()))?;
        map.insert(request, predicted_tokens);
        self.owner.insert(request, model.clone());
        Ok(())
    }

    /// Remove a completed request, returning its predicted tokens.
    pub fn record_completion(&mut self, model: &ModelId, request: RequestId) -> Result<T, MonitorError> {
        match self.owner.get(&request) {
            None => return Err(MonitorError::UnknownRequest(request)),
            Some(actual) if actual != model => {
                return Err(MonitorError::ModelMismatch {
                    request,
                    claimed: model.to_string(),
                    actual: actual.to_string(),
                })
            }
            Some(_) => {}
        }
        self.owner.remove(&request);
        self.per_model
            .get_mut(model)
            .and_then(|m| m.remove(&request))
            .ok_or(MonitorError::UnknownRequest(request))
    }

    /// Overwrite the tracked volume of a live request (used by the optional
    /// decay mode).
    pub fn update(&mut self, request: RequestId, tokens: T) -> Result<(), MonitorError> {
        let model = self
            .owner
            .get(&request)
            .ok_or(MonitorError::UnknownRequest(request))?;
        if tokens < T::zero() {
            return Err(MonitorError::NegativeTokens(request));
        }
        self.per_model
            .get_mut(model)
            .expect("owner and per-model maps agree")
            .insert(request, tokens);
        Ok(())
    }

    /// P_m: exact sum of the model's live entries.
    pub fn in_flight_sum(&self, model: &str) -> Result<T, MonitorError> {
        self.per_model
            .get(model)
            .map(|m| num::sum(m.values().copied()))
            .ok_or_else(|| MonitorError::UnknownModel(model.to_string()))
    }

    pub fn entries(&self, model: &str) -> Option<&BTreeMap<RequestId, T>> {
        self.per_model.get(model)
    }

    pub fn models(&self) -> impl Iterator<Item = &ModelId> {
        self.per_model.keys()
    }

    pub fn model_of(&self, request: RequestId) -> Option<&ModelId> {
        self.owner.get(&request)
    }

    pub fn live_requests(&self) -> usize {
        self.owner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.owner.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ProgramEntry {
    pub num_stages: u32,
    /// First-stage assignment under assignment reuse; for per-request
    /// dispatch this is the model of the most recent stage.
    pub assigned_model: Option<ModelId>,
    pub stage_requests: Vec<RequestId>,
    pub stage_models: Vec<ModelId>,
    pub stage_completions: Vec<f64>,
    /// C_p, set once the final stage completes.
    pub completion_time: Option<f64>,
    /// S_p of the final output.
    pub final_success: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ProgramTable {
    programs: BTreeMap<String, ProgramEntry>,
    #[serde(skip)]
    request_owner: BTreeMap<RequestId, String>,
}

impl ProgramTable {
    pub fn track_request(
        &mut self,
        program: &str,
        num_stages: u32,
        request: RequestId,
        model: &ModelId,
    ) {
        let entry = self.programs.entry(program.to_string()).or_default();
        entry.num_stages = num_stages;
        entry.assigned_model = Some(model.clone());
        entry.stage_requests.push(request);
        entry.stage_models.push(model.clone());
        self.request_owner.insert(request, program.to_string());
    }

    /// Record a stage completion; returns true when it was the final stage.
    pub fn record_stage_completion(
        &mut self,
        request: RequestId,
        time: f64,
    ) -> Result<bool, MonitorError> {
        let program = self
            .request_owner
            .remove(&request)
            .ok_or(MonitorError::UnknownRequest(request))?;
        let entry = self
            .programs
            .get_mut(&program)
            .ok_or_else(|| MonitorError::UnknownProgram(program.clone()))?;
        if entry.stage_completions.last().is_some_and(|t| time < *t) {
            return Err(MonitorError::NonMonotonicCompletion(program));
        }
        entry.stage_completions.push(time);
        let done = entry.stage_completions.len() as u32 == entry.num_stages;
        if done {
            entry.completion_time = Some(time);
        }
        Ok(done)
    }

    pub fn set_final_success(&mut self, program: &str, success: bool) -> Result<(), MonitorError> {
        self.programs
            .get_mut(program)
            .ok_or_else(|| MonitorError::UnknownProgram(program.to_string()))?
            .final_success = Some(success);
        Ok(())
    }

    pub fn get(&self, program: &str) -> Option<&ProgramEntry> {
        self.programs.get(program)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ProgramEntry)> {
        self.programs.iter()
    }

    pub fn len(&self) -> usize {
        self.programs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.programs.is_empty()
    }
}

/// Shared scheduler state read and written by the load balancer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Monitor<T = f64> {
    pub assignments: AssignmentMap,
    pub in_flight: InFlightMap<T>,
    pub programs: ProgramTable,
}

impl<T: Scalar> Monitor<T> {
    pub fn new<'a>(models: impl IntoIterator<Item = &'a ModelId>) -> Self {
        Self {
            assignments: AssignmentMap::default(),
            in_flight: InFlightMap::new(models),
            programs: ProgramTable::default(),
        }
    }

    pub fn record_dispatch(
        &mut self,
        model: &ModelId,
        request: RequestId,
        predicted_tokens: T,
    ) -> Result<(), MonitorError> {
        self.in_flight.record_dispatch(model, request, predicted_tokens)
    }

    /// Drop the request's in-flight entry and, when the program table
    /// tracks it, log the stage completion. Returns true when this fixed
    /// the program's final completion time.
    pub fn record_completion(
        &mut self,
        model: &ModelId,
        request: RequestId,
        _actual_tokens: u64,
        time: f64,
    ) -> Result<bool, MonitorError> {
        self.in_flight.record_completion(model, request)?;
        match self.programs.record_stage_completion(request, time) {
            Ok(done) => Ok(done),
            Err(MonitorError::UnknownRequest(_)) => Ok(false),
            Err(e) => Err(e),
        }
    }

    pub fn in_flight_sum(&self, model: &str) -> Result<T, MonitorError> {
        self.in_flight.in_flight_sum(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Rational64;
    use proptest::prelude::*;

    fn ab() -> Vec<ModelId> {
        vec!["A".into(), "B".into()]
    }

    #[test]
    fn dispatch_and_sum() {
        let models = ab();
        let mut m: InFlightMap = InFlightMap::new(&models);
        assert_eq!(m.in_flight_sum("A").unwrap(), 0.0);
        m.record_dispatch(&models[0], RequestId(1), 420.0).unwrap();
        assert_eq!(m.in_flight_sum("A").unwrap(), 420.0);
        m.record_dispatch(&models[0], RequestId(2), 100.0).unwrap();
        assert_eq!(m.in_flight_sum("A").unwrap(), 520.0);
        assert_eq!(
            m.record_dispatch(&models[1], RequestId(2), 1.0),
            Err(MonitorError::DuplicateRequest(RequestId(2)))
        );
        assert!(matches!(m.in_flight_sum("Z"), Err(MonitorError::UnknownModel(_))));
    }

    #[test]
    fn completion_is_inverse_of_dispatch() {
        let models = ab();
        let mut m: InFlightMap = InFlightMap::new(&models);
        m.record_dispatch(&models[0], RequestId(1), 300.0).unwrap();
        m.record_dispatch(&models[0], RequestId(2), 7.0).unwrap();
        assert_eq!(m.record_completion(&models[0], RequestId(2)).unwrap(), 7.0);
        assert_eq!(m.in_flight_sum("A").unwrap(), 300.0);
        m.record_completion(&models[0], RequestId(1)).unwrap();
        assert!(m.entries("A").unwrap().is_empty());
        assert!(m.is_empty());
        assert_eq!(
            m.record_completion(&models[0], RequestId(9)),
            Err(MonitorError::UnknownRequest(RequestId(9)))
        );
    }

    #[test]
    fn completion_under_wrong_model() {
        let models = ab();
        let mut m: InFlightMap = InFlightMap::new(&models);
        m.record_dispatch(&models[0], RequestId(1), 1.0).unwrap();
        assert!(matches!(
            m.record_completion(&models[1], RequestId(1)),
            Err(MonitorError::ModelMismatch { .. })
        ));
    }

    #[test]
    fn assignment_is_write_once() {
        let mut a = AssignmentMap::default();
        a.assign("p", "A".into()).unwrap();
        a.assign("p", "A".into()).unwrap();
        assert!(a.assign("p", "B".into()).is_err());
        assert_eq!(a.get("p").unwrap().as_str(), "A");
    }

    #[test]
    fn program_table_tracks_completion() {
        let mut mon: Monitor = Monitor::new(&ab());
        let a = ModelId::from("A");
        mon.programs.track_request("p", 2, RequestId(1), &a);
        mon.record_dispatch(&a, RequestId(1), 10.0).unwrap();
        assert!(!mon.record_completion(&a, RequestId(1), 5, 100.0).unwrap());
        mon.programs.track_request("p", 2, RequestId(2), &a);
        mon.record_dispatch(&a, RequestId(2), 4.0).unwrap();
        assert!(mon.record_completion(&a, RequestId(2), 5, 150.0).unwrap());
        let e = mon.programs.get("p").unwrap();
        assert_eq!(e.completion_time, Some(150.0));
        assert_eq!(e.stage_completions, vec![100.0, 150.0]);
    }

    #[test]
    fn exact_sums() {
        let models = ab();
        let mut m: InFlightMap<Rational64> = InFlightMap::new(&models);
        m.record_dispatch(&models[1], RequestId(1), Rational64::new(1, 3)).unwrap();
        m.record_dispatch(&models[1], RequestId(2), Rational64::new(2, 3)).unwrap();
        assert_eq!(m.in_flight_sum("B").unwrap(), Rational64::from_integer(1));
    }

    proptest! {
        // in_flight_sum always equals the sum over a shadow list of live requests
        #[test]
        fn conservation(ops in proptest::collection::vec((any::<bool>(), 0u64..20, 0u64..1000, any::<bool>()), 1..200)) {
            let models = ab();
            let mut m: InFlightMap<i64> = InFlightMap::new(&models);
            let mut shadow: BTreeMap<u64, (usize, i64)> = BTreeMap::new();
            for (dispatch, id, tokens, which) in ops {
                let mi = usize::from(which);
                if dispatch {
                    let r = m.record_dispatch(&models[mi], RequestId(id), tokens as i64);
                    prop_assert_eq!(r.is_ok(), !shadow.contains_key(&id));
                    shadow.entry(id).or_insert((mi, tokens as i64));
                } else if let Some((owner, _)) = shadow.get(&id).copied() {
                    m.record_completion(&models[owner], RequestId(id)).unwrap();
                    shadow.remove(&id);
                } else {
                    prop_assert!(m.record_completion(&models[mi], RequestId(id)).is_err());
                }
                for (i, model) in models.iter().enumerate() {
                    let expect: i64 = shadow.values().filter(|(o, _)| *o == i).map(|(_, t)| *t).sum();
                    prop_assert_eq!(m.in_flight_sum(model.as_str()).unwrap(), expect);
                }
            }
        }
    }
}
