//! Per-model confidence scores.
//!
//! Stand-ins for a learned router: ground-truth labels (optionally noisy),
//! a per-(model, difficulty) lookup table, or a constant.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::ModelId;
use crate::num::Scalar;
use crate::profiles::Pool;
use crate::seed;
use crate::workload::{Request, TraceRecord};

#[derive(Debug, Error)]
pub enum RouterError {
    #[error("no table score for model {model} at difficulty {difficulty}")]
    MissingTableEntry { model: String, difficulty: String },
    #[error("program {program} has no success label for model {model}")]
    MissingLabel { program: String, model: String },
    #[error("invalid router: {0}")]
    Invalid(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One confidence in `[0, 1]` per pool model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfidenceVector<T = f64> {
    pub scores: BTreeMap<ModelId, T>,
}

impl<T: Scalar> ConfidenceVector<T> {
    pub fn new(scores: BTreeMap<ModelId, T>) -> Self {
        Self { scores }
    }

    pub fn get(&self, model: &str) -> Option<T> {
        self.scores.get(model).copied()
    }

    /// Highest-scoring model, ties broken by smallest model id.
    pub fn argmax(&self) -> Option<&ModelId> {
        let mut best: Option<(&ModelId, T)> = None;
        for (m, q) in &self.scores {
            if best.is_none_or(|(_, b)| *q > b) {
                best = Some((m, *q));
            }
        }
        best.map(|(m, _)| m)
    }
}

/// Score lookup keyed by model then difficulty tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRouter {
    pub scores: BTreeMap<ModelId, BTreeMap<String, f64>>,
}

impl TableRouter {
    pub fn new(scores: BTreeMap<ModelId, BTreeMap<String, f64>>) -> Result<Self, RouterError> {
        for (m, row) in &scores {
            for (d, q) in row {
                if !(0.0..=1.0).contains(q) {
                    return Err(RouterError::Invalid(format!(
                        "table score ({m}, {d}) = {q} outside [0,1]"
                    )));
                }
            }
        }
        Ok(Self { scores })
    }

    /// Parse a TOML score map: one `[scores.<model>]` table per model,
    /// mapping difficulty tags to scores.
    pub fn parse(text: &str) -> Result<Self, RouterError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct File {
            scores: BTreeMap<ModelId, BTreeMap<String, f64>>,
        }
        let f: File = toml::from_str(text).map_err(|e| RouterError::Invalid(e.to_string()))?;
        Self::new(f.scores)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RouterError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| RouterError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    fn lookup(&self, model: &ModelId, difficulty: &str) -> Result<f64, RouterError> {
        self.scores
            .get(model)
            .and_then(|row| row.get(difficulty))
            .copied()
            .ok_or_else(|| RouterError::MissingTableEntry {
                model: model.to_string(),
                difficulty: difficulty.to_string(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RouterKind {
    Oracle,
    Table(TableRouter),
    Constant { value: f64 },
    NoisyOracle { flip_probability: f64, seed: u64 },
}

impl RouterKind {
    pub fn validate(&self) -> Result<(), RouterError> {
        match self {
            RouterKind::Constant { value } if !(0.0..=1.0).contains(value) => Err(
                RouterError::Invalid(format!("constant score {value} outside [0,1]")),
            ),
            RouterKind::NoisyOracle {
                flip_probability, ..
            } if !(0.0..=1.0).contains(flip_probability) => Err(RouterError::Invalid(format!(
                "flip probability {flip_probability} outside [0,1]"
            ))),
            _ => Ok(()),
        }
    }

    /// Confidence that each pool model solves the program `req` belongs to.
    pub fn score<T: Scalar>(
        &self,
        req: &Request,
        rec: &TraceRecord,
        pool: &Pool<T>,
    ) -> Result<ConfidenceVector, RouterError> {
        debug_assert_eq!(req.program_id, rec.program_id);
        self.validate()?;
        let label = |m: &ModelId| -> Result<f64, RouterError> {
            match rec.success.get(m) {
                Some(s) => Ok(f64::from(*s)),
                None => Err(RouterError::MissingLabel {
                    program: rec.program_id.clone(),
                    model: m.to_string(),
                }),
            }
        };
        let mut scores = BTreeMap::new();
        for m in pool.models() {
            let q = match self {
                RouterKind::Oracle => label(m)?,
                RouterKind::Table(t) => t.lookup(m, &rec.difficulty)?,
                RouterKind::Constant { value } => *value,
                RouterKind::NoisyOracle {
                    flip_probability,
                    seed,
                } => {
                    let truth = label(m)?;
                    let mut rng = seed::rng_for(*seed, &["router", &rec.program_id, m.as_str()]);
                    if rng.random_bool(*flip_probability) {
                        1.0 - truth
                    } else {
                        truth
                    }
                }
            };
            scores.insert(m.clone(), q);
        }
        Ok(ConfidenceVector { scores })
    }
}
