//! Per-model capacity and latency parameters.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::ModelId;
use crate::num::Scalar;

/// Prefill cost applied when a config omits it, in ms per input token.
pub const DEFAULT_PREFILL_MS_PER_TOKEN: f64 = 0.01;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid pool: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile<T = f64> {
    pub model_id: ModelId,
    pub decode_ms_per_token: T,
    pub max_batch_size: usize,
    pub prefill_ms_per_token: T,
}

impl<T: Scalar> ModelProfile<T> {
    pub fn new(
        model_id: impl Into<ModelId>,
        decode_ms_per_token: T,
        max_batch_size: usize,
        prefill_ms_per_token: T,
    ) -> Result<Self, ProfileError> {
        let p = Self {
            model_id: model_id.into(),
            decode_ms_per_token,
            max_batch_size,
            prefill_ms_per_token,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let bad = |m: String| Err(ProfileError::Validation(m));
        if self.model_id.as_str().is_empty() {
            return bad("empty model_id".into());
        }
        if self.decode_ms_per_token.partial_cmp(&T::zero()) != Some(Ordering::Greater) {
            return bad(format!("{}: decode_ms_per_token must be > 0", self.model_id));
        }
        if self.max_batch_size == 0 {
            return bad(format!("{}: max_batch_size must be >= 1", self.model_id));
        }
        if self.prefill_ms_per_token.partial_cmp(&T::zero()).is_none_or(Ordering::is_lt) {
            return bad(format!("{}: prefill_ms_per_token must be >= 0", self.model_id));
        }
        Ok(())
    }
}

/// The heterogeneous model set served by one run. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pool<T = f64> {
    profiles: BTreeMap<ModelId, ModelProfile<T>>,
    quality_order: Option<Vec<ModelId>>,
}

impl<T: Scalar> Pool<T> {
    pub fn new(profiles: Vec<ModelProfile<T>>) -> Result<Self, ProfileError> {
        Self::with_quality_order(profiles, None)
    }

    pub fn with_quality_order(
        profiles: Vec<ModelProfile<T>>,
        quality_order: Option<Vec<ModelId>>,
    ) -> Result<Self, ProfileError> {
        if profiles.is_empty() {
            return Err(ProfileError::Validation("pool has no models".into()));
        }
        let mut map = BTreeMap::new();
        for p in profiles {
            p.validate()?;
            let id = p.model_id.clone();
            if map.insert(id.clone(), p).is_some() {
                return Err(ProfileError::Validation(format!("duplicate model_id {id}")));
            }
        }
        if let Some(order) = &quality_order {
            if let Some(unknown) = order.iter().find(|m| !map.contains_key(*m)) {
                return Err(ProfileError::Validation(format!(
                    "quality_order names unknown model {unknown}"
                )));
            }
        }
        Ok(Self {
            profiles: map,
            quality_order,
        })
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn get(&self, model: &str) -> Option<&ModelProfile<T>> {
        self.profiles.get(model)
    }

    pub fn contains(&self, model: &str) -> bool {
        self.profiles.contains_key(model)
    }

    /// Model ids in lexicographic order.
    pub fn models(&self) -> impl Iterator<Item = &ModelId> {
        self.profiles.keys()
    }

    pub fn profiles(&self) -> impl Iterator<Item = &ModelProfile<T>> {
        self.profiles.values()
    }

    pub fn quality_order(&self) -> Option<&[ModelId]> {
        self.quality_order.as_deref()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoolFile {
    #[serde(default)]
    quality_order: Option<Vec<String>>,
    models: Vec<ProfileEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileEntry {
    id: String,
    decode_ms_per_token: f64,
    max_batch_size: usize,
    #[serde(default = "default_prefill")]
    prefill_ms_per_token: f64,
}

fn default_prefill() -> f64 {
    DEFAULT_PREFILL_MS_PER_TOKEN
}

impl From<ProfileEntry> for ModelProfile<f64> {
    fn from(e: ProfileEntry) -> Self {
        Self {
            model_id: ModelId(e.id),
            decode_ms_per_token: e.decode_ms_per_token,
            max_batch_size: e.max_batch_size,
            prefill_ms_per_token: e.prefill_ms_per_token,
        }
    }
}

/// Load a TOML pool config (see `configs/pool.toml`).
pub fn load_pool(path: impl AsRef<Path>) -> Result<Pool, ProfileError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ProfileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_pool(&text)
}

pub fn parse_pool(text: &str) -> Result<Pool, ProfileError> {
    let file: PoolFile = toml::from_str(text).map_err(|e| ProfileError::Parse(e.to_string()))?;
    for e in &file.models {
        if !e.decode_ms_per_token.is_finite() || !e.prefill_ms_per_token.is_finite() {
            return Err(ProfileError::Validation(format!("{}: non-finite timing", e.id)));
        }
    }
    Pool::with_quality_order(
        file.models.into_iter().map(Into::into).collect(),
        file.quality_order.map(|o| o.into_iter().map(ModelId).collect()),
    )
}

/// Parse the CLI form `id:decode_ms_per_token:max_batch_size[:prefill_ms_per_token]`.
pub fn parse_model_flag(spec: &str) -> Result<ModelProfile, ProfileError> {
    let parts: Vec<&str> = spec.split(':').collect();
    if !(3..=4).contains(&parts.len()) {
        return Err(ProfileError::Parse(format!(
            "expected id:decode_ms:batch[:prefill_ms], got {spec:?}"
        )));
    }
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|e| ProfileError::Parse(format!("{spec:?}: {e}")))
    };
    let batch = parts[2]
        .parse::<usize>()
        .map_err(|e| ProfileError::Parse(format!("{spec:?}: {e}")))?;
    let prefill = match parts.get(3) {
        Some(p) => num(p)?,
        None => DEFAULT_PREFILL_MS_PER_TOKEN,
    };
    ModelProfile::new(parts[0], num(parts[1])?, batch, prefill)
}
