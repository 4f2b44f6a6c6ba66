#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use agentsim::workload::{dataset_preset, synthesize_trace, StageOutput, StageRecord};
use agentsim::{load_pool, ModelId, Pool, TraceRecord};

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// The shipped two-model pool.
pub fn default_pool() -> Pool {
    load_pool(configs_dir().join("pool.toml")).expect("configs/pool.toml")
}

/// APPS-like trace at 4 requests per second.
pub fn default_trace(n: usize, seed: u64) -> Vec<TraceRecord> {
    let mut cfg = dataset_preset("apps").unwrap();
    cfg.arrival_rps = 4.0;
    synthesize_trace(&cfg, n, seed).unwrap()
}

/// Single-stage program with the same output on every model.
pub fn single_stage(
    program: &str,
    arrival: f64,
    out: u64,
    success: &[(&str, u8)],
) -> TraceRecord {
    let models: BTreeMap<ModelId, StageOutput> = success
        .iter()
        .map(|(m, _)| {
            (
                ModelId::from(*m),
                StageOutput {
                    out_tokens: out,
                    carried_context_tokens: out,
                },
            )
        })
        .collect();
    TraceRecord {
        program_id: program.to_string(),
        workflow_id: "single".into(),
        user_arrival_time_ms: arrival,
        stages: vec![StageRecord {
            stage_index: 1,
            role: "coder".into(),
            base_input_tokens: 10,
            models,
        }],
        success: success.iter().map(|(m, s)| (ModelId::from(*m), *s)).collect(),
        difficulty: "medium".into(),
    }
}
