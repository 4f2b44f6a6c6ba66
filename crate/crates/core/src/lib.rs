//! Discrete-event simulation of multi-stage LLM workflows served by a pool
//! of heterogeneous models, with a predictive scheduler and the usual
//! baselines.
//!
//! The scheduling core (`balancer`, `monitor`, `profiles`, `router`
//! scores) is generic over the numeric type so it can be checked in exact
//! rational arithmetic; the simulator itself runs in `f64`.

pub mod balancer;
pub mod engine;
pub mod ids;
pub mod metrics;
pub mod monitor;
pub mod num;
pub mod predictor;
pub mod profiles;
pub mod router;
pub mod seed;
pub mod simcore;
pub mod workload;

pub use balancer::{
    estimate_load, fastest_model, schedule_request, select_model, BalancerConfig, BalancerError,
    Decision, DispatchQueue, LoadMap,
};
pub use engine::{AgingConfig, Engine, EngineEvent, EngineEventKind, Job, QuantumMode};
pub use ids::{ModelId, RequestId};
pub use metrics::{
    frontier, queue_time_report, summarize, MetricsError, OperatingPoint, QueueTimeReport,
    RunResult,
};
pub use monitor::{InFlightMap, Monitor, MonitorError};
pub use num::Scalar;
pub use predictor::{kendall_tau_distance, PredictorKind, QuantileTable};
pub use profiles::{load_pool, parse_pool, ModelProfile, Pool};
pub use router::{ConfidenceVector, RouterKind, TableRouter};
pub use simcore::{baseline_dispatch, run, trace_arrivals, Policy, SimConfig, SimError};
pub use workload::{Request, TraceRecord};

/// Exact rational scalar used to check the scheduling arithmetic.
pub type Exact = num_rational::Rational64;

pub type ExactPool = Pool<Exact>;
pub type ExactProfile = ModelProfile<Exact>;
pub type ExactMonitor = Monitor<Exact>;
pub type ExactBalancerConfig = BalancerConfig<Exact>;
pub type ExactLoads = LoadMap<Exact>;

pub type PoolF32 = Pool<f32>;
pub type MonitorF32 = Monitor<f32>;
pub type BalancerConfigF32 = BalancerConfig<f32>;
