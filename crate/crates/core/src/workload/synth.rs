use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use rand_distr::Gamma;
use statrs::distribution::{ContinuousCDF, Normal};

use super::arrivals::{generate_arrivals, ArrivalProcess};
use super::{
    builtin_templates, Result, StageOutput, StageRecord, TaskFamily, TraceRecord, WorkflowSpec,
    WorkloadError,
};
use crate::ids::ModelId;
use crate::seed;

/// Mean and standard deviation of a model's total workflow output tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub mean: f64,
    pub std: f64,
}

impl LengthStats {
    /// Log-space (mu, sigma) of the lognormal with these moments.
    pub fn lognormal_params(&self) -> (f64, f64) {
        let cv2 = (self.std / self.mean).powi(2);
        let sigma2 = cv2.ln_1p();
        (self.mean.ln() - sigma2 / 2.0, sigma2.sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyBand {
    pub tag: String,
    pub share: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenRange {
    pub min: u64,
    pub max: u64,
}

/// Parameters of the synthetic trace generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dataset: String,
    pub templates: Vec<WorkflowSpec>,
    /// Relative frequency of each template; empty means uniform.
    #[serde(default)]
    pub template_weights: Vec<f64>,
    pub length_stats: BTreeMap<ModelId, LengthStats>,
    /// model -> difficulty tag -> probability of success.
    pub success_rates: BTreeMap<ModelId, BTreeMap<String, f64>>,
    /// Difficulty bands ordered from shortest to longest outputs.
    pub difficulties: Vec<DifficultyBand>,
    /// Share of a program's total output produced by each role; roles
    /// not listed weigh 1.0, so the default is an equal split.
    #[serde(default)]
    pub role_weights: BTreeMap<String, f64>,
    pub base_input_tokens: TokenRange,
    #[serde(default = "one")]
    pub context_carry_fraction: f64,
    /// When set, each program's stage shares are drawn from a Dirichlet
    /// centred on the role weights with this total concentration;
    /// otherwise every program splits exactly by role weight.
    #[serde(default)]
    pub stage_share_concentration: Option<f64>,
    /// Relative output volume per workflow id; unlisted workflows weigh 1.0.
    #[serde(default)]
    pub template_length_scale: BTreeMap<String, f64>,
    /// Rate used to fill `user_arrival_time_ms`.
    #[serde(default = "one")]
    pub arrival_rps: f64,
}

fn one() -> f64 {
    1.0
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(WorkloadError::InvalidConfig(m));
        if self.templates.is_empty() {
            return bad("no workflow templates".into());
        }
        for t in &self.templates {
            t.validate()?;
        }
        if !self.template_weights.is_empty() && self.template_weights.len() != self.templates.len()
        {
            return bad("template_weights length differs from templates".into());
        }
        if self.length_stats.is_empty() {
            return bad("no models in length_stats".into());
        }
        for (model, s) in &self.length_stats {
            // std = 0 is the degenerate point mass and stays valid
            if !(s.mean > 0.0 && s.mean.is_finite() && s.std >= 0.0 && s.std.is_finite()) {
                return Err(WorkloadError::InvalidStats {
                    model: model.to_string(),
                    mean: s.mean,
                    std: s.std,
                });
            }
        }
        if self.difficulties.is_empty() || self.difficulties.iter().any(|d| d.share < 0.0) {
            return bad("difficulty bands must be non-empty with non-negative shares".into());
        }
        if self.difficulties.iter().map(|d| d.share).sum::<f64>() <= 0.0 {
            return bad("difficulty shares sum to zero".into());
        }
        for model in self.length_stats.keys() {
            let rates = self
                .success_rates
                .get(model)
                .ok_or_else(|| WorkloadError::InvalidConfig(format!("no success rates for {model}")))?;
            for band in &self.difficulties {
                match rates.get(&band.tag) {
                    Some(p) if (0.0..=1.0).contains(p) => {}
                    _ => {
                        return bad(format!(
                            "success rate for ({model}, {}) missing or outside [0,1]",
                            band.tag
                        ))
                    }
                }
            }
        }
        if self.base_input_tokens.min == 0 || self.base_input_tokens.min > self.base_input_tokens.max
        {
            return bad("base_input_tokens range must satisfy 0 < min <= max".into());
        }
        if !(0.0..=1.0).contains(&self.context_carry_fraction) {
            return bad("context_carry_fraction must be in [0,1]".into());
        }
        if let Some(c) = self.stage_share_concentration {
            if !(c > 0.0 && c.is_finite()) {
                return bad("stage_share_concentration must be positive".into());
            }
        }
        if self
            .template_length_scale
            .values()
            .any(|s| !(*s > 0.0 && s.is_finite()))
        {
            return bad("template length scales must be positive".into());
        }
        if self.role_weights.values().any(|w| *w <= 0.0) {
            return bad("role weights must be positive".into());
        }
        Ok(())
    }

    fn difficulty_for(&self, u: f64) -> &str {
        let total: f64 = self.difficulties.iter().map(|d| d.share).sum();
        let mut acc = 0.0;
        for band in &self.difficulties {
            acc += band.share / total;
            if u < acc {
                return &band.tag;
            }
        }
        &self.difficulties.last().expect("validated non-empty").tag
    }

    fn template_scale(&self, workflow_id: &str) -> f64 {
        self.template_length_scale.get(workflow_id).copied().unwrap_or(1.0)
    }

    fn role_weight(&self, role: &str) -> f64 {
        self.role_weights.get(role).copied().unwrap_or(1.0)
    }
}

/// Split `total` into integer parts proportional to `weights`, summing
/// exactly to `total`.
fn split_total(total: u64, weights: &[f64]) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    let mut acc = 0.0;
    let mut prev = 0u64;
    weights
        .iter()
        .map(|w| {
            acc += w;
            let upto = ((total as f64) * acc / sum).round() as u64;
            let upto = upto.min(total);
            let part = upto - prev;
            prev = upto;
            part
        })
        .collect()
}

/// Log-space spread at which `scale[k] * exp(sigma * z[k])` has sample
/// coefficient of variation `target_cv`, or `None` when no spread reaches it.
fn fit_spread(z: &[f64], scale: &[f64], target_cv: f64) -> Option<f64> {
    let n = z.len();
    if n < 2 {
        return None;
    }
    let cv = |sigma: f64| {
        let logs: Vec<f64> = z.iter().zip(scale).map(|(z, s)| sigma * z + s.ln()).collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let a: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let mean = a.iter().sum::<f64>() / n as f64;
        let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        var.sqrt() / mean
    };
    if cv(0.0) >= target_cv {
        return Some(0.0);
    }
    let mut hi = 1.0;
    while cv(hi) < target_cv {
        hi *= 2.0;
        if hi > 64.0 {
            return None;
        }
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if cv(mid) < target_cv {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Per-program totals for one model. Totals are lognormal quantiles at the
/// programs' latent points, times the template scale; the log-space spread
/// and level are then fitted so the sample mean and standard deviation of
/// the generated set equal the configured ones.
fn model_totals(stats: &LengthStats, z: &[f64], scale: &[f64]) -> Vec<u64> {
    if stats.std == 0.0 {
        return vec![(stats.mean.round() as u64).max(1); z.len()];
    }
    let sigma = fit_spread(z, scale, stats.std / stats.mean)
        .unwrap_or_else(|| stats.lognormal_params().1);
    let logs: Vec<f64> = z.iter().zip(scale).map(|(z, s)| sigma * z + s.ln()).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let level = stats.mean * z.len() as f64 / raw.iter().sum::<f64>();
    // every program emits at least one token so per-token metrics stay finite
    raw.iter().map(|r| ((r * level).round() as u64).max(1)).collect()
}

/// Generate `n` programs.
///
/// Each program draws one latent quantile by stratified sampling (one draw
/// per 1/n stratum, then shuffled) shared by all models, so a program that
/// is long on one model is long on every model. The difficulty tag is the
/// band the quantile falls in, so harder programs are also longer.
pub fn synthesize_trace(cfg: &SynthConfig, n: usize, seed: u64) -> Result<Vec<TraceRecord>> {
    cfg.validate()?;
    if n == 0 {
        return Err(WorkloadError::InvalidConfig("n must be > 0".into()));
    }
    let mut rng = seed::rng_for(seed, &["synth", &cfg.dataset]);
    let normal = Normal::standard();

    let mut strata: Vec<usize> = (0..n).collect();
    strata.shuffle(&mut rng);

    let template_pick = if cfg.template_weights.is_empty() {
        WeightedIndex::new(vec![1.0; cfg.templates.len()])
    } else {
        WeightedIndex::new(&cfg.template_weights)
    }
    .map_err(|e| WorkloadError::InvalidConfig(format!("template weights: {e}")))?;

    let ids: Vec<String> = (0..n).map(|p| format!("{}-{p:06}", cfg.dataset)).collect();
    let arrivals = generate_arrivals(
        &ArrivalProcess {
            rps: cfg.arrival_rps,
            seed: seed::derive(seed, &["synth-arrivals", &cfg.dataset]),
            horizon_ms: None,
        },
        &ids,
    )?;

    struct Draw {
        u: f64,
        z: f64,
        template: usize,
        base_inputs: Vec<u64>,
        shares: Vec<f64>,
    }
    let draws: Vec<Draw> = (0..n)
        .map(|p| {
            let jitter: f64 = rng.random::<f64>();
            let u = ((strata[p] as f64 + jitter) / n as f64).clamp(1e-12, 1.0 - 1e-12);
            let template = template_pick.sample(&mut rng);
            let base_inputs = cfg.templates[template]
                .stages
                .iter()
                .map(|_| rng.random_range(cfg.base_input_tokens.min..=cfg.base_input_tokens.max))
                .collect();
            let weights: Vec<f64> = cfg.templates[template]
                .stages
                .iter()
                .map(|s| cfg.role_weight(&s.role))
                .collect();
            let shares = match cfg.stage_share_concentration {
                None => weights,
                Some(c) => {
                    let total: f64 = weights.iter().sum();
                    weights
                        .iter()
                        .map(|w| {
                            Gamma::new(c * w / total, 1.0)
                                .expect("validated positive shape")
                                .sample(&mut rng)
                                // keep every share representable when the shape is tiny
                                .max(f64::MIN_POSITIVE)
                        })
                        .collect()
                }
            };
            Draw {
                u,
                z: normal.inverse_cdf(u),
                template,
                base_inputs,
                shares,
            }
        })
        .collect();

    let z: Vec<f64> = draws.iter().map(|d| d.z).collect();
    let scale: Vec<f64> = draws
        .iter()
        .map(|d| cfg.template_scale(&cfg.templates[d.template].workflow_id))
        .collect();
    let totals: BTreeMap<&ModelId, Vec<u64>> = cfg
        .length_stats
        .iter()
        .map(|(m, s)| (m, model_totals(s, &z, &scale)))
        .collect();

    let mut out = Vec::with_capacity(n);
    for (p, (program_id, draw)) in ids.into_iter().zip(&draws).enumerate() {
        let difficulty = cfg.difficulty_for(draw.u).to_string();
        let template = &cfg.templates[draw.template];

        let mut stages: Vec<StageRecord> = template
            .stages
            .iter()
            .zip(&draw.base_inputs)
            .map(|(s, b)| StageRecord {
                stage_index: s.index,
                role: s.role.clone(),
                base_input_tokens: *b,
                models: BTreeMap::new(),
            })
            .collect();
        let mut success = BTreeMap::new();
        for (model, model_totals) in &totals {
            for (stage, part) in stages.iter_mut().zip(split_total(model_totals[p], &draw.shares)) {
                stage.models.insert(
                    (*model).clone(),
                    StageOutput {
                        out_tokens: part,
                        carried_context_tokens: (part as f64 * cfg.context_carry_fraction).round()
                            as u64,
                    },
                );
            }
            let p_success = cfg.success_rates[*model][&difficulty];
            success.insert((*model).clone(), u8::from(rng.random_bool(p_success)));
        }
        out.push(TraceRecord {
            program_id,
            workflow_id: template.workflow_id.clone(),
            user_arrival_time_ms: arrivals[p].1,
            stages,
            success,
            difficulty,
        });
    }
    Ok(out)
}

/// Generator settings seeded with published output-length statistics for a
/// 1.5B and a 14B model on code ("apps") and math ("math") workloads.
/// Success rates and input sizes are illustrative.
pub fn dataset_preset(name: &str) -> Option<SynthConfig> {
    let (family, small, large, rates_small, rates_large) = match name {
        "apps" => (
            TaskFamily::Code,
            LengthStats { mean: 447.0, std: 1276.0 },
            LengthStats { mean: 649.0, std: 534.0 },
            [0.45, 0.20, 0.05],
            [0.70, 0.45, 0.20],
        ),
        "math" => (
            TaskFamily::Math,
            LengthStats { mean: 606.0, std: 2587.0 },
            LengthStats { mean: 709.0, std: 715.0 },
            [0.75, 0.45, 0.15],
            [0.90, 0.70, 0.40],
        ),
        _ => return None,
    };
    let templates = builtin_templates(family);
    let tags = ["easy", "medium", "hard"];
    let rates = |r: [f64; 3]| -> BTreeMap<String, f64> {
        tags.iter().zip(r).map(|(t, p)| (t.to_string(), p)).collect()
    };
    Some(SynthConfig {
        dataset: name.to_string(),
        templates: templates.clone(),
        template_weights: Vec::new(),
        length_stats: [("q1.5b".into(), small), ("q14b".into(), large)].into_iter().collect(),
        success_rates: [("q1.5b".into(), rates(rates_small)), ("q14b".into(), rates(rates_large))]
            .into_iter()
            .collect(),
        difficulties: tags
            .iter()
            .map(|t| DifficultyBand {
                tag: t.to_string(),
                share: 1.0,
            })
            .collect(),
        role_weights: BTreeMap::new(),
        stage_share_concentration: Some(2.0),
        template_length_scale: templates
            .iter()
            .map(|t| (t.workflow_id.clone(), t.num_stages() as f64))
            .collect(),
        base_input_tokens: TokenRange { min: 150, max: 600 },
        context_carry_fraction: 1.0,
        arrival_rps: 1.0,
    })
}
