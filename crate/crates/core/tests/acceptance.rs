//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fail.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use agentsim::engine::{AgingConfig, Engine, Job};
use agentsim::metrics::{frontier, queue_time_report, write_points_csv};
use agentsim::monitor::Monitor;
use agentsim::predictor::evaluate_predictors;
use agentsim::workload::{dataset_preset, first_stage_request, synthesize_trace};
use agentsim::{
    estimate_load, kendall_tau_distance, run, schedule_request, select_model, summarize,
    trace_arrivals, BalancerConfig, ConfidenceVector, Exact, ModelId, ModelProfile,
    Policy, Pool, PredictorKind, QuantileTable, RequestId, RouterKind, SimConfig,
};
use num_traits::Zero;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

// 1. L[m] = P_m * decode / batch, exactly, against a separate computation.
fn formula_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut mismatches = 0;
    for case in 0..100 {
        let n_models = rng.random_range(1..=4);
        let names: Vec<String> = (0..n_models).map(|i| format!("m{i}")).collect();
        let profiles: Vec<ModelProfile<Exact>> = names
            .iter()
            .map(|n| {
                let decode = Exact::new(rng.random_range(1..=400), rng.random_range(1..=16));
                let prefill = Exact::new(rng.random_range(0..=10), 100);
                ModelProfile::new(n.as_str(), decode, rng.random_range(1..=64), prefill).unwrap()
            })
            .collect();
        let pool = Pool::new(profiles.clone()).unwrap();
        let mut monitor: Monitor<Exact> = Monitor::new(pool.models());
        let mut shadow: BTreeMap<String, Vec<Exact>> = BTreeMap::new();
        for r in 0..rng.random_range(0..40u64) {
            let m = &names[rng.random_range(0..n_models)];
            let tokens = Exact::new(rng.random_range(0..5000), rng.random_range(1..=4));
            monitor
                .record_dispatch(&ModelId::from(m.as_str()), RequestId(r), tokens)
                .unwrap();
            shadow.entry(m.clone()).or_default().push(tokens);
        }
        let loads = estimate_load(&pool, &monitor.in_flight);
        for p in &profiles {
            let volume = shadow
                .get(p.model_id.as_str())
                .map(|v| v.iter().fold(Exact::zero(), |a, b| a + b))
                .unwrap_or_else(Exact::zero);
            let expected = volume * p.decode_ms_per_token / Exact::from_integer(p.max_batch_size as i64);
            if loads[&p.model_id] != expected {
                mismatches += 1;
                eprintln!("case {case}: {} got {} want {expected}", p.model_id, loads[&p.model_id]);
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && within(elapsed, 1.0),
        format!("100 exact-rational cases, {mismatches} mismatches, {:.3}s (< 1s)", elapsed.as_secs_f64()),
    )
}

/// Literal reading: the fastest model (ties by id) sets the load limit and
/// score floor; among all models passing both tests take the highest score
/// (ties by id); with none passing keep the fastest.
fn brute_force_select(q: &BTreeMap<ModelId, f64>, l: &BTreeMap<ModelId, f64>, tau: f64, ds: f64) -> ModelId {
    let mut fast = None;
    for (m, load) in l {
        match fast {
            None => fast = Some((m, *load)),
            Some((fm, fl)) if *load < fl || (*load == fl && m < fm) => fast = Some((m, *load)),
            _ => {}
        }
    }
    let (fast, lf) = fast.unwrap();
    let mut best: Option<(&ModelId, f64)> = None;
    for (m, load) in l {
        if *load <= (1.0 + tau) * lf && q[m] >= q[fast] + ds {
            match best {
                None => best = Some((m, q[m])),
                Some((bm, bq)) if q[m] > bq || (q[m] == bq && m < bm) => best = Some((m, q[m])),
                _ => {}
            }
        }
    }
    best.map(|(m, _)| m).unwrap_or(fast).clone()
}

// 2. select_model agrees with the brute-force evaluator.
fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut disagreements = 0;
    let total = 10_000;
    for _ in 0..total {
        let n = rng.random_range(1..=6);
        let names: Vec<ModelId> = (0..n).map(|i| ModelId::new(format!("m{i}"))).collect();
        // coarse grids make ties common
        let q: BTreeMap<ModelId, f64> = names
            .iter()
            .map(|m| (m.clone(), rng.random_range(0..=10) as f64 / 10.0))
            .collect();
        let l: BTreeMap<ModelId, f64> = names
            .iter()
            .map(|m| (m.clone(), rng.random_range(0..=20) as f64 * 50.0))
            .collect();
        let tau = [0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 1e6][rng.random_range(0..7)];
        let ds = rng.random_range(0..=5) as f64 / 10.0;
        let got = select_model(
            &ConfidenceVector::new(q.clone()),
            &l,
            &BalancerConfig::new(tau, ds).unwrap(),
        )
        .unwrap();
        if got != brute_force_select(&q, &l, tau, ds) {
            disagreements += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        disagreements == 0 && within(elapsed, 10.0),
        format!(
            "{}/{total} agree, {:.3}s (< 10s)",
            total - disagreements,
            elapsed.as_secs_f64()
        ),
    )
}

fn predictive(tau: f64, ds: f64) -> Policy {
    Policy::Predictive {
        balancer: BalancerConfig::new(tau, ds).unwrap(),
        router: RouterKind::Oracle,
        predictor: PredictorKind::Oracle,
        aging: AgingConfig::default(),
    }
}

// 3. tau = 0 picks the fastest; huge tau with zero margin picks argmax q.
fn limit_behaviors() -> Outcome {
    // Two long-lived programs that only one model each can solve keep both
    // models busy for the whole run, so no decision sees an idle model next
    // to a busy one (where a zero load limit excludes every busy model).
    let mut trace = common::default_trace(1000, 3);
    let small = "q1.5b";
    let large = "q14b";
    trace.push(common::single_stage("anchor-a", 0.0, 10_000_000, &[(small, 1), (large, 0)]));
    trace.push(common::single_stage("anchor-b", 0.0, 10_000_000, &[(small, 0), (large, 1)]));
    let mut arrivals = vec![("anchor-a".to_string(), 0.0), ("anchor-b".to_string(), 0.0)];
    arrivals.extend(trace_arrivals(&trace[..1000]));
    let pool = common::default_pool();
    let cfg = SimConfig::default();

    let zero = run(&trace, &pool, &predictive(0.0, 0.1), &arrivals, &cfg).unwrap();
    let (mut checked0, mut bad0) = (0, 0);
    for d in zero.log.decisions.iter().filter(|d| !d.used_cached_assignment) {
        let loads: Vec<f64> = d.estimated_loads.values().copied().collect();
        let distinct = loads.iter().enumerate().all(|(i, a)| loads[i + 1..].iter().all(|b| a != b));
        if !distinct {
            continue;
        }
        checked0 += 1;
        let fast = d
            .estimated_loads
            .iter()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        if &d.model != fast {
            bad0 += 1;
        }
    }

    let wide = run(&trace, &pool, &predictive(1e6, 0.0), &arrivals, &cfg).unwrap();
    let (mut checked1, mut bad1) = (0, 0);
    for d in wide.log.decisions.iter().filter(|d| !d.used_cached_assignment) {
        checked1 += 1;
        let q = d.scores.as_ref().unwrap();
        let top = q.values().copied().fold(f64::NEG_INFINITY, f64::max);
        let argmax = q.iter().find(|(_, v)| **v == top).unwrap().0;
        if &d.model != argmax {
            bad1 += 1;
        }
    }
    outcome(
        bad0 == 0 && bad1 == 0 && checked0 > 500 && checked1 > 500,
        format!(
            "tau=0: {bad0} of {checked0} distinct-load decisions off the fastest; \
             tau=1e6,ds=0: {bad1} of {checked1} decisions off argmax q"
        ),
    )
}

// 4. The strong model is kept exactly while L[strong] <= (1 + tau) L[fast].
fn fallback_threshold() -> Outcome {
    let (decode_fast, batch_fast) = (5.0, 32usize);
    let (decode_strong, batch_strong) = (20.0, 8usize);
    let tau = 0.5;
    let p_fast = 1000.0;
    let pool = Pool::new(vec![
        ModelProfile::new("fast", decode_fast, batch_fast, 0.0).unwrap(),
        ModelProfile::new("strong", decode_strong, batch_strong, 0.0).unwrap(),
    ])
    .unwrap();
    let cfg = BalancerConfig::new(tau, 0.1).unwrap();
    let l_fast = p_fast * decode_fast / batch_fast as f64;
    let crossing = (1.0 + tau) * l_fast * batch_strong as f64 / decode_strong;

    let rec = common::single_stage("probe", 0.0, 50, &[("fast", 0), ("strong", 1)]);
    let mut picks = Vec::new();
    for p_strong in 0..=200u64 {
        let mut monitor: Monitor = Monitor::new(pool.models());
        monitor
            .record_dispatch(&"fast".into(), RequestId(1_000_000), p_fast)
            .unwrap();
        if p_strong > 0 {
            monitor
                .record_dispatch(&"strong".into(), RequestId(1_000_001), p_strong as f64)
                .unwrap();
        }
        let mut req = first_stage_request(&rec, 0.0).unwrap();
        req.id = RequestId(0);
        let mut sink: Vec<(ModelId, agentsim::Request, f64)> = Vec::new();
        let d = schedule_request(
            &req,
            &rec,
            &mut monitor,
            &mut sink,
            &pool,
            &RouterKind::Oracle,
            &PredictorKind::Oracle,
            &cfg,
        )
        .unwrap();
        picks.push((p_strong, d.model));
    }
    let switches: Vec<u64> = picks
        .windows(2)
        .filter(|w| w[0].1 != w[1].1)
        .map(|w| w[1].0)
        .collect();
    let last_strong = picks.iter().rev().find(|(_, m)| m.as_str() == "strong").map(|p| p.0);
    let first_fast = picks.iter().find(|(_, m)| m.as_str() == "fast").map(|p| p.0);
    let ok = switches.len() == 1
        && last_strong.is_some_and(|p| (p as f64) <= crossing && crossing - p as f64 <= 1.0)
        && first_fast.is_some_and(|p| (p as f64) > crossing && p as f64 - crossing <= 1.0);
    outcome(
        ok,
        format!(
            "crossing P_strong = {crossing}; last strong at {last_strong:?}, first fast at {first_fast:?}, {} switch(es)",
            switches.len()
        ),
    )
}

// 5. Single engine: STJF < SJF < FCFS in mean queue time.
fn stjf_ordering() -> Outcome {
    let start = Instant::now();
    let mut cfg = dataset_preset("apps").unwrap();
    let model = ModelId::from("q1.5b");
    let (decode, batch) = (20.0, 8usize);
    let utilisation = 0.9;
    cfg.arrival_rps = utilisation * 1000.0 * batch as f64 / (cfg.length_stats[&model].mean * decode);
    let n = 20_000;
    let trace = synthesize_trace(&cfg, n, 1).unwrap();
    let pool = Pool::new(vec![ModelProfile::new("q1.5b", decode, batch, 0.0).unwrap()]).unwrap();
    let arrivals = trace_arrivals(&trace);
    let mut runs = BTreeMap::new();
    for policy in [Policy::Fcfs, Policy::Sjf, Policy::StjfOracle] {
        let r = run(&trace, &pool, &policy, &arrivals, &SimConfig::default()).unwrap();
        runs.insert(policy.name().to_string(), r);
    }
    let report = queue_time_report(&runs).unwrap();
    let q = &report.mean_queue_ms;
    let sjf_vs_fcfs = report.reduction("fcfs", "sjf").unwrap();
    let stjf_vs_sjf = report.reduction("sjf", "stjf_oracle").unwrap();
    let elapsed = start.elapsed();
    outcome(
        q["stjf_oracle"] < q["sjf"]
            && q["sjf"] < q["fcfs"]
            && sjf_vs_fcfs >= 0.20
            && stjf_vs_sjf >= 0.10
            && within(elapsed, 60.0),
        format!(
            "{n} programs at utilisation {utilisation}: queue ms fcfs {:.0}, sjf {:.0}, stjf {:.0}; \
             sjf vs fcfs -{:.1}% (>= 20%), stjf vs sjf -{:.1}% (>= 10%), {:.1}s (< 60s)",
            q["fcfs"],
            q["sjf"],
            q["stjf_oracle"],
            100.0 * sjf_vs_fcfs,
            100.0 * stjf_vs_sjf,
            elapsed.as_secs_f64()
        ),
    )
}

// 6. Rank fidelity of the length estimators.
fn kendall_tau() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for dataset in ["apps", "math"] {
        let cfg = dataset_preset(dataset).unwrap();
        let train = synthesize_trace(&cfg, 2000, 1).unwrap();
        let test = synthesize_trace(&cfg, 2000, 2).unwrap();
        let ms: Vec<ModelId> = cfg.length_stats.keys().cloned().collect();
        let rep = evaluate_predictors(&train, &test, &ms, dataset, 0.5).unwrap();
        for m in &ms {
            let oracle = rep.distance("oracle", m.as_str()).unwrap();
            let q = rep.distance("empirical_quantile", m.as_str()).unwrap();
            let input = rep.distance("input_length", m.as_str()).unwrap();
            ok &= oracle == 0.0 && q < input;
            notes.push(format!("{dataset}/{m}: oracle {oracle}, quantile {q:.3} < input {input:.3}"));
        }
    }
    let n = 10_000;
    let truth: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let mut shuffled = truth.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(606));
    let random = kendall_tau_distance(&shuffled, &truth).unwrap();
    ok &= (random - 0.5).abs() <= 0.02;
    notes.push(format!("random permutation n={n}: {random:.4} (0.5 +- 0.02)"));
    outcome(ok, notes.join("; "))
}

// 7. In-flight conservation at every snapshot, empty maps at the end, one
// model per program.
fn conservation() -> Outcome {
    let trace = common::default_trace(2000, 7);
    let train = common::default_trace(2000, 8);
    let policy = Policy::Predictive {
        balancer: BalancerConfig::default(),
        router: RouterKind::Oracle,
        predictor: PredictorKind::EmpiricalQuantile(QuantileTable::train(&train, 0.5).unwrap()),
        aging: AgingConfig::default(),
    };
    let cfg = SimConfig {
        snapshot_interval_ms: Some(250.0),
        router_latency_ms: 2.0,
        predictor_latency_ms: 1.0,
        ..SimConfig::default()
    };
    let r = run(&trace, &common::default_pool(), &policy, &trace_arrivals(&trace), &cfg).unwrap();
    let mut mismatches = 0;
    let mut live_points = 0;
    for s in &r.log.snapshots {
        for m in &s.models {
            if m.live_requests > 0 {
                live_points += 1;
            }
            if m.in_flight_sum != m.live_predicted_sum {
                mismatches += 1;
            }
        }
    }
    let last = r.log.snapshots.last().unwrap();
    let drained = last.models.iter().all(|m| m.in_flight_entries == 0 && m.in_flight_sum == 0.0 && m.live_requests == 0);
    let mut per_program: BTreeMap<&str, Vec<&ModelId>> = BTreeMap::new();
    for d in &r.log.decisions {
        per_program.entry(d.program_id.as_str()).or_default().push(&d.model);
    }
    let split_by_log = per_program.values().filter(|ms| ms.iter().any(|m| *m != ms[0])).count();
    let split_by_result = r
        .programs
        .iter()
        .filter(|p| p.stages.iter().any(|s| s.model != p.stages[0].model))
        .count();
    outcome(
        mismatches == 0 && drained && split_by_log == 0 && split_by_result == 0 && live_points > 0,
        format!(
            "{} snapshots ({live_points} non-idle model samples), {mismatches} sum mismatches, drained: {drained}, \
             programs on more than one model: {split_by_log} (log) / {split_by_result} (results)",
            r.log.snapshots.len()
        ),
    )
}

fn short(id: u64) -> Job {
    Job {
        id: RequestId(id),
        program_id: format!("s{id}"),
        stage_index: 1,
        input_tokens: 1,
        output_tokens: 1,
        predicted_tokens: 1.0,
    }
}

/// Feed a stream of one-token requests that refills every free slot at each
/// step, with `k` long requests queued at the start. Iterations happen only
/// at refill opportunities. Returns the iteration index at which each long
/// request was admitted, counted from its enqueue.
fn starvation_run(batch: usize, k: u64, aging: AgingConfig, steps: usize) -> Vec<Option<u64>> {
    let profile = ModelProfile::new("m", 1.0, batch, 0.0).unwrap();
    let mut e = Engine::new(profile, aging);
    let long_base = 1_000_000;
    for i in 0..k {
        let job = Job {
            id: RequestId(long_base + i),
            program_id: format!("long{i}"),
            stage_index: 1,
            input_tokens: 1,
            output_tokens: 20,
            predicted_tokens: 20.0,
        };
        e.enqueue(job, 1e9, 0.0, 0.0);
    }
    let mut admitted = vec![None; k as usize];
    let mut next = 0;
    for step in 0..steps {
        let t = step as f64;
        let done = e.advance_to(t);
        let fill = e.free_slots();
        for _ in 0..fill {
            e.enqueue(short(next), 1.0, t, t);
            next += 1;
        }
        if done.is_empty() && fill == 0 {
            continue;
        }
        let iteration = e.iterations() + 1;
        for id in e.scheduling_iteration(t) {
            if id.0 >= long_base {
                admitted[(id.0 - long_base) as usize] = Some(iteration);
            }
        }
    }
    admitted
}

// 8. Aging admits the long requests within the bound; without it they
// starve.
fn anti_starvation() -> Outcome {
    let batch = 4;
    let s = 4;
    let mut ok = true;
    let mut notes = Vec::new();
    for k in [1u64, 3, 6, 9] {
        let bound = s as u64 * (1 + k.div_ceil(batch as u64));
        let aged = starvation_run(batch, k, AgingConfig::new(s, 2), 400);
        let worst = aged.iter().map(|a| a.unwrap_or(u64::MAX)).max().unwrap();
        let starved = starvation_run(batch, k, AgingConfig::disabled(), 400);
        let never = starved.iter().all(|a| a.is_none_or(|i| i > bound));
        ok &= worst <= bound && never;
        notes.push(format!(
            "K={k}: worst admission at iteration {worst} (bound {bound}), without aging admitted {}",
            if never { "never within bound".to_string() } else { format!("{starved:?}") }
        ));
    }
    outcome(ok, format!("S={s}, batch={batch}; {}", notes.join("; ")))
}

// 9. Mean score does not drop as the latency slack grows.
fn slack_monotonicity() -> Outcome {
    let trace = common::default_trace(2000, 9);
    let pool = common::default_pool();
    let arrivals = trace_arrivals(&trace);
    let mut points = Vec::new();
    for tau in [0.0, 0.25, 0.5, 1.0, 2.0] {
        let r = run(&trace, &pool, &predictive(tau, 0.1), &arrivals, &SimConfig::default()).unwrap();
        let mut p = summarize(&r).unwrap();
        p.latency_slack = Some(tau);
        p.confidence_margin = Some(0.1);
        p.label = format!("predictive(tau={tau})");
        points.push(p);
    }
    let scores: Vec<f64> = points.iter().map(|p| p.mean_score).collect();
    let monotone = scores.windows(2).all(|w| w[1] >= w[0]);
    let dir = std::path::PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("slack_frontier.csv");
    write_points_csv(&frontier(&points), std::fs::File::create(&path).unwrap()).unwrap();
    write_points_csv(&points, std::fs::File::create(dir.join("slack_points.csv")).unwrap()).unwrap();
    outcome(
        monotone,
        format!(
            "scores over tau {{0,0.25,0.5,1,2}}: {:?}; frontier at {}",
            scores.iter().map(|s| format!("{s:.4}")).collect::<Vec<_>>(),
            path.display()
        ),
    )
}

// 10. Same inputs, same bytes.
fn determinism() -> Outcome {
    let trace = common::default_trace(800, 10);
    let pool = common::default_pool();
    let arrivals = trace_arrivals(&trace);
    let policy = Policy::Predictive {
        balancer: BalancerConfig::default(),
        router: RouterKind::NoisyOracle {
            flip_probability: 0.2,
            seed: 5,
        },
        predictor: PredictorKind::NoisyOracle { sigma: 0.5, seed: 5 },
        aging: AgingConfig::new(8, 2),
    };
    let cfg = SimConfig {
        seed: 10,
        snapshot_interval_ms: Some(500.0),
        router_latency_ms: 1.0,
        predictor_latency_ms: 1.0,
        ..SimConfig::default()
    };
    let bytes = |policy: &Policy| {
        let r = run(&trace, &pool, policy, &arrivals, &cfg).unwrap();
        let mut log = Vec::new();
        r.log.write_ndjson(&mut log).unwrap();
        let metrics = serde_json::to_vec(&(summarize(&r).unwrap(), &r.programs, &r.engines, &r.overhead)).unwrap();
        (log, metrics)
    };
    let mut ok = true;
    let mut sizes = Vec::new();
    for p in [policy, Policy::mlfq_default(), Policy::Sjf] {
        let (log_a, m_a) = bytes(&p);
        let (log_b, m_b) = bytes(&p);
        ok &= log_a == log_b && m_a == m_b;
        sizes.push(format!("{} log {} B / metrics {} B", p.name(), log_a.len(), m_a.len()));
    }
    outcome(ok, format!("two runs each, byte-identical: {}", sizes.join(", ")))
}

// 11. Overhead bookkeeping is exact and small.
fn overhead_accounting() -> Outcome {
    let trace = common::default_trace(2000, 11);
    let pool = common::default_pool();
    let train = common::default_trace(2000, 12);
    let policy = Policy::Predictive {
        balancer: BalancerConfig::default(),
        router: RouterKind::Oracle,
        predictor: PredictorKind::EmpiricalQuantile(QuantileTable::train(&train, 0.5).unwrap()),
        aging: AgingConfig::default(),
    };
    let cfg = SimConfig {
        router_latency_ms: 5.0,
        predictor_latency_ms: 5.0,
        ..SimConfig::default()
    };
    let r = run(&trace, &pool, &policy, &trace_arrivals(&trace), &cfg).unwrap();
    let router_calls = r.log.decisions.iter().filter(|d| !d.used_cached_assignment).count() as f64;
    let predictor_calls = r.log.decisions.len() as f64;
    let expected = 5.0 * router_calls + 5.0 * predictor_calls;
    let total_makespan: f64 = r.programs.iter().map(|p| p.makespan_ms).sum();
    let mean_makespan = total_makespan / r.programs.len() as f64;
    let per_program = r.overhead.total_ms / r.programs.len() as f64;
    let fraction = r.overhead.fraction_of_makespan;
    let exact = r.overhead.total_ms == expected && fraction == expected / total_makespan;

    let zero = run(&trace, &pool, &policy, &trace_arrivals(&trace), &SimConfig::default()).unwrap();
    let zero_ok = zero.overhead.total_ms == 0.0 && zero.overhead.fraction_of_makespan == 0.0;
    outcome(
        exact && zero_ok && fraction < 0.03,
        format!(
            "{router_calls} router + {predictor_calls} predictor calls -> {:.0} ms (bookkept {expected:.0} ms); \
             {per_program:.2} ms per program vs mean makespan {mean_makespan:.0} ms = {:.3}% (< 3%); zero-latency run overhead {}",
            r.overhead.total_ms,
            100.0 * fraction,
            zero.overhead.total_ms
        ),
    )
}

fn main() {
    type Check = (&'static str, fn() -> Outcome);
    let checks: [Check; 11] = [
        ("formula exactness", formula_exactness),
        ("selection equals brute force", oracle_equivalence),
        ("limit behaviors", limit_behaviors),
        ("fallback threshold", fallback_threshold),
        ("STJF ordering", stjf_ordering),
        ("Kendall tau", kendall_tau),
        ("conservation and assignment", conservation),
        ("anti-starvation", anti_starvation),
        ("latency-slack monotonicity", slack_monotonicity),
        ("determinism", determinism),
        ("overhead accounting", overhead_accounting),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "{} AC{} {name}: {} [{:.2}s]",
            if result.pass { "PASS" } else { "FAIL" },
            i + 1,
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
