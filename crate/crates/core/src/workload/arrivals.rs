use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{Result, WorkloadError};

/// Open-loop Poisson arrivals at a fixed rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalProcess {
    /// Programs per second.
    pub rps: f64,
    pub seed: u64,
    /// Arrivals after this time (ms) are dropped; `None` keeps all programs.
    pub horizon_ms: Option<f64>,
}

/// Assign Poisson arrival times to `programs`, in order.
///
/// Gaps are exponential with mean `1000 / rps` ms. Times are strictly
/// increasing; the sequence ends early if it passes the horizon.
pub fn generate_arrivals(
    proc: &ArrivalProcess,
    programs: &[String],
) -> Result<Vec<(String, f64)>> {
    if !(proc.rps > 0.0 && proc.rps.is_finite()) {
        return Err(WorkloadError::InvalidConfig(format!(
            "arrival rate must be positive, got {}",
            proc.rps
        )));
    }
    if programs.is_empty() {
        return Err(WorkloadError::InvalidConfig("no programs to schedule".into()));
    }
    let gap = Exp::new(proc.rps / 1000.0)
        .map_err(|e| WorkloadError::InvalidConfig(format!("arrival rate: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(proc.seed);
    let mut t = 0.0f64;
    let mut out = Vec::with_capacity(programs.len());
    for p in programs {
        let next = t + gap.sample(&mut rng);
        t = if next > t { next } else { t.next_up() };
        if proc.horizon_ms.is_some_and(|h| t > h) {
            break;
        }
        out.push((p.clone(), t));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn mean_gap_matches_rate() {
        let proc = ArrivalProcess {
            rps: 1000.0,
            seed: 9,
            horizon_ms: None,
        };
        let arr = generate_arrivals(&proc, &ids(100_000)).unwrap();
        let mean_gap = arr.last().unwrap().1 / arr.len() as f64;
        assert!((mean_gap - 1.0).abs() < 0.03, "mean gap {mean_gap}");
        assert!(arr.windows(2).all(|w| w[1].1 > w[0].1));
    }

    #[test]
    fn same_seed_same_sequence() {
        let proc = ArrivalProcess {
            rps: 8.0,
            seed: 3,
            horizon_ms: None,
        };
        let a = generate_arrivals(&proc, &ids(50)).unwrap();
        assert_eq!(a, generate_arrivals(&proc, &ids(50)).unwrap());
        let other = ArrivalProcess { seed: 4, ..proc };
        assert_ne!(a, generate_arrivals(&other, &ids(50)).unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        let proc = ArrivalProcess {
            rps: 0.0,
            seed: 1,
            horizon_ms: None,
        };
        assert!(generate_arrivals(&proc, &ids(3)).is_err());
        let proc = ArrivalProcess { rps: 1.0, ..proc };
        assert!(generate_arrivals(&proc, &[]).is_err());
    }

    #[test]
    fn horizon_truncates() {
        let proc = ArrivalProcess {
            rps: 10.0,
            seed: 1,
            horizon_ms: Some(1000.0),
        };
        let arr = generate_arrivals(&proc, &ids(1000)).unwrap();
        assert!(arr.len() < 1000);
        assert!(arr.iter().all(|(_, t)| *t <= 1000.0));
    }
}
