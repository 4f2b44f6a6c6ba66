use std::cmp::Ordering;

use super::PredictorError;

/// Fraction of item pairs the prediction orders differently from the truth.
///
/// A pair tied on exactly one side counts as half discordant; a pair tied on
/// both sides counts as concordant. Runs in O(n log n).
pub fn kendall_tau_distance(predicted: &[f64], truth: &[f64]) -> Result<f64, PredictorError> {
    if predicted.len() != truth.len() {
        return Err(PredictorError::LengthMismatch {
            predicted: predicted.len(),
            truth: truth.len(),
        });
    }
    let n = predicted.len();
    if n < 2 {
        return Err(PredictorError::TooFewItems(n));
    }

    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        truth[a]
            .total_cmp(&truth[b])
            .then(predicted[a].total_cmp(&predicted[b]))
    });

    let tied_truth = tied_pairs(&idx, |a, b| truth[a].total_cmp(&truth[b]) == Ordering::Equal);
    let tied_both = tied_pairs(&idx, |a, b| {
        truth[a].total_cmp(&truth[b]) == Ordering::Equal
            && predicted[a].total_cmp(&predicted[b]) == Ordering::Equal
    });

    let mut seq: Vec<f64> = idx.iter().map(|&i| predicted[i]).collect();
    let mut buf = vec![0.0; n];
    let discordant = merge_count(&mut seq, &mut buf);
    // seq is now sorted by prediction
    let tied_pred = tied_pairs(&(0..n).collect::<Vec<_>>(), |a, b| {
        seq[a].total_cmp(&seq[b]) == Ordering::Equal
    });

    let total = (n as u64) * (n as u64 - 1) / 2;
    let half = (tied_truth - tied_both) + (tied_pred - tied_both);
    Ok((discordant as f64 + 0.5 * half as f64) / total as f64)
}

/// Pairs within runs of consecutive equal elements of an ordering.
fn tied_pairs(order: &[usize], eq: impl Fn(usize, usize) -> bool) -> u64 {
    let mut pairs = 0u64;
    let mut run = 1u64;
    for w in order.windows(2) {
        if eq(w[0], w[1]) {
            run += 1;
        } else {
            pairs += run * (run - 1) / 2;
            run = 1;
        }
    }
    pairs + run * (run - 1) / 2
}

/// Stable merge sort returning the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(l, bl) + merge_count(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j].total_cmp(&v[i]) == Ordering::Less {
            buf[k] = v[j];
            count += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    let k2 = k + mid - i;
    buf[k2..n].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    /// O(n^2) pair enumeration, independent of the merge-sort path.
    fn brute(p: &[f64], t: &[f64]) -> f64 {
        let n = p.len();
        let mut acc = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dp = p[i].partial_cmp(&p[j]).unwrap();
                let dt = t[i].partial_cmp(&t[j]).unwrap();
                acc += match (dp, dt) {
                    (Ordering::Equal, Ordering::Equal) => 0.0,
                    (Ordering::Equal, _) | (_, Ordering::Equal) => 0.5,
                    (a, b) if a == b => 0.0,
                    _ => 1.0,
                };
            }
        }
        acc / (n * (n - 1) / 2) as f64
    }

    #[test]
    fn identical_and_reversed() {
        let t: Vec<f64> = (0..50).map(f64::from).collect();
        assert_eq!(kendall_tau_distance(&t, &t).unwrap(), 0.0);
        let r: Vec<f64> = t.iter().rev().copied().collect();
        assert_eq!(kendall_tau_distance(&r, &t).unwrap(), 1.0);
        // monotone transform keeps the ordering
        let sq: Vec<f64> = t.iter().map(|x| x * x + 3.0).collect();
        assert_eq!(kendall_tau_distance(&sq, &t).unwrap(), 0.0);
    }

    #[test]
    fn ties_count_half() {
        assert_eq!(kendall_tau_distance(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), 0.5);
        assert_eq!(kendall_tau_distance(&[1.0, 1.0], &[3.0, 3.0]).unwrap(), 0.0);
        assert_eq!(kendall_tau_distance(&[1.0, 2.0], &[3.0, 3.0]).unwrap(), 0.5);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            kendall_tau_distance(&[1.0, 2.0], &[1.0]),
            Err(PredictorError::LengthMismatch { .. })
        ));
        assert!(matches!(
            kendall_tau_distance(&[1.0], &[1.0]),
            Err(PredictorError::TooFewItems(1))
        ));
    }

    #[test]
    fn random_permutation_is_near_half() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let t: Vec<f64> = (0..10_000).map(f64::from).collect();
        let mut p = t.clone();
        p.shuffle(&mut rng);
        let d = kendall_tau_distance(&p, &t).unwrap();
        assert!((d - 0.5).abs() < 0.02, "{d}");
    }

    proptest! {
        #[test]
        fn matches_pair_enumeration(
            pairs in proptest::collection::vec((0u8..6, 0u8..6), 2..60)
        ) {
            let p: Vec<f64> = pairs.iter().map(|x| f64::from(x.0)).collect();
            let t: Vec<f64> = pairs.iter().map(|x| f64::from(x.1)).collect();
            let fast = kendall_tau_distance(&p, &t).unwrap();
            prop_assert!((fast - brute(&p, &t)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&fast));
        }
    }
}
