//! Equal error rate and ROC area over detection scores.
//!
//! The ROC is built from thresholds at every distinct score plus the two
//! infinite endpoints; a pair is accepted when its score is at least the
//! threshold.

use crate::error::{KwsError, Result};

/// One ROC operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub false_accept: f64,
    pub false_reject: f64,
}

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(KwsError::invalid(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(KwsError::invalid("scores contain NaN"));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.iter().filter(|&&l| l == 0).count();
    if pos + neg != labels.len() {
        return Err(KwsError::invalid("labels must be 0 or 1"));
    }
    if pos == 0 || neg == 0 {
        return Err(KwsError::invalid("need at least one positive and one negative"));
    }
    Ok((pos, neg))
}

/// ROC points ordered from the strictest threshold (+inf) to the loosest (-inf).
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        false_accept: 0.0,
        false_reject: 1.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: s,
            false_accept: fp as f64 / neg as f64,
            false_reject: 1.0 - tp as f64 / pos as f64,
        });
    }
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        false_accept: 1.0,
        false_reject: 0.0,
    });
    Ok(points)
}

/// Equal error rate (as a fraction) and the threshold where the linearly
/// interpolated false-accept and false-reject rates cross.
pub fn compute_eer(scores: &[f64], labels: &[u8]) -> Result<(f64, f64)> {
    let roc = roc_curve(scores, labels)?;
    for w in roc.windows(2) {
        let (a, b) = (w[0], w[1]);
        let da = a.false_reject - a.false_accept;
        let db = b.false_reject - b.false_accept;
        if da > 0.0 && db <= 0.0 {
            let t = da / (da - db);
            let eer = a.false_accept + t * (b.false_accept - a.false_accept);
            let threshold = match (a.threshold.is_finite(), b.threshold.is_finite()) {
                (true, true) => a.threshold + t * (b.threshold - a.threshold),
                (false, _) => b.threshold,
                (_, false) => a.threshold,
            };
            return Ok((eer, threshold));
        }
    }
    unreachable!("the ROC starts with FRR > FAR and ends with FRR < FAR")
}

/// Area under the ROC curve (fraction) by the trapezoid rule; ties between
/// a positive and a negative contribute one half.
pub fn compute_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let roc = roc_curve(scores, labels)?;
    Ok(roc
        .windows(2)
        .map(|w| {
            let (x0, x1) = (w[0].false_accept, w[1].false_accept);
            let (y0, y1) = (1.0 - w[0].false_reject, 1.0 - w[1].false_reject);
            (x1 - x0) * (y0 + y1) / 2.0
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // counts every threshold directly and intersects each ROC segment with FAR = FRR
    fn eer_oracle(scores: &[f64], labels: &[u8]) -> f64 {
        let mut ths: Vec<f64> = scores.to_vec();
        ths.sort_by(|a, b| b.total_cmp(a));
        ths.dedup();
        let mut all = vec![f64::INFINITY];
        all.extend(ths);
        all.push(f64::NEG_INFINITY);
        let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
        let neg = labels.len() as f64 - pos;
        let pts: Vec<(f64, f64)> = all
            .iter()
            .map(|&th| {
                let fa = scores.iter().zip(labels).filter(|(s, l)| **l == 0 && **s >= th).count() as f64 / neg;
                let fr = scores.iter().zip(labels).filter(|(s, l)| **l == 1 && **s < th).count() as f64 / pos;
                (fa, fr)
            })
            .collect();
        for w in pts.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            // solve x0 + u (x1 - x0) = y0 + u (y1 - y0) for u in [0, 1]
            let denom = (x1 - x0) - (y1 - y0);
            if y0 > x0 && denom != 0.0 {
                let u = (y0 - x0) / denom;
                if (0.0..=1.0).contains(&u) {
                    return x0 + u * (x1 - x0);
                }
            }
        }
        panic!("no crossing")
    }

    fn auc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut n = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    n += 1.0;
                    wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
                }
            }
        }
        wins / n
    }

    #[test]
    fn worked_examples() {
        assert_eq!(compute_eer(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap().0, 0.0);
        assert_eq!(compute_eer(&[0.9, 0.8, 0.2, 0.1], &[0, 0, 1, 1]).unwrap().0, 1.0);
        // pos {0.9, 0.4}, neg {0.6, 0.1}: at threshold 0.6 one of two of each class is wrong
        let (eer, th) = compute_eer(&[0.9, 0.4, 0.6, 0.1], &[1, 1, 0, 0]).unwrap();
        assert!((eer - 0.5).abs() < 1e-12);
        assert_eq!(th, 0.6);
        assert_eq!(eer_oracle(&[0.9, 0.4, 0.6, 0.1], &[1, 1, 0, 0]), 0.5);

        assert_eq!(compute_auc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(compute_auc(&[0.5; 6], &[1, 0, 1, 0, 1, 0]).unwrap(), 0.5);
        assert!(compute_eer(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(compute_auc(&[0.1, 0.2], &[0, 0]).is_err());
        assert!(compute_auc(&[0.1], &[0, 1]).is_err());
    }

    #[test]
    fn random_twenty_score_instance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20);
        let scores: Vec<f64> = (0..20).map(|_| rng.random()).collect();
        let labels: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
        assert!((compute_auc(&scores, &labels).unwrap() - auc_oracle(&scores, &labels)).abs() < 1e-9);
    }

    fn scored_sets() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (10usize..300).prop_flat_map(|n| {
            (
                prop::collection::vec(prop_oneof![0.0f64..1.0, (0u8..5).prop_map(|k| k as f64 / 4.0)], n),
                prop::collection::vec(0u8..2, n),
            )
                .prop_filter("both classes", |(_, l)| l.contains(&0) && l.contains(&1))
        })
    }

    proptest! {
        #[test]
        fn metrics_match_oracles((scores, labels) in scored_sets()) {
            let (eer, _) = compute_eer(&scores, &labels).unwrap();
            prop_assert!((eer - eer_oracle(&scores, &labels)).abs() < 1e-3);
            prop_assert!((0.0..=1.0).contains(&eer));
            let auc = compute_auc(&scores, &labels).unwrap();
            prop_assert!((auc - auc_oracle(&scores, &labels)).abs() < 1e-9);
        }

        #[test]
        fn monotone_transform_invariance((scores, labels) in scored_sets()) {
            let f = |x: f64| (3.0 * x - 1.0).exp();
            let mapped: Vec<f64> = scores.iter().map(|&x| f(x)).collect();
            prop_assert_eq!(compute_auc(&scores, &labels).unwrap(), compute_auc(&mapped, &labels).unwrap());
            let (e1, t1) = compute_eer(&scores, &labels).unwrap();
            let (e2, t2) = compute_eer(&mapped, &labels).unwrap();
            prop_assert_eq!(e1, e2);
            // the crossing lies on the same ROC segment, so the thresholds
            // are bracketed by the same pair of transformed scores
            let roc = roc_curve(&scores, &labels).unwrap();
            if scores.contains(&t1) {
                prop_assert!((t2 - f(t1)).abs() <= 1e-12 * f(t1).abs().max(1.0));
            } else {
                let seg = roc.windows(2).find(|w| w[0].threshold >= t1 && t1 >= w[1].threshold).unwrap();
                let (hi, lo) = (f(seg[0].threshold), f(seg[1].threshold));
                prop_assert!(t2 <= hi + 1e-12 && t2 >= lo - 1e-12);
            }
        }
    }
}
