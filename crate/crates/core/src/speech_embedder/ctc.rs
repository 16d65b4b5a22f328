//! Connectionist temporal classification loss with its exact gradient with
//! respect to the unnormalized frame scores, computed in f64 log space.

use crate::error::{KwsError, Result};
use crate::features::BLANK_ID;

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn log_softmax_rows(logits: &[f32], t: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0f64; t * p];
    for i in 0..t {
        let row = &logits[i * p..(i + 1) * p];
        let m = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x as f64));
        let lse = m + row.iter().map(|&x| (x as f64 - m).exp()).sum::<f64>().ln();
        for k in 0..p {
            out[i * p + k] = row[k] as f64 - lse;
        }
    }
    out
}

/// Minimum number of frames needed to emit `target`.
pub fn min_frames(target: &[u32]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Negative log-likelihood of `target` under `t x p` frame scores, and its
/// gradient with respect to those scores.
pub fn ctc_loss_and_grad(logits: &[f32], t: usize, p: usize, target: &[u32]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != t * p || t == 0 {
        return Err(KwsError::Shape(format!("{} scores for {t} frames x {p} classes", logits.len())));
    }
    if target.is_empty() || target.iter().any(|&l| l == BLANK_ID || l as usize >= p) {
        return Err(KwsError::invalid(format!("bad CTC target {target:?}")));
    }
    if min_frames(target) > t {
        return Err(KwsError::invalid(format!(
            "target of {} labels needs {} frames, only {t} available",
            target.len(),
            min_frames(target)
        )));
    }
    let lp = log_softmax_rows(logits, t, p);
    let s = 2 * target.len() + 1;
    let label = |j: usize| if j % 2 == 0 { BLANK_ID } else { target[j / 2] };
    let skip_ok = |j: usize| j % 2 == 1 && j >= 2 && label(j) != label(j - 2);
    let neg = f64::NEG_INFINITY;

    let mut alpha = vec![neg; t * s];
    alpha[0] = lp[label(0) as usize];
    alpha[1] = lp[label(1) as usize];
    for i in 1..t {
        for j in 0..s {
            let mut a = alpha[(i - 1) * s + j];
            if j >= 1 {
                a = log_add(a, alpha[(i - 1) * s + j - 1]);
            }
            if skip_ok(j) {
                a = log_add(a, alpha[(i - 1) * s + j - 2]);
            }
            alpha[i * s + j] = if a == neg { neg } else { a + lp[i * p + label(j) as usize] };
        }
    }
    let mut beta = vec![neg; t * s];
    beta[(t - 1) * s + s - 1] = lp[(t - 1) * p + label(s - 1) as usize];
    beta[(t - 1) * s + s - 2] = lp[(t - 1) * p + label(s - 2) as usize];
    for i in (0..t - 1).rev() {
        for j in 0..s {
            let mut b = beta[(i + 1) * s + j];
            if j + 1 < s {
                b = log_add(b, beta[(i + 1) * s + j + 1]);
            }
            if j + 2 < s && skip_ok(j + 2) {
                b = log_add(b, beta[(i + 1) * s + j + 2]);
            }
            beta[i * s + j] = if b == neg { neg } else { b + lp[i * p + label(j) as usize] };
        }
    }
    let log_lik = log_add(alpha[(t - 1) * s + s - 1], alpha[(t - 1) * s + s - 2]);
    if !log_lik.is_finite() {
        return Err(KwsError::invalid("CTC likelihood is zero or not finite"));
    }

    // d(-log p)/d z_{i,k} = softmax_{i,k} - sum_{j: label(j)=k} alpha*beta / (p * y_{i,k})
    let mut grad = vec![0f64; t * p];
    for i in 0..t {
        let mut occ = vec![neg; p];
        for j in 0..s {
            let ab = alpha[i * s + j] + beta[i * s + j];
            let k = label(j) as usize;
            occ[k] = log_add(occ[k], ab);
        }
        for k in 0..p {
            let y = lp[i * p + k];
            let post = if occ[k] == neg { 0.0 } else { (occ[k] - y - log_lik).exp() };
            grad[i * p + k] = y.exp() - post;
        }
    }
    Ok((-log_lik, grad))
}
