//! Differentiable, batched forms of the losses used by the trainer.

use candle_core::{DType, Device, Tensor};

use super::{AlignmentMatrix, PdaReduction, BCE_CLAMP};
use crate::error::{KwsError, Result};

/// Zero-padded `(batch, audio, text)` targets with matching validity mask.
pub struct PaddedTargets {
    pub targets: Tensor,
    pub mask: Tensor,
    /// 1 where the pair has an alignment target, 0 otherwise.
    pub active: Tensor,
    /// Number of valid entries per item (at least 1).
    pub counts: Tensor,
}

pub fn pad_targets(
    targets: &[Option<AlignmentMatrix>],
    audio_lens: &[usize],
    text_lens: &[usize],
    max_audio: usize,
    max_text: usize,
    dtype: DType,
    device: &Device,
) -> Result<PaddedTargets> {
    let b = targets.len();
    let mut values = vec![0f64; b * max_audio * max_text];
    let mut mask = vec![0f64; b * max_audio * max_text];
    let mut active = vec![0f64; b];
    let mut counts = vec![1f64; b];
    for (k, target) in targets.iter().enumerate() {
        let (ta, tt) = (audio_lens[k], text_lens[k]);
        counts[k] = (ta * tt) as f64;
        for i in 0..ta {
            for j in 0..tt {
                mask[(k * max_audio + i) * max_text + j] = 1.0;
            }
        }
        if let Some(t) = target {
            if t.shape() != (ta, tt) {
                return Err(KwsError::Shape(format!(
                    "target {:?} for pair with lengths ({ta}, {tt})",
                    t.shape()
                )));
            }
            active[k] = 1.0;
            for i in 0..ta {
                for j in 0..tt {
                    values[(k * max_audio + i) * max_text + j] = t.get(i, j);
                }
            }
        }
    }
    let shape = (b, max_audio, max_text);
    Ok(PaddedTargets {
        targets: Tensor::from_vec(values, shape, device)?.to_dtype(dtype)?,
        mask: Tensor::from_vec(mask, shape, device)?.to_dtype(dtype)?,
        active: Tensor::from_vec(active, b, device)?.to_dtype(dtype)?,
        counts: Tensor::from_vec(counts, b, device)?.to_dtype(dtype)?,
    })
}

/// Per-item alignment loss `(batch,)`, zero for items without a target.
pub fn pda_loss_batch(affinity: &Tensor, padded: &PaddedTargets, reduction: PdaReduction) -> Result<Tensor> {
    let diff = ((affinity - &padded.targets)? * &padded.mask)?;
    let per_item = diff.sqr()?.sum((1, 2))?;
    let per_item = match reduction {
        PdaReduction::Mean => (per_item / &padded.counts)?,
        PdaReduction::Sum => per_item,
    };
    Ok((per_item * &padded.active)?)
}

/// Per-item binary cross-entropy `(batch,)` on clamped probabilities.
pub fn detection_loss_batch(prob: &Tensor, labels: &Tensor) -> Result<Tensor> {
    let p = prob.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)?;
    let pos = (labels * p.log()?)?;
    let neg = ((1.0 - labels)? * (1.0 - &p)?.log()?)?;
    Ok((pos + neg)?.neg()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{detection_loss, pda_loss, MatrixRole};

    #[test]
    fn batched_losses_match_scalar_versions() {
        let dev = Device::Cpu;
        let a1 = AlignmentMatrix::new(3, 2, vec![0.2, 0.5, 0.3, 0.1, 0.5, 0.4], MatrixRole::Affinity).unwrap();
        let t1 = AlignmentMatrix::new(3, 2, vec![0.6, 0.2, 0.2, 0.3, 0.2, 0.5], MatrixRole::Duration).unwrap();
        let a2 = AlignmentMatrix::new(2, 1, vec![0.9, 0.1], MatrixRole::Affinity).unwrap();
        let t2 = AlignmentMatrix::new(2, 1, vec![0.5, 0.5], MatrixRole::Noise).unwrap();
        let mut aff = vec![0f64; 2 * 3 * 2];
        for i in 0..3 {
            for j in 0..2 {
                aff[i * 2 + j] = a1.get(i, j);
            }
        }
        for i in 0..2 {
            aff[6 + i * 2] = a2.get(i, 0);
        }
        // garbage in padded cells must not leak into the loss
        aff[6 + 1] = 7.0;
        let aff = Tensor::from_vec(aff, (2, 3, 2), &dev).unwrap();
        let padded = pad_targets(&[Some(t1.clone()), Some(t2.clone())], &[3, 2], &[2, 1], 3, 2, DType::F64, &dev).unwrap();
        let got = pda_loss_batch(&aff, &padded, PdaReduction::Mean).unwrap().to_vec1::<f64>().unwrap();
        assert!((got[0] - pda_loss(&a1, &t1, PdaReduction::Mean).unwrap()).abs() < 1e-12);
        assert!((got[1] - pda_loss(&a2, &t2, PdaReduction::Mean).unwrap()).abs() < 1e-12);

        let inactive = pad_targets(&[None, Some(t2)], &[3, 2], &[2, 1], 3, 2, DType::F64, &dev).unwrap();
        let got = pda_loss_batch(&aff, &inactive, PdaReduction::Sum).unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(got[0], 0.0);

        let prob = Tensor::new(&[0.8f64, 0.3, 0.0], &dev).unwrap();
        let labels = Tensor::new(&[1.0f64, 0.0, 1.0], &dev).unwrap();
        let bce = detection_loss_batch(&prob, &labels).unwrap().to_vec1::<f64>().unwrap();
        for (k, (p, y)) in [(0.8, 1u8), (0.3, 0), (0.0, 1)].into_iter().enumerate() {
            assert!((bce[k] - detection_loss(p, y)).abs() < 1e-9);
        }
    }
}
