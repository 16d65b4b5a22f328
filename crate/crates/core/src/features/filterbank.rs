use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::wav::Waveform;
use crate::error::{KwsError, Result};

/// Number of mel channels produced by the front-end.
pub const N_MELS: usize = 80;

/// Floor applied to filterbank energies before the log.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterbankConfig {
    pub window_ms: u32,
    pub shift_ms: u32,
    pub n_mels: usize,
    /// Per-utterance mean/variance normalization of each channel.
    pub normalize: bool,
}

impl Default for FilterbankConfig {
    fn default() -> Self {
        Self {
            window_ms: 25,
            shift_ms: 10,
            n_mels: N_MELS,
            normalize: false,
        }
    }
}

/// Frame-level log filterbank features, row-major `n_frames x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_frames: usize,
    dim: usize,
    values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(n_frames: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if n_frames == 0 {
            return Err(KwsError::invalid("feature matrix needs at least one frame"));
        }
        if values.len() != n_frames * dim {
            return Err(KwsError::Shape(format!(
                "feature buffer has {} values, expected {n_frames}x{dim}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(KwsError::invalid(format!(
                "non-finite feature value at flat index {bad}"
            )));
        }
        Ok(Self {
            n_frames,
            dim,
            values,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// Precomputed window, FFT plan and triangular mel weights for one sample rate.
pub struct Filterbank {
    cfg: FilterbankConfig,
    window_len: usize,
    shift: usize,
    n_fft: usize,
    window: Vec<f64>,
    // n_mels x (n_fft/2 + 1)
    mel_weights: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

impl Filterbank {
    pub fn new(cfg: FilterbankConfig, sample_rate: u32) -> Result<Self> {
        if sample_rate != 8000 && sample_rate != 16000 {
            return Err(KwsError::invalid(format!(
                "unsupported sample rate {sample_rate} Hz (expected 8000 or 16000)"
            )));
        }
        if cfg.n_mels == 0 || cfg.window_ms == 0 || cfg.shift_ms == 0 {
            return Err(KwsError::invalid("filterbank sizes must be positive"));
        }
        let sr = sample_rate as usize;
        let window_len = sr * cfg.window_ms as usize / 1000;
        let shift = sr * cfg.shift_ms as usize / 1000;
        let n_fft = window_len.next_power_of_two();
        let n_bins = n_fft / 2 + 1;

        let window = (0..window_len)
            .map(|n| {
                0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / window_len as f64).cos()
            })
            .collect();

        let mel_lo = hz_to_mel(0.0);
        let mel_hi = hz_to_mel(sample_rate as f64 / 2.0);
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|m| mel_lo + (mel_hi - mel_lo) * m as f64 / (cfg.n_mels + 1) as f64)
            .collect();
        let mut mel_weights = vec![0.0; cfg.n_mels * n_bins];
        for m in 0..cfg.n_mels {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..n_bins {
                let mel = hz_to_mel(k as f64 * sample_rate as f64 / n_fft as f64);
                let w = if mel > left && mel <= center {
                    (mel - left) / (center - left)
                } else if mel > center && mel < right {
                    (right - mel) / (right - center)
                } else {
                    0.0
                };
                mel_weights[m * n_bins + k] = w;
            }
        }

        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(Self {
            cfg,
            window_len,
            shift,
            n_fft,
            window,
            mel_weights,
            fft,
        })
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn shift(&self) -> usize {
        self.shift
    }

    /// Number of frames for a signal of `len` samples, or `None` if shorter than a window.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        (len >= self.window_len).then(|| (len - self.window_len) / self.shift + 1)
    }

    pub fn compute(&self, samples: &[f32]) -> Result<FeatureMatrix> {
        let n_frames = self.frame_count(samples.len()).ok_or_else(|| {
            KwsError::invalid(format!(
                "waveform of {} samples is shorter than one {}-sample window",
                samples.len(),
                self.window_len
            ))
        })?;
        let n_bins = self.n_fft / 2 + 1;
        let n_mels = self.cfg.n_mels;
        let mut out = vec![0f32; n_frames * n_mels];
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut power = vec![0.0f64; n_bins];

        for t in 0..n_frames {
            let start = t * self.shift;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = if i < self.window_len {
                    let s = samples[start + i] as f64;
                    let s = if s.is_finite() { s } else { 0.0 };
                    Complex::new(s * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for m in 0..n_mels {
                let weights = &self.mel_weights[m * n_bins..(m + 1) * n_bins];
                let energy: f64 = weights.iter().zip(&power).map(|(w, p)| w * p).sum();
                out[t * n_mels + m] = energy.max(LOG_FLOOR).ln() as f32;
            }
        }

        if self.cfg.normalize {
            normalize_channels(&mut out, n_frames, n_mels);
        }
        FeatureMatrix::new(n_frames, n_mels, out)
    }
}

fn normalize_channels(values: &mut [f32], n_frames: usize, dim: usize) {
    for c in 0..dim {
        let mean = (0..n_frames).map(|t| values[t * dim + c] as f64).sum::<f64>() / n_frames as f64;
        let var = (0..n_frames)
            .map(|t| (values[t * dim + c] as f64 - mean).powi(2))
            .sum::<f64>()
            / n_frames as f64;
        let std = var.sqrt().max(1e-5);
        for t in 0..n_frames {
            let v = &mut values[t * dim + c];
            *v = ((*v as f64 - mean) / std) as f32;
        }
    }
}

/// Log mel filterbank with the default 80-channel / 25 ms / 10 ms configuration.
pub fn compute_filterbank(w: &Waveform) -> Result<FeatureMatrix> {
    Filterbank::new(FilterbankConfig::default(), w.sample_rate)?.compute(&w.samples)
}
