//! Small differentiable building blocks on top of candle tensors.
//!
//! Everything is channel-last, `(batch, time, channels)`. Convolutions are
//! expressed with narrow/reshape/matmul so that every layer has a backward
//! pass, and padded time steps beyond each item's valid length are zeroed
//! between layers so that batched and single-item evaluation agree.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{KwsError, Result};

mod activation;
mod recurrence;

/// Named trainable parameters with a seeded initializer.
///
/// Cloning shares the underlying store; `pp` returns a view with a longer
/// name prefix.
#[derive(Clone)]
pub struct ParamStore {
    inner: Arc<Mutex<StoreInner>>,
    prefix: String,
    dtype: DType,
    device: Device,
}

struct StoreInner {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: Device) -> Self {
        Self {
            inner: Arc::new(Mutex::new(StoreInner {
                vars: BTreeMap::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
            })),
            prefix: String::new(),
            dtype,
            device,
        }
    }

    pub fn pp(&self, name: &str) -> Self {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Self {
            inner: self.inner.clone(),
            prefix,
            dtype: self.dtype,
            device: self.device.clone(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    fn create(&self, name: &str, shape: &[usize], mut init: impl FnMut(&mut ChaCha8Rng) -> f64) -> Result<Tensor> {
        let full = self.full_name(name);
        let mut inner = self.inner.lock().expect("param store poisoned");
        if inner.vars.contains_key(&full) {
            return Err(KwsError::invalid(format!("parameter {full} defined twice")));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n).map(|_| init(&mut inner.rng)).collect();
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        inner.vars.insert(full, var);
        Ok(out)
    }

    pub fn uniform(&self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        self.create(name, shape, |rng| rng.random_range(-bound..bound))
    }

    pub fn constant(&self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        self.create(name, shape, |_| value)
    }

    pub fn normal(&self, name: &str, shape: &[usize], std: f64) -> Result<Tensor> {
        use rand_distr::{Distribution, StandardNormal};
        self.create(name, shape, |rng| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
    }

    /// All parameters in name order (including ones created through other views).
    pub fn vars(&self) -> Vec<(String, Var)> {
        let inner = self.inner.lock().expect("param store poisoned");
        inner.vars.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn var(&self, name: &str) -> Option<Var> {
        self.inner.lock().expect("param store poisoned").vars.get(name).cloned()
    }

    pub fn num_parameters(&self) -> usize {
        self.vars().iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Overwrites parameters by name from a flat f32 buffer per tensor.
    pub fn load(&self, tensors: &BTreeMap<String, (Vec<usize>, Vec<f32>)>) -> Result<()> {
        let inner = self.inner.lock().expect("param store poisoned");
        for (name, var) in &inner.vars {
            let (shape, data) = tensors
                .get(name)
                .ok_or_else(|| KwsError::Checkpoint(format!("missing tensor {name}")))?;
            if shape.as_slice() != var.dims() {
                return Err(KwsError::Checkpoint(format!(
                    "tensor {name} has shape {shape:?}, model expects {:?}",
                    var.dims()
                )));
            }
            let t = Tensor::from_slice(data, shape.as_slice(), &self.device)?.to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        Ok(())
    }

    pub fn export(&self) -> Result<BTreeMap<String, (Vec<usize>, Vec<f32>)>> {
        let mut out = BTreeMap::new();
        for (name, var) in self.vars() {
            let shape = var.dims().to_vec();
            let data = var.as_tensor().to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
            out.insert(name, (shape, data));
        }
        Ok(out)
    }
}

/// Dense layer with weight stored as `(in, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(ps: &ParamStore, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = ps.uniform("weight", &[in_dim, out_dim], bound)?;
        let bias = if bias {
            Some(ps.uniform("bias", &[out_dim], bound)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn from_tensors(weight: Tensor, bias: Option<Tensor>) -> Self {
        Self { weight, bias }
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let in_dim = *dims.last().ok_or_else(|| KwsError::Shape("scalar input to linear".into()))?;
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let y = x.reshape((rows, in_dim))?.matmul(&self.weight)?;
        let y = match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        };
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.out_dim();
        Ok(y.reshape(out_dims)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(ps: &ParamStore, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: ps.constant("gamma", &[dim], 1.0)?,
            beta: ps.constant("beta", &[dim], 0.0)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dim = x.dim(D::Minus1)? as f64;
        let mean = (x.sum_keepdim(D::Minus1)? / dim)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = (centered.sqr()?.sum_keepdim(D::Minus1)? / dim)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(activation::SigmoidOp)?)
}

/// Numerically stable softmax over the last axis. The subtracted row max is
/// detached; softmax is invariant to it.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

/// Output length of a strided convolution.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    (len + 2 * padding >= kernel).then(|| (len + 2 * padding - kernel) / stride + 1)
}

/// Output length of a transposed convolution.
pub fn conv_transpose_out_len(len: usize, kernel: usize, stride: usize, padding: usize, output_padding: usize) -> usize {
    ((len - 1) * stride + kernel + output_padding).saturating_sub(2 * padding)
}

/// 1-D convolution, weight stored as `(kernel * in, out)` with tap-major rows.
#[derive(Debug, Clone)]
pub struct Conv1d {
    proj: Linear,
    kernel: usize,
    stride: usize,
    padding: usize,
}

impl Conv1d {
    pub fn new(ps: &ParamStore, in_dim: usize, out_dim: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        Ok(Self {
            proj: Linear::new(ps, kernel * in_dim, out_dim, true)?,
            kernel,
            stride,
            padding,
        })
    }

    pub fn out_len(&self, len: usize) -> Option<usize> {
        conv_out_len(len, self.kernel, self.stride, self.padding)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, c) = x.dims3()?;
        let out_len = self.out_len(t).ok_or_else(|| {
            KwsError::invalid(format!("sequence of {t} frames shorter than kernel {}", self.kernel))
        })?;
        let s = self.stride;
        // right padding so every tap can take `s * out_len` frames
        let needed = self.kernel - 1 + s * out_len;
        let right = needed.saturating_sub(t + self.padding);
        let xp = x.pad_with_zeros(1, self.padding, right)?;
        let mut taps = Vec::with_capacity(self.kernel);
        for j in 0..self.kernel {
            let tap = if s == 1 {
                xp.narrow(1, j, out_len)?
            } else {
                xp.narrow(1, j, s * out_len)?
                    .reshape((b, out_len, s, c))?
                    .narrow(2, 0, 1)?
                    .squeeze(2)?
            };
            taps.push(tap);
        }
        let cols = Tensor::cat(&taps, 2)?;
        self.proj.forward(&cols)
    }
}

/// Depthwise convolution with "same" padding and stride 1.
#[derive(Debug, Clone)]
pub struct DepthwiseConv1d {
    weight: Tensor, // (kernel, channels)
    bias: Tensor,
    kernel: usize,
}

impl DepthwiseConv1d {
    pub fn new(ps: &ParamStore, channels: usize, kernel: usize) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(KwsError::invalid("depthwise kernel must be odd"));
        }
        let bound = 1.0 / (kernel as f64).sqrt();
        Ok(Self {
            weight: ps.uniform("weight", &[kernel, channels], bound)?,
            bias: ps.uniform("bias", &[channels], bound)?,
            kernel,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let t = x.dim(1)?;
        let half = self.kernel / 2;
        let xp = x.pad_with_zeros(1, half, half)?;
        let mut acc: Option<Tensor> = None;
        for j in 0..self.kernel {
            let w = self.weight.get(j)?;
            let term = xp.narrow(1, j, t)?.broadcast_mul(&w)?;
            acc = Some(match acc {
                Some(a) => (a + term)?,
                None => term,
            });
        }
        Ok(acc.expect("kernel is non-empty").broadcast_add(&self.bias)?)
    }
}

/// 1-D transposed convolution; weight `(in, kernel * out)`.
#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    weight: Tensor,
    bias: Tensor,
    out_dim: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
}

impl ConvTranspose1d {
    pub fn new(
        ps: &ParamStore,
        in_dim: usize,
        out_dim: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Self> {
        if output_padding >= stride {
            return Err(KwsError::invalid("output padding must be smaller than stride"));
        }
        let groups = kernel.div_ceil(stride);
        if kernel - padding + output_padding > groups * stride {
            return Err(KwsError::invalid("transposed conv padding leaves no room to crop"));
        }
        let bound = 1.0 / ((in_dim * kernel) as f64 / stride as f64).sqrt();
        Ok(Self {
            weight: ps.uniform("weight", &[in_dim, kernel * out_dim], bound)?,
            bias: ps.uniform("bias", &[out_dim], bound)?,
            out_dim,
            kernel,
            stride,
            padding,
            output_padding,
        })
    }

    pub fn out_len(&self, len: usize) -> usize {
        conv_transpose_out_len(len, self.kernel, self.stride, self.padding, self.output_padding)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, l, c) = x.dims3()?;
        let s = self.stride;
        let groups = self.kernel.div_ceil(s);
        let z = x.reshape((b * l, c))?.matmul(&self.weight)?;
        // taps padded up to a whole number of stride blocks
        let z = z.pad_with_zeros(1, 0, (groups * s - self.kernel) * self.out_dim)?;
        let z = z.reshape((b, l, groups, s * self.out_dim))?;
        let mut acc: Option<Tensor> = None;
        for q in 0..groups {
            let block = z.narrow(2, q, 1)?.squeeze(2)?.pad_with_zeros(1, q, groups - 1 - q)?;
            acc = Some(match acc {
                Some(a) => (a + block)?,
                None => block,
            });
        }
        let full = acc
            .expect("at least one tap group")
            .reshape((b, (l + groups - 1) * s, self.out_dim))?;
        let y = full.narrow(1, self.padding, self.out_len(l))?;
        Ok(y.broadcast_add(&self.bias)?)
    }
}

/// Single-layer unidirectional GRU (PyTorch gate layout r, z, n).
#[derive(Debug, Clone)]
pub struct Gru {
    input: Linear,
    hidden: Linear,
    hidden_dim: usize,
}

impl Gru {
    pub fn new(ps: &ParamStore, in_dim: usize, hidden_dim: usize) -> Result<Self> {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let input = Linear::from_tensors(
            ps.uniform("w_ih", &[in_dim, 3 * hidden_dim], bound)?,
            Some(ps.uniform("b_ih", &[3 * hidden_dim], bound)?),
        );
        let hidden = Linear::from_tensors(
            ps.uniform("w_hh", &[hidden_dim, 3 * hidden_dim], bound)?,
            Some(ps.uniform("b_hh", &[3 * hidden_dim], bound)?),
        );
        Ok(Self {
            input,
            hidden,
            hidden_dim,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// Returns the hidden state at every step, `(batch, time, hidden)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let gi = self.input.forward(x)?.contiguous()?;
        let bias = self.hidden.bias.as_ref().expect("gru hidden bias");
        let out = gi.apply_op3(&self.hidden.weight.contiguous()?, bias, recurrence::GruRecurrence)?;
        Ok(out.narrow(2, 0, self.hidden_dim)?)
    }

    /// Step-by-step graph version of [`Gru::forward`].
    pub fn forward_unrolled(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        let h_dim = self.hidden_dim;
        let gi = self.input.forward(x)?;
        let mut h = Tensor::zeros((b, h_dim), x.dtype(), x.device())?;
        let mut outs = Vec::with_capacity(t);
        for step in 0..t {
            let gi_t = gi.narrow(1, step, 1)?.squeeze(1)?;
            let gh = self.hidden.forward(&h)?;
            let r = sigmoid(&(gi_t.narrow(1, 0, h_dim)? + gh.narrow(1, 0, h_dim)?)?)?;
            let z = sigmoid(&(gi_t.narrow(1, h_dim, h_dim)? + gh.narrow(1, h_dim, h_dim)?)?)?;
            let n = (gi_t.narrow(1, 2 * h_dim, h_dim)? + (r * gh.narrow(1, 2 * h_dim, h_dim)?)?)?.tanh()?;
            // h' = n + z * (h - n)
            h = (&n + (z * (h - &n)?)?)?;
            outs.push(h.clone());
        }
        Ok(Tensor::stack(&outs, 1)?)
    }
}

/// `(batch, max_len, 1)` mask with ones on valid steps.
pub fn length_mask(lengths: &[usize], max_len: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut m = vec![0f32; lengths.len() * max_len];
    for (i, &len) in lengths.iter().enumerate() {
        for t in 0..len.min(max_len) {
            m[i * max_len + t] = 1.0;
        }
    }
    Ok(Tensor::from_vec(m, (lengths.len(), max_len, 1), device)?.to_dtype(dtype)?)
}

/// Additive mask: 0 on valid steps, a large negative value on padding.
pub fn additive_mask(lengths: &[usize], max_len: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let ones = length_mask(lengths, max_len, dtype, device)?;
    Ok(((ones - 1.0)? * 1e9)?)
}

/// Debug-build guard against NaN/Inf leaking out of a layer.
pub fn debug_check_finite(x: &Tensor, what: &str) -> Result<()> {
    if cfg!(debug_assertions) {
        let s = x.abs()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !s.is_finite() {
            return Err(KwsError::invalid(format!("non-finite activations after {what}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        ParamStore::new(7, DType::F64, Device::Cpu)
    }

    fn randn(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    fn to3(t: &Tensor) -> Vec<Vec<Vec<f64>>> {
        t.to_vec3::<f64>().unwrap()
    }

    // direct loop evaluation of a convolution with the tap-major weight layout
    fn conv_oracle(x: &[Vec<f64>], w: &[Vec<f64>], bias: &[f64], k: usize, s: usize, p: usize) -> Vec<Vec<f64>> {
        let t = x.len();
        let c = x[0].len();
        let out_len = (t + 2 * p - k) / s + 1;
        (0..out_len)
            .map(|o| {
                (0..bias.len())
                    .map(|co| {
                        let mut acc = bias[co];
                        for j in 0..k {
                            let src = (o * s + j) as isize - p as isize;
                            if src < 0 || src as usize >= t {
                                continue;
                            }
                            for ci in 0..c {
                                acc += x[src as usize][ci] * w[j * c + ci][co];
                            }
                        }
                        acc
                    })
                    .collect()
            })
            .collect()
    }

    fn conv_transpose_oracle(x: &[Vec<f64>], w: &[Vec<f64>], bias: &[f64], k: usize, s: usize, p: usize, op: usize) -> Vec<Vec<f64>> {
        let l = x.len();
        let cout = bias.len();
        let out_len = (l - 1) * s + k + op - 2 * p;
        let mut y = vec![bias.to_vec(); out_len];
        for (t, row) in x.iter().enumerate() {
            for j in 0..k {
                let o = (t * s + j) as isize - p as isize;
                if o < 0 || o as usize >= out_len {
                    continue;
                }
                for co in 0..cout {
                    for (ci, xv) in row.iter().enumerate() {
                        y[o as usize][co] += xv * w[ci][j * cout + co];
                    }
                }
            }
        }
        y
    }

    #[test]
    fn strided_conv_matches_loop_oracle() {
        for (t, k, s, p) in [(9, 3, 2, 1), (10, 3, 2, 1), (7, 3, 1, 1), (5, 5, 1, 0)] {
            let ps = store();
            let conv = Conv1d::new(&ps, 3, 4, k, s, p).unwrap();
            let x = randn(&[1, t, 3], t as u64);
            let y = conv.forward(&x).unwrap();
            let w = conv.proj.weight.to_vec2::<f64>().unwrap();
            let b = conv.proj.bias.as_ref().unwrap().to_vec1::<f64>().unwrap();
            let expected = conv_oracle(&to3(&x)[0], &w, &b, k, s, p);
            let got = &to3(&y)[0];
            assert_eq!(got.len(), expected.len());
            for (g, e) in got.iter().flatten().zip(expected.iter().flatten()) {
                assert!((g - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_conv_matches_loop_oracle() {
        for (l, k, s, p, op) in [(6, 5, 4, 1, 1), (5, 3, 2, 1, 1), (4, 3, 2, 0, 0), (3, 4, 2, 1, 0)] {
            let ps = store();
            let tc = ConvTranspose1d::new(&ps, 3, 2, k, s, p, op).unwrap();
            let x = randn(&[1, l, 3], l as u64 + 11);
            let y = tc.forward(&x).unwrap();
            let w = tc.weight.to_vec2::<f64>().unwrap();
            let b = tc.bias.to_vec1::<f64>().unwrap();
            let expected = conv_transpose_oracle(&to3(&x)[0], &w, &b, k, s, p, op);
            let got = &to3(&y)[0];
            assert_eq!(got.len(), expected.len(), "l={l} k={k} s={s}");
            for (g, e) in got.iter().flatten().zip(expected.iter().flatten()) {
                assert!((g - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn depthwise_conv_matches_loop() {
        let ps = store();
        let dw = DepthwiseConv1d::new(&ps, 2, 3).unwrap();
        let x = randn(&[1, 5, 2], 3);
        let y = to3(&dw.forward(&x).unwrap());
        let xv = to3(&x);
        let w = dw.weight.to_vec2::<f64>().unwrap();
        let b = dw.bias.to_vec1::<f64>().unwrap();
        for t in 0..5 {
            for c in 0..2 {
                let mut acc = b[c];
                for j in 0..3 {
                    let src = t as isize + j as isize - 1;
                    if (0..5).contains(&src) {
                        acc += xv[0][src as usize][c] * w[j][c];
                    }
                }
                assert!((y[0][t][c] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gru_step_matches_scalar_equations() {
        let ps = store();
        let gru = Gru::new(&ps, 2, 3).unwrap();
        let x = randn(&[1, 2, 2], 5);
        let y = to3(&gru.forward(&x).unwrap());
        let wi = gru.input.weight.to_vec2::<f64>().unwrap();
        let bi = gru.input.bias.as_ref().unwrap().to_vec1::<f64>().unwrap();
        let wh = gru.hidden.weight.to_vec2::<f64>().unwrap();
        let bh = gru.hidden.bias.as_ref().unwrap().to_vec1::<f64>().unwrap();
        let xv = to3(&x);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h = vec![0.0; 3];
        for t in 0..2 {
            let gi: Vec<f64> = (0..9).map(|g| bi[g] + (0..2).map(|i| xv[0][t][i] * wi[i][g]).sum::<f64>()).collect();
            let gh: Vec<f64> = (0..9).map(|g| bh[g] + (0..3).map(|i| h[i] * wh[i][g]).sum::<f64>()).collect();
            let next: Vec<f64> = (0..3)
                .map(|j| {
                    let r = sig(gi[j] + gh[j]);
                    let z = sig(gi[3 + j] + gh[3 + j]);
                    let n = (gi[6 + j] + r * gh[6 + j]).tanh();
                    (1.0 - z) * n + z * h[j]
                })
                .collect();
            h = next;
            for j in 0..3 {
                assert!((y[0][t][j] - h[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gru_custom_op_matches_unrolled_graph() {
        let ps = ParamStore::new(4, DType::F64, Device::Cpu);
        let gru = Gru::new(&ps, 3, 4).unwrap();
        let x = Var::from_tensor(&randn(&[2, 6, 3], 9)).unwrap();
        let w = randn(&[2, 6, 4], 10);
        let fast = gru.forward(x.as_tensor()).unwrap();
        let slow = gru.forward_unrolled(x.as_tensor()).unwrap();
        let (a, b) = (to3(&fast), to3(&slow));
        for (p, q) in a.iter().flatten().flatten().zip(b.iter().flatten().flatten()) {
            assert!((p - q).abs() < 1e-12);
        }
        let gf = (fast * &w).unwrap().sum_all().unwrap().backward().unwrap();
        let gs = (slow * &w).unwrap().sum_all().unwrap().backward().unwrap();
        let mut vars: Vec<Var> = ps.vars().into_iter().map(|(_, v)| v).collect();
        vars.push(x);
        for v in &vars {
            let f = gf.get(v).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
            let s = gs.get(v).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
            for (p, q) in f.iter().zip(&s) {
                assert!((p - q).abs() < 1e-10, "{p} vs {q}");
            }
        }
    }

    #[test]
    fn parameter_init_is_seeded() {
        let a = ParamStore::new(3, DType::F32, Device::Cpu);
        let b = ParamStore::new(3, DType::F32, Device::Cpu);
        let la = Linear::new(&a.pp("x"), 4, 4, true).unwrap();
        let lb = Linear::new(&b.pp("x"), 4, 4, true).unwrap();
        assert_eq!(
            la.weight().to_vec2::<f32>().unwrap(),
            lb.weight().to_vec2::<f32>().unwrap()
        );
        assert!(Linear::new(&a.pp("x"), 4, 4, true).is_err());
    }

    #[test]
    fn export_then_load_restores_values() {
        let a = ParamStore::new(1, DType::F32, Device::Cpu);
        Linear::new(&a.pp("l"), 3, 2, true).unwrap();
        let snapshot = a.export().unwrap();
        let b = ParamStore::new(2, DType::F32, Device::Cpu);
        Linear::new(&b.pp("l"), 3, 2, true).unwrap();
        b.load(&snapshot).unwrap();
        assert_eq!(b.export().unwrap(), snapshot);
    }
}
