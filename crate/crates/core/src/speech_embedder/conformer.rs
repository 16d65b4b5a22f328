//! Conformer frame encoder: strided-convolution subsampling followed by
//! macaron blocks (half feed-forward, self-attention with a learned
//! relative-position bias, convolution module, half feed-forward).

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};
use crate::nn::{additive_mask, debug_check_finite, length_mask, sigmoid, softmax_last, Conv1d, DepthwiseConv1d, LayerNorm, Linear, ParamStore};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub input_dim: usize,
    pub num_layers: usize,
    pub model_dim: usize,
    pub conv_kernel: usize,
    pub attention_heads: usize,
    pub ff_multiplier: usize,
    pub subsampling_factor: usize,
    /// Relative offsets beyond this distance share one bias.
    pub max_relative_distance: usize,
    /// P, blank included.
    pub inventory_size: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            input_dim: 80,
            num_layers: 6,
            model_dim: 144,
            conv_kernel: 3,
            attention_heads: 4,
            ff_multiplier: 4,
            subsampling_factor: 4,
            max_relative_distance: 32,
            inventory_size: 12,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(KwsError::invalid(format!("embedder config: {m}")));
        if self.model_dim == 0 || self.attention_heads == 0 || self.model_dim % self.attention_heads != 0 {
            return bad("model_dim must be a positive multiple of attention_heads");
        }
        if self.subsampling_factor == 0 {
            return bad("subsampling_factor must be at least 1");
        }
        if self.conv_kernel % 2 == 0 {
            return bad("conv_kernel must be odd");
        }
        if self.inventory_size < 2 || self.input_dim == 0 || self.ff_multiplier == 0 {
            return bad("inventory_size >= 2, input_dim > 0 and ff_multiplier > 0 required");
        }
        Ok(())
    }

    /// T_e for an input of `frames` frames.
    pub fn output_len(&self, frames: usize) -> usize {
        frames.div_ceil(self.subsampling_factor)
    }
}

fn swish(x: &Tensor) -> Result<Tensor> {
    Ok((x * sigmoid(x)?)?)
}

struct FeedForward {
    norm: LayerNorm,
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn new(ps: &ParamStore, dim: usize, mult: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(&ps.pp("norm"), dim)?,
            up: Linear::new(&ps.pp("up"), dim, dim * mult, true)?,
            down: Linear::new(&ps.pp("down"), dim * mult, dim, true)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&swish(&self.up.forward(&self.norm.forward(x)?)?)?)
    }
}

struct SelfAttention {
    norm: LayerNorm,
    qkv: Linear,
    out: Linear,
    rel_bias: Tensor, // (heads, 2R+1)
    heads: usize,
    max_rel: usize,
}

impl SelfAttention {
    fn new(ps: &ParamStore, dim: usize, heads: usize, max_rel: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(&ps.pp("norm"), dim)?,
            qkv: Linear::new(&ps.pp("qkv"), dim, 3 * dim, true)?,
            out: Linear::new(&ps.pp("out"), dim, dim, true)?,
            rel_bias: ps.constant("rel_bias", &[heads, 2 * max_rel + 1], 0.0)?,
            heads,
            max_rel,
        })
    }

    fn position_bias(&self, t: usize, device: &Device) -> Result<Tensor> {
        let r = self.max_rel as i64;
        let idx: Vec<u32> = (0..t as i64)
            .flat_map(|i| (0..t as i64).map(move |j| ((j - i).clamp(-r, r) + r) as u32))
            .collect();
        let idx = Tensor::from_vec(idx, t * t, device)?;
        Ok(self.rel_bias.index_select(&idx, 1)?.reshape((1, self.heads, t, t))?)
    }

    fn forward(&self, x: &Tensor, key_mask: &Tensor) -> Result<Tensor> {
        let (b, t, c) = x.dims3()?;
        let dh = c / self.heads;
        let qkv = self.qkv.forward(&self.norm.forward(x)?)?;
        let split = |k: usize| -> Result<Tensor> {
            Ok(qkv
                .narrow(2, k * c, c)?
                .reshape((b, t, self.heads, dh))?
                .transpose(1, 2)?
                .contiguous()?)
        };
        let (q, k, v) = (split(0)?, split(1)?, split(2)?);
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (dh as f64).sqrt())?;
        let scores = scores
            .broadcast_add(&self.position_bias(t, x.device())?)?
            .broadcast_add(key_mask)?;
        let ctx = softmax_last(&scores)?.matmul(&v)?;
        let ctx = ctx.transpose(1, 2)?.contiguous()?.reshape((b, t, c))?;
        self.out.forward(&ctx)
    }
}

struct ConvModule {
    norm: LayerNorm,
    pointwise_in: Linear,
    depthwise: DepthwiseConv1d,
    mid_norm: LayerNorm,
    pointwise_out: Linear,
}

impl ConvModule {
    fn new(ps: &ParamStore, dim: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(&ps.pp("norm"), dim)?,
            pointwise_in: Linear::new(&ps.pp("pw_in"), dim, 2 * dim, true)?,
            depthwise: DepthwiseConv1d::new(&ps.pp("dw"), dim, kernel)?,
            mid_norm: LayerNorm::new(&ps.pp("mid_norm"), dim)?,
            pointwise_out: Linear::new(&ps.pp("pw_out"), dim, dim, true)?,
        })
    }

    fn forward(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let c = x.dim(D::Minus1)?;
        let h = self.pointwise_in.forward(&self.norm.forward(x)?)?;
        let glu = (h.narrow(2, 0, c)? * sigmoid(&h.narrow(2, c, c)?)?)?;
        let h = self.depthwise.forward(&glu.broadcast_mul(mask)?)?;
        self.pointwise_out.forward(&swish(&self.mid_norm.forward(&h)?)?)
    }
}

struct Block {
    ff1: FeedForward,
    attn: SelfAttention,
    conv: ConvModule,
    ff2: FeedForward,
    norm: LayerNorm,
}

impl Block {
    fn new(ps: &ParamStore, cfg: &EmbedderConfig) -> Result<Self> {
        let d = cfg.model_dim;
        Ok(Self {
            ff1: FeedForward::new(&ps.pp("ff1"), d, cfg.ff_multiplier)?,
            attn: SelfAttention::new(&ps.pp("attn"), d, cfg.attention_heads, cfg.max_relative_distance)?,
            conv: ConvModule::new(&ps.pp("conv"), d, cfg.conv_kernel)?,
            ff2: FeedForward::new(&ps.pp("ff2"), d, cfg.ff_multiplier)?,
            norm: LayerNorm::new(&ps.pp("norm"), d)?,
        })
    }

    fn forward(&self, x: &Tensor, mask: &Tensor, key_mask: &Tensor) -> Result<Tensor> {
        let x = (x + (self.ff1.forward(x)? * 0.5)?)?.broadcast_mul(mask)?;
        let x = (&x + self.attn.forward(&x, key_mask)?)?.broadcast_mul(mask)?;
        let x = (&x + self.conv.forward(&x, mask)?)?.broadcast_mul(mask)?;
        let x = (&x + (self.ff2.forward(&x)? * 0.5)?)?;
        Ok(self.norm.forward(&x)?.broadcast_mul(mask)?)
    }
}

/// Batched output of the embedder.
pub struct EmbedderOutput {
    /// `(batch, T_e, model_dim)`, zero beyond each item's length.
    pub hidden: Tensor,
    /// `(batch, T_e, P)` unnormalized phoneme scores.
    pub logits: Tensor,
    pub lengths: Vec<usize>,
}

pub struct SpeechEmbedder {
    cfg: EmbedderConfig,
    subsample: Conv1d,
    blocks: Vec<Block>,
    classifier: Linear,
}

impl SpeechEmbedder {
    pub fn new(ps: &ParamStore, cfg: &EmbedderConfig) -> Result<Self> {
        cfg.validate()?;
        let s = cfg.subsampling_factor;
        Ok(Self {
            cfg: cfg.clone(),
            subsample: Conv1d::new(&ps.pp("subsample"), cfg.input_dim, cfg.model_dim, s, s, 0)?,
            blocks: (0..cfg.num_layers)
                .map(|i| Block::new(&ps.pp(&format!("block{i}")), cfg))
                .collect::<Result<_>>()?,
            classifier: Linear::new(&ps.pp("classifier"), cfg.model_dim, cfg.inventory_size, true)?,
        })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.cfg
    }

    /// `features` is `(batch, T, input_dim)`, zero beyond `lengths`.
    pub fn forward(&self, features: &Tensor, lengths: &[usize]) -> Result<EmbedderOutput> {
        let (b, t, dim) = features.dims3()?;
        if dim != self.cfg.input_dim {
            return Err(KwsError::invalid(format!(
                "features have {dim} channels, embedder expects {}",
                self.cfg.input_dim
            )));
        }
        if lengths.len() != b || lengths.iter().any(|&l| l == 0 || l > t) {
            return Err(KwsError::invalid(format!("bad lengths {lengths:?} for {t} padded frames")));
        }
        let s = self.cfg.subsampling_factor;
        let t_e = self.cfg.output_len(t);
        let x = features.pad_with_zeros(1, 0, t_e * s - t)?;
        let out_lens: Vec<usize> = lengths.iter().map(|&l| self.cfg.output_len(l)).collect();
        let (dtype, dev) = (features.dtype(), features.device());
        let mask = length_mask(&out_lens, t_e, dtype, dev)?;
        let key_mask = additive_mask(&out_lens, t_e, dtype, dev)?.reshape((b, 1, 1, t_e))?;

        let mut h = self.subsample.forward(&x)?.broadcast_mul(&mask)?;
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward(&h, &mask, &key_mask)?;
            debug_check_finite(&h, &format!("conformer block {i}"))?;
        }
        let logits = self.classifier.forward(&h)?;
        Ok(EmbedderOutput {
            hidden: h,
            logits,
            lengths: out_lens,
        })
    }
}

/// Stacks feature matrices into a zero-padded `(batch, T_max, dim)` tensor.
pub fn pad_batch(items: &[&crate::features::FeatureMatrix], device: &Device) -> Result<(Tensor, Vec<usize>)> {
    let dim = items.first().map(|f| f.dim()).ok_or_else(|| KwsError::invalid("empty batch"))?;
    if items.iter().any(|f| f.dim() != dim) {
        return Err(KwsError::Shape("feature dimensions differ within batch".into()));
    }
    let t_max = items.iter().map(|f| f.n_frames()).max().unwrap_or(0);
    let mut buf = vec![0f32; items.len() * t_max * dim];
    for (i, f) in items.iter().enumerate() {
        buf[i * t_max * dim..i * t_max * dim + f.values().len()].copy_from_slice(f.values());
    }
    let lens = items.iter().map(|f| f.n_frames()).collect();
    Ok((Tensor::from_vec(buf, (items.len(), t_max, dim), device)?.to_dtype(DType::F32)?, lens))
}
