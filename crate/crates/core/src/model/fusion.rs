//! Fusion of per-modality token sequences into one vector.

use candle_core::{Module, Tensor, D};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{layer_norm, Linear, ParamStore};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            layers: 1,
            heads: 8,
            mlp_ratio: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FusionKind {
    /// Class token plus pre-norm self-attention over all present tokens.
    Attention(TransformerConfig),
    /// Flattened encoder features, projected per modality, concatenated
    /// (zeros for absent modalities) and mapped linearly to the embedding.
    ConcatLinear { per_modality_dim: usize },
}

impl Default for FusionKind {
    fn default() -> Self {
        FusionKind::Attention(TransformerConfig::default())
    }
}

#[derive(Debug, Clone)]
struct Norm {
    gamma: Tensor,
    beta: Tensor,
}

impl Norm {
    fn new(ps: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gamma: ps.constant(&format!("{name}.weight"), &[d], 1.0)?,
            beta: ps.constant(&format!("{name}.bias"), &[d], 0.0)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        layer_norm(x, &self.gamma, &self.beta, 1e-5)
    }
}

#[derive(Debug, Clone)]
struct Block {
    norm1: Norm,
    qkv: Linear,
    out: Linear,
    norm2: Norm,
    fc1: Linear,
    fc2: Linear,
    heads: usize,
}

impl Block {
    fn new(ps: &mut ParamStore, name: &str, d: usize, cfg: &TransformerConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            norm1: Norm::new(ps, &format!("{name}.norm1"), d)?,
            qkv: Linear::new(ps, &format!("{name}.attn.qkv"), d, 3 * d, rng)?,
            out: Linear::new(ps, &format!("{name}.attn.out"), d, d, rng)?,
            norm2: Norm::new(ps, &format!("{name}.norm2"), d)?,
            fc1: Linear::new(ps, &format!("{name}.mlp.fc1"), d, cfg.mlp_ratio * d, rng)?,
            fc2: Linear::new(ps, &format!("{name}.mlp.fc2"), cfg.mlp_ratio * d, d, rng)?,
            heads: cfg.heads,
        })
    }

    fn attention(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        let dh = d / self.heads;
        let qkv = self.qkv.forward(x)?.reshape((b, t, 3, self.heads, dh))?.permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let scores = (q.matmul(&k.t()?)? / (dh as f64).sqrt())?;
        let attn = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let ctx = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, t, d))?;
        Ok(self.out.forward(&ctx)?)
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = (x + self.attention(&self.norm1.forward(x)?)?)?;
        let m = self.fc2.forward(&self.fc1.forward(&self.norm2.forward(&h)?)?.gelu_erf()?)?;
        Ok((h + m)?)
    }
}

#[derive(Debug, Clone)]
pub struct AttentionFusion {
    cls: Tensor,
    blocks: Vec<Block>,
}

impl AttentionFusion {
    pub fn new(ps: &mut ParamStore, prefix: &str, d: usize, cfg: &TransformerConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.heads == 0 || d % cfg.heads != 0 {
            return Err(Error::validation(format!("width {d} not divisible by {} heads", cfg.heads)));
        }
        if cfg.layers == 0 {
            return Err(Error::validation("fusion needs at least one layer"));
        }
        let cls = ps.normal(&format!("{prefix}.cls"), &[1, 1, d], 0.02, rng)?;
        let blocks = (0..cfg.layers)
            .map(|l| Block::new(ps, &format!("{prefix}.block{l}"), d, cfg, rng))
            .collect::<Result<_>>()?;
        Ok(Self { cls, blocks })
    }

    /// Prepends the class token to the concatenated sequences and returns
    /// its output, `(B, d)`.
    pub fn forward(&self, sequences: &[Tensor]) -> Result<Tensor> {
        let first = sequences
            .first()
            .ok_or_else(|| Error::validation("fusion needs at least one present modality"))?;
        let (b, _, d) = first.dims3()?;
        let mut parts = vec![self.cls.broadcast_as((b, 1, d))?];
        parts.extend(sequences.iter().cloned());
        let mut x = Tensor::cat(&parts, 1)?;
        for block in &self.blocks {
            x = block.forward(&x)?;
        }
        Ok(x.narrow(1, 0, 1)?.squeeze(1)?)
    }
}

#[derive(Debug, Clone)]
pub struct LinearFusion {
    pub projections: Vec<Linear>,
    pub mix: Linear,
    pub per_modality_dim: usize,
}

impl LinearFusion {
    pub fn new(
        ps: &mut ParamStore,
        prefix: &str,
        flat_dims: &[usize],
        per_modality_dim: usize,
        d: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let projections = flat_dims
            .iter()
            .enumerate()
            .map(|(i, &f)| Linear::new(ps, &format!("{prefix}.proj{i}"), f, per_modality_dim, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            projections,
            mix: Linear::new(ps, &format!("{prefix}.mix"), per_modality_dim * flat_dims.len(), d, rng)?,
            per_modality_dim,
        })
    }

    /// `features[i]` is the flattened encoder output of modality `i`, or
    /// `None` when it is absent.
    pub fn forward(&self, features: &[Option<Tensor>]) -> Result<Tensor> {
        let b = features
            .iter()
            .flatten()
            .next()
            .ok_or_else(|| Error::validation("fusion needs at least one present modality"))?
            .dim(0)?;
        let parts = features
            .iter()
            .zip(&self.projections)
            .map(|(f, p)| match f {
                Some(f) => Ok(p.forward(f)?),
                None => Ok(Tensor::zeros((b, self.per_modality_dim), candle_core::DType::F32, &candle_core::Device::Cpu)?),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.mix.forward(&Tensor::cat(&parts, 1)?)?)
    }
}

/// ReLU MLP: `input -> hidden -> ... -> output` with `layers` linear maps.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(
        ps: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        layers: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::validation("an MLP needs at least one layer"));
        }
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(hidden, layers - 1));
        dims.push(output);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(ps, &format!("{prefix}.fc{}", i + 1), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = h.relu()?;
            }
        }
        Ok(h)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim()).unwrap_or(0)
    }
}
