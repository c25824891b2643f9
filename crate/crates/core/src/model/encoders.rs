//! Modality-specific encoders and latent converters.

use candle_core::{DType, Device, Module, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{group_norm, max_pool, Conv2d, Linear, ParamStore};
use crate::{Error, Result};

/// Expected per-sample input of a modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputKind {
    Image { channels: usize, size: usize },
    Vector { dim: usize },
    Sequence { steps: usize, dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderArch {
    /// Five-conv AlexNet feature stack, final pooling kept, classifier removed.
    AlexnetStyleCnn,
    /// Four blocks of conv3x3, group norm, ReLU and 2x2 max pooling with
    /// widths 32/64/128/256; a 64x64 input yields a 4x4 grid.
    SmallCnnDesk,
    /// Per-step two-layer MLP producing width-d tokens.
    GenericSequenceEncoder { hidden: usize },
    /// Two-layer MLP producing a feature vector of `features` entries.
    VectorMlp { hidden: usize, features: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityEncoderConfig {
    pub modality: String,
    pub architecture: EncoderArch,
    pub input: InputKind,
}

impl ModalityEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        match (self.architecture, self.input) {
            (EncoderArch::AlexnetStyleCnn, InputKind::Image { size, .. }) if size >= 63 => Ok(()),
            (EncoderArch::SmallCnnDesk, InputKind::Image { size, .. }) if size >= 16 => Ok(()),
            (EncoderArch::GenericSequenceEncoder { .. }, InputKind::Sequence { steps, .. }) if steps >= 1 => Ok(()),
            (EncoderArch::VectorMlp { features, .. }, InputKind::Vector { dim }) if features >= 1 && dim >= 1 => Ok(()),
            (a, i) => Err(Error::validation(format!(
                "modality {}: encoder {a:?} cannot consume input {i:?}",
                self.modality
            ))),
        }
    }
}

/// Raw encoder output before conversion to tokens.
#[derive(Debug, Clone)]
pub enum EncoderOutput {
    /// `(B, C, H, W)`.
    Grid(Tensor),
    /// `(B, L, d)`.
    Tokens(Tensor),
    /// `(B, k)`.
    Vector(Tensor),
}

impl EncoderOutput {
    pub fn tensor(&self) -> &Tensor {
        match self {
            EncoderOutput::Grid(t) | EncoderOutput::Tokens(t) | EncoderOutput::Vector(t) => t,
        }
    }

    /// `(B, features)`.
    pub fn flatten(&self) -> Result<Tensor> {
        Ok(self.tensor().flatten_from(1)?)
    }
}

#[derive(Debug, Clone)]
struct NormedConv {
    conv: Conv2d,
    gamma: Tensor,
    beta: Tensor,
}

#[derive(Debug, Clone)]
enum EncoderNet {
    Alexnet(Vec<Conv2d>),
    Small(Vec<NormedConv>),
    Sequence { fc1: Linear, fc2: Linear },
    Vector { fc1: Linear, fc2: Linear },
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: ModalityEncoderConfig,
    net: EncoderNet,
}

pub const SMALL_CNN_WIDTHS: [usize; 4] = [32, 64, 128, 256];
const SMALL_CNN_GROUPS: usize = 8;

impl Encoder {
    pub fn new(
        ps: &mut ParamStore,
        prefix: &str,
        config: &ModalityEncoderConfig,
        embed_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let net = match (config.architecture, config.input) {
            (EncoderArch::AlexnetStyleCnn, InputKind::Image { channels, .. }) => {
                let spec = [
                    (channels, 64, 11, 4, 2),
                    (64, 192, 5, 1, 2),
                    (192, 384, 3, 1, 1),
                    (384, 256, 3, 1, 1),
                    (256, 256, 3, 1, 1),
                ];
                let convs = spec
                    .iter()
                    .enumerate()
                    .map(|(i, &(ci, co, k, s, p))| Conv2d::new(ps, &format!("{prefix}.conv{}", i + 1), ci, co, k, s, p, rng))
                    .collect::<Result<_>>()?;
                EncoderNet::Alexnet(convs)
            }
            (EncoderArch::SmallCnnDesk, InputKind::Image { channels, .. }) => {
                let mut blocks = Vec::new();
                let mut ci = channels;
                for (i, &co) in SMALL_CNN_WIDTHS.iter().enumerate() {
                    let name = format!("{prefix}.block{}", i + 1);
                    blocks.push(NormedConv {
                        conv: Conv2d::new(ps, &format!("{name}.conv"), ci, co, 3, 1, 1, rng)?,
                        gamma: ps.constant(&format!("{name}.norm.weight"), &[co], 1.0)?,
                        beta: ps.constant(&format!("{name}.norm.bias"), &[co], 0.0)?,
                    });
                    ci = co;
                }
                EncoderNet::Small(blocks)
            }
            (EncoderArch::GenericSequenceEncoder { hidden }, InputKind::Sequence { dim, .. }) => EncoderNet::Sequence {
                fc1: Linear::new(ps, &format!("{prefix}.fc1"), dim, hidden, rng)?,
                fc2: Linear::new(ps, &format!("{prefix}.fc2"), hidden, embed_dim, rng)?,
            },
            (EncoderArch::VectorMlp { hidden, features }, InputKind::Vector { dim }) => EncoderNet::Vector {
                fc1: Linear::new(ps, &format!("{prefix}.fc1"), dim, hidden, rng)?,
                fc2: Linear::new(ps, &format!("{prefix}.fc2"), hidden, features, rng)?,
            },
            _ => unreachable!("validated above"),
        };
        Ok(Self {
            config: config.clone(),
            net,
        })
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let dims = x.dims();
        let ok = match self.config.input {
            InputKind::Image { channels, size } => dims.len() == 4 && dims[1..] == [channels, size, size],
            InputKind::Vector { dim } => dims.len() == 2 && dims[1] == dim,
            InputKind::Sequence { steps, dim } => dims.len() == 3 && dims[1..] == [steps, dim],
        };
        if ok && dims[0] >= 1 {
            Ok(())
        } else {
            Err(Error::validation(format!(
                "modality {}: input shape {dims:?} does not match {:?}",
                self.config.modality, self.config.input
            )))
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<EncoderOutput> {
        self.check_input(x)?;
        Ok(match &self.net {
            EncoderNet::Alexnet(convs) => {
                let mut h = x.clone();
                for (i, conv) in convs.iter().enumerate() {
                    h = conv.forward(&h)?.relu()?;
                    if i == 0 || i == 1 || i == 4 {
                        h = max_pool(&h, 3, 2)?;
                    }
                }
                EncoderOutput::Grid(h)
            }
            EncoderNet::Small(blocks) => {
                let mut h = x.clone();
                for b in blocks {
                    h = b.conv.forward(&h)?;
                    h = group_norm(&h, SMALL_CNN_GROUPS, &b.gamma, &b.beta, 1e-5)?.relu()?;
                    h = max_pool(&h, 2, 2)?;
                }
                EncoderOutput::Grid(h)
            }
            EncoderNet::Sequence { fc1, fc2 } => EncoderOutput::Tokens(fc2.forward(&fc1.forward(x)?.relu()?)?),
            EncoderNet::Vector { fc1, fc2 } => EncoderOutput::Vector(fc2.forward(&fc1.forward(x)?.relu()?)?),
        })
    }

    /// Shape of one sample's encoder output: `[C, H, W]`, `[L, d]` or `[k]`.
    pub fn output_shape(&self, embed_dim: usize) -> Vec<usize> {
        match (self.config.architecture, self.config.input) {
            (EncoderArch::AlexnetStyleCnn, InputKind::Image { size, .. }) => {
                let s = super::ops::out_size(size, 11, 4, 2);
                let s = super::ops::out_size(s, 3, 2, 0);
                let s = super::ops::out_size(s, 3, 2, 0);
                vec![256, super::ops::out_size(s, 3, 2, 0), super::ops::out_size(s, 3, 2, 0)]
            }
            (EncoderArch::SmallCnnDesk, InputKind::Image { size, .. }) => {
                let s = (0..SMALL_CNN_WIDTHS.len()).fold(size, |s, _| s / 2);
                vec![SMALL_CNN_WIDTHS[3], s, s]
            }
            (EncoderArch::GenericSequenceEncoder { .. }, InputKind::Sequence { steps, .. }) => vec![steps, embed_dim],
            (EncoderArch::VectorMlp { features, .. }, _) => vec![features],
            _ => unreachable!("validated at construction"),
        }
    }
}

/// Fixed 2D sine-cosine position table of shape `(h*w, d)`, row-major over
/// the grid. The first half of each row encodes the row index, the second
/// half the column index.
pub fn sincos_2d(h: usize, w: usize, d: usize) -> Result<Vec<f32>> {
    if d % 4 != 0 {
        return Err(Error::validation(format!("2D positional width {d} must be divisible by 4")));
    }
    let mut out = Vec::with_capacity(h * w * d);
    for y in 0..h {
        for x in 0..w {
            out.extend(sincos_1d_row(y as f64, d / 2));
            out.extend(sincos_1d_row(x as f64, d / 2));
        }
    }
    Ok(out)
}

fn sincos_1d_row(pos: f64, d: usize) -> Vec<f32> {
    let half = d / 2;
    let freqs = (0..half).map(|i| 1.0 / 10000f64.powf(i as f64 / half as f64));
    let sin: Vec<f32> = freqs.clone().map(|f| (pos * f).sin() as f32).collect();
    let cos = freqs.map(|f| (pos * f).cos() as f32);
    sin.into_iter().chain(cos).collect()
}

/// Fixed 1D sine-cosine position table of shape `(len, d)`.
pub fn sincos_1d(len: usize, d: usize) -> Result<Vec<f32>> {
    if d % 2 != 0 {
        return Err(Error::validation(format!("positional width {d} must be even")));
    }
    Ok((0..len).flat_map(|p| sincos_1d_row(p as f64, d)).collect())
}

/// Maps an encoder output to a `(B, L, d)` token sequence.
#[derive(Debug, Clone)]
pub enum Converter {
    /// One token per grid cell: a bias-free linear map plus fixed 2D
    /// positions.
    Patch { proj: Linear, pos: Tensor },
    /// Token `j` is `x_j * W_j + b_j`.
    FeatureTokenizer { weight: Tensor, bias: Tensor },
    /// Tokens pass through with fixed 1D positions added.
    Identity { pos: Tensor },
}

impl Converter {
    pub fn for_encoder(
        ps: &mut ParamStore,
        prefix: &str,
        encoder: &Encoder,
        embed_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let shape = encoder.output_shape(embed_dim);
        Ok(match encoder.config.architecture {
            EncoderArch::AlexnetStyleCnn | EncoderArch::SmallCnnDesk => {
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let pos = Tensor::from_vec(sincos_2d(h, w, embed_dim)?, (h * w, embed_dim), &Device::Cpu)?;
                Converter::Patch {
                    proj: Linear::no_bias(ps, &format!("{prefix}.patch"), c, embed_dim, rng)?,
                    pos,
                }
            }
            EncoderArch::VectorMlp { features, .. } => Converter::FeatureTokenizer {
                weight: ps.normal(&format!("{prefix}.tokenizer.weight"), &[features, embed_dim], 1.0 / (embed_dim as f64).sqrt(), rng)?,
                bias: ps.normal(&format!("{prefix}.tokenizer.bias"), &[features, embed_dim], 1.0 / (embed_dim as f64).sqrt(), rng)?,
            },
            EncoderArch::GenericSequenceEncoder { .. } => Converter::Identity {
                pos: Tensor::from_vec(sincos_1d(shape[0], embed_dim)?, (shape[0], embed_dim), &Device::Cpu)?,
            },
        })
    }

    /// Tokens without the positional term.
    pub fn forward_without_pos(&self, features: &EncoderOutput) -> Result<Tensor> {
        Ok(match (self, features) {
            (Converter::Patch { proj, .. }, EncoderOutput::Grid(g)) => {
                let (b, c, h, w) = g.dims4()?;
                let cells = g.reshape((b, c, h * w))?.transpose(1, 2)?;
                proj.forward(&cells)?
            }
            (Converter::FeatureTokenizer { weight, bias }, EncoderOutput::Vector(v)) => {
                v.unsqueeze(2)?.broadcast_mul(&weight.unsqueeze(0)?)?.broadcast_add(bias)?
            }
            (Converter::Identity { .. }, EncoderOutput::Tokens(t)) => t.clone(),
            _ => return Err(Error::validation("converter does not match encoder output")),
        })
    }

    pub fn forward(&self, features: &EncoderOutput) -> Result<Tensor> {
        let tokens = self.forward_without_pos(features)?;
        Ok(match self {
            Converter::Patch { pos, .. } | Converter::Identity { pos } => tokens.broadcast_add(pos)?,
            Converter::FeatureTokenizer { .. } => tokens,
        })
    }
}

/// Stacks per-sample inputs into a batch tensor of the modality's shape.
pub fn batch_tensor(input: InputKind, rows: &[&[f32]]) -> Result<Tensor> {
    let per = match input {
        InputKind::Image { channels, size } => channels * size * size,
        InputKind::Vector { dim } => dim,
        InputKind::Sequence { steps, dim } => steps * dim,
    };
    let mut data = Vec::with_capacity(per * rows.len());
    for r in rows {
        if r.len() != per {
            return Err(Error::validation(format!("sample has {} values, expected {per}", r.len())));
        }
        data.extend_from_slice(r);
    }
    let b = rows.len();
    let t = Tensor::from_vec(data, (b, per), &Device::Cpu)?;
    Ok(match input {
        InputKind::Image { channels, size } => t.reshape((b, channels, size, size))?,
        InputKind::Vector { .. } => t,
        InputKind::Sequence { steps, dim } => t.reshape((b, steps, dim))?,
    }
    .to_dtype(DType::F32)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng;

    fn image_cfg(arch: EncoderArch, size: usize) -> ModalityEncoderConfig {
        ModalityEncoderConfig {
            modality: "img".into(),
            architecture: arch,
            input: InputKind::Image { channels: 3, size },
        }
    }

    #[test]
    fn alexnet_yields_six_by_six_grid_at_224() {
        let mut ps = ParamStore::new();
        let enc = Encoder::new(&mut ps, "e", &image_cfg(EncoderArch::AlexnetStyleCnn, 224), 512, &mut rng(0)).unwrap();
        assert_eq!(enc.output_shape(512), vec![256, 6, 6]);
        let x = Tensor::zeros((1, 3, 224, 224), DType::F32, &Device::Cpu).unwrap();
        let out = enc.forward(&x).unwrap();
        assert_eq!(out.tensor().dims(), &[1, 256, 6, 6]);
        let conv = Converter::for_encoder(&mut ps, "c", &enc, 512, &mut rng(1)).unwrap();
        assert_eq!(conv.forward(&out).unwrap().dims(), &[1, 36, 512]);
    }

    #[test]
    fn small_cnn_yields_four_by_four_grid_at_64() {
        let mut ps = ParamStore::new();
        let enc = Encoder::new(&mut ps, "e", &image_cfg(EncoderArch::SmallCnnDesk, 64), 512, &mut rng(0)).unwrap();
        let x = Tensor::ones((3, 3, 64, 64), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(enc.forward(&x).unwrap().tensor().dims(), &[3, 256, 4, 4]);
        assert_eq!(enc.output_shape(512), vec![256, 4, 4]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut ps = ParamStore::new();
        let enc = Encoder::new(&mut ps, "e", &image_cfg(EncoderArch::SmallCnnDesk, 32), 64, &mut rng(0)).unwrap();
        let x = Tensor::zeros((1, 3, 64, 64), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(enc.forward(&x), Err(Error::Validation(_))));
        let bad = ModalityEncoderConfig {
            modality: "v".into(),
            architecture: EncoderArch::SmallCnnDesk,
            input: InputKind::Vector { dim: 3 },
        };
        assert!(Encoder::new(&mut ps, "x", &bad, 64, &mut rng(0)).is_err());
    }

    #[test]
    fn batch_order_is_preserved() {
        let mut ps = ParamStore::new();
        let cfg = ModalityEncoderConfig {
            modality: "v".into(),
            architecture: EncoderArch::VectorMlp { hidden: 16, features: 4 },
            input: InputKind::Vector { dim: 5 },
        };
        let enc = Encoder::new(&mut ps, "e", &cfg, 8, &mut rng(3)).unwrap();
        let rows: Vec<Vec<f32>> = (0..4).map(|i| (0..5).map(|j| (i * 5 + j) as f32 / 10.0).collect()).collect();
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        let full = enc.forward(&batch_tensor(cfg.input, &refs).unwrap()).unwrap().tensor().to_vec2::<f32>().unwrap();
        for (i, r) in rows.iter().enumerate() {
            let single = enc.forward(&batch_tensor(cfg.input, &[r.as_slice()]).unwrap()).unwrap().tensor().to_vec2::<f32>().unwrap();
            for (a, b) in single[0].iter().zip(&full[i]) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn patch_converter_is_linear_plus_position() {
        let mut ps = ParamStore::new();
        let enc = Encoder::new(&mut ps, "e", &image_cfg(EncoderArch::SmallCnnDesk, 32), 16, &mut rng(0)).unwrap();
        let conv = Converter::for_encoder(&mut ps, "c", &enc, 16, &mut rng(1)).unwrap();
        let g = Tensor::randn(0f32, 1.0, (2, 256, 2, 2), &Device::Cpu).unwrap();
        let a = 2.5;
        let scaled = conv.forward(&EncoderOutput::Grid((&g * a).unwrap())).unwrap();
        let Converter::Patch { pos, .. } = &conv else { panic!() };
        let expected = (conv.forward_without_pos(&EncoderOutput::Grid(g.clone())).unwrap() * a)
            .unwrap()
            .broadcast_add(pos)
            .unwrap();
        let diff = (scaled - expected).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(diff < 1e-4);
        let again = conv.forward(&EncoderOutput::Grid(g.clone())).unwrap();
        let once = conv.forward(&EncoderOutput::Grid(g)).unwrap();
        assert_eq!(again.to_vec3::<f32>().unwrap(), once.to_vec3::<f32>().unwrap());
    }

    #[test]
    fn feature_tokenizer_is_affine_per_feature() {
        let mut ps = ParamStore::new();
        let cfg = ModalityEncoderConfig {
            modality: "v".into(),
            architecture: EncoderArch::VectorMlp { hidden: 8, features: 3 },
            input: InputKind::Vector { dim: 2 },
        };
        let enc = Encoder::new(&mut ps, "e", &cfg, 8, &mut rng(0)).unwrap();
        let conv = Converter::for_encoder(&mut ps, "c", &enc, 8, &mut rng(1)).unwrap();
        let Converter::FeatureTokenizer { bias, .. } = &conv else { panic!() };
        let zero = conv.forward(&EncoderOutput::Vector(Tensor::zeros((1, 3), DType::F32, &Device::Cpu).unwrap())).unwrap();
        assert_eq!(zero.dims(), &[1, 3, 8]);
        assert_eq!(zero.squeeze(0).unwrap().to_vec2::<f32>().unwrap(), bias.to_vec2::<f32>().unwrap());
        let x = Tensor::new(&[[0.7f32, -1.2, 0.3]], &Device::Cpu).unwrap();
        let t1 = conv.forward(&EncoderOutput::Vector(x.clone())).unwrap().broadcast_sub(bias).unwrap();
        let t2 = conv.forward(&EncoderOutput::Vector((x * 2.0).unwrap())).unwrap().broadcast_sub(bias).unwrap();
        let diff = ((t1 * 2.0).unwrap() - t2).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(diff < 1e-5);
    }

    #[test]
    fn sincos_tables_have_distinct_rows() {
        let t = sincos_2d(3, 3, 16).unwrap();
        let rows: Vec<&[f32]> = t.chunks(16).collect();
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                assert_ne!(rows[i], rows[j]);
            }
        }
        assert!(sincos_2d(2, 2, 6).is_err());
        assert_eq!(sincos_1d(4, 8).unwrap().len(), 32);
    }
}
