//! The multimodal network and the dual-encoder baselines.
//!
//! A [`CommModel`] encodes each present modality, converts it to tokens,
//! tags the tokens with a learned modality embedding and fuses everything
//! into a single vector. The projection head maps that vector into the
//! space where contrastive similarities are computed; probes never see it.

pub mod checkpoint;
pub mod encoders;
pub mod fusion;
pub mod ops;

use std::sync::atomic::{AtomicUsize, Ordering};

use candle_core::{Module, Tensor};
use serde::{Deserialize, Serialize};

pub use encoders::{batch_tensor, Converter, EncoderArch, EncoderOutput, InputKind, ModalityEncoderConfig};
pub use fusion::{FusionKind, TransformerConfig};
pub use ops::ParamStore;

use crate::rng::{derive_str, rng};
use crate::trifeature::{ResolutionProfile, TrifeatureSpec};
use crate::{Error, Result};
use encoders::Encoder;
use fusion::{AttentionFusion, LinearFusion, Mlp};
use ops::Linear;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub hidden: usize,
    pub output: usize,
    pub layers: usize,
    /// One head for every view, or one head per loss term.
    pub shared: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden: 512,
            output: 256,
            layers: 3,
            shared: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub modalities: Vec<ModalityEncoderConfig>,
    #[serde(default)]
    pub fusion: FusionKind,
    #[serde(default = "default_true")]
    pub type_embeddings: bool,
    #[serde(default)]
    pub head: HeadConfig,
}

fn default_true() -> bool {
    true
}

fn image_modalities(spec: &TrifeatureSpec, arch: EncoderArch) -> Vec<ModalityEncoderConfig> {
    (1..=2)
        .map(|i| ModalityEncoderConfig {
            modality: format!("image{i}"),
            architecture: arch,
            input: InputKind::Image {
                channels: 3,
                size: spec.canvas_size,
            },
        })
        .collect()
}

/// Encoder architecture used for a resolution profile.
pub fn profile_encoder(profile: ResolutionProfile) -> EncoderArch {
    match profile {
        ResolutionProfile::Full224 => EncoderArch::AlexnetStyleCnn,
        ResolutionProfile::Desk64 => EncoderArch::SmallCnnDesk,
    }
}

impl ModelConfig {
    /// Two image modalities of the given benchmark.
    pub fn trifeature(spec: &TrifeatureSpec) -> Self {
        Self {
            embed_dim: 512,
            modalities: image_modalities(spec, profile_encoder(spec.resolution_profile)),
            fusion: FusionKind::default(),
            type_embeddings: true,
            head: HeadConfig::default(),
        }
    }

    /// `n` vector modalities with a small MLP encoder each.
    pub fn toy_vectors(n: usize, input_dim: usize, embed_dim: usize) -> Self {
        Self {
            embed_dim,
            modalities: (0..n)
                .map(|i| ModalityEncoderConfig {
                    modality: format!("vector{}", i + 1),
                    architecture: EncoderArch::VectorMlp {
                        hidden: 2 * embed_dim,
                        features: 4,
                    },
                    input: InputKind::Vector { dim: input_dim },
                })
                .collect(),
            fusion: FusionKind::Attention(TransformerConfig {
                layers: 1,
                heads: 2,
                mlp_ratio: 2,
            }),
            type_embeddings: true,
            head: HeadConfig {
                hidden: embed_dim,
                output: embed_dim / 2,
                layers: 3,
                shared: true,
            },
        }
    }

    pub fn num_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::validation("a model needs at least one modality"));
        }
        if self.embed_dim == 0 || self.embed_dim % 4 != 0 {
            return Err(Error::validation(format!("embedding width {} must be a positive multiple of 4", self.embed_dim)));
        }
        self.modalities.iter().try_for_each(ModalityEncoderConfig::validate)
    }
}

/// Which loss term a critic embedding is computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadTerm {
    /// The term between the two fully augmented views.
    Joint,
    /// The term anchored on modality `i`'s projection.
    Projection(usize),
}

#[derive(Debug, Clone)]
enum FusionNet {
    Attention(AttentionFusion),
    Linear(LinearFusion),
}

/// Fused representations of the `n + 2` views of a batch.
#[derive(Debug, Clone)]
pub struct ViewOutputs {
    pub prime: Tensor,
    pub double_prime: Tensor,
    pub projections: Vec<Tensor>,
}

/// Critic embeddings for every loss term. `terms[i]` holds the projection
/// anchor and the two full views, each through the head used by term `i`.
#[derive(Debug, Clone)]
pub struct CriticViews {
    pub joint: (Tensor, Tensor),
    pub terms: Vec<(Tensor, Tensor, Tensor)>,
}

#[derive(Debug)]
pub struct CommModel {
    pub config: ModelConfig,
    params: ParamStore,
    encoders: Vec<Encoder>,
    converters: Vec<Converter>,
    type_embeddings: Option<Tensor>,
    fusion: FusionNet,
    heads: Vec<Mlp>,
    fusion_calls: AtomicUsize,
}

impl CommModel {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let n = config.num_modalities();
        let mut ps = ParamStore::new();
        let mut encoders = Vec::with_capacity(n);
        let mut converters = Vec::with_capacity(n);
        for (i, m) in config.modalities.iter().enumerate() {
            let mut r = rng(derive_str(seed, &format!("modality{i}")));
            let enc = Encoder::new(&mut ps, &format!("modality{i}.encoder"), m, d, &mut r)?;
            if matches!(config.fusion, FusionKind::Attention(_)) {
                converters.push(Converter::for_encoder(&mut ps, &format!("modality{i}.converter"), &enc, d, &mut r)?);
            }
            encoders.push(enc);
        }
        let type_embeddings = match (config.type_embeddings, config.fusion) {
            (true, FusionKind::Attention(_)) => {
                let mut r = rng(derive_str(seed, "type_embeddings"));
                let t = ps.normal("modality.type_embeddings", &[n, d], 0.02, &mut r)?;
                Some(t)
            }
            _ => None,
        };
        let mut r = rng(derive_str(seed, "fusion"));
        let fusion = match config.fusion {
            FusionKind::Attention(cfg) => FusionNet::Attention(AttentionFusion::new(&mut ps, "fusion", d, &cfg, &mut r)?),
            FusionKind::ConcatLinear { per_modality_dim } => {
                let flat: Vec<usize> = encoders.iter().map(|e| e.output_shape(d).iter().product()).collect();
                FusionNet::Linear(LinearFusion::new(&mut ps, "fusion", &flat, per_modality_dim, d, &mut r)?)
            }
        };
        let mut r = rng(derive_str(seed, "head"));
        let num_heads = if config.head.shared { 1 } else { n + 1 };
        let heads = (0..num_heads)
            .map(|h| Mlp::new(&mut ps, &format!("head{h}"), d, config.head.hidden, config.head.output, config.head.layers, &mut r))
            .collect::<Result<_>>()?;
        Ok(Self {
            config: config.clone(),
            params: ps,
            encoders,
            converters,
            type_embeddings,
            fusion,
            heads,
            fusion_calls: AtomicUsize::new(0),
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn num_modalities(&self) -> usize {
        self.encoders.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    /// Parameter-name prefix owned by modality `i` alone.
    pub fn modality_prefix(i: usize) -> String {
        format!("modality{i}.")
    }

    pub fn encode(&self, i: usize, x: &Tensor) -> Result<EncoderOutput> {
        self.encoders
            .get(i)
            .ok_or_else(|| Error::validation(format!("no modality {i}")))?
            .forward(x)
    }

    /// Token sequence `(B, L, d)` of modality `i`, including its type
    /// embedding.
    pub fn tokens(&self, i: usize, x: &Tensor) -> Result<Tensor> {
        let features = self.encode(i, x)?;
        let conv = self
            .converters
            .get(i)
            .ok_or_else(|| Error::validation("linear fusion has no latent converters"))?;
        let tokens = conv.forward(&features)?;
        Ok(match &self.type_embeddings {
            Some(t) => tokens.broadcast_add(&t.get(i)?)?,
            None => tokens,
        })
    }

    /// Fused representation `(B, d)` of the present modalities.
    pub fn fuse(&self, inputs: &[Option<Tensor>]) -> Result<Tensor> {
        if inputs.len() != self.num_modalities() {
            return Err(Error::validation(format!(
                "expected {} modality slots, got {}",
                self.num_modalities(),
                inputs.len()
            )));
        }
        let batch: Vec<usize> = inputs.iter().flatten().map(|t| t.dim(0)).collect::<candle_core::Result<_>>()?;
        if batch.is_empty() {
            return Err(Error::validation("all modalities are absent"));
        }
        if batch.iter().any(|&b| b != batch[0]) {
            return Err(Error::validation(format!("modalities disagree on batch size: {batch:?}")));
        }
        self.fusion_calls.fetch_add(1, Ordering::Relaxed);
        match &self.fusion {
            FusionNet::Attention(f) => {
                let seqs = inputs
                    .iter()
                    .enumerate()
                    .filter_map(|(i, x)| x.as_ref().map(|x| self.tokens(i, x)))
                    .collect::<Result<Vec<_>>>()?;
                f.forward(&seqs)
            }
            FusionNet::Linear(f) => {
                let flat = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, x)| x.as_ref().map(|x| self.encode(i, x)?.flatten()).transpose())
                    .collect::<Result<Vec<_>>>()?;
                f.forward(&flat)
            }
        }
    }

    /// Attention fusion over already tagged token blocks, in the given order.
    pub fn fuse_tokens(&self, sequences: &[Tensor]) -> Result<Tensor> {
        match &self.fusion {
            FusionNet::Attention(f) => f.forward(sequences),
            FusionNet::Linear(_) => Err(Error::validation("linear fusion does not consume tokens")),
        }
    }

    pub fn fusion_calls(&self) -> usize {
        self.fusion_calls.load(Ordering::Relaxed)
    }

    pub fn head(&self, term: HeadTerm, z: &Tensor) -> Result<Tensor> {
        let idx = match (self.config.head.shared, term) {
            (true, _) | (false, HeadTerm::Joint) => 0,
            (false, HeadTerm::Projection(i)) => i + 1,
        };
        self.heads
            .get(idx)
            .ok_or_else(|| Error::validation(format!("no head for {term:?}")))?
            .forward(z)
    }

    /// Fuses both augmented views and each single-modality projection of the
    /// clean inputs: `n + 2` fusion passes through the same weights.
    pub fn forward_views(&self, prime: &[Tensor], double_prime: &[Tensor], clean: &[Tensor]) -> Result<ViewOutputs> {
        self.forward_selected_views(prime, double_prime, clean, true)
    }

    /// As [`CommModel::forward_views`]; the projections are skipped when
    /// `with_projections` is false.
    pub fn forward_selected_views(
        &self,
        prime: &[Tensor],
        double_prime: &[Tensor],
        clean: &[Tensor],
        with_projections: bool,
    ) -> Result<ViewOutputs> {
        let n = self.num_modalities();
        if prime.len() != n || double_prime.len() != n || clean.len() != n {
            return Err(Error::validation(format!("every view needs all {n} modalities")));
        }
        let all = |v: &[Tensor]| v.iter().cloned().map(Some).collect::<Vec<_>>();
        let prime = self.fuse(&all(prime))?;
        let double_prime = self.fuse(&all(double_prime))?;
        let projections = (0..if with_projections { n } else { 0 })
            .map(|i| {
                let slots: Vec<Option<Tensor>> = (0..n).map(|j| (i == j).then(|| clean[j].clone())).collect();
                self.fuse(&slots)
            })
            .collect::<Result<_>>()?;
        Ok(ViewOutputs {
            prime,
            double_prime,
            projections,
        })
    }

    pub fn critic_views(&self, views: &ViewOutputs) -> Result<CriticViews> {
        let joint = (self.head(HeadTerm::Joint, &views.prime)?, self.head(HeadTerm::Joint, &views.double_prime)?);
        let terms = views
            .projections
            .iter()
            .enumerate()
            .map(|(i, zi)| {
                let t = HeadTerm::Projection(i);
                if self.config.head.shared {
                    Ok((self.head(t, zi)?, joint.0.clone(), joint.1.clone()))
                } else {
                    Ok((self.head(t, zi)?, self.head(t, &views.prime)?, self.head(t, &views.double_prime)?))
                }
            })
            .collect::<Result<_>>()?;
        Ok(CriticViews { joint, terms })
    }
}

/// Cross-modal baselines: independent encoders with linear projectors, and
/// optionally per-modality self-supervised heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualEncoderConfig {
    pub modalities: Vec<ModalityEncoderConfig>,
    pub projection_dim: usize,
    /// Present for the variant with per-modality self-supervised terms.
    pub self_head: Option<HeadConfig>,
}

impl DualEncoderConfig {
    pub fn trifeature(spec: &TrifeatureSpec, with_self_terms: bool) -> Self {
        Self {
            modalities: image_modalities(spec, profile_encoder(spec.resolution_profile)),
            projection_dim: 512,
            self_head: with_self_terms.then_some(HeadConfig {
                hidden: 1024,
                output: 256,
                layers: 3,
                shared: false,
            }),
        }
    }

    pub fn toy_vectors(n: usize, input_dim: usize, projection_dim: usize, with_self_terms: bool) -> Self {
        Self {
            modalities: ModelConfig::toy_vectors(n, input_dim, projection_dim).modalities,
            projection_dim,
            self_head: with_self_terms.then_some(HeadConfig {
                hidden: 2 * projection_dim,
                output: projection_dim / 2,
                layers: 3,
                shared: false,
            }),
        }
    }
}

#[derive(Debug)]
pub struct DualEncoderModel {
    pub config: DualEncoderConfig,
    params: ParamStore,
    encoders: Vec<Encoder>,
    projectors: Vec<Linear>,
    self_heads: Vec<Mlp>,
}

impl DualEncoderModel {
    pub fn new(config: &DualEncoderConfig, seed: u64) -> Result<Self> {
        if config.modalities.len() < 2 {
            return Err(Error::validation("cross-modal baselines need at least two modalities"));
        }
        let mut ps = ParamStore::new();
        let (mut encoders, mut projectors, mut self_heads) = (Vec::new(), Vec::new(), Vec::new());
        for (i, m) in config.modalities.iter().enumerate() {
            let mut r = rng(derive_str(seed, &format!("modality{i}")));
            let enc = Encoder::new(&mut ps, &format!("modality{i}.encoder"), m, config.projection_dim, &mut r)?;
            let flat: usize = enc.output_shape(config.projection_dim).iter().product();
            projectors.push(Linear::new(&mut ps, &format!("modality{i}.projector"), flat, config.projection_dim, &mut r)?);
            if let Some(h) = &config.self_head {
                self_heads.push(Mlp::new(&mut ps, &format!("modality{i}.self_head"), config.projection_dim, h.hidden, h.output, h.layers, &mut r)?);
            }
            encoders.push(enc);
        }
        Ok(Self {
            config: config.clone(),
            params: ps,
            encoders,
            projectors,
            self_heads,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn num_modalities(&self) -> usize {
        self.encoders.len()
    }

    pub fn has_self_terms(&self) -> bool {
        !self.self_heads.is_empty()
    }

    /// Projected unimodal embedding `(B, projection_dim)`.
    pub fn embed(&self, i: usize, x: &Tensor) -> Result<Tensor> {
        let enc = self.encoders.get(i).ok_or_else(|| Error::validation(format!("no modality {i}")))?;
        Ok(self.projectors[i].forward(&enc.forward(x)?.flatten()?)?)
    }

    pub fn self_head(&self, i: usize, e: &Tensor) -> Result<Tensor> {
        self.self_heads
            .get(i)
            .ok_or_else(|| Error::validation("model has no self-supervised heads"))?
            .forward(e)
    }
}

/// Serializable description sufficient to rebuild a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Architecture {
    Comm(ModelConfig),
    DualEncoder(DualEncoderConfig),
}

impl Architecture {
    pub fn modalities(&self) -> &[ModalityEncoderConfig] {
        match self {
            Architecture::Comm(c) => &c.modalities,
            Architecture::DualEncoder(c) => &c.modalities,
        }
    }
}

#[derive(Debug)]
pub enum Network {
    Comm(CommModel),
    DualEncoder(DualEncoderModel),
}

impl Network {
    pub fn build(arch: &Architecture, seed: u64) -> Result<Self> {
        Ok(match arch {
            Architecture::Comm(c) => Network::Comm(CommModel::new(c, seed)?),
            Architecture::DualEncoder(c) => Network::DualEncoder(DualEncoderModel::new(c, seed)?),
        })
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            Network::Comm(m) => Architecture::Comm(m.config.clone()),
            Network::DualEncoder(m) => Architecture::DualEncoder(m.config.clone()),
        }
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            Network::Comm(m) => m.params(),
            Network::DualEncoder(m) => m.params(),
        }
    }

    pub fn num_modalities(&self) -> usize {
        match self {
            Network::Comm(m) => m.num_modalities(),
            Network::DualEncoder(m) => m.num_modalities(),
        }
    }

    /// Width of [`Network::features`].
    pub fn feature_dim(&self) -> usize {
        match self {
            Network::Comm(m) => m.embed_dim(),
            Network::DualEncoder(m) => m.config.projection_dim * m.num_modalities(),
        }
    }

    /// Representation used for probing: the fused vector for the
    /// multimodal model, the concatenated projected embeddings for the
    /// baselines. Never passes through a projection head.
    pub fn features(&self, inputs: &[Tensor]) -> Result<Tensor> {
        match self {
            Network::Comm(m) => m.fuse(&inputs.iter().cloned().map(Some).collect::<Vec<_>>()),
            Network::DualEncoder(m) => {
                if inputs.len() != m.num_modalities() {
                    return Err(Error::validation("every modality is required"));
                }
                let parts = inputs.iter().enumerate().map(|(i, x)| m.embed(i, x)).collect::<Result<Vec<_>>>()?;
                Ok(Tensor::cat(&parts, 1)?)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn toy_inputs(n: usize, b: usize, dim: usize, seed: u64) -> Vec<Tensor> {
        (0..n)
            .map(|i| {
                let mut r = rng(seed + i as u64);
                let v: Vec<f32> = (0..b * dim).map(|_| rand::Rng::random_range(&mut r, -1.0..1.0)).collect();
                Tensor::from_vec(v, (b, dim), &Device::Cpu).unwrap()
            })
            .collect()
    }

    #[test]
    fn desk_model_fuses_two_images() {
        let spec = TrifeatureSpec::desk();
        let mut cfg = ModelConfig::trifeature(&spec);
        cfg.embed_dim = 64;
        cfg.head = HeadConfig {
            hidden: 64,
            output: 32,
            layers: 3,
            shared: true,
        };
        let m = CommModel::new(&cfg, 0).unwrap();
        let x = Tensor::ones((2, 3, 64, 64), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(m.tokens(0, &x).unwrap().dims(), &[2, 16, 64]);
        let z = m.fuse(&[Some(x.clone()), Some(x.clone())]).unwrap();
        assert_eq!(z.dims(), &[2, 64]);
        let z1 = m.fuse(&[Some(x.clone()), None]).unwrap();
        assert_eq!(z1.dims(), &[2, 64]);
        assert_eq!(m.head(HeadTerm::Joint, &z).unwrap().dims(), &[2, 32]);
        assert!(matches!(m.fuse(&[None, None]), Err(Error::Validation(_))));
    }

    #[test]
    fn views_count_fusion_calls() {
        for n in [2usize, 3] {
            let m = CommModel::new(&ModelConfig::toy_vectors(n, 5, 16), 1).unwrap();
            let x = toy_inputs(n, 4, 5, 2);
            let before = m.fusion_calls();
            let v = m.forward_views(&x, &x, &x).unwrap();
            assert_eq!(m.fusion_calls() - before, n + 2);
            assert_eq!(v.projections.len(), n);
            assert_eq!(v.prime.to_vec2::<f32>().unwrap(), v.double_prime.to_vec2::<f32>().unwrap());
        }
    }

    #[test]
    fn fusion_parameter_count_is_independent_of_n() {
        let count = |n| CommModel::new(&ModelConfig::toy_vectors(n, 5, 16), 0).unwrap().params().num_parameters_with_prefix("fusion.");
        assert_eq!(count(2), count(3));
        assert_eq!(count(2), count(5));
    }

    #[test]
    fn block_order_does_not_change_the_class_token() {
        let m = CommModel::new(&ModelConfig::toy_vectors(2, 5, 16), 3).unwrap();
        let x = toy_inputs(2, 3, 5, 4);
        let s0 = m.tokens(0, &x[0]).unwrap();
        let s1 = m.tokens(1, &x[1]).unwrap();
        let a = m.fuse_tokens(&[s0.clone(), s1.clone()]).unwrap();
        let b = m.fuse_tokens(&[s1, s0]).unwrap();
        let diff = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(diff < 1e-5);
    }

    #[test]
    fn class_token_depends_on_every_present_modality() {
        let m = CommModel::new(&ModelConfig::toy_vectors(2, 5, 16), 5).unwrap();
        let x = toy_inputs(2, 3, 5, 6);
        let vars: Vec<candle_core::Var> = x.iter().map(|t| candle_core::Var::from_tensor(t).unwrap()).collect();
        let z = m.fuse(&[Some(vars[0].as_tensor().clone()), Some(vars[1].as_tensor().clone())]).unwrap();
        let grads = z.sum_all().unwrap().backward().unwrap();
        for v in &vars {
            let g = grads.get(v.as_tensor()).unwrap();
            let norm = g.sqr().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap();
            assert!(norm > 0.0);
        }
    }

    #[test]
    fn projection_never_touches_other_encoders() {
        let n = 3;
        let m = CommModel::new(&ModelConfig::toy_vectors(n, 5, 16), 7).unwrap();
        let x = toy_inputs(n, 4, 5, 8);
        for i in 0..n {
            let slots: Vec<Option<Tensor>> = (0..n).map(|j| (i == j).then(|| x[j].clone())).collect();
            let z = m.head(HeadTerm::Projection(i), &m.fuse(&slots).unwrap()).unwrap();
            let grads = z.sum_all().unwrap().backward().unwrap();
            for (name, var) in m.params().vars() {
                let other = (0..n).any(|j| j != i && name.starts_with(&CommModel::modality_prefix(j)));
                if other {
                    assert!(grads.get(var.as_tensor()).is_none(), "{name} received a gradient");
                }
            }
        }
    }

    #[test]
    fn linear_fusion_variant_has_no_converters() {
        let mut cfg = ModelConfig::toy_vectors(2, 5, 16);
        cfg.fusion = FusionKind::ConcatLinear { per_modality_dim: 8 };
        let m = CommModel::new(&cfg, 0).unwrap();
        assert!(m.params().names_with_prefix("modality0.converter").next().is_none());
        let x = toy_inputs(2, 3, 5, 1);
        assert_eq!(m.fuse(&[Some(x[0].clone()), None]).unwrap().dims(), &[3, 16]);
        assert_eq!(m.fuse(&[Some(x[0].clone()), Some(x[1].clone())]).unwrap().dims(), &[3, 16]);
    }

    #[test]
    fn per_term_heads_are_distinct() {
        let mut cfg = ModelConfig::toy_vectors(2, 5, 16);
        cfg.head.shared = false;
        let m = CommModel::new(&cfg, 0).unwrap();
        let z = toy_inputs(1, 2, 16, 3).remove(0);
        let a = m.head(HeadTerm::Joint, &z).unwrap().to_vec2::<f32>().unwrap();
        let b = m.head(HeadTerm::Projection(0), &z).unwrap().to_vec2::<f32>().unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn dual_encoder_features_concatenate_embeddings() {
        let cfg = DualEncoderConfig::toy_vectors(2, 5, 16, true);
        let net = Network::build(&Architecture::DualEncoder(cfg), 0).unwrap();
        let x = toy_inputs(2, 3, 5, 1);
        assert_eq!(net.features(&x).unwrap().dims(), &[3, 32]);
        assert_eq!(net.feature_dim(), 32);
    }
}
