//! Training: configuration, optimizer, schedules and the run loop.

pub mod data;
pub mod engine;
pub mod optim;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use data::{MultimodalSource, PairSource, VectorSource};
pub use engine::{train_run, RunMeta, RunRecord, StepRecord, Trainer};
pub use optim::AdamW;

use crate::augment::{image_policy, AugmentationPolicy};
use crate::error::IoContext;
use crate::model::{
    profile_encoder, Architecture, DualEncoderConfig, EncoderArch, FusionKind, HeadConfig, InputKind, ModalityEncoderConfig,
    ModelConfig,
};
use crate::objectives::{LossTerms, NceOptions};
use crate::trifeature::ResolutionProfile;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Comm,
    Cross,
    CrossSelf,
}

impl Objective {
    pub fn as_str(&self) -> &'static str {
        match self {
            Objective::Comm => "comm",
            Objective::Cross => "cross",
            Objective::CrossSelf => "cross_self",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "comm" => Ok(Objective::Comm),
            "cross" => Ok(Objective::Cross),
            "cross_self" | "cross+self" => Ok(Objective::CrossSelf),
            other => Err(Error::validation(format!("unknown objective {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    CosineWarmup { warmup_steps: usize, final_lr: f64 },
}

/// Learning rate at `step` of a run with `total_steps` optimizer steps.
pub fn lr_schedule(step: usize, total_steps: usize, base_lr: f64, schedule: &Schedule) -> f64 {
    match *schedule {
        Schedule::Constant => base_lr,
        Schedule::CosineWarmup { warmup_steps, final_lr } => {
            if step < warmup_steps {
                return base_lr * (step + 1) as f64 / warmup_steps as f64;
            }
            let last = total_steps.saturating_sub(1);
            if last <= warmup_steps {
                return final_lr;
            }
            let progress = ((step - warmup_steps) as f64 / (last - warmup_steps) as f64).min(1.0);
            final_lr + 0.5 * (base_lr - final_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

/// Network shape choices that are not dictated by the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub embed_dim: usize,
    pub fusion: FusionKind,
    pub type_embeddings: bool,
    pub head: HeadConfig,
    /// Overrides the profile's image encoder.
    pub image_encoder: Option<EncoderArch>,
    pub vector_encoder: EncoderArch,
    pub sequence_hidden: usize,
    /// Baselines: width of the per-modality linear projector.
    pub projection_dim: usize,
    /// Baselines: head of the per-modality self-supervised terms.
    pub self_head: HeadConfig,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            embed_dim: 512,
            fusion: FusionKind::default(),
            type_embeddings: true,
            head: HeadConfig::default(),
            image_encoder: None,
            vector_encoder: EncoderArch::VectorMlp { hidden: 64, features: 8 },
            sequence_hidden: 128,
            projection_dim: 512,
            self_head: HeadConfig {
                hidden: 1024,
                output: 256,
                layers: 3,
                shared: false,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub seed: u64,
    pub temperature: f64,
    /// Count the positive among the denominator terms of the multimodal
    /// loss; the baselines always do.
    #[serde(default)]
    pub include_positive: bool,
    #[serde(default = "default_true")]
    pub symmetric: bool,
    /// Augmentation policy the two views are drawn from.
    pub policy: AugmentationPolicy,
    pub profile: ResolutionProfile,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub loss_terms: LossTerms,
    /// Weight of the per-modality self terms of the cross+self baseline.
    #[serde(default = "default_one")]
    pub self_weight: f64,
    #[serde(default)]
    pub model: ModelSpec,
    /// Caps optimizer steps per epoch; `None` uses every full batch.
    #[serde(default)]
    pub max_steps_per_epoch: Option<usize>,
    /// Extra epochs at which a checkpoint is kept.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checkpoint_epochs: Vec<usize>,
    /// Rows encoded per backward pass. The batch loss is computed once on
    /// cached embeddings and its gradient is pushed through the encoders
    /// chunk by chunk, so memory scales with this size, not the batch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub micro_batch: Option<usize>,
}

fn default_true() -> bool {
    true
}

fn default_one() -> f64 {
    1.0
}

fn default_checkpoint_every() -> usize {
    10
}

impl TrainConfig {
    /// Benchmark defaults: lr 3e-4, weight decay 1e-4, 100 epochs, constant
    /// schedule, full-strength image augmentation, batch 256 at full
    /// resolution and 128 at desk resolution.
    pub fn trifeature(objective: Objective, profile: ResolutionProfile, seed: u64) -> Self {
        Self {
            objective,
            epochs: 100,
            batch_size: match profile {
                ResolutionProfile::Full224 => 256,
                ResolutionProfile::Desk64 => 128,
            },
            lr: 3e-4,
            weight_decay: 1e-4,
            schedule: Schedule::Constant,
            seed,
            temperature: 0.1,
            include_positive: false,
            symmetric: true,
            policy: image_policy(1.0).expect("strength in range"),
            profile,
            checkpoint_every: 10,
            loss_terms: LossTerms::default(),
            self_weight: 1.0,
            model: ModelSpec::default(),
            max_steps_per_epoch: None,
            checkpoint_epochs: Vec::new(),
            micro_batch: Some(match profile {
                ResolutionProfile::Full224 => 8,
                ResolutionProfile::Desk64 => 16,
            }),
        }
    }

    pub fn nce_options(&self) -> NceOptions {
        NceOptions {
            temperature: self.temperature,
            include_positive: self.include_positive,
            symmetric: self.symmetric,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::validation(format!("batch size must be at least 2, got {}", self.batch_size)));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::validation("learning rate and weight decay must be non-negative"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::validation("temperature must be positive"));
        }
        if self.micro_batch == Some(0) {
            return Err(Error::validation("micro_batch must be at least 1"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::validation("checkpoint_every must be at least 1"));
        }
        if !self.loss_terms.joint && !self.loss_terms.projections {
            return Err(Error::validation("at least one loss term must be enabled"));
        }
        self.policy.validate()
    }

    fn encoder_for(&self, input: InputKind) -> EncoderArch {
        match input {
            InputKind::Image { .. } => self.model.image_encoder.unwrap_or(profile_encoder(self.profile)),
            InputKind::Vector { .. } => self.model.vector_encoder,
            InputKind::Sequence { .. } => EncoderArch::GenericSequenceEncoder {
                hidden: self.model.sequence_hidden,
            },
        }
    }

    /// Network for this objective over modalities with the given inputs.
    pub fn architecture(&self, inputs: &[InputKind]) -> Architecture {
        let modalities: Vec<ModalityEncoderConfig> = inputs
            .iter()
            .enumerate()
            .map(|(i, &input)| ModalityEncoderConfig {
                modality: format!("modality{}", i + 1),
                architecture: self.encoder_for(input),
                input,
            })
            .collect();
        match self.objective {
            Objective::Comm => Architecture::Comm(ModelConfig {
                embed_dim: self.model.embed_dim,
                modalities,
                fusion: self.model.fusion,
                type_embeddings: self.model.type_embeddings,
                head: self.model.head,
            }),
            Objective::Cross | Objective::CrossSelf => Architecture::DualEncoder(DualEncoderConfig {
                modalities,
                projection_dim: self.model.projection_dim,
                self_head: (self.objective == Objective::CrossSelf).then_some(self.model.self_head),
            }),
        }
    }

    /// Reads JSON, or TOML when the extension is `.toml`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_defaults() {
        let c = TrainConfig::trifeature(Objective::Comm, ResolutionProfile::Desk64, 0);
        assert_eq!((c.lr, c.weight_decay, c.epochs, c.batch_size), (3e-4, 1e-4, 100, 128));
        assert_eq!(TrainConfig::trifeature(Objective::Comm, ResolutionProfile::Full224, 0).batch_size, 256);
        assert_eq!(c.schedule, Schedule::Constant);
    }

    #[test]
    fn schedules() {
        assert_eq!(lr_schedule(0, 100, 0.1, &Schedule::Constant), lr_schedule(99, 100, 0.1, &Schedule::Constant));
        let s = Schedule::CosineWarmup {
            warmup_steps: 10,
            final_lr: 1e-6,
        };
        let lrs: Vec<f64> = (0..100).map(|i| lr_schedule(i, 100, 1e-3, &s)).collect();
        assert!(lrs[..10].windows(2).all(|w| w[0] <= w[1]));
        assert!((lrs[9] - 1e-3).abs() < 1e-15);
        assert!((lrs[99] - 1e-6).abs() < 1e-15);
        assert!(lrs[10..].windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn config_round_trips_through_json_and_toml() {
        let c = TrainConfig::trifeature(Objective::CrossSelf, ResolutionProfile::Desk64, 3);
        let dir = tempfile::tempdir().unwrap();
        let j = dir.path().join("c.json");
        std::fs::write(&j, serde_json::to_string_pretty(&c).unwrap()).unwrap();
        assert_eq!(TrainConfig::load(&j).unwrap(), c);
        let t = dir.path().join("c.toml");
        std::fs::write(&t, toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(TrainConfig::load(&t).unwrap(), c);
        std::fs::write(&j, "{\"objective\": \"comm\"}").unwrap();
        assert!(matches!(TrainConfig::load(&j), Err(Error::Config(_))));
    }

    #[test]
    fn objective_picks_the_network_family() {
        let inputs = [InputKind::Image { channels: 3, size: 64 }; 2];
        let mut c = TrainConfig::trifeature(Objective::Comm, ResolutionProfile::Desk64, 0);
        assert!(matches!(c.architecture(&inputs), Architecture::Comm(_)));
        c.objective = Objective::CrossSelf;
        match c.architecture(&inputs) {
            Architecture::DualEncoder(d) => assert!(d.self_head.is_some()),
            _ => panic!(),
        }
    }
}
