//! The four interaction probes and their reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::features::{dataset_fingerprint, extract_features, FeatureCache, FrozenModel};
use super::linear::{linear_probe, ProbeOptions, ProbeResult};
use crate::error::IoContext;
use crate::model::Network;
use crate::rng::derive;
use crate::train::PairSource;
use crate::trifeature::{BimodalDataset, Experiment, PairedSample, Split};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTask {
    RedundancyShape,
    UniquenessTexture1,
    UniquenessTexture2,
    SynergyMapping,
}

impl ProbeTask {
    pub const ALL: [ProbeTask; 4] = [
        ProbeTask::RedundancyShape,
        ProbeTask::UniquenessTexture1,
        ProbeTask::UniquenessTexture2,
        ProbeTask::SynergyMapping,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ProbeTask::RedundancyShape => "redundancy_shape",
            ProbeTask::UniquenessTexture1 => "uniqueness_texture_1",
            ProbeTask::UniquenessTexture2 => "uniqueness_texture_2",
            ProbeTask::SynergyMapping => "synergy_mapping",
        }
    }

    /// Short column header: R, U1, U2 or S.
    pub fn column(&self) -> &'static str {
        match self {
            ProbeTask::RedundancyShape => "R",
            ProbeTask::UniquenessTexture1 => "U1",
            ProbeTask::UniquenessTexture2 => "U2",
            ProbeTask::SynergyMapping => "S",
        }
    }

    pub fn num_classes(&self, dataset: &BimodalDataset) -> usize {
        match self {
            ProbeTask::RedundancyShape => dataset.spec.num_shapes,
            ProbeTask::UniquenessTexture1 | ProbeTask::UniquenessTexture2 => dataset.spec.num_textures,
            ProbeTask::SynergyMapping => 2,
        }
    }

    /// Chance level in percent.
    pub fn chance_level(&self, dataset: &BimodalDataset) -> f64 {
        100.0 / self.num_classes(dataset) as f64
    }

    /// The synergy label is rare, so it is trained with balanced class
    /// weights and scored by balanced accuracy.
    pub fn balanced(&self) -> bool {
        matches!(self, ProbeTask::SynergyMapping)
    }

    pub fn metric(&self) -> &'static str {
        if self.balanced() {
            "balanced_accuracy"
        } else {
            "accuracy"
        }
    }

    pub fn label(&self, pair: &PairedSample) -> usize {
        match self {
            ProbeTask::RedundancyShape => pair.first.attributes.shape as usize,
            ProbeTask::UniquenessTexture1 => pair.first.attributes.texture as usize,
            ProbeTask::UniquenessTexture2 => pair.second.attributes.texture as usize,
            ProbeTask::SynergyMapping => pair.mapping_label as usize,
        }
    }

    pub fn labels(&self, pairs: &[PairedSample]) -> Vec<usize> {
        pairs.iter().map(|p| self.label(p)).collect()
    }
}

impl std::str::FromStr for ProbeTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProbeTask::ALL
            .into_iter()
            .find(|t| t.name() == s || t.column().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::validation(format!("unknown probe task {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: ProbeTask,
    pub metric: String,
    pub chance_level: f64,
    pub mean: f64,
    /// Sample standard deviation over probe seeds; zero for a single run.
    pub std: f64,
    pub runs: Vec<ProbeResult>,
    pub checkpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Model probed for redundancy and uniqueness.
    pub checkpoint: String,
    /// Model probed for synergy.
    pub synergy_checkpoint: String,
    pub feature_source: String,
    pub seeds: Vec<u64>,
    pub tasks: Vec<TaskSummary>,
}

impl ProbeReport {
    pub fn task(&self, task: ProbeTask) -> Option<&TaskSummary> {
        self.tasks.iter().find(|t| t.task == task)
    }

    pub fn mean(&self, task: ProbeTask) -> Option<f64> {
        self.task(task).map(|t| t.mean)
    }

    /// Unweighted mean over the four tasks, with uniqueness counted per
    /// modality.
    pub fn average(&self) -> f64 {
        self.tasks.iter().map(|t| t.mean).sum::<f64>() / self.tasks.len().max(1) as f64
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| task | metric | chance | mean | std | runs |");
        let _ = writeln!(s, "|---|---|---|---|---|---|");
        for t in &self.tasks {
            let _ = writeln!(
                s,
                "| {} ({}) | {} | {:.1} | {:.2} | {:.2} | {} |",
                t.task.name(),
                t.task.column(),
                t.metric,
                t.chance_level,
                t.mean,
                t.std,
                t.runs.len()
            );
        }
        let _ = writeln!(s, "\nfeatures: {}  ", self.feature_source);
        let _ = writeln!(s, "redundancy/uniqueness checkpoint: {}  ", self.checkpoint);
        let _ = writeln!(s, "synergy checkpoint: {}", self.synergy_checkpoint);
        s
    }

    /// Writes `probe_report.json` and `probe_report.md` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        let json = dir.join("probe_report.json");
        fs::write(&json, serde_json::to_vec_pretty(self)?).at(&json)?;
        let md = dir.join("probe_report.md");
        fs::write(&md, self.to_markdown()).at(&md)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let json = dir.join("probe_report.json");
        Ok(serde_json::from_slice(&fs::read(&json).at(&json)?)?)
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportOptions {
    pub seeds: Vec<u64>,
    pub probe: ProbeOptions,
    pub batch_size: usize,
    /// Caps the number of training pairs used to fit probes.
    pub max_train_pairs: Option<usize>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            probe: ProbeOptions::default(),
            batch_size: 256,
            max_train_pairs: None,
        }
    }
}

/// Train/test features of one model on the experiment 1 pairs.
#[derive(Debug, Clone)]
pub struct ProbeFeatures {
    pub train: Array2<f32>,
    pub test: Array2<f32>,
    pub train_pairs: Vec<PairedSample>,
    pub test_pairs: Vec<PairedSample>,
}

impl ProbeFeatures {
    pub fn extract(
        model: &FrozenModel,
        dataset: &BimodalDataset,
        options: &ReportOptions,
        cache: Option<&FeatureCache>,
    ) -> Result<Self> {
        if dataset.experiment != Experiment::SharedAndUnique {
            return Err(Error::validation("probes are fitted on the experiment 1 pairs"));
        }
        let mut out = Vec::new();
        for split in [Split::Train, Split::Test] {
            let mut src = PairSource::new(dataset, split);
            if split == Split::Train {
                if let Some(cap) = options.max_train_pairs {
                    src.pairs.truncate(cap);
                }
            }
            let feats = match cache {
                Some(c) => {
                    let mut fp = dataset_fingerprint(dataset, split)?;
                    fp.push_str(&format!(":{}", src.pairs.len()));
                    c.get_or_extract(&model.network, &model.weights_sha256, &fp, &src, options.batch_size)?.0
                }
                None => extract_features(&model.network, &src, options.batch_size)?,
            };
            out.push((feats, src.pairs));
        }
        let (test, test_pairs) = out.pop().expect("two splits");
        let (train, train_pairs) = out.pop().expect("two splits");
        Ok(Self {
            train,
            test,
            train_pairs,
            test_pairs,
        })
    }

    pub fn probe(&self, task: ProbeTask, num_classes: usize, options: &ProbeOptions, seed: u64) -> Result<ProbeResult> {
        let options = ProbeOptions {
            balanced: task.balanced(),
            ..*options
        };
        linear_probe(
            self.train.view(),
            &task.labels(&self.train_pairs),
            self.test.view(),
            &task.labels(&self.test_pairs),
            num_classes,
            &options,
            seed,
        )
    }
}

fn feature_source(net: &Network) -> &'static str {
    match net {
        Network::Comm(_) => "fused_class_token",
        Network::DualEncoder(_) => "concatenated_projected_embeddings",
    }
}

/// Probes every task over every seed. Redundancy and uniqueness use
/// `features`; synergy uses `synergy_features`.
pub fn summarize(
    dataset: &BimodalDataset,
    features: &ProbeFeatures,
    synergy_features: &ProbeFeatures,
    options: &ReportOptions,
    checkpoints: (&str, &str),
    source: &str,
) -> Result<ProbeReport> {
    let mut tasks = Vec::new();
    for task in ProbeTask::ALL {
        let (feats, ckpt) = if task == ProbeTask::SynergyMapping {
            (synergy_features, checkpoints.1)
        } else {
            (features, checkpoints.0)
        };
        let runs = options
            .seeds
            .iter()
            .map(|&s| feats.probe(task, task.num_classes(dataset), &options.probe, derive(s, &[task as u64])))
            .collect::<Result<Vec<_>>>()?;
        let values: Vec<f64> = runs
            .iter()
            .map(|r| if task.balanced() { r.balanced_accuracy } else { r.accuracy })
            .collect();
        let (mean, std) = mean_std(&values);
        tasks.push(TaskSummary {
            task,
            metric: task.metric().into(),
            chance_level: task.chance_level(dataset),
            mean,
            std,
            runs,
            checkpoint: ckpt.into(),
        });
    }
    Ok(ProbeReport {
        checkpoint: checkpoints.0.into(),
        synergy_checkpoint: checkpoints.1.into(),
        feature_source: source.into(),
        seeds: options.seeds.clone(),
        tasks,
    })
}

/// Runs all four probes. `model` is trained on experiment 1 and probed for
/// redundancy and uniqueness; `synergy_model` is trained on experiment 2
/// and probed for the mapping label. Both probes are fitted on the
/// experiment 1 pairs of `dataset`.
pub fn interaction_report(
    model: &FrozenModel,
    synergy_model: &FrozenModel,
    dataset: &BimodalDataset,
    options: &ReportOptions,
    cache: Option<&FeatureCache>,
) -> Result<ProbeReport> {
    let features = ProbeFeatures::extract(model, dataset, options, cache)?;
    let synergy = if synergy_model.weights_sha256 == model.weights_sha256 {
        features.clone()
    } else {
        ProbeFeatures::extract(synergy_model, dataset, options, cache)?
    };
    summarize(
        dataset,
        &features,
        &synergy,
        options,
        (&model.label, &synergy_model.label),
        feature_source(&model.network),
    )
}
