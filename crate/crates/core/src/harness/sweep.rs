//! Augmentation-strength sweep on the synergy task.

use std::fs;
use std::path::Path;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::augment::crop_sweep_policy;
use crate::error::IoContext;
use crate::model::{HeadTerm, Network};
use crate::objectives::{info_nce, NceOptions};
use crate::probe::{mean_std, FeatureCache, FrozenModel, ProbeFeatures, ProbeTask};
use crate::rng::{derive, derive_str};
use crate::train::data::{collate, MultimodalSource};
use crate::train::engine::checkpoint_dir;
use crate::train::{train_run, Objective, PairSource, TrainConfig};
use crate::trifeature::Split;
use crate::{Error, Result};

use super::{csv_error, prepare_datasets, write_json_atomic, ExperimentPlan, MethodSpec};

/// Smallest crop scale, reached at strength 1.
pub const CROP_FLOOR: f64 = 5e-4;

/// Default crop lower bounds, from light to heavy augmentation.
pub const DEFAULT_CROP_GRID: [f64; 5] = [0.15, 0.10, 0.05, 0.01, 0.0005];

/// Crop lower bound used at `strength` in `[0, 1]`.
pub fn crop_min_for_strength(strength: f64) -> f64 {
    1.0 - strength * (1.0 - CROP_FLOOR)
}

pub fn strength_for_crop_min(crop_min: f64) -> f64 {
    (1.0 - crop_min) / (1.0 - CROP_FLOOR)
}

pub fn default_strengths() -> Vec<f64> {
    DEFAULT_CROP_GRID.iter().map(|&c| strength_for_crop_min(c)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub strength: f64,
    pub crop_min: f64,
    /// Per replicate: Î_NCE between clean inputs and one augmented view.
    pub i_nce: Vec<f64>,
    /// Per replicate: synergy balanced accuracy in percent.
    pub accuracy: Vec<f64>,
    pub i_nce_mean: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// Rank correlation between crop lower bound (augmentation lightness)
    /// and mean Î_NCE.
    pub spearman_lightness_ince: f64,
    /// Whether the mean accuracy peaks strictly inside the grid.
    pub interior_maximum: bool,
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Î_NCE = log B − InfoNCE between critic outputs of clean inputs and one
/// augmented view, averaged over full batches of `source`.
pub fn estimate_ince(
    net: &Network,
    config: &TrainConfig,
    source: &dyn MultimodalSource,
    seed: u64,
) -> Result<f64> {
    let Network::Comm(m) = net else {
        return Err(Error::validation("the view estimate needs the multimodal critic"));
    };
    let n = source.len();
    let b = config.batch_size.min(n);
    if b < 2 {
        return Err(Error::validation("the view estimate needs at least two samples"));
    }
    let inputs = source.inputs();
    let opts = NceOptions {
        include_positive: true,
        ..config.nce_options()
    };
    let mut total = 0.0;
    let batches = n / b;
    for k in 0..batches {
        let mut clean = Vec::with_capacity(b);
        let mut view = Vec::with_capacity(b);
        for idx in k * b..(k + 1) * b {
            let x = source.sample(idx)?;
            view.push(config.policy.apply(&x, derive(seed, &[idx as u64]))?);
            clean.push(x);
        }
        let critic = |samples: &[_]| -> Result<Tensor> {
            let z = m.fuse(&collate(samples, &inputs)?.into_iter().map(Some).collect::<Vec<_>>())?;
            Ok(m.head(HeadTerm::Joint, &z)?.detach())
        };
        let loss = info_nce(&critic(&clean)?, &critic(&view)?, &opts)?.to_scalar::<f32>()? as f64;
        total += (b as f64).ln() - loss;
    }
    Ok(total / batches as f64)
}

/// Trains the multimodal model on the synergy experiment at each strength
/// and replicate, then records Î_NCE and synergy probe accuracy.
pub fn sweep_aug_strength(plan: &ExperimentPlan, strengths: &[f64]) -> Result<SweepResult> {
    if strengths.len() < 3 {
        return Err(Error::validation("the sweep needs at least three strength levels"));
    }
    if let Some(s) = strengths.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::validation(format!("strength {s} is outside [0, 1]")));
    }
    plan.validate()?;
    let dir = plan.output_dir.join("sweep");
    fs::create_dir_all(&dir).at(&dir)?;
    let data = prepare_datasets(plan)?;
    let cache = FeatureCache::new(plan.output_dir.join("feature_cache"));
    let test = PairSource::new(&data.0, Split::Test);
    let mut points = Vec::new();
    for (level, &strength) in strengths.iter().enumerate() {
        let crop_min = crop_min_for_strength(strength);
        let method = MethodSpec {
            policy: Some(crop_sweep_policy(crop_min)?),
            ..MethodSpec::new(format!("sweep_level{level}"), Objective::Comm)
        };
        let mut i_nce = Vec::new();
        let mut accuracy = Vec::new();
        for r in 0..plan.replicates {
            let config = plan.train_config(&method, r);
            let run = dir.join(format!("level{level}")).join(format!("rep{r}")).join("exp2");
            train_run(&config, &PairSource::new(&data.1, Split::Train), &run)?;
            let model = FrozenModel::load(&checkpoint_dir(&run, config.epochs))?;
            i_nce.push(estimate_ince(&model.network, &config, &test, derive_str(config.seed, "ince"))?);
            let feats = ProbeFeatures::extract(&model, &data.0, &plan.probe, Some(&cache))?;
            let task = ProbeTask::SynergyMapping;
            let accs = plan
                .probe
                .seeds
                .iter()
                .map(|&s| Ok(feats.probe(task, 2, &plan.probe.probe, derive(s, &[task as u64]))?.balanced_accuracy))
                .collect::<Result<Vec<f64>>>()?;
            accuracy.push(mean_std(&accs).0);
        }
        let (accuracy_mean, accuracy_std) = mean_std(&accuracy);
        points.push(SweepPoint {
            strength,
            crop_min,
            i_nce_mean: mean_std(&i_nce).0,
            i_nce,
            accuracy,
            accuracy_mean,
            accuracy_std,
        });
    }
    let result = summarize(points);
    write_sweep(&dir, &result)?;
    Ok(result)
}

pub fn summarize(points: Vec<SweepPoint>) -> SweepResult {
    let lightness: Vec<f64> = points.iter().map(|p| p.crop_min).collect();
    let ince: Vec<f64> = points.iter().map(|p| p.i_nce_mean).collect();
    let best = points
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, p)| if p.accuracy_mean > b.1 { (i, p.accuracy_mean) } else { b })
        .0;
    SweepResult {
        spearman_lightness_ince: spearman(&lightness, &ince),
        interior_maximum: best != 0 && best + 1 != points.len(),
        points,
    }
}

/// `sweep.json` plus `sweep.csv` with one row per strength level.
pub fn write_sweep(dir: &Path, result: &SweepResult) -> Result<()> {
    write_json_atomic(&dir.join("sweep.json"), result)?;
    let path = dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_error)?;
    w.write_record(["strength", "crop_min", "i_nce", "accuracy_mean", "accuracy_std", "replicates"])
        .map_err(csv_error)?;
    for p in &result.points {
        w.write_record([
            format!("{:.4}", p.strength),
            format!("{:.4}", p.crop_min),
            format!("{:.4}", p.i_nce_mean),
            format!("{:.2}", p.accuracy_mean),
            format!("{:.2}", p.accuracy_std),
            p.accuracy.len().to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush().at(&path)
}
