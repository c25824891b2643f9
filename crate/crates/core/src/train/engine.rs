//! The optimization loop and its on-disk run record.
//!
//! Run directory layout:
//!
//! ```text
//! config.json
//! losses.jsonl                one record per optimizer step
//! checkpoints/epoch_0000.ckpt weights, architecture, optimizer state
//! meta.json
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::{collate, MultimodalSource};
use super::optim::{AdamW, AdamWConfig};
use super::{lr_schedule, Objective, TrainConfig};
use crate::error::IoContext;
use crate::model::checkpoint::{atomic_dir, load_weights_into, write_into};
use crate::model::{InputKind, Network};
use crate::objectives::{comm_loss_per_term, cross_loss, info_nce, NceOptions};
use crate::rng::{derive, derive_str, rng};
use crate::{Error, Result};

/// One logged optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub batch_id: String,
    /// Joint term of the multimodal loss, or the cross-modal term of the
    /// baselines.
    #[serde(rename = "L")]
    pub l: Option<f32>,
    /// Projection terms of the multimodal loss, or the self terms of the
    /// cross+self baseline.
    #[serde(rename = "L_i")]
    pub l_i: Vec<f32>,
    /// Every InfoNCE evaluation of the step.
    pub nce: Vec<f32>,
    pub total: f32,
    pub tau: f64,
    pub lr: f64,
    pub fusion_passes: usize,
}

impl StepRecord {
    /// `L + L_1 + ... + L_n` in the order and precision of the graph.
    pub fn recomputed_total(&self) -> f32 {
        crate::objectives::LossValues {
            l: self.l,
            l_i: self.l_i.clone(),
            total: self.total,
            temperature: self.tau,
        }
        .recomputed_total()
    }
}

struct StepLoss {
    total: Tensor,
    l: Option<Tensor>,
    l_i: Vec<Tensor>,
    nce: Vec<Tensor>,
    fusion_passes: usize,
}

/// The three batches a step consumes: two augmented views and the clean
/// inputs.
#[derive(Debug, Clone)]
pub struct ViewBatch {
    pub prime: Vec<Tensor>,
    pub double_prime: Vec<Tensor>,
    pub clean: Vec<Tensor>,
}

impl ViewBatch {
    /// Consecutive row ranges of at most `size` samples.
    pub fn chunks(&self, size: usize) -> Result<Vec<ViewBatch>> {
        let rows = self.clean.first().map_or(Ok(0), |t| t.dim(0))?;
        let slice = |ts: &[Tensor], s: usize, n: usize| ts.iter().map(|t| t.narrow(0, s, n)).collect::<candle_core::Result<Vec<_>>>();
        (0..rows)
            .step_by(size.max(1))
            .map(|s| {
                let n = size.min(rows - s);
                Ok(ViewBatch {
                    prime: slice(&self.prime, s, n)?,
                    double_prime: slice(&self.double_prime, s, n)?,
                    clean: slice(&self.clean, s, n)?,
                })
            })
            .collect()
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub network: Network,
    pub optimizer: AdamW,
    pub global_step: usize,
    pub total_steps: usize,
    inputs: Vec<InputKind>,
    dump_dir: PathBuf,
}

fn value(t: &Tensor) -> Result<f32> {
    Ok(t.to_dtype(candle_core::DType::F32)?.to_scalar::<f32>()?)
}

impl Trainer {
    pub fn new(config: TrainConfig, inputs: Vec<InputKind>) -> Result<Self> {
        config.validate()?;
        let arch = config.architecture(&inputs);
        let network = Network::build(&arch, derive_str(config.seed, "init"))?;
        let optimizer = AdamW::new(AdamWConfig {
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        });
        Ok(Self {
            config,
            network,
            optimizer,
            global_step: 0,
            total_steps: 0,
            inputs,
            dump_dir: std::env::temp_dir(),
        })
    }

    pub fn set_dump_dir(&mut self, dir: impl Into<PathBuf>) {
        self.dump_dir = dir.into();
    }

    /// Full batches per epoch over `n` samples; a set smaller than one batch
    /// forms a single batch.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        let full = n / self.config.batch_size;
        let steps = if full == 0 && n >= 2 { 1 } else { full };
        self.config.max_steps_per_epoch.map_or(steps, |m| steps.min(m))
    }

    /// Sample order of an epoch.
    pub fn epoch_order(&self, n: usize, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng(derive(derive_str(self.config.seed, "order"), &[epoch as u64])));
        order
    }

    /// Batch `b` of `epoch`.
    pub fn batch_indices(&self, n: usize, epoch: usize, b: usize) -> Vec<usize> {
        let order = self.epoch_order(n, epoch);
        let size = self.config.batch_size.min(n);
        order[b * size..(b + 1) * size].to_vec()
    }

    /// Draws both augmentations independently for every sample. Seeds
    /// depend on `(run seed, epoch, sample index, view)` only.
    pub fn views(&self, source: &dyn MultimodalSource, indices: &[usize], epoch: usize) -> Result<ViewBatch> {
        let aug = derive_str(self.config.seed, "augment");
        let mut prime = Vec::with_capacity(indices.len());
        let mut double_prime = Vec::with_capacity(indices.len());
        let mut clean = Vec::with_capacity(indices.len());
        for &idx in indices {
            let x = source.sample(idx)?;
            let seed = |view: u64| derive(aug, &[epoch as u64, idx as u64, view]);
            prime.push(self.config.policy.apply(&x, seed(0))?);
            double_prime.push(self.config.policy.apply(&x, seed(1))?);
            clean.push(x);
        }
        Ok(ViewBatch {
            prime: collate(&prime, &self.inputs)?,
            double_prime: collate(&double_prime, &self.inputs)?,
            clean: collate(&clean, &self.inputs)?,
        })
    }

    fn self_terms(&self) -> bool {
        self.config.objective == Objective::CrossSelf && self.config.self_weight != 0.0
    }

    /// Critic-space embeddings of a batch, one `(B, d)` tensor per slot,
    /// and the fusion passes spent on them.
    fn embeddings(&self, views: &ViewBatch) -> Result<(Vec<Tensor>, usize)> {
        match (&self.network, self.config.objective) {
            (Network::Comm(m), Objective::Comm) => {
                let before = m.fusion_calls();
                let fused =
                    m.forward_selected_views(&views.prime, &views.double_prime, &views.clean, self.config.loss_terms.projections)?;
                let critic = m.critic_views(&fused)?;
                let mut slots = vec![critic.joint.0, critic.joint.1];
                for (anchor, prime, double_prime) in critic.terms {
                    slots.push(anchor);
                    if !m.config.head.shared {
                        slots.push(prime);
                        slots.push(double_prime);
                    }
                }
                Ok((slots, m.fusion_calls() - before))
            }
            (Network::DualEncoder(m), Objective::Cross | Objective::CrossSelf) => {
                let e = (0..m.num_modalities()).map(|i| m.embed(i, &views.prime[i])).collect::<Result<Vec<_>>>()?;
                let mut slots = e.clone();
                if self.self_terms() {
                    for (i, ei) in e.iter().enumerate() {
                        slots.push(m.self_head(i, ei)?);
                        slots.push(m.self_head(i, &m.embed(i, &views.double_prime[i])?)?);
                    }
                }
                Ok((slots, 0))
            }
            _ => Err(Error::validation("objective does not match the network family")),
        }
    }

    fn loss_from(&self, slots: &[Tensor], fusion_passes: usize) -> Result<StepLoss> {
        let tau = self.config.temperature;
        match &self.network {
            Network::Comm(m) => {
                let joint = (&slots[0], &slots[1]);
                let terms: Vec<(Tensor, Tensor, Tensor)> = if m.config.head.shared {
                    slots[2..].iter().map(|a| (a.clone(), slots[0].clone(), slots[1].clone())).collect()
                } else {
                    slots[2..].chunks(3).map(|t| (t[0].clone(), t[1].clone(), t[2].clone())).collect()
                };
                let br = comm_loss_per_term(joint, &terms, &self.config.nce_options(), self.config.loss_terms)?;
                Ok(StepLoss {
                    total: br.total,
                    l: br.l,
                    l_i: br.l_i,
                    nce: br.nce_terms,
                    fusion_passes,
                })
            }
            Network::DualEncoder(m) => {
                let n = m.num_modalities();
                let e = &slots[..n];
                let mut nce = Vec::new();
                for i in 0..n {
                    for j in i + 1..n {
                        nce.push(cross_loss(&e[i], &e[j], tau)?);
                    }
                }
                let mut cross = nce[0].clone();
                for t in &nce[1..] {
                    cross = (cross + t)?;
                }
                let mut l_i = Vec::new();
                for pair in slots[n..].chunks(2) {
                    let t = info_nce(&pair[0], &pair[1], &NceOptions::clip(tau))?;
                    nce.push(t.clone());
                    l_i.push(t);
                }
                let mut total = cross.clone();
                for t in &l_i {
                    total = if self.config.self_weight == 1.0 {
                        (total + t)?
                    } else {
                        (total + (t * self.config.self_weight)?)?
                    };
                }
                Ok(StepLoss {
                    total,
                    l: Some(cross),
                    l_i,
                    nce,
                    fusion_passes,
                })
            }
        }
    }

    fn loss(&self, views: &ViewBatch) -> Result<StepLoss> {
        let (slots, passes) = self.embeddings(views)?;
        self.loss_from(&slots, passes)
    }

    /// Loss on embeddings encoded `chunk` rows at a time with the encoder
    /// graph dropped; the embeddings come back as variables.
    fn cached_loss(&self, views: &ViewBatch, chunk: usize) -> Result<(StepLoss, Vec<Var>)> {
        let mut parts: Vec<Vec<Tensor>> = Vec::new();
        let mut passes = None;
        for part in views.chunks(chunk)? {
            let (slots, p) = self.embeddings(&part)?;
            passes.get_or_insert(p);
            parts.resize(slots.len(), Vec::new());
            for (acc, t) in parts.iter_mut().zip(slots) {
                acc.push(t.detach());
            }
        }
        let vars = parts.iter().map(|p| Var::from_tensor(&Tensor::cat(p, 0)?)).collect::<candle_core::Result<Vec<_>>>()?;
        let slots: Vec<Tensor> = vars.iter().map(|v| v.as_tensor().clone()).collect();
        Ok((self.loss_from(&slots, passes.unwrap_or(0))?, vars))
    }

    /// Gradient of `total` with respect to the parameters, re-encoding the
    /// batch chunk by chunk and contracting with the embedding gradients.
    fn chunked_grads(&self, views: &ViewBatch, total: &Tensor, slots: &[Var], chunk: usize) -> Result<GradStore> {
        let mut grads = total.backward()?;
        let slot_grads: Vec<Option<Tensor>> = slots.iter().map(|v| grads.remove(v.as_tensor())).collect();
        let mut start = 0;
        for part in views.chunks(chunk)? {
            let (emb, _) = self.embeddings(&part)?;
            let rows = emb[0].dim(0)?;
            let mut surrogate: Option<Tensor> = None;
            for (e, g) in emb.iter().zip(&slot_grads) {
                let Some(g) = g else { continue };
                let term = (e * g.narrow(0, start, rows)?)?.sum_all()?;
                surrogate = Some(match surrogate {
                    Some(s) => (s + term)?,
                    None => term,
                });
            }
            if let Some(s) = surrogate {
                grads.extend(s.backward()?)?;
            }
            start += rows;
        }
        Ok(grads)
    }

    /// Total loss of a batch without updating anything.
    pub fn evaluate_loss(&self, views: &ViewBatch) -> Result<f32> {
        value(&self.loss(views)?.total)
    }

    /// Forward, backward and one AdamW update on the given samples.
    pub fn train_step(
        &mut self,
        source: &dyn MultimodalSource,
        indices: &[usize],
        epoch: usize,
        batch_in_epoch: usize,
    ) -> Result<StepRecord> {
        if indices.len() < 2 {
            return Err(Error::validation("a training batch needs at least two samples"));
        }
        let views = self.views(source, indices, epoch)?;
        self.step_on_views(&views, epoch, &format!("epoch {epoch} batch {batch_in_epoch}"), || {
            indices.iter().map(|&i| source.sample_id(i)).collect()
        })
    }

    /// One update on pre-built views.
    pub fn step_on_views(
        &mut self,
        views: &ViewBatch,
        epoch: usize,
        batch_id: &str,
        describe: impl FnOnce() -> Vec<String>,
    ) -> Result<StepRecord> {
        let lr = lr_schedule(self.global_step, self.total_steps.max(1), self.config.lr, &self.config.schedule);
        let rows = views.clean.first().map_or(Ok(0), |t| t.dim(0))?;
        let chunk = self.config.micro_batch.filter(|&c| c < rows);
        let staged = match chunk {
            Some(c) => self.cached_loss(views, c),
            None => self.loss(views).map(|l| (l, Vec::new())),
        };
        let (loss, slots) = match staged {
            Err(Error::NonFinite(what)) => {
                let dump = self.write_dump(epoch, batch_id, describe(), serde_json::json!({ "non_finite": what }))?;
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: self.global_step,
                    batch_id: batch_id.to_string(),
                    dump,
                });
            }
            other => other?,
        };
        let record = StepRecord {
            epoch,
            step: self.global_step,
            batch_id: batch_id.to_string(),
            l: loss.l.as_ref().map(value).transpose()?,
            l_i: loss.l_i.iter().map(value).collect::<Result<_>>()?,
            nce: loss.nce.iter().map(value).collect::<Result<_>>()?,
            total: value(&loss.total)?,
            tau: self.config.temperature,
            lr,
            fusion_passes: loss.fusion_passes,
        };
        if !record.total.is_finite() {
            let dump = self.write_dump(epoch, batch_id, describe(), serde_json::to_value(&record)?)?;
            return Err(Error::NonFiniteLoss {
                epoch,
                step: self.global_step,
                batch_id: batch_id.to_string(),
                dump,
            });
        }
        let grads = match chunk {
            Some(c) => self.chunked_grads(views, &loss.total, &slots, c)?,
            None => loss.total.backward()?,
        };
        self.optimizer.step(self.network.params(), &grads, lr)?;
        self.global_step += 1;
        Ok(record)
    }

    fn write_dump(&self, epoch: usize, batch_id: &str, samples: Vec<String>, detail: serde_json::Value) -> Result<PathBuf> {
        let dump = self.dump_dir.join(format!("nonfinite_step_{}.json", self.global_step));
        let body = serde_json::json!({
            "epoch": epoch,
            "step": self.global_step,
            "batch_id": batch_id,
            "samples": samples,
            "detail": detail,
        });
        fs::create_dir_all(&self.dump_dir).at(&self.dump_dir)?;
        fs::write(&dump, serde_json::to_vec_pretty(&body)?).at(&dump)?;
        Ok(dump)
    }

    /// Writes weights, optimizer state and progress into `dir` atomically.
    pub fn save_checkpoint(&self, dir: &Path, epochs_done: usize) -> Result<()> {
        atomic_dir(dir, |staging| {
            write_into(&self.network, staging)?;
            self.optimizer.save(staging)?;
            let state = TrainerState {
                epochs_done,
                global_step: self.global_step,
            };
            let path = staging.join(TRAINER_STATE_FILE);
            fs::write(&path, serde_json::to_vec_pretty(&state)?).at(&path)?;
            Ok(())
        })
    }

    /// Restores weights, optimizer state and progress; returns the number
    /// of completed epochs.
    pub fn restore_checkpoint(&mut self, dir: &Path) -> Result<usize> {
        load_weights_into(&self.network, dir)?;
        self.optimizer = AdamW::load(dir, self.network.params())?;
        let path = dir.join(TRAINER_STATE_FILE);
        let state: TrainerState = serde_json::from_slice(&fs::read(&path).at(&path)?)?;
        self.global_step = state.global_step;
        Ok(state.epochs_done)
    }
}

const TRAINER_STATE_FILE: &str = "trainer.json";

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct TrainerState {
    epochs_done: usize,
    global_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub crate_version: String,
    pub git_revision: Option<String>,
    pub status: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub wall_clock_seconds: f64,
    pub epochs_completed: usize,
    pub global_steps: usize,
    pub steps_per_epoch: usize,
    pub dataset_size: usize,
    pub parameter_count: usize,
    pub resumed_from_epoch: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub run_dir: PathBuf,
    pub config: TrainConfig,
    pub losses: Vec<StepRecord>,
    pub checkpoints: Vec<PathBuf>,
    pub meta: RunMeta,
}

pub fn checkpoint_dir(run_dir: &Path, epoch: usize) -> PathBuf {
    run_dir.join("checkpoints").join(format!("epoch_{epoch:04}.ckpt"))
}

/// Completed checkpoints of a run, sorted by epoch.
pub fn list_checkpoints(run_dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let dir = run_dir.join("checkpoints");
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(&dir).at(&dir)? {
        let path = entry.at(&dir)?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let epoch = name
            .strip_prefix("epoch_")
            .and_then(|r| r.strip_suffix(".ckpt"))
            .and_then(|e| e.parse::<usize>().ok());
        if let Some(e) = epoch {
            if path.join(TRAINER_STATE_FILE).exists() {
                out.push((e, path));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn git_revision() -> Option<String> {
    let out = std::process::Command::new("git").args(["rev-parse", "HEAD"]).output().ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn read_losses(path: &Path) -> Result<Vec<StepRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = fs::File::open(path).at(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format {
            file: path.display().to_string(),
            row: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(value)?).at(&tmp)?;
    fs::rename(&tmp, path).at(path)
}

/// Trains `config` on `source`, recording everything under `run_dir`. A
/// directory holding an interrupted run with the same config resumes from
/// its last checkpoint.
pub fn train_run(config: &TrainConfig, source: &dyn MultimodalSource, run_dir: &Path) -> Result<RunRecord> {
    config.validate()?;
    if source.len() < 2 {
        return Err(Error::validation("training needs at least two samples"));
    }
    fs::create_dir_all(run_dir.join("checkpoints")).at(run_dir)?;
    let config_path = run_dir.join("config.json");
    if config_path.exists() {
        let existing: TrainConfig = serde_json::from_slice(&fs::read(&config_path).at(&config_path)?)?;
        if &existing != config {
            return Err(Error::Config(format!(
                "{} holds a run with a different configuration",
                run_dir.display()
            )));
        }
    } else {
        write_json(&config_path, config)?;
    }

    let started = Instant::now();
    let started_unix = now_unix();
    let mut trainer = Trainer::new(config.clone(), source.inputs())?;
    trainer.set_dump_dir(run_dir);
    let steps_per_epoch = trainer.steps_per_epoch(source.len());
    trainer.total_steps = steps_per_epoch * config.epochs;

    let losses_path = run_dir.join("losses.jsonl");
    let existing = list_checkpoints(run_dir)?;
    let (epochs_done, resumed_from_epoch) = match existing.last() {
        Some((_, dir)) => {
            let e = trainer.restore_checkpoint(dir)?;
            (e, Some(e))
        }
        None => {
            trainer.save_checkpoint(&checkpoint_dir(run_dir, 0), 0)?;
            (0, None)
        }
    };
    // Keep only the records the restored state has already accounted for.
    let mut losses: Vec<StepRecord> = read_losses(&losses_path)?
        .into_iter()
        .filter(|r| r.step < trainer.global_step)
        .collect();
    {
        let mut f = fs::File::create(&losses_path).at(&losses_path)?;
        for r in &losses {
            writeln!(f, "{}", serde_json::to_string(r)?).at(&losses_path)?;
        }
    }
    let mut log = fs::OpenOptions::new().append(true).open(&losses_path).at(&losses_path)?;

    let mut meta = RunMeta {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        git_revision: git_revision(),
        status: "running".into(),
        started_unix,
        finished_unix: None,
        wall_clock_seconds: 0.0,
        epochs_completed: epochs_done,
        global_steps: trainer.global_step,
        steps_per_epoch,
        dataset_size: source.len(),
        parameter_count: trainer.network.params().num_parameters(),
        resumed_from_epoch,
    };
    write_json(&run_dir.join("meta.json"), &meta)?;

    let n = source.len();
    let batch = config.batch_size.min(n);
    for epoch in epochs_done..config.epochs {
        let order = trainer.epoch_order(n, epoch);
        for b in 0..steps_per_epoch {
            let indices = &order[b * batch..(b + 1) * batch];
            let record = trainer.train_step(source, indices, epoch, b)?;
            writeln!(log, "{}", serde_json::to_string(&record)?).at(&losses_path)?;
            log::debug!("epoch {epoch} step {} total {:.5}", record.step, record.total);
            losses.push(record);
        }
        log.flush().at(&losses_path)?;
        let done = epoch + 1;
        if done % config.checkpoint_every == 0 || done == config.epochs || config.checkpoint_epochs.contains(&done) {
            trainer.save_checkpoint(&checkpoint_dir(run_dir, done), done)?;
        }
        meta.epochs_completed = done;
        meta.global_steps = trainer.global_step;
        meta.wall_clock_seconds = started.elapsed().as_secs_f64();
        write_json(&run_dir.join("meta.json"), &meta)?;
        log::info!("{}: epoch {done}/{} done", run_dir.display(), config.epochs);
    }

    meta.status = "complete".into();
    meta.finished_unix = Some(now_unix());
    meta.wall_clock_seconds = started.elapsed().as_secs_f64();
    write_json(&run_dir.join("meta.json"), &meta)?;
    Ok(RunRecord {
        run_dir: run_dir.to_path_buf(),
        config: config.clone(),
        losses,
        checkpoints: list_checkpoints(run_dir)?.into_iter().map(|(_, p)| p).collect(),
        meta,
    })
}

/// Reads the run metadata, if the run has started.
pub fn read_meta(run_dir: &Path) -> Result<Option<RunMeta>> {
    let path = run_dir.join("meta.json");
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_slice(&fs::read(&path).at(&path)?)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{AugmentationPolicy, Transform};
    use crate::model::{FusionKind, HeadConfig, TransformerConfig};
    use crate::objectives::LossTerms;
    use crate::train::data::VectorSource;
    use crate::train::{ModelSpec, Schedule};
    use crate::trifeature::ResolutionProfile;
    use rand::Rng;

    fn toy_source(n: usize, modalities: usize, seed: u64) -> VectorSource {
        let mut r = rng(seed);
        let rows = (0..n)
            .map(|_| (0..modalities).map(|_| (0..6).map(|_| r.random_range(-1.0..1.0)).collect()).collect())
            .collect();
        VectorSource::new(vec![6; modalities], rows).unwrap()
    }

    pub(crate) fn toy_config(objective: Objective, seed: u64) -> TrainConfig {
        TrainConfig {
            objective,
            epochs: 2,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 1e-4,
            schedule: Schedule::Constant,
            seed,
            temperature: 0.1,
            include_positive: false,
            symmetric: true,
            policy: AugmentationPolicy::uniform("noise", Transform::gaussian_noise(0.1).unwrap()),
            profile: ResolutionProfile::Desk64,
            checkpoint_every: 1,
            loss_terms: LossTerms::default(),
            self_weight: 1.0,
            model: ModelSpec {
                embed_dim: 16,
                fusion: FusionKind::Attention(TransformerConfig {
                    layers: 1,
                    heads: 2,
                    mlp_ratio: 2,
                }),
                head: HeadConfig {
                    hidden: 16,
                    output: 8,
                    layers: 3,
                    shared: true,
                },
                projection_dim: 16,
                self_head: HeadConfig {
                    hidden: 32,
                    output: 8,
                    layers: 3,
                    shared: false,
                },
                ..ModelSpec::default()
            },
            max_steps_per_epoch: None,
            checkpoint_epochs: Vec::new(),
            micro_batch: None,
        }
    }

    #[test]
    fn zero_epochs_gives_an_initial_checkpoint_and_no_losses() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = toy_config(Objective::Comm, 0);
        cfg.epochs = 0;
        let rec = train_run(&cfg, &toy_source(16, 2, 1), tmp.path()).unwrap();
        assert!(rec.losses.is_empty());
        assert_eq!(rec.checkpoints.len(), 1);
        assert_eq!(rec.meta.status, "complete");
    }

    #[test]
    fn comm_step_logs_every_term_and_runs_n_plus_two_fusions() {
        for n in [2usize, 3] {
            let src = toy_source(16, n, 2);
            let mut t = Trainer::new(toy_config(Objective::Comm, 1), src.inputs()).unwrap();
            let rec = t.train_step(&src, &(0..8).collect::<Vec<_>>(), 0, 0).unwrap();
            assert_eq!(rec.nce.len(), 2 * n + 1);
            assert_eq!(rec.l_i.len(), n);
            assert_eq!(rec.fusion_passes, n + 2);
            assert_eq!(rec.total, rec.recomputed_total());
        }
    }

    #[test]
    fn zero_learning_rate_leaves_weights_unchanged() {
        let src = toy_source(16, 2, 2);
        let mut cfg = toy_config(Objective::Comm, 1);
        cfg.lr = 0.0;
        let mut t = Trainer::new(cfg, src.inputs()).unwrap();
        let before = t.network.params().flat_values().unwrap();
        t.train_step(&src, &[0, 1, 2, 3], 0, 0).unwrap();
        assert_eq!(t.network.params().flat_values().unwrap(), before);
    }

    #[test]
    fn small_step_decreases_loss_on_the_same_views() {
        for objective in [Objective::Comm, Objective::Cross, Objective::CrossSelf] {
            let src = toy_source(16, 2, 3);
            let mut cfg = toy_config(objective, 4);
            cfg.lr = 1e-5;
            cfg.weight_decay = 0.0;
            let mut t = Trainer::new(cfg, src.inputs()).unwrap();
            let views = t.views(&src, &(0..8).collect::<Vec<_>>(), 0).unwrap();
            let before = t.evaluate_loss(&views).unwrap();
            t.step_on_views(&views, 0, "fixed", Vec::new).unwrap();
            let after = t.evaluate_loss(&views).unwrap();
            assert!(after < before, "{objective:?}: {after} >= {before}");
        }
    }

    #[test]
    fn chunked_gradients_match_the_full_batch() {
        let cases = [(Objective::Comm, true), (Objective::Comm, false), (Objective::Cross, true), (Objective::CrossSelf, true)];
        for (objective, shared) in cases {
            let src = toy_source(8, 2, 5);
            let mut cfg = toy_config(objective, 6);
            cfg.model.head.shared = shared;
            let t = Trainer::new(cfg, src.inputs()).unwrap();
            let views = t.views(&src, &(0..8).collect::<Vec<_>>(), 0).unwrap();
            let full_loss = t.loss(&views).unwrap();
            let full = full_loss.total.backward().unwrap();
            let (loss, slots) = t.cached_loss(&views, 3).unwrap();
            assert!((value(&loss.total).unwrap() - value(&full_loss.total).unwrap()).abs() < 1e-5);
            assert_eq!(loss.nce.len(), full_loss.nce.len());
            let chunked = t.chunked_grads(&views, &loss.total, &slots, 3).unwrap();
            let mut compared = 0;
            for (name, var) in t.network.params().vars() {
                let (Some(a), Some(b)) = (full.get(var.as_tensor()), chunked.get(var.as_tensor())) else {
                    assert!(full.get(var.as_tensor()).is_none() && chunked.get(var.as_tensor()).is_none(), "{name}");
                    continue;
                };
                let scale = a.abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap().max(1e-3);
                let gap = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
                assert!(gap <= 1e-4 * scale + 1e-5, "{objective:?} {name}: {gap} vs {scale}");
                compared += 1;
            }
            assert!(compared > 0);
        }
    }

    #[test]
    fn identical_seeds_give_identical_loss_streams() {
        let src = toy_source(24, 2, 5);
        let cfg = toy_config(Objective::Comm, 9);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = train_run(&cfg, &src, a.path()).unwrap();
        let rb = train_run(&cfg, &src, b.path()).unwrap();
        assert_eq!(ra.losses.len(), 6);
        for (x, y) in ra.losses.iter().zip(&rb.losses) {
            assert!((x.total - y.total).abs() <= 1e-6);
        }
    }

    #[test]
    fn resume_continues_the_same_stream() {
        let src = toy_source(24, 2, 6);
        let mut cfg = toy_config(Objective::Comm, 10);
        cfg.epochs = 3;
        let full = tempfile::tempdir().unwrap();
        let reference = train_run(&cfg, &src, full.path()).unwrap();

        let part = tempfile::tempdir().unwrap();
        train_run(&cfg, &src, part.path()).unwrap();
        // Simulate an interruption after epoch 1: drop later checkpoints.
        for e in [2usize, 3] {
            fs::remove_dir_all(checkpoint_dir(part.path(), e)).unwrap();
        }
        let resumed = train_run(&cfg, &src, part.path()).unwrap();
        assert_eq!(resumed.meta.resumed_from_epoch, Some(1));
        assert_eq!(resumed.losses.len(), reference.losses.len());
        for (x, y) in resumed.losses.iter().zip(&reference.losses) {
            assert_eq!(x.step, y.step);
            assert!((x.total - y.total).abs() <= 1e-6, "step {}: {} vs {}", x.step, x.total, y.total);
        }
    }

    #[test]
    fn different_config_in_the_same_directory_is_refused() {
        let src = toy_source(16, 2, 6);
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = toy_config(Objective::Comm, 0);
        cfg.epochs = 1;
        train_run(&cfg, &src, tmp.path()).unwrap();
        cfg.seed = 1;
        assert!(matches!(train_run(&cfg, &src, tmp.path()), Err(Error::Config(_))));
    }

    #[test]
    fn non_finite_loss_aborts_with_a_dump() {
        // An absurd learning rate blows the weights up after one update.
        let src = toy_source(32, 2, 7);
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = toy_config(Objective::Comm, 0);
        cfg.lr = 1e38;
        cfg.epochs = 3;
        match train_run(&cfg, &src, tmp.path()) {
            Err(Error::NonFiniteLoss { dump, step, .. }) => {
                assert!(step >= 1);
                let body: serde_json::Value = serde_json::from_slice(&fs::read(dump).unwrap()).unwrap();
                assert_eq!(body["samples"].as_array().unwrap().len(), 8);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
