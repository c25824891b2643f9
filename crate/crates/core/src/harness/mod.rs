//! Experiment plans: data preparation, training, probing and aggregation.

pub mod ablation;
pub mod plot;
pub mod sweep;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use ablation::{ablate_augmentation, ablate_fusion, ablate_loss, augmentation_rows, fusion_rows, loss_rows};
pub use plot::plot_results;
pub use sweep::{spearman, sweep_aug_strength, SweepPoint, SweepResult, DEFAULT_CROP_GRID};

use crate::augment::AugmentationPolicy;
use crate::error::IoContext;
use crate::model::FusionKind;
use crate::objectives::LossTerms;
use crate::probe::{interaction_report, mean_std, FeatureCache, FrozenModel, ProbeReport, ProbeTask, ReportOptions};
use crate::rng::{derive, derive_str};
use crate::train::engine::{checkpoint_dir, read_meta};
use crate::train::{train_run, Objective, PairSource, TrainConfig};
use crate::trifeature::{load_dataset, write_dataset, BimodalDataset, Experiment, PairOptions, ResolutionProfile, Split, TrifeatureSpec};
use crate::{Error, Result};

/// One trained variant of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: String,
    pub objective: Objective,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_terms: Option<LossTerms>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion: Option<FusionKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<AugmentationPolicy>,
}

impl MethodSpec {
    pub fn new(name: impl Into<String>, objective: Objective) -> Self {
        Self {
            name: name.into(),
            objective,
            loss_terms: None,
            fusion: None,
            policy: None,
        }
    }

    /// The multimodal model and the two dual-encoder baselines.
    pub fn standard() -> Vec<Self> {
        vec![
            Self::new("comm", Objective::Comm),
            Self::new("cross", Objective::Cross),
            Self::new("cross_self", Objective::CrossSelf),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub name: String,
    pub seed: u64,
    pub profile: ResolutionProfile,
    /// Defaults to the profile's benchmark dataset.
    #[serde(default)]
    pub dataset: Option<TrifeatureSpec>,
    #[serde(default)]
    pub pairs: PairOptions,
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Epochs probed besides the final one.
    #[serde(default)]
    pub probe_epochs: Vec<usize>,
    #[serde(default)]
    pub probe: ReportOptions,
    /// Template for every sub-run; objective, seed and the per-method
    /// overrides are filled in. Defaults to the benchmark recipe.
    #[serde(default)]
    pub train: Option<TrainConfig>,
    /// Overrides the template's epoch count.
    #[serde(default)]
    pub epochs: Option<usize>,
    pub output_dir: PathBuf,
}

fn default_replicates() -> usize {
    5
}

impl ExperimentPlan {
    pub fn new(name: impl Into<String>, profile: ResolutionProfile, seed: u64, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            name: name.into(),
            seed,
            profile,
            dataset: None,
            pairs: PairOptions::default(),
            methods: MethodSpec::standard(),
            replicates: default_replicates(),
            probe_epochs: Vec::new(),
            probe: ReportOptions::default(),
            train: None,
            epochs: None,
            output_dir: output_dir.into(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        let plan: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn dataset_spec(&self) -> TrifeatureSpec {
        self.dataset.clone().unwrap_or_else(|| TrifeatureSpec::for_profile(self.profile))
    }

    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or_else(|| self.template(Objective::Comm).epochs)
    }

    fn template(&self, objective: Objective) -> TrainConfig {
        let mut c = self
            .train
            .clone()
            .unwrap_or_else(|| TrainConfig::trifeature(objective, self.profile, self.seed));
        c.objective = objective;
        if let Some(e) = self.epochs {
            c.epochs = e;
        }
        c
    }

    /// Seed of a sub-run: a function of plan seed, method and replicate.
    pub fn sub_run_seed(&self, method: &str, replicate: usize) -> u64 {
        derive(derive_str(self.seed, method), &[replicate as u64])
    }

    /// Epochs at which probe reports are produced; always ends with the
    /// final epoch.
    pub fn report_epochs(&self) -> Vec<usize> {
        let last = self.epochs();
        let mut e: Vec<usize> = self.probe_epochs.iter().copied().filter(|&e| e <= last).collect();
        e.push(last);
        e.sort_unstable();
        e.dedup();
        e
    }

    pub fn train_config(&self, method: &MethodSpec, replicate: usize) -> TrainConfig {
        let mut c = self.template(method.objective);
        c.seed = self.sub_run_seed(&method.name, replicate);
        if let Some(t) = method.loss_terms {
            c.loss_terms = t;
        }
        if let Some(f) = method.fusion {
            c.model.fusion = f;
        }
        if let Some(p) = &method.policy {
            c.policy = p.clone();
        }
        c.checkpoint_epochs = self.report_epochs();
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::validation("a plan needs at least one method"));
        }
        if self.replicates == 0 {
            return Err(Error::validation("replicates must be at least 1"));
        }
        let mut names: Vec<&str> = self.methods.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::validation("method names must be unique"));
        }
        if let Some(bad) = self.methods.iter().find(|m| m.name.is_empty() || m.name.contains(['/', '\\', '.'])) {
            return Err(Error::validation(format!("method name {:?} is not a plain directory name", bad.name)));
        }
        if self.probe.seeds.is_empty() {
            return Err(Error::validation("at least one probe seed is required"));
        }
        self.dataset_spec().validate()?;
        for m in &self.methods {
            self.train_config(m, 0).validate()?;
        }
        Ok(())
    }

    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }
}

/// Loads the two benchmark datasets of a plan from `<output>/data`,
/// generating and writing them on first use.
pub fn prepare_datasets(plan: &ExperimentPlan) -> Result<(BimodalDataset, BimodalDataset)> {
    let spec = plan.dataset_spec();
    let mut out = Vec::new();
    for (dir, experiment) in [("exp1", Experiment::SharedAndUnique), ("exp2", Experiment::Synergy)] {
        let path = plan.output_dir.join("data").join(dir);
        let ds = if path.join("manifest.csv").exists() {
            load_dataset(&path)?
        } else {
            let ds = BimodalDataset::generate(&spec, experiment, &plan.pairs, plan.seed)?;
            write_dataset(&ds, &path)?;
            ds
        };
        if ds.spec != spec || ds.seed != plan.seed || ds.experiment != experiment {
            return Err(Error::Config(format!("{} holds a different dataset", path.display())));
        }
        out.push(ds);
    }
    let exp2 = out.pop().expect("two datasets");
    let exp1 = out.pop().expect("two datasets");
    Ok((exp1, exp2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitStatus {
    Pending,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub method: String,
    pub replicate: usize,
    pub seed: u64,
    pub status: UnitStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Progress record of a plan directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub plan: String,
    pub plan_sha256: String,
    pub units: BTreeMap<String, ManifestEntry>,
}

impl Manifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn read(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(Self::FILE);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_slice(&fs::read(&path).at(&path)?)?))
    }

    /// Replaces the manifest file in one rename.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json_atomic(&dir.join(Self::FILE), self)
    }
}

pub(crate) fn write_json_atomic(path: &Path, value: &impl Serialize) -> Result<()> {
    let parent = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent).at(parent)?;
    let tmp = path.with_extension("json.partial");
    fs::write(&tmp, serde_json::to_vec_pretty(value)?).at(&tmp)?;
    fs::rename(&tmp, path).at(path)
}

pub fn unit_key(method: &str, replicate: usize) -> String {
    format!("{method}/rep{replicate}")
}

pub fn unit_dir(plan: &ExperimentPlan, method: &str, replicate: usize) -> PathBuf {
    plan.output_dir.join(method).join(format!("rep{replicate}"))
}

pub fn report_dir(unit: &Path, epoch: usize) -> PathBuf {
    unit.join("probes").join(format!("epoch_{epoch:04}"))
}

/// Mean ± std of one task across replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub replicates: usize,
    /// R, U1, U2 and S, in that order.
    pub cells: Vec<Cell>,
    pub average: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub columns: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn from_reports(per_method: &[(String, Vec<ProbeReport>)]) -> Self {
        let rows = per_method
            .iter()
            .filter(|(_, reports)| !reports.is_empty())
            .map(|(method, reports)| {
                let cells: Vec<Cell> = ProbeTask::ALL
                    .iter()
                    .map(|&t| {
                        let v: Vec<f64> = reports.iter().filter_map(|r| r.mean(t)).collect();
                        let (mean, std) = mean_std(&v);
                        Cell { mean, std }
                    })
                    .collect();
                let average = cells.iter().map(|c| c.mean).sum::<f64>() / cells.len() as f64;
                ComparisonRow {
                    method: method.clone(),
                    replicates: reports.len(),
                    cells,
                    average,
                }
            })
            .collect();
        Self {
            columns: ProbeTask::ALL.iter().map(|t| t.column().to_string()).collect(),
            rows,
        }
    }

    pub fn row(&self, method: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Mean of `task` for `method`.
    pub fn get(&self, method: &str, task: ProbeTask) -> Option<f64> {
        let i = ProbeTask::ALL.iter().position(|&t| t == task)?;
        self.row(method).map(|r| r.cells[i].mean)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["method".to_string(), "replicates".to_string()];
        for c in &self.columns {
            header.push(format!("{c}_mean"));
            header.push(format!("{c}_std"));
        }
        header.push("average".into());
        w.write_record(&header).map_err(csv_error)?;
        for r in &self.rows {
            let mut rec = vec![r.method.clone(), r.replicates.to_string()];
            for c in &r.cells {
                rec.push(format!("{:.2}", c.mean));
                rec.push(format!("{:.2}", c.std));
            }
            rec.push(format!("{:.2}", r.average));
            w.write_record(&rec).map_err(csv_error)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::validation(e.to_string()))?).map_err(|e| Error::validation(e.to_string()))
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("| method | {} | average |\n|---|", self.columns.join(" | "));
        s.push_str(&"---|".repeat(self.columns.len() + 1));
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.cells.iter().map(|c| format!("{:.2} ± {:.2}", c.mean, c.std)).collect();
            s.push_str(&format!("| {} | {} | {:.2} |\n", r.method, cells.join(" | "), r.average));
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json_atomic(&dir.join("comparison.json"), self)?;
        let csv_path = dir.join("comparison.csv");
        fs::write(&csv_path, self.to_csv()?).at(&csv_path)?;
        let md = dir.join("comparison.md");
        fs::write(&md, self.to_markdown()).at(&md)
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::validation(format!("csv: {e}"))
}

/// One point of a probe-accuracy-versus-epoch curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub method: String,
    pub epoch: usize,
    pub task: String,
    pub mean: f64,
    pub std: f64,
    pub replicates: usize,
}

pub fn write_curves(dir: &Path, curves: &[CurvePoint]) -> Result<()> {
    let path = dir.join("curves.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_error)?;
    w.write_record(["method", "epoch", "task", "mean", "std", "replicates"]).map_err(csv_error)?;
    for p in curves {
        w.write_record([
            p.method.clone(),
            p.epoch.to_string(),
            p.task.clone(),
            format!("{:.2}", p.mean),
            format!("{:.2}", p.std),
            p.replicates.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush().at(&path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub already_complete: bool,
    pub ran: Vec<String>,
    pub skipped: Vec<String>,
    pub failures: Vec<(String, String)>,
    pub comparison: ComparisonTable,
    pub curves: Vec<CurvePoint>,
}

impl ExperimentOutcome {
    /// Maps recorded sub-run failures to an error.
    pub fn into_result(self) -> Result<Self> {
        if self.failures.is_empty() {
            Ok(self)
        } else {
            Err(Error::SubRunFailures {
                failed: self.failures.len(),
                total: self.ran.len() + self.skipped.len(),
            })
        }
    }
}

fn unit_complete(plan: &ExperimentPlan, method: &str, replicate: usize) -> Result<bool> {
    let dir = unit_dir(plan, method, replicate);
    for exp in ["exp1", "exp2"] {
        if !read_meta(&dir.join(exp))?.is_some_and(|m| m.status == "complete") {
            return Ok(false);
        }
    }
    Ok(plan
        .report_epochs()
        .iter()
        .all(|&e| report_dir(&dir, e).join("probe_report.json").exists()))
}

/// Trains both experiments of one (method, replicate) and probes every
/// scheduled epoch.
fn run_unit(
    plan: &ExperimentPlan,
    method: &MethodSpec,
    replicate: usize,
    data: &(BimodalDataset, BimodalDataset),
    cache: &FeatureCache,
) -> Result<()> {
    let dir = unit_dir(plan, &method.name, replicate);
    let config = plan.train_config(method, replicate);
    for (name, ds) in [("exp1", &data.0), ("exp2", &data.1)] {
        let source = PairSource::new(ds, Split::Train);
        train_run(&config, &source, &dir.join(name))?;
    }
    for epoch in plan.report_epochs() {
        let out = report_dir(&dir, epoch);
        if out.join("probe_report.json").exists() {
            continue;
        }
        let model = FrozenModel::load(&checkpoint_dir(&dir.join("exp1"), epoch))?;
        let synergy = FrozenModel::load(&checkpoint_dir(&dir.join("exp2"), epoch))?;
        let report = interaction_report(&model, &synergy, &data.0, &plan.probe, Some(cache))?;
        report.write(&out)?;
        log::info!("{}: probed epoch {epoch}", dir.display());
    }
    Ok(())
}

fn collect_results(plan: &ExperimentPlan) -> Result<(ComparisonTable, Vec<CurvePoint>)> {
    let last = plan.epochs();
    let mut finals = Vec::new();
    let mut curves = Vec::new();
    for m in &plan.methods {
        let mut per_epoch: BTreeMap<usize, Vec<ProbeReport>> = BTreeMap::new();
        for r in 0..plan.replicates {
            for e in plan.report_epochs() {
                let d = report_dir(&unit_dir(plan, &m.name, r), e);
                if d.join("probe_report.json").exists() {
                    per_epoch.entry(e).or_default().push(ProbeReport::read(&d)?);
                }
            }
        }
        for (&epoch, reports) in &per_epoch {
            for task in ProbeTask::ALL {
                let v: Vec<f64> = reports.iter().filter_map(|r| r.mean(task)).collect();
                let (mean, std) = mean_std(&v);
                curves.push(CurvePoint {
                    method: m.name.clone(),
                    epoch,
                    task: task.column().into(),
                    mean,
                    std,
                    replicates: v.len(),
                });
            }
        }
        finals.push((m.name.clone(), per_epoch.remove(&last).unwrap_or_default()));
    }
    Ok((ComparisonTable::from_reports(&finals), curves))
}

/// Trains and probes every (method, replicate) of the plan. Completed
/// units are skipped; a failing unit is recorded and does not stop the
/// others.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentOutcome> {
    plan.validate()?;
    let dir = &plan.output_dir;
    fs::create_dir_all(dir).at(dir)?;
    let digest = plan.digest()?;
    let mut manifest = match Manifest::read(dir)? {
        Some(m) if m.plan_sha256 != digest => {
            return Err(Error::Config(format!("{} belongs to a different plan", dir.display())));
        }
        Some(m) => m,
        None => Manifest {
            plan: plan.name.clone(),
            plan_sha256: digest,
            units: BTreeMap::new(),
        },
    };
    write_json_atomic(&dir.join("plan.json"), plan)?;
    for m in &plan.methods {
        for r in 0..plan.replicates {
            manifest.units.entry(unit_key(&m.name, r)).or_insert(ManifestEntry {
                method: m.name.clone(),
                replicate: r,
                seed: plan.sub_run_seed(&m.name, r),
                status: UnitStatus::Pending,
                error: None,
            });
        }
    }
    manifest.write(dir)?;

    let mut pending = Vec::new();
    let mut skipped = Vec::new();
    for m in &plan.methods {
        for r in 0..plan.replicates {
            let key = unit_key(&m.name, r);
            if manifest.units[&key].status == UnitStatus::Complete && unit_complete(plan, &m.name, r)? {
                skipped.push(key);
            } else {
                pending.push((m, r, key));
            }
        }
    }
    let already_complete = pending.is_empty();
    if already_complete {
        log::info!("{}: already complete", plan.name);
    }

    let mut ran = Vec::new();
    let mut failures = Vec::new();
    if !already_complete {
        let data = prepare_datasets(plan)?;
        let cache = FeatureCache::new(dir.join("feature_cache"));
        for (m, r, key) in pending {
            let result = catch_unwind(AssertUnwindSafe(|| run_unit(plan, m, r, &data, &cache)))
                .unwrap_or_else(|_| Err(Error::validation("sub-run panicked")));
            let entry = manifest.units.get_mut(&key).expect("registered above");
            match result {
                Ok(()) => {
                    entry.status = UnitStatus::Complete;
                    entry.error = None;
                }
                Err(e) => {
                    log::error!("{key}: {e}");
                    entry.status = UnitStatus::Failed;
                    entry.error = Some(e.to_string());
                    failures.push((key.clone(), e.to_string()));
                }
            }
            manifest.write(dir)?;
            ran.push(key);
        }
    }

    let (comparison, curves) = collect_results(plan)?;
    comparison.write(dir)?;
    write_curves(dir, &curves)?;
    Ok(ExperimentOutcome {
        dir: dir.clone(),
        already_complete,
        ran,
        skipped,
        failures,
        comparison,
        curves,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::augment::AugmentationPolicy;
    use crate::model::HeadConfig;
    use crate::probe::ProbeOptions;
    use crate::train::ModelSpec;

    /// A plan small enough to train in seconds.
    pub(crate) fn tiny_plan(dir: &Path) -> ExperimentPlan {
        let spec = TrifeatureSpec {
            canvas_size: 16,
            shape_extent: 12,
            num_shapes: 3,
            num_textures: 3,
            num_colors: 3,
            test_combinations: 12,
            variants_per_combo: 1,
            ..TrifeatureSpec::desk()
        };
        let mut train = TrainConfig::trifeature(Objective::Comm, ResolutionProfile::Desk64, 0);
        train.epochs = 2;
        train.batch_size = 8;
        train.policy = AugmentationPolicy::identity();
        train.model = ModelSpec {
            embed_dim: 16,
            head: HeadConfig {
                hidden: 16,
                output: 8,
                layers: 2,
                shared: true,
            },
            projection_dim: 8,
            self_head: HeadConfig {
                hidden: 16,
                output: 8,
                layers: 2,
                shared: false,
            },
            ..ModelSpec::default()
        };
        ExperimentPlan {
            dataset: Some(spec),
            pairs: PairOptions {
                n_train: 16,
                n_test: 8,
                ..Default::default()
            },
            replicates: 1,
            probe: ReportOptions {
                seeds: vec![0],
                probe: ProbeOptions {
                    max_epochs: 20,
                    ..Default::default()
                },
                batch_size: 16,
                max_train_pairs: None,
            },
            train: Some(train),
            ..ExperimentPlan::new("tiny", ResolutionProfile::Desk64, 11, dir)
        }
    }

    #[test]
    fn sub_run_seeds_depend_on_method_and_replicate() {
        let plan = ExperimentPlan::new("p", ResolutionProfile::Desk64, 1, "/tmp/x");
        assert_eq!(plan.sub_run_seed("comm", 0), plan.sub_run_seed("comm", 0));
        assert_ne!(plan.sub_run_seed("comm", 0), plan.sub_run_seed("comm", 1));
        assert_ne!(plan.sub_run_seed("comm", 0), plan.sub_run_seed("cross", 0));
        assert_eq!(plan.report_epochs(), vec![100]);
    }

    #[test]
    fn plan_round_trips_and_rejects_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = tiny_plan(dir.path());
        let path = dir.path().join("plan.json");
        fs::write(&path, serde_json::to_string(&plan).unwrap()).unwrap();
        assert_eq!(ExperimentPlan::load(&path).unwrap(), plan);
        plan.methods.push(MethodSpec::new("comm", Objective::Comm));
        assert!(plan.validate().is_err());
    }

    #[test]
    fn comparison_has_four_task_columns() {
        let t = ComparisonTable::from_reports(&[]);
        assert_eq!(t.columns, ["R", "U1", "U2", "S"]);
        assert!(t.to_csv().unwrap().starts_with("method,replicates,R_mean,R_std,U1_mean"));
    }

    #[test]
    fn plan_runs_then_is_a_no_op_and_isolates_failures() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = tiny_plan(dir.path());
        plan.methods = vec![MethodSpec::new("comm", Objective::Comm), MethodSpec::new("cross", Objective::Cross)];
        let out = run_experiment(&plan).unwrap();
        assert!(out.failures.is_empty(), "{:?}", out.failures);
        assert_eq!(out.ran.len(), 2);
        assert_eq!(out.comparison.rows.len(), 2);
        let again = run_experiment(&plan).unwrap();
        assert!(again.already_complete);
        assert_eq!(again.comparison, out.comparison);

        // Removing one unit's final probe makes only that unit rerun.
        fs::remove_dir_all(report_dir(&unit_dir(&plan, "cross", 0), 2)).unwrap();
        let third = run_experiment(&plan).unwrap();
        assert_eq!(third.ran, vec!["cross/rep0".to_string()]);
        assert_eq!(third.skipped, vec!["comm/rep0".to_string()]);

        // A corrupted run directory fails only its own unit.
        let other = tempfile::tempdir().unwrap();
        let mut plan = tiny_plan(other.path());
        plan.methods = vec![MethodSpec::new("comm", Objective::Comm), MethodSpec::new("cross", Objective::Cross)];
        let bad = unit_dir(&plan, "comm", 0).join("exp1");
        fs::create_dir_all(&bad).unwrap();
        fs::write(bad.join("config.json"), "{}").unwrap();
        let out = run_experiment(&plan).unwrap();
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].0, "comm/rep0");
        assert_eq!(Manifest::read(other.path()).unwrap().unwrap().units["cross/rep0"].status, UnitStatus::Complete);
        assert!(matches!(out.into_result(), Err(Error::SubRunFailures { failed: 1, total: 2 })));
    }
}
