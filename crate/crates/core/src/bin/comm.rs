use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use comm::harness::{
    ablate_augmentation, ablate_fusion, ablate_loss, plot_results, run_experiment, sweep::default_strengths, sweep_aug_strength,
    ExperimentOutcome, ExperimentPlan,
};
use comm::probe::{interaction_report, FeatureCache, FrozenModel, ReportOptions};
use comm::train::{train_run, Objective, PairSource, TrainConfig};
use comm::trifeature::{load_dataset, write_dataset, BimodalDataset, Experiment, PairOptions, ResolutionProfile, Split, TrifeatureSpec};
use comm::{Error, Result};

#[derive(Parser)]
#[command(name = "comm", version, about = "Multimodal contrastive learning on the bimodal Trifeature benchmark")]
struct Cli {
    /// JSON or TOML configuration for the verb.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Full,
    Desk,
}

impl From<Profile> for ResolutionProfile {
    fn from(p: Profile) -> Self {
        match p {
            Profile::Full => ResolutionProfile::Full224,
            Profile::Desk => ResolutionProfile::Desk64,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render both experiments' datasets into `<out>/exp1` and `<out>/exp2`.
    GenerateData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on the training pairs of a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, default_value = "comm")]
        objective: String,
    },
    /// Probe an experiment 1 checkpoint (and optionally an experiment 2
    /// checkpoint for synergy) on the four interaction tasks.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        synergy_checkpoint: Option<PathBuf>,
        /// Experiment 1 dataset directory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every (method, replicate) of a plan.
    Experiment,
    Ablate {
        #[arg(value_enum)]
        kind: Ablation,
    },
    /// Augmentation-strength sweep on the synergy task.
    SweepAug {
        #[arg(long, value_delimiter = ',')]
        strengths: Option<Vec<f64>>,
    },
    /// Render SVG figures for the CSV results under a directory.
    Plot {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Ablation {
    Loss,
    Fusion,
    Aug,
}

/// `generate-data` configuration.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataConfig {
    #[serde(default)]
    spec: Option<TrifeatureSpec>,
    #[serde(default)]
    pairs: PairOptions,
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    } else {
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn plan(cli: &Cli) -> Result<ExperimentPlan> {
    let path = cli.config.as_ref().ok_or_else(|| Error::validation("--config <plan> is required"))?;
    let mut plan = ExperimentPlan::load(path)?;
    if let Some(p) = cli.profile {
        plan.profile = p.into();
    }
    if let Some(s) = cli.seed {
        plan.seed = s;
    }
    plan.validate()?;
    Ok(plan)
}

fn report(outcome: ExperimentOutcome) -> Result<()> {
    if outcome.already_complete {
        println!("{}: already complete", outcome.dir.display());
    }
    print!("{}", outcome.comparison.to_markdown());
    for (unit, err) in &outcome.failures {
        eprintln!("{unit} failed: {err}");
    }
    outcome.into_result().map(|_| ())
}

fn run(cli: &Cli) -> Result<()> {
    let profile: ResolutionProfile = cli.profile.map(Into::into).unwrap_or(ResolutionProfile::Desk64);
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::GenerateData { out } => {
            let cfg: DataConfig = match &cli.config {
                Some(p) => read_config(p)?,
                None => DataConfig::default(),
            };
            let spec = cfg.spec.unwrap_or_else(|| TrifeatureSpec::for_profile(profile));
            for (name, exp) in [("exp1", Experiment::SharedAndUnique), ("exp2", Experiment::Synergy)] {
                let ds = BimodalDataset::generate(&spec, exp, &cfg.pairs, seed)?;
                write_dataset(&ds, out.join(name))?;
                println!("{}: {} images, {} pairs", out.join(name).display(), ds.images.len(), ds.pairs.len());
            }
            Ok(())
        }
        Command::Train { data, run_dir, objective } => {
            let objective: Objective = objective.parse()?;
            let mut config = match &cli.config {
                Some(p) => TrainConfig::load(p)?,
                None => TrainConfig::trifeature(objective, profile, seed),
            };
            if cli.config.is_some() {
                if let Some(s) = cli.seed {
                    config.seed = s;
                }
            }
            let ds = load_dataset(data)?;
            let rec = train_run(&config, &PairSource::new(&ds, Split::Train), run_dir)?;
            println!(
                "{}: {} epochs, {} steps, final loss {:.4}",
                run_dir.display(),
                rec.meta.epochs_completed,
                rec.meta.global_steps,
                rec.losses.last().map(|r| r.total).unwrap_or(f32::NAN)
            );
            Ok(())
        }
        Command::Probe {
            checkpoint,
            synergy_checkpoint,
            data,
            out,
        } => {
            let options: ReportOptions = match &cli.config {
                Some(p) => read_config(p)?,
                None => ReportOptions::default(),
            };
            let ds = load_dataset(data)?;
            let model = FrozenModel::load(checkpoint)?;
            let synergy = match synergy_checkpoint {
                Some(p) => FrozenModel::load(p)?,
                None => FrozenModel::load(checkpoint)?,
            };
            let cache = FeatureCache::new(out.join("feature_cache"));
            let r = interaction_report(&model, &synergy, &ds, &options, Some(&cache))?;
            r.write(out)?;
            print!("{}", r.to_markdown());
            Ok(())
        }
        Command::Experiment => report(run_experiment(&plan(cli)?)?),
        Command::Ablate { kind } => {
            let p = plan(cli)?;
            report(match kind {
                Ablation::Loss => ablate_loss(&p)?,
                Ablation::Fusion => ablate_fusion(&p)?,
                Ablation::Aug => ablate_augmentation(&p)?,
            })
        }
        Command::SweepAug { strengths } => {
            let p = plan(cli)?;
            let grid = strengths.clone().unwrap_or_else(default_strengths);
            let r = sweep_aug_strength(&p, &grid)?;
            println!("strength,crop_min,i_nce,accuracy_mean,accuracy_std");
            for pt in &r.points {
                println!(
                    "{:.4},{:.4},{:.4},{:.2},{:.2}",
                    pt.strength, pt.crop_min, pt.i_nce_mean, pt.accuracy_mean, pt.accuracy_std
                );
            }
            println!("spearman(lightness, i_nce) = {:.3}; interior maximum: {}", r.spearman_lightness_ince, r.interior_maximum);
            Ok(())
        }
        Command::Plot { dir } => {
            for f in plot_results(dir)? {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
