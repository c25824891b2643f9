//! Trains a desk-resolution model for a few steps on each experiment,
//! reloads the checkpoints and writes the four-task probe report.
//!
//! cargo run --release --example checkpoint_probe -- [out_dir]

use comm::probe::{interaction_report, FeatureCache, FrozenModel, ProbeOptions, ReportOptions};
use comm::train::engine::checkpoint_dir;
use comm::train::{train_run, Objective, PairSource, TrainConfig};
use comm::trifeature::{BimodalDataset, Experiment, PairOptions, ResolutionProfile, Split, TrifeatureSpec};

fn main() -> comm::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/example-probe".into()));
    let spec = TrifeatureSpec::desk();
    let pairs = PairOptions {
        n_train: 128,
        n_test: 64,
        ..Default::default()
    };
    let exp1 = BimodalDataset::generate(&spec, Experiment::SharedAndUnique, &pairs, 1)?;
    let exp2 = BimodalDataset::generate(&spec, Experiment::Synergy, &pairs, 1)?;

    let mut config = TrainConfig::trifeature(Objective::Comm, ResolutionProfile::Desk64, 2);
    config.epochs = 1;
    config.batch_size = 32;
    config.model.embed_dim = 64;
    config.model.head.hidden = 64;
    config.model.head.output = 32;
    for (name, ds) in [("exp1", &exp1), ("exp2", &exp2)] {
        let run = train_run(&config, &PairSource::new(ds, Split::Train), &out.join(name))?;
        println!("{name}: {} steps, last loss {:.4}", run.losses.len(), run.losses.last().map(|s| s.total).unwrap_or(f32::NAN));
    }

    let model = FrozenModel::load(&checkpoint_dir(&out.join("exp1"), 1))?;
    let synergy = FrozenModel::load(&checkpoint_dir(&out.join("exp2"), 1))?;
    let options = ReportOptions {
        seeds: vec![0, 1, 2],
        probe: ProbeOptions::default(),
        batch_size: 64,
        max_train_pairs: None,
    };
    let cache = FeatureCache::new(out.join("feature_cache"));
    let report = interaction_report(&model, &synergy, &exp1, &options, Some(&cache))?;
    report.write(&out)?;
    print!("{}", report.to_markdown());
    Ok(())
}
