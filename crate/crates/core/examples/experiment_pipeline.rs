//! End-to-end pipeline on a miniature benchmark: a method comparison, the
//! three ablations, a strength sweep and the figures.
//!
//! cargo run --release --example experiment_pipeline -- [out_dir]

use comm::augment::AugmentationPolicy;
use comm::harness::{
    ablate_augmentation, ablate_fusion, ablate_loss, plot_results, run_experiment, sweep_aug_strength, ExperimentPlan,
};
use comm::model::HeadConfig;
use comm::probe::{ProbeOptions, ReportOptions};
use comm::train::{ModelSpec, Objective, TrainConfig};
use comm::trifeature::{PairOptions, ResolutionProfile, TrifeatureSpec};

fn main() -> comm::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/example-experiment".into());
    let spec = TrifeatureSpec {
        canvas_size: 32,
        shape_extent: 24,
        num_shapes: 4,
        num_textures: 4,
        num_colors: 4,
        test_combinations: 16,
        variants_per_combo: 2,
        ..TrifeatureSpec::desk()
    };
    let mut train = TrainConfig::trifeature(Objective::Comm, ResolutionProfile::Desk64, 0);
    train.epochs = 2;
    train.batch_size = 16;
    train.policy = AugmentationPolicy::identity();
    train.model = ModelSpec {
        embed_dim: 32,
        head: HeadConfig {
            hidden: 32,
            output: 16,
            layers: 2,
            shared: true,
        },
        projection_dim: 16,
        ..ModelSpec::default()
    };
    let plan = ExperimentPlan {
        dataset: Some(spec),
        pairs: PairOptions {
            n_train: 64,
            n_test: 32,
            ..Default::default()
        },
        replicates: 2,
        probe: ReportOptions {
            seeds: vec![0, 1],
            probe: ProbeOptions {
                max_epochs: 100,
                ..Default::default()
            },
            batch_size: 32,
            max_train_pairs: None,
        },
        train: Some(train),
        ..ExperimentPlan::new("mini", ResolutionProfile::Desk64, 5, &out)
    };

    let main = run_experiment(&plan)?;
    print!("{}", main.comparison.to_markdown());
    for (name, outcome) in [
        ("loss", ablate_loss(&plan)?),
        ("fusion", ablate_fusion(&plan)?),
        ("augmentation", ablate_augmentation(&plan)?),
    ] {
        println!("\n{name} ablation");
        print!("{}", outcome.comparison.to_markdown());
    }
    let sweep = sweep_aug_strength(&plan, &[0.2, 0.5, 1.0])?;
    for p in &sweep.points {
        println!("strength {:.2}: I_NCE {:.3}, synergy {:.1}%", p.strength, p.i_nce_mean, p.accuracy_mean);
    }
    for f in plot_results(plan.output_dir.as_path())? {
        println!("figure {}", f.display());
    }
    Ok(())
}
