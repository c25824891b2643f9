//! Trains the multimodal objective and both baselines on synthetic
//! three-modality vectors and prints their loss streams.

use comm::augment::{AugmentationPolicy, Transform};
use comm::model::{FusionKind, HeadConfig, TransformerConfig};
use comm::train::{train_run, ModelSpec, Objective, TrainConfig, VectorSource};
use comm::trifeature::ResolutionProfile;
use rand::Rng;

fn main() -> comm::Result<()> {
    let mut r = comm::rng::rng(0);
    let rows = (0..64)
        .map(|_| {
            let shared: Vec<f32> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
            (0..3)
                .map(|_| {
                    let mut v: Vec<f32> = shared.iter().map(|s| s + r.random_range(-0.1..0.1)).collect();
                    v.extend((0..4).map(|_| r.random_range(-1.0f32..1.0)));
                    v
                })
                .collect()
        })
        .collect();
    let source = VectorSource::new(vec![8; 3], rows)?;
    let out = tempfile_dir();
    for objective in [Objective::Comm, Objective::Cross, Objective::CrossSelf] {
        let mut c = TrainConfig::trifeature(objective, ResolutionProfile::Desk64, 1);
        c.epochs = 5;
        c.batch_size = 16;
        c.lr = 1e-3;
        c.policy = AugmentationPolicy::uniform("noise", Transform::gaussian_noise(0.1)?);
        c.model = ModelSpec {
            embed_dim: 32,
            fusion: FusionKind::Attention(TransformerConfig {
                layers: 1,
                heads: 4,
                mlp_ratio: 2,
            }),
            head: HeadConfig {
                hidden: 32,
                output: 16,
                layers: 2,
                shared: true,
            },
            projection_dim: 16,
            ..ModelSpec::default()
        };
        let run = train_run(&c, &source, &out.join(objective.as_str()))?;
        let first = run.losses.first().map(|s| s.total).unwrap_or(f32::NAN);
        let last = run.losses.last().map(|s| s.total).unwrap_or(f32::NAN);
        println!(
            "{:>10}: {} steps, loss {first:.4} -> {last:.4}, InfoNCE terms per step {}",
            objective.as_str(),
            run.losses.len(),
            run.losses[0].nce.len()
        );
    }
    println!("runs under {}", out.display());
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("comm-train-toy-{}", std::process::id()));
    std::fs::create_dir_all(&d).expect("temp dir");
    d
}
