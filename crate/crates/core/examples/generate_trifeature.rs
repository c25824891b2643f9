//! Renders a small desk-resolution bimodal dataset and writes it to disk.
//!
//! cargo run --example generate_trifeature -- [out_dir]

use comm::trifeature::{load_dataset, write_dataset, BimodalDataset, Experiment, PairOptions, Split, TrifeatureSpec};

fn main() -> comm::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/example-data".into());
    let spec = TrifeatureSpec::desk();
    let pairs = PairOptions {
        n_train: 500,
        n_test: 200,
        ..Default::default()
    };
    for (name, exp) in [("exp1", Experiment::SharedAndUnique), ("exp2", Experiment::Synergy)] {
        let ds = BimodalDataset::generate(&spec, exp, &pairs, 7)?;
        let dir = std::path::Path::new(&out).join(name);
        write_dataset(&ds, &dir)?;
        let back = load_dataset(&dir)?;
        assert_eq!(back.pairs, ds.pairs);
        println!(
            "{name}: {} base images, {} train / {} test pairs, mapping-positive rate train {:.3} test {:.3}",
            ds.images.len(),
            ds.pairs_in(Split::Train).count(),
            ds.pairs_in(Split::Test).count(),
            ds.positive_rate(Split::Train),
            ds.positive_rate(Split::Test),
        );
    }
    println!("written under {out}");
    Ok(())
}
