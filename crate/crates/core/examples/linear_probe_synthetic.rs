//! Linear probing on synthetic features: a realizable labeling and pure
//! noise.

use comm::probe::{linear_probe, ProbeOptions};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn main() -> comm::Result<()> {
    let mut r = comm::rng::rng(3);
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    let x = Array2::from_shape_fn((2000, 16), |_| normal.sample(&mut r));
    let w = Array2::from_shape_fn((16, 10), |_| normal.sample(&mut r));
    let logits = x.dot(&w);
    let y: Vec<usize> = logits
        .rows()
        .into_iter()
        .map(|row| row.iter().enumerate().fold((0, f32::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0)
        .collect();
    let (train, test) = (x.slice(ndarray::s![..1500, ..]), x.slice(ndarray::s![1500.., ..]));
    let res = linear_probe(train, &y[..1500], test, &y[1500..], 10, &ProbeOptions::default(), 0)?;
    println!("linear labels: accuracy {:.1}% after {} epochs", res.accuracy, res.epochs);

    let noise: Vec<usize> = (0..2000).map(|_| r.random_range(0..10)).collect();
    let res = linear_probe(train, &noise[..1500], test, &noise[1500..], 10, &ProbeOptions::default(), 0)?;
    println!("random labels: accuracy {:.1}% (chance 10%)", res.accuracy);
    Ok(())
}
