//! Multinomial logistic regression on frozen features.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeOptions {
    pub lr: f64,
    pub max_epochs: usize,
    pub weight_decay: f64,
    /// Stop once the training loss improved by less than this (relative)
    /// over `patience` epochs.
    pub tolerance: f64,
    pub patience: usize,
    /// Z-score features with statistics of the training split.
    pub standardize: bool,
    /// Weight classes inversely to their training frequency.
    pub balanced: bool,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            max_epochs: 500,
            weight_decay: 0.0,
            tolerance: 1e-5,
            patience: 10,
            standardize: true,
            balanced: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    /// Percent of test samples classified correctly.
    pub accuracy: f64,
    /// Mean per-class recall on the test split, in percent.
    pub balanced_accuracy: f64,
    pub epochs: usize,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone)]
pub struct Standardizer {
    pub mean: Array1<f32>,
    pub std: Array1<f32>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f32>) -> Self {
        let mean = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()));
        let std = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-8 { s } else { 1.0 });
        Self { mean, std }
    }

    pub fn apply(&self, x: ArrayView2<f32>) -> Array2<f32> {
        (&x - &self.mean) / &self.std
    }
}

/// Trained linear classifier.
#[derive(Debug, Clone)]
pub struct LinearClassifier {
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
    pub standardizer: Option<Standardizer>,
}

impl LinearClassifier {
    pub fn logits(&self, x: ArrayView2<f32>) -> Array2<f32> {
        let x = match &self.standardizer {
            Some(s) => s.apply(x),
            None => x.to_owned(),
        };
        x.dot(&self.weight) + &self.bias
    }

    pub fn predict(&self, x: ArrayView2<f32>) -> Vec<usize> {
        self.logits(x)
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect()
    }
}

fn softmax_rows(logits: &mut Array2<f32>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Full-batch Adam on the (optionally class-weighted) cross-entropy.
pub fn fit(
    x: ArrayView2<f32>,
    labels: &[usize],
    num_classes: usize,
    options: &ProbeOptions,
    seed: u64,
) -> Result<(LinearClassifier, usize, f64)> {
    let n = x.nrows();
    if n != labels.len() || n == 0 {
        return Err(Error::validation(format!("{n} feature rows but {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::validation(format!("label {bad} outside {num_classes} classes")));
    }
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        counts[l] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::DegenerateTask {
            task: format!("{num_classes}-class probe"),
        });
    }
    let standardizer = options.standardize.then(|| Standardizer::fit(x));
    let xs = match &standardizer {
        Some(s) => s.apply(x),
        None => x.to_owned(),
    };
    let present = counts.iter().filter(|&&c| c > 0).count() as f32;
    let sample_w: Vec<f32> = labels
        .iter()
        .map(|&l| if options.balanced { n as f32 / (present * counts[l] as f32) } else { 1.0 })
        .collect();
    let total_w: f32 = sample_w.iter().sum();

    let d = xs.ncols();
    let normal = Normal::new(0.0, 0.01).expect("valid std");
    let mut r = rng(seed);
    let mut w = Array2::from_shape_fn((d, num_classes), |_| normal.sample(&mut r) as f32);
    let mut b = Array1::<f32>::zeros(num_classes);
    let (mut mw, mut vw) = (Array2::<f32>::zeros(w.raw_dim()), Array2::<f32>::zeros(w.raw_dim()));
    let (mut mb, mut vb) = (Array1::<f32>::zeros(num_classes), Array1::<f32>::zeros(num_classes));
    let (b1, b2, eps) = (0.9f32, 0.999f32, 1e-8f32);
    let lr = options.lr as f32;
    let mut history: Vec<f64> = Vec::new();
    let mut epochs = 0;
    for t in 1..=options.max_epochs {
        let mut p = xs.dot(&w) + &b;
        softmax_rows(&mut p);
        let mut loss = 0f64;
        for (i, &l) in labels.iter().enumerate() {
            loss -= (sample_w[i] * p[[i, l]].max(1e-12).ln()) as f64;
            p[[i, l]] -= 1.0;
        }
        loss /= total_w as f64;
        for (i, mut row) in p.rows_mut().into_iter().enumerate() {
            row *= sample_w[i] / total_w;
        }
        let mut gw = xs.t().dot(&p);
        if options.weight_decay > 0.0 {
            gw = gw + &w * options.weight_decay as f32;
        }
        let gb = p.sum_axis(Axis(0));
        let c1 = 1.0 - b1.powi(t as i32);
        let c2 = 1.0 - b2.powi(t as i32);
        mw = &mw * b1 + &gw * (1.0 - b1);
        vw = &vw * b2 + &gw.mapv(|g| g * g) * (1.0 - b2);
        mb = &mb * b1 + &gb * (1.0 - b1);
        vb = &vb * b2 + &gb.mapv(|g| g * g) * (1.0 - b2);
        w = &w - &((&mw / c1) / ((&vw / c2).mapv(f32::sqrt) + eps) * lr);
        b = &b - &((&mb / c1) / ((&vb / c2).mapv(f32::sqrt) + eps) * lr);
        epochs = t;
        history.push(loss);
        if history.len() > options.patience {
            let old = history[history.len() - 1 - options.patience];
            if old - loss < options.tolerance * old.abs().max(1e-12) {
                break;
            }
        }
    }
    Ok((
        LinearClassifier {
            weight: w,
            bias: b,
            standardizer,
        },
        epochs,
        history.last().copied().unwrap_or(f64::NAN),
    ))
}

/// Accuracy and balanced accuracy, in percent.
pub fn score(predicted: &[usize], labels: &[usize], num_classes: usize) -> (f64, f64) {
    let n = labels.len().max(1) as f64;
    let correct = predicted.iter().zip(labels).filter(|(p, l)| p == l).count() as f64;
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (&p, &l) in predicted.iter().zip(labels) {
        totals[l] += 1;
        hits[l] += (p == l) as usize;
    }
    let recalls: Vec<f64> = totals
        .iter()
        .zip(&hits)
        .filter(|(&t, _)| t > 0)
        .map(|(&t, &h)| h as f64 / t as f64)
        .collect();
    let balanced = recalls.iter().sum::<f64>() / recalls.len().max(1) as f64;
    (100.0 * correct / n, 100.0 * balanced)
}

/// Trains on the training split and scores the test split.
pub fn linear_probe(
    train_x: ArrayView2<f32>,
    train_y: &[usize],
    test_x: ArrayView2<f32>,
    test_y: &[usize],
    num_classes: usize,
    options: &ProbeOptions,
    seed: u64,
) -> Result<ProbeResult> {
    if train_x.ncols() != test_x.ncols() {
        return Err(Error::validation("train and test features differ in width"));
    }
    let (clf, epochs, loss) = fit(train_x, train_y, num_classes, options, seed)?;
    let (accuracy, balanced_accuracy) = score(&clf.predict(test_x), test_y, num_classes);
    Ok(ProbeResult {
        accuracy,
        balanced_accuracy,
        epochs,
        final_train_loss: loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn gaussian(n: usize, d: usize, seed: u64) -> Array2<f32> {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut r = rng(seed);
        Array2::from_shape_fn((n, d), |_| normal.sample(&mut r) as f32)
    }

    fn argmax_labels(x: &Array2<f32>, proj: &Array2<f32>) -> Vec<usize> {
        let clf = LinearClassifier {
            weight: proj.clone(),
            bias: Array1::zeros(proj.ncols()),
            standardizer: None,
        };
        clf.predict(x.view())
    }

    #[test]
    fn realizable_labels_are_learned_perfectly() {
        let x = gaussian(600, 8, 1);
        let proj = gaussian(8, 4, 2) * 5.0;
        let y = argmax_labels(&x, &proj);
        let res = linear_probe(x.view(), &y, x.view(), &y, 4, &ProbeOptions { max_epochs: 2000, tolerance: 0.0, ..Default::default() }, 0).unwrap();
        assert!(res.accuracy >= 99.0, "{}", res.accuracy);
    }

    #[test]
    fn random_features_stay_near_chance() {
        let mut accs = Vec::new();
        for seed in 0..5 {
            let mut r = rng(100 + seed);
            let train_y: Vec<usize> = (0..2000).map(|_| r.random_range(0..10)).collect();
            let test_y: Vec<usize> = (0..2000).map(|_| r.random_range(0..10)).collect();
            let res = linear_probe(
                gaussian(2000, 32, seed).view(),
                &train_y,
                gaussian(2000, 32, seed + 50).view(),
                &test_y,
                10,
                &ProbeOptions::default(),
                seed,
            )
            .unwrap();
            accs.push(res.accuracy);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((7.0..=13.0).contains(&mean), "{accs:?}");
    }

    #[test]
    fn single_class_training_labels_are_degenerate() {
        let x = gaussian(10, 3, 0);
        assert!(matches!(
            linear_probe(x.view(), &[1; 10], x.view(), &[1; 10], 2, &ProbeOptions::default(), 0),
            Err(Error::DegenerateTask { .. })
        ));
    }

    #[test]
    fn affine_reparameterization_does_not_change_accuracy_materially() {
        let x = gaussian(800, 6, 3);
        let proj = gaussian(6, 3, 4);
        let y = argmax_labels(&x, &proj);
        let opts = ProbeOptions {
            max_epochs: 3000,
            lr: 5e-2,
            tolerance: 0.0,
            ..Default::default()
        };
        let run = |features: &Array2<f32>, standardize: bool| {
            let (train, test) = (features.slice(ndarray::s![..600, ..]), features.slice(ndarray::s![600.., ..]));
            linear_probe(train, &y[..600], test, &y[600..], 3, &ProbeOptions { standardize, ..opts }, 0)
                .unwrap()
                .accuracy
        };
        let reference = run(&x, true);
        assert!(reference > 90.0, "{reference}");
        let scale = Array1::from(vec![10.0f32, 0.1, 3.0, 1.0, 50.0, 0.5]);
        let distorted = &x * &scale + 7.0;
        let accs = [run(&x, false), run(&distorted, true)];
        for a in accs {
            assert!((a - reference).abs() <= 0.5, "{accs:?} vs {reference}");
        }
    }

    #[test]
    fn same_seed_same_result() {
        let x = gaussian(200, 5, 8);
        let mut r = rng(9);
        let y: Vec<usize> = (0..200).map(|_| r.random_range(0..3)).collect();
        let a = linear_probe(x.view(), &y, x.view(), &y, 3, &ProbeOptions::default(), 4).unwrap();
        let b = linear_probe(x.view(), &y, x.view(), &y, 3, &ProbeOptions::default(), 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn balanced_accuracy_handles_skewed_classes() {
        let (acc, bal) = score(&[0, 0, 0, 0], &[0, 0, 0, 1], 2);
        assert_eq!(acc, 75.0);
        assert_eq!(bal, 50.0);
    }
}
