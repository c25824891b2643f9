use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{generate_base_set, Attributes, Split, TrifeatureImage, TrifeatureSpec};
use crate::rng::{derive, derive_str, rng};
use crate::{Error, Result};

/// Bijection from texture ids to color ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynergyMapping {
    pub texture_to_color: Vec<u8>,
}

impl SynergyMapping {
    pub fn new(texture_to_color: Vec<u8>) -> Result<Self> {
        let m = Self { texture_to_color };
        m.validate()?;
        Ok(m)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            texture_to_color: (0..n as u8).collect(),
        }
    }

    pub fn random(n: usize, seed: u64) -> Self {
        let mut perm: Vec<u8> = (0..n as u8).collect();
        perm.shuffle(&mut rng(seed));
        Self {
            texture_to_color: perm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.texture_to_color.len();
        let mut seen = vec![false; n];
        for &c in &self.texture_to_color {
            let c = c as usize;
            if c >= n || seen[c] {
                return Err(Error::validation(format!(
                    "synergy mapping is not a bijection: {:?}",
                    self.texture_to_color
                )));
            }
            seen[c] = true;
        }
        Ok(())
    }

    pub fn contains(&self, texture: u8, color: u8) -> bool {
        self.texture_to_color.get(texture as usize) == Some(&color)
    }

    /// Task label of a pair: does the first image's texture map onto the
    /// second image's color?
    pub fn label(&self, first: &Attributes, second: &Attributes) -> bool {
        self.contains(first.texture, second.color)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub image_id: u32,
    pub attributes: Attributes,
}

/// One bimodal datum. The pixels live in the owning dataset; the pair
/// carries ids and attribute labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedSample {
    pub pair_id: u32,
    pub first: ImageRef,
    pub second: ImageRef,
    pub mapping_label: bool,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Shared shape, differing textures.
    SharedAndUnique,
    /// Training pairs respect the texture-to-color mapping.
    Synergy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairOptions {
    pub n_train: usize,
    pub n_test: usize,
    pub allow_repeats_train: bool,
    /// The held-out split has ~200 images, so a 4,096-pair test set needs
    /// some pairs to repeat.
    pub allow_repeats_test: bool,
}

impl Default for PairOptions {
    fn default() -> Self {
        Self {
            n_train: 10_000,
            n_test: 4_096,
            allow_repeats_train: false,
            allow_repeats_test: true,
        }
    }
}

/// Number of ordered pair slots of a split before any constraint.
pub fn candidate_pool_size(images: &[TrifeatureImage], split: Split) -> usize {
    let n = images.iter().filter(|i| i.split == split).count();
    n * n
}

fn image_ref(img: &TrifeatureImage) -> ImageRef {
    ImageRef {
        image_id: img.id,
        attributes: img.attributes,
    }
}

fn valid_pool(
    images: &[TrifeatureImage],
    split: Split,
    accept: impl Fn(&Attributes, &Attributes) -> bool,
) -> Vec<(usize, usize)> {
    let idx: Vec<usize> = (0..images.len()).filter(|&i| images[i].split == split).collect();
    let mut pool = Vec::new();
    for &a in &idx {
        for &b in &idx {
            if accept(&images[a].attributes, &images[b].attributes) {
                pool.push((a, b));
            }
        }
    }
    pool
}

fn draw(
    pool: &[(usize, usize)],
    n: usize,
    allow_repeats: bool,
    what: &str,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    let mut r = rng(seed);
    if n <= pool.len() {
        return Ok(rand::seq::index::sample(&mut r, pool.len(), n)
            .into_iter()
            .map(|k| pool[k])
            .collect());
    }
    if !allow_repeats || pool.is_empty() {
        return Err(Error::Capacity {
            what: what.to_string(),
            requested: n,
            available: pool.len(),
        });
    }
    let mut out = pool.to_vec();
    out.shuffle(&mut r);
    while out.len() < n {
        out.push(pool[r.random_range(0..pool.len())]);
    }
    Ok(out)
}

fn to_samples(
    images: &[TrifeatureImage],
    picks: &[(usize, usize)],
    split: Split,
    mapping: &SynergyMapping,
    first_id: usize,
) -> Vec<PairedSample> {
    picks
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| {
            let first = image_ref(&images[a]);
            let second = image_ref(&images[b]);
            PairedSample {
                pair_id: (first_id + k) as u32,
                mapping_label: mapping.label(&first.attributes, &second.attributes),
                first,
                second,
                split,
            }
        })
        .collect()
}

/// Pairs with identical shape and different texture, train pairs from
/// train images and test pairs from test images. Every pair is labeled
/// with `mapping` so the same pairs can serve the synergy probe.
pub fn build_pairs_experiment1(
    images: &[TrifeatureImage],
    mapping: &SynergyMapping,
    options: &PairOptions,
    seed: u64,
) -> Result<Vec<PairedSample>> {
    mapping.validate()?;
    let accept = |a: &Attributes, b: &Attributes| a.shape == b.shape && a.texture != b.texture;
    let mut out = Vec::with_capacity(options.n_train + options.n_test);
    let train = valid_pool(images, Split::Train, accept);
    let picks = draw(
        &train,
        options.n_train,
        options.allow_repeats_train,
        "experiment 1 train",
        derive(seed, &[1, 0]),
    )?;
    out.extend(to_samples(images, &picks, Split::Train, mapping, 0));
    let test = valid_pool(images, Split::Test, accept);
    let picks = draw(
        &test,
        options.n_test,
        options.allow_repeats_test,
        "experiment 1 test",
        derive(seed, &[1, 1]),
    )?;
    out.extend(to_samples(images, &picks, Split::Test, mapping, options.n_train));
    Ok(out)
}

/// Mapping-respecting training pairs; the test pairs are `exp1_test`
/// verbatim (same images), relabeled under `mapping` and renumbered after
/// the training pairs.
pub fn build_pairs_experiment2(
    images: &[TrifeatureImage],
    mapping: &SynergyMapping,
    n_train: usize,
    allow_repeats: bool,
    exp1_test: &[PairedSample],
    seed: u64,
) -> Result<(Vec<PairedSample>, Vec<PairedSample>)> {
    mapping.validate()?;
    let pool = valid_pool(images, Split::Train, |a, b| mapping.label(a, b));
    let picks = draw(&pool, n_train, allow_repeats, "experiment 2 train", derive(seed, &[2, 0]))?;
    let train = to_samples(images, &picks, Split::Train, mapping, 0);
    let test = exp1_test
        .iter()
        .filter(|p| p.split == Split::Test)
        .enumerate()
        .map(|(k, p)| PairedSample {
            pair_id: (n_train + k) as u32,
            mapping_label: mapping.label(&p.first.attributes, &p.second.attributes),
            ..*p
        })
        .collect();
    Ok((train, test))
}

/// An in-memory bimodal dataset: base images plus pairs over them.
#[derive(Debug, Clone, PartialEq)]
pub struct BimodalDataset {
    pub spec: TrifeatureSpec,
    pub seed: u64,
    pub experiment: Experiment,
    pub mapping: SynergyMapping,
    pub images: Vec<TrifeatureImage>,
    pub pairs: Vec<PairedSample>,
}

impl BimodalDataset {
    /// Generates a dataset as a pure function of `(spec, experiment,
    /// options, seed)`. Both experiments generated from the same seed share
    /// base images, mapping and test pairs.
    pub fn generate(
        spec: &TrifeatureSpec,
        experiment: Experiment,
        options: &PairOptions,
        seed: u64,
    ) -> Result<Self> {
        let images = generate_base_set(spec, derive_str(seed, "base"))?;
        if spec.num_textures != spec.num_colors {
            return Err(Error::validation("the synergy mapping needs as many textures as colors"));
        }
        let mapping = SynergyMapping::random(spec.num_textures, derive_str(seed, "mapping"));
        let exp1 = build_pairs_experiment1(&images, &mapping, options, derive_str(seed, "pairs"))?;
        let pairs = match experiment {
            Experiment::SharedAndUnique => exp1,
            Experiment::Synergy => {
                let (mut train, test) = build_pairs_experiment2(
                    &images,
                    &mapping,
                    options.n_train,
                    options.allow_repeats_train,
                    &exp1,
                    derive_str(seed, "pairs"),
                )?;
                train.extend(test);
                train
            }
        };
        Ok(Self {
            spec: spec.clone(),
            seed,
            experiment,
            mapping,
            images,
            pairs,
        })
    }

    pub fn image(&self, id: u32) -> &TrifeatureImage {
        &self.images[id as usize]
    }

    pub fn pairs_in(&self, split: Split) -> impl Iterator<Item = &PairedSample> {
        self.pairs.iter().filter(move |p| p.split == split)
    }

    pub fn split_pairs(&self, split: Split) -> Vec<PairedSample> {
        self.pairs_in(split).copied().collect()
    }

    pub fn positive_rate(&self, split: Split) -> f64 {
        let (pos, n) = self
            .pairs_in(split)
            .fold((0usize, 0usize), |(p, n), s| (p + s.mapping_label as usize, n + 1));
        if n == 0 {
            0.0
        } else {
            pos as f64 / n as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::OnceLock;

    fn base() -> &'static Vec<TrifeatureImage> {
        static BASE: OnceLock<Vec<TrifeatureImage>> = OnceLock::new();
        BASE.get_or_init(|| generate_base_set(&TrifeatureSpec::desk(), 11).unwrap())
    }

    #[test]
    fn experiment1_defaults_give_requested_counts_and_constraints() {
        let m = SynergyMapping::random(10, 1);
        let pairs = build_pairs_experiment1(base(), &m, &PairOptions::default(), 5).unwrap();
        let train: Vec<_> = pairs.iter().filter(|p| p.split == Split::Train).collect();
        let test: Vec<_> = pairs.iter().filter(|p| p.split == Split::Test).collect();
        assert_eq!(train.len(), 10_000);
        assert_eq!(test.len(), 4_096);
        for p in &pairs {
            assert_eq!(p.first.attributes.shape, p.second.attributes.shape);
            assert_ne!(p.first.attributes.texture, p.second.attributes.texture);
            let imgs = base();
            assert_eq!(imgs[p.first.image_id as usize].split, p.split);
            assert_eq!(imgs[p.second.image_id as usize].split, p.split);
        }
        let distinct: std::collections::HashSet<_> =
            train.iter().map(|p| (p.first.image_id, p.second.image_id)).collect();
        assert_eq!(distinct.len(), 10_000);
    }

    #[test]
    fn pool_size_before_constraints() {
        assert_eq!(candidate_pool_size(base(), Split::Train), 5_760_000);
        assert_eq!(candidate_pool_size(base(), Split::Test), 40_000);
    }

    #[test]
    fn capacity_error_when_repeats_are_disallowed() {
        let m = SynergyMapping::identity(10);
        let opts = PairOptions {
            n_train: 10,
            n_test: 4_096,
            allow_repeats_test: false,
            ..PairOptions::default()
        };
        match build_pairs_experiment1(base(), &m, &opts, 0) {
            Err(Error::Capacity {
                requested,
                available,
                ..
            }) => {
                assert_eq!(requested, 4_096);
                assert!(available < 4_096);
            }
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn experiment2_train_respects_mapping_and_reuses_test_pairs() {
        let m = SynergyMapping::random(10, 4);
        let exp1 = build_pairs_experiment1(base(), &m, &PairOptions::default(), 5).unwrap();
        let (train, test) = build_pairs_experiment2(base(), &m, 10_000, false, &exp1, 6).unwrap();
        assert_eq!(train.len(), 10_000);
        assert!(train.iter().all(|p| p.mapping_label));
        assert!(train.iter().all(|p| m.contains(p.first.attributes.texture, p.second.attributes.color)));
        let exp1_test: Vec<_> = exp1.iter().filter(|p| p.split == Split::Test).collect();
        assert_eq!(test.len(), exp1_test.len());
        for (a, b) in test.iter().zip(exp1_test) {
            assert_eq!((a.first, a.second), (b.first, b.second));
        }
        assert!(test.iter().any(|p| p.mapping_label));
        assert!(test.iter().any(|p| !p.mapping_label));
    }

    #[test]
    fn identity_mapping_label() {
        let m = SynergyMapping::identity(10);
        assert!(m.label(&Attributes::new(0, 3, 0), &Attributes::new(0, 0, 3)));
        assert!(!m.label(&Attributes::new(0, 3, 0), &Attributes::new(0, 0, 4)));
    }

    #[test]
    fn expected_positive_rate_is_one_tenth() {
        // Enumerate the 10x10 texture/color grid under several bijections.
        for seed in 0..5 {
            let m = SynergyMapping::random(10, seed);
            let hits = (0..10u8)
                .flat_map(|t| (0..10u8).map(move |c| (t, c)))
                .filter(|&(t, c)| m.contains(t, c))
                .count();
            assert_eq!(hits as f64 / 100.0, 0.1);
        }
    }

    #[test]
    fn non_bijective_mapping_is_rejected() {
        assert!(SynergyMapping::new(vec![0, 0, 1]).is_err());
        assert!(SynergyMapping::new(vec![0, 3, 1]).is_err());
        assert!(SynergyMapping::new(vec![2, 0, 1]).is_ok());
    }
}
