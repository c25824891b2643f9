//! Seedable stochastic transforms over multimodal samples.
//!
//! A [`Transform`] acts on one modality; an [`AugmentationPolicy`] routes
//! transforms to modalities. Every application takes an explicit seed and
//! is a pure function of `(policy, sample, seed)`.

pub mod image;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use image::ImageTensor;

use crate::rng::{derive, rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub steps: usize,
    pub dim: usize,
    /// Step-major (`steps x dim`).
    pub data: Vec<f32>,
}

impl Sequence {
    pub fn new(steps: usize, dim: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), steps * dim, "sequence buffer size mismatch");
        Self { steps, dim, data }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModalityData {
    Image(ImageTensor),
    Vector(Vec<f32>),
    Sequence(Sequence),
    Tokens(Vec<u32>),
}

impl ModalityData {
    fn kind(&self) -> &'static str {
        match self {
            ModalityData::Image(_) => "image",
            ModalityData::Vector(_) => "vector",
            ModalityData::Sequence(_) => "sequence",
            ModalityData::Tokens(_) => "tokens",
        }
    }
}

/// A tuple of modalities; `None` marks an absent (projected-out) slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultimodalSample {
    pub slots: Vec<Option<ModalityData>>,
}

impl MultimodalSample {
    pub fn new(modalities: Vec<ModalityData>) -> Self {
        Self {
            slots: modalities.into_iter().map(Some).collect(),
        }
    }

    pub fn num_modalities(&self) -> usize {
        self.slots.len()
    }

    pub fn is_present(&self, i: usize) -> bool {
        matches!(self.slots.get(i), Some(Some(_)))
    }

    pub fn present(&self) -> Vec<usize> {
        (0..self.slots.len()).filter(|&i| self.is_present(i)).collect()
    }
}

/// Keeps modality `index` (zero-based) and marks every other slot absent.
pub fn project_modality(sample: &MultimodalSample, index: usize) -> Result<MultimodalSample> {
    if index >= sample.slots.len() {
        return Err(Error::validation(format!(
            "modality index {index} out of range for {} modalities",
            sample.slots.len()
        )));
    }
    Ok(MultimodalSample {
        slots: sample
            .slots
            .iter()
            .enumerate()
            .map(|(i, s)| if i == index { s.clone() } else { None })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Identity,
    RandomResizedCrop {
        scale: (f64, f64),
        ratio: (f64, f64),
    },
    ColorJitter {
        p: f64,
        brightness: f64,
        contrast: f64,
        saturation: f64,
        hue: f64,
    },
    RandomGrayscale {
        p: f64,
    },
    GaussianBlur {
        p: f64,
        sigma: (f64, f64),
        /// Kernel size as a fraction of the image side, rounded to odd.
        kernel_fraction: f64,
    },
    HorizontalFlip {
        p: f64,
    },
    GaussianNoise {
        sigma: f64,
    },
    RandomDrop {
        max_fraction: f64,
    },
    TokenMask {
        p: f64,
        mask_symbol: u32,
    },
    Compose {
        steps: Vec<Transform>,
    },
}

/// SimCLR-style image augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimClrParams {
    pub crop_scale: (f64, f64),
    pub crop_ratio: (f64, f64),
    pub jitter_p: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub grayscale_p: f64,
    pub blur_p: f64,
    pub blur_sigma: (f64, f64),
    pub blur_kernel_fraction: f64,
    pub flip_p: f64,
}

impl Default for SimClrParams {
    fn default() -> Self {
        Self {
            crop_scale: (0.08, 1.0),
            crop_ratio: (3.0 / 4.0, 4.0 / 3.0),
            jitter_p: 0.8,
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            hue: 0.1,
            grayscale_p: 0.2,
            blur_p: 0.5,
            blur_sigma: (0.1, 2.0),
            blur_kernel_fraction: 0.1,
            flip_p: 0.5,
        }
    }
}

impl SimClrParams {
    /// Scales every range and probability towards the identity: strength 1
    /// gives the defaults, strength 0 the identity transform. Ranges are
    /// nested, so a weaker strength draws from a subset of a stronger one.
    pub fn at_strength(strength: f64) -> Self {
        let s = strength.clamp(0.0, 1.0);
        let d = Self::default();
        Self {
            crop_scale: (d.crop_scale.0 + (1.0 - s) * (1.0 - d.crop_scale.0), 1.0),
            crop_ratio: (d.crop_ratio.0.powf(s), d.crop_ratio.1.powf(s)),
            jitter_p: d.jitter_p,
            brightness: s * d.brightness,
            contrast: s * d.contrast,
            saturation: s * d.saturation,
            hue: s * d.hue,
            grayscale_p: s * d.grayscale_p,
            blur_p: s * d.blur_p,
            blur_sigma: (d.blur_sigma.0, d.blur_sigma.1 - (1.0 - s) * (d.blur_sigma.1 - d.blur_sigma.0)),
            blur_kernel_fraction: d.blur_kernel_fraction,
            flip_p: s * d.flip_p,
        }
    }

    pub fn transform(&self) -> Transform {
        Transform::Compose {
            steps: vec![
                Transform::RandomResizedCrop {
                    scale: self.crop_scale,
                    ratio: self.crop_ratio,
                },
                Transform::ColorJitter {
                    p: self.jitter_p,
                    brightness: self.brightness,
                    contrast: self.contrast,
                    saturation: self.saturation,
                    hue: self.hue,
                },
                Transform::RandomGrayscale { p: self.grayscale_p },
                Transform::GaussianBlur {
                    p: self.blur_p,
                    sigma: self.blur_sigma,
                    kernel_fraction: self.blur_kernel_fraction,
                },
                Transform::HorizontalFlip { p: self.flip_p },
            ],
        }
    }

    /// The same transform without the crop step.
    pub fn transform_without_crop(&self) -> Transform {
        match self.transform() {
            Transform::Compose { steps } => Transform::Compose {
                steps: steps
                    .into_iter()
                    .filter(|t| !matches!(t, Transform::RandomResizedCrop { .. }))
                    .collect(),
            },
            t => t,
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::validation(format!("{name} must be in [0, 1], got {p}")))
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64), min: f64) -> Result<()> {
    if lo.is_finite() && hi.is_finite() && min <= lo && lo <= hi {
        Ok(())
    } else {
        Err(Error::validation(format!("invalid {name} range ({lo}, {hi})")))
    }
}

impl Transform {
    pub fn compose(steps: impl IntoIterator<Item = Transform>) -> Self {
        Transform::Compose {
            steps: steps.into_iter().collect(),
        }
    }

    pub fn gaussian_noise(sigma: f64) -> Result<Self> {
        let t = Transform::GaussianNoise { sigma };
        t.validate()?;
        Ok(t)
    }

    pub fn random_drop(max_fraction: f64) -> Result<Self> {
        let t = Transform::RandomDrop { max_fraction };
        t.validate()?;
        Ok(t)
    }

    pub fn token_mask(p: f64, mask_symbol: u32) -> Result<Self> {
        let t = Transform::TokenMask { p, mask_symbol };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Transform::Identity => Ok(()),
            Transform::RandomResizedCrop { scale, ratio } => {
                check_range("crop scale", *scale, f64::MIN_POSITIVE)?;
                if scale.1 > 1.0 {
                    return Err(Error::validation("crop scale upper bound must be <= 1"));
                }
                check_range("crop ratio", *ratio, f64::MIN_POSITIVE)
            }
            Transform::ColorJitter {
                p,
                brightness,
                contrast,
                saturation,
                hue,
            } => {
                check_prob("jitter probability", *p)?;
                for (n, v) in [("brightness", brightness), ("contrast", contrast), ("saturation", saturation)] {
                    if !(*v >= 0.0) {
                        return Err(Error::validation(format!("{n} must be >= 0")));
                    }
                }
                if !(0.0..=0.5).contains(hue) {
                    return Err(Error::validation("hue must be in [0, 0.5]"));
                }
                Ok(())
            }
            Transform::RandomGrayscale { p } | Transform::HorizontalFlip { p } => check_prob("probability", *p),
            Transform::GaussianBlur {
                p,
                sigma,
                kernel_fraction,
            } => {
                check_prob("blur probability", *p)?;
                check_range("blur sigma", *sigma, f64::MIN_POSITIVE)?;
                check_prob("kernel fraction", *kernel_fraction)
            }
            Transform::GaussianNoise { sigma } => {
                if *sigma >= 0.0 && sigma.is_finite() {
                    Ok(())
                } else {
                    Err(Error::validation(format!("noise sigma must be >= 0, got {sigma}")))
                }
            }
            Transform::RandomDrop { max_fraction } => {
                if (0.0..1.0).contains(max_fraction) {
                    Ok(())
                } else {
                    Err(Error::validation(format!(
                        "drop fraction must be in [0, 1), got {max_fraction}"
                    )))
                }
            }
            Transform::TokenMask { p, .. } => check_prob("mask probability", *p),
            Transform::Compose { steps } => steps.iter().try_for_each(Transform::validate),
        }
    }

    fn apply(&self, data: &ModalityData, rng: &mut ChaCha8Rng) -> Result<ModalityData> {
        let mismatch = |what: &str| {
            Err(Error::validation(format!(
                "{what} transform cannot act on a {} modality",
                data.kind()
            )))
        };
        Ok(match (self, data) {
            (Transform::Identity, d) => d.clone(),
            (Transform::Compose { steps }, d) => {
                let mut cur = d.clone();
                for t in steps {
                    cur = t.apply(&cur, rng)?;
                }
                cur
            }
            (Transform::RandomResizedCrop { scale, ratio }, ModalityData::Image(img)) => {
                let (top, left, h, w) = crop_params(img.height, img.width, *scale, *ratio, rng);
                ModalityData::Image(image::resized_crop(img, top, left, h, w))
            }
            (
                Transform::ColorJitter {
                    p,
                    brightness,
                    contrast,
                    saturation,
                    hue,
                },
                ModalityData::Image(img),
            ) => {
                if rng.random::<f64>() >= *p {
                    return Ok(data.clone());
                }
                let factor = |r: &mut ChaCha8Rng, m: f64| -> f32 {
                    if m == 0.0 {
                        1.0
                    } else {
                        r.random_range((1.0 - m).max(0.0)..=1.0 + m) as f32
                    }
                };
                let b = factor(rng, *brightness);
                let c = factor(rng, *contrast);
                let s = factor(rng, *saturation);
                let h = if *hue == 0.0 { 0.0 } else { rng.random_range(-hue..=*hue) as f32 };
                let mut order = [0usize, 1, 2, 3];
                order.shuffle(rng);
                let mut cur = img.clone();
                for op in order {
                    cur = match op {
                        0 if b != 1.0 => image::adjust_brightness(&cur, b),
                        1 if c != 1.0 => image::adjust_contrast(&cur, c),
                        2 if s != 1.0 => image::adjust_saturation(&cur, s),
                        3 if h != 0.0 => image::adjust_hue(&cur, h),
                        _ => cur,
                    };
                }
                ModalityData::Image(cur)
            }
            (Transform::RandomGrayscale { p }, ModalityData::Image(img)) => {
                if rng.random::<f64>() < *p {
                    ModalityData::Image(image::grayscale(img))
                } else {
                    data.clone()
                }
            }
            (
                Transform::GaussianBlur {
                    p,
                    sigma,
                    kernel_fraction,
                },
                ModalityData::Image(img),
            ) => {
                if rng.random::<f64>() < *p {
                    let side = img.height.min(img.width) as f64;
                    let k = ((kernel_fraction * side) as usize) | 1;
                    let s = rng.random_range(sigma.0..=sigma.1) as f32;
                    ModalityData::Image(image::gaussian_blur(img, k, s))
                } else {
                    data.clone()
                }
            }
            (Transform::HorizontalFlip { p }, ModalityData::Image(img)) => {
                if rng.random::<f64>() < *p {
                    ModalityData::Image(image::hflip(img))
                } else {
                    data.clone()
                }
            }
            (Transform::GaussianNoise { sigma }, d) => {
                if *sigma == 0.0 {
                    return Ok(d.clone());
                }
                let normal = Normal::new(0.0, *sigma).map_err(|e| Error::validation(e.to_string()))?;
                let mut noisy = |v: &[f32]| -> Vec<f32> {
                    v.iter().map(|&x| x + normal.sample(rng) as f32).collect()
                };
                match d {
                    ModalityData::Vector(v) => ModalityData::Vector(noisy(v)),
                    ModalityData::Sequence(s) => {
                        ModalityData::Sequence(Sequence::new(s.steps, s.dim, noisy(&s.data)))
                    }
                    ModalityData::Image(img) => {
                        ModalityData::Image(ImageTensor::new(img.channels, img.height, img.width, noisy(&img.data)))
                    }
                    ModalityData::Tokens(_) => return mismatch("gaussian noise"),
                }
            }
            (Transform::RandomDrop { max_fraction }, ModalityData::Sequence(s)) => {
                if *max_fraction == 0.0 {
                    return Ok(data.clone());
                }
                let f = rng.random_range(0.0..=*max_fraction);
                let k = ((f * s.steps as f64).floor() as usize).min(s.steps);
                let mut out = s.clone();
                for step in rand::seq::index::sample(rng, s.steps, k) {
                    out.data[step * s.dim..(step + 1) * s.dim].fill(0.0);
                }
                ModalityData::Sequence(out)
            }
            (Transform::TokenMask { p, mask_symbol }, ModalityData::Tokens(tokens)) => {
                ModalityData::Tokens(
                    tokens
                        .iter()
                        .map(|&t| if rng.random::<f64>() < *p { *mask_symbol } else { t })
                        .collect(),
                )
            }
            (Transform::RandomResizedCrop { .. }, _) => return mismatch("crop"),
            (Transform::ColorJitter { .. }, _) => return mismatch("color jitter"),
            (Transform::RandomGrayscale { .. }, _) => return mismatch("grayscale"),
            (Transform::GaussianBlur { .. }, _) => return mismatch("blur"),
            (Transform::HorizontalFlip { .. }, _) => return mismatch("flip"),
            (Transform::RandomDrop { .. }, _) => return mismatch("random drop"),
            (Transform::TokenMask { .. }, _) => return mismatch("token mask"),
        })
    }
}

/// Random-resized-crop window: up to ten rejection attempts on area and
/// log-aspect, then a centered fallback.
fn crop_params(
    height: usize,
    width: usize,
    scale: (f64, f64),
    ratio: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> (usize, usize, usize, usize) {
    let area = (height * width) as f64;
    let (lr0, lr1) = (ratio.0.ln(), ratio.1.ln());
    for _ in 0..10 {
        let target = area * rng.random_range(scale.0..=scale.1);
        let aspect = rng.random_range(lr0..=lr1).exp();
        let w = (target * aspect).sqrt().round() as usize;
        let h = (target / aspect).sqrt().round() as usize;
        if w > 0 && h > 0 && w <= width && h <= height {
            let top = rng.random_range(0..=height - h);
            let left = rng.random_range(0..=width - w);
            return (top, left, h, w);
        }
    }
    let in_ratio = width as f64 / height as f64;
    let (w, h) = if in_ratio < ratio.0 {
        (width, ((width as f64 / ratio.0).round() as usize).min(height))
    } else if in_ratio > ratio.1 {
        (((height as f64 * ratio.1).round() as usize).min(width), height)
    } else {
        (width, height)
    };
    ((height - h) / 2, (width - w) / 2, h, w)
}

/// A named routing of transforms to modalities. Modalities without an
/// explicit entry use `default`, or stay untouched when it is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub name: String,
    #[serde(default)]
    pub default: Option<Transform>,
    #[serde(default)]
    pub per_modality: BTreeMap<usize, Transform>,
}

impl AugmentationPolicy {
    pub fn identity() -> Self {
        Self {
            name: "identity".into(),
            default: None,
            per_modality: BTreeMap::new(),
        }
    }

    pub fn uniform(name: impl Into<String>, transform: Transform) -> Self {
        Self {
            name: name.into(),
            default: Some(transform),
            per_modality: BTreeMap::new(),
        }
    }

    pub fn routed(name: impl Into<String>, per_modality: impl IntoIterator<Item = (usize, Transform)>) -> Self {
        Self {
            name: name.into(),
            default: None,
            per_modality: per_modality.into_iter().collect(),
        }
    }

    pub fn transform_for(&self, modality: usize) -> Option<&Transform> {
        self.per_modality.get(&modality).or(self.default.as_ref())
    }

    pub fn validate(&self) -> Result<()> {
        self.default.iter().chain(self.per_modality.values()).try_for_each(Transform::validate)
    }

    /// Flattened numeric parameters, for run records and reports.
    pub fn params(&self) -> BTreeMap<String, f64> {
        fn walk(prefix: &str, t: &Transform, out: &mut BTreeMap<String, f64>) {
            let v = serde_json::to_value(t).unwrap_or_default();
            if let Transform::Compose { steps } = t {
                for (k, s) in steps.iter().enumerate() {
                    walk(&format!("{prefix}.{k}"), s, out);
                }
                return;
            }
            let kind = v.get("kind").and_then(|k| k.as_str()).unwrap_or("?").to_string();
            if let Some(obj) = v.as_object() {
                for (key, val) in obj {
                    let name = format!("{prefix}.{kind}.{key}");
                    match val {
                        serde_json::Value::Number(n) => {
                            out.insert(name, n.as_f64().unwrap_or(f64::NAN));
                        }
                        serde_json::Value::Array(a) => {
                            for (i, x) in a.iter().enumerate() {
                                if let Some(x) = x.as_f64() {
                                    out.insert(format!("{name}.{i}"), x);
                                }
                            }
                        }
                        _ => {}
                    }
                }
            }
        }
        let mut out = BTreeMap::new();
        if let Some(t) = &self.default {
            walk("default", t, &mut out);
        }
        for (m, t) in &self.per_modality {
            walk(&format!("modality{m}"), t, &mut out);
        }
        out
    }

    /// Applies the policy to every present modality. Each modality draws
    /// from its own stream derived from `(seed, modality index)`.
    pub fn apply(&self, sample: &MultimodalSample, seed: u64) -> Result<MultimodalSample> {
        let slots = sample
            .slots
            .iter()
            .enumerate()
            .map(|(i, slot)| match (slot, self.transform_for(i)) {
                (Some(d), Some(t)) => t.apply(d, &mut rng(derive(seed, &[i as u64]))).map(Some),
                (s, _) => Ok(s.clone()),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MultimodalSample { slots })
    }
}

/// SimCLR-style image policy scaled by `strength` in `[0, 1]`, applied to
/// every modality.
pub fn image_policy(strength: f64) -> Result<AugmentationPolicy> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::validation(format!("strength must be in [0, 1], got {strength}")));
    }
    Ok(AugmentationPolicy::uniform(
        format!("simclr@{strength}"),
        SimClrParams::at_strength(strength).transform(),
    ))
}

/// Full SimCLR policy whose crop lower bound is `crop_scale_min`; the knob
/// swept when probing the augmentation-strength trade-off.
pub fn crop_sweep_policy(crop_scale_min: f64) -> Result<AugmentationPolicy> {
    let params = SimClrParams {
        crop_scale: (crop_scale_min, 1.0),
        ..SimClrParams::default()
    };
    let t = params.transform();
    t.validate()?;
    Ok(AugmentationPolicy::uniform(format!("simclr_crop@{crop_scale_min}"), t))
}
