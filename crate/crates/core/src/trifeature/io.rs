//! On-disk layout: `images/<id>.png`, `manifest.csv` (one row per pair) and
//! `meta.json` (spec, seed, mapping, image table, generator version).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Attributes, BimodalDataset, Experiment, ImageRef, PairedSample, Split, SynergyMapping,
    TrifeatureImage, TrifeatureSpec,
};
use crate::error::IoContext;
use crate::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;
const GENERATOR_VERSION: &str = concat!("comm-trifeature/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub pair_id: u32,
    pub img1: String,
    pub img2: String,
    pub shape1: u8,
    pub texture1: u8,
    pub color1: u8,
    pub shape2: u8,
    pub texture2: u8,
    pub color2: u8,
    pub mapping_label: u8,
    pub split: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ImageEntry {
    id: u32,
    shape: u8,
    texture: u8,
    color: u8,
    split: Split,
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    generator_version: String,
    spec: TrifeatureSpec,
    seed: u64,
    experiment: Experiment,
    mapping: SynergyMapping,
    train_pairs: usize,
    test_pairs: usize,
    train_positive_rate: f64,
    test_positive_rate: f64,
    images: Vec<ImageEntry>,
}

fn image_path(id: u32) -> String {
    format!("images/{id}.png")
}

pub fn write_dataset(dataset: &BimodalDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).at(&img_dir)?;
    for img in &dataset.images {
        let path = dir.join(image_path(img.id));
        image::save_buffer(
            &path,
            &img.pixels,
            img.size as u32,
            img.size as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::Image {
            path: path.clone(),
            message: e.to_string(),
        })?;
    }

    let manifest = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest)
        .map_err(|e| Error::io(&manifest, std::io::Error::other(e)))?;
    for p in &dataset.pairs {
        let (a, b) = (p.first.attributes, p.second.attributes);
        w.serialize(ManifestRow {
            pair_id: p.pair_id,
            img1: image_path(p.first.image_id),
            img2: image_path(p.second.image_id),
            shape1: a.shape,
            texture1: a.texture,
            color1: a.color,
            shape2: b.shape,
            texture2: b.texture,
            color2: b.color,
            mapping_label: p.mapping_label as u8,
            split: p.split.as_str().to_string(),
        })
        .map_err(|e| Error::io(&manifest, std::io::Error::other(e)))?;
    }
    w.flush().at(&manifest)?;

    let meta = Meta {
        format_version: DATASET_FORMAT_VERSION,
        generator_version: GENERATOR_VERSION.to_string(),
        spec: dataset.spec.clone(),
        seed: dataset.seed,
        experiment: dataset.experiment,
        mapping: dataset.mapping.clone(),
        train_pairs: dataset.pairs_in(Split::Train).count(),
        test_pairs: dataset.pairs_in(Split::Test).count(),
        train_positive_rate: dataset.positive_rate(Split::Train),
        test_positive_rate: dataset.positive_rate(Split::Test),
        images: dataset
            .images
            .iter()
            .map(|i| ImageEntry {
                id: i.id,
                shape: i.attributes.shape,
                texture: i.attributes.texture,
                color: i.attributes.color,
                split: i.split,
            })
            .collect(),
    };
    let meta_path = dir.join("meta.json");
    fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?).at(&meta_path)?;
    Ok(())
}

fn parse_image_ref(s: &str, row: usize) -> Result<u32> {
    s.strip_prefix("images/")
        .and_then(|r| r.strip_suffix(".png"))
        .and_then(|id| id.parse().ok())
        .ok_or_else(|| Error::Format {
            file: "manifest.csv".into(),
            row,
            message: format!("bad image reference {s:?}"),
        })
}

fn parse_row(row: &ManifestRow, index: usize, meta: &Meta) -> Result<PairedSample> {
    let fmt = |message: String| Error::Format {
        file: "manifest.csv".into(),
        row: index,
        message,
    };
    let a = Attributes::new(row.shape1, row.texture1, row.color1);
    let b = Attributes::new(row.shape2, row.texture2, row.color2);
    for attrs in [&a, &b] {
        attrs.validate(&meta.spec).map_err(|e| fmt(e.to_string()))?;
    }
    let split = match row.split.as_str() {
        "train" => Split::Train,
        "test" => Split::Test,
        other => return Err(fmt(format!("unknown split {other:?}"))),
    };
    let mapping_label = match row.mapping_label {
        0 => false,
        1 => true,
        v => return Err(fmt(format!("mapping_label must be 0 or 1, got {v}"))),
    };
    let id1 = parse_image_ref(&row.img1, index)?;
    let id2 = parse_image_ref(&row.img2, index)?;
    for (id, attrs) in [(id1, a), (id2, b)] {
        let entry = meta
            .images
            .get(id as usize)
            .ok_or_else(|| fmt(format!("unknown image id {id}")))?;
        let known = Attributes::new(entry.shape, entry.texture, entry.color);
        if known != attrs {
            return Err(fmt(format!(
                "attributes {attrs:?} disagree with image {id} ({known:?})"
            )));
        }
    }
    Ok(PairedSample {
        pair_id: row.pair_id,
        first: ImageRef {
            image_id: id1,
            attributes: a,
        },
        second: ImageRef {
            image_id: id2,
            attributes: b,
        },
        mapping_label,
        split,
    })
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<BimodalDataset> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let meta: Meta = serde_json::from_slice(&fs::read(&meta_path).at(&meta_path)?)?;
    meta.spec.validate()?;
    meta.mapping.validate()?;
    if meta.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Format {
            file: "meta.json".into(),
            row: 0,
            message: format!("unsupported format version {}", meta.format_version),
        });
    }
    for (k, e) in meta.images.iter().enumerate() {
        if e.id as usize != k {
            return Err(Error::Format {
                file: "meta.json".into(),
                row: k + 1,
                message: format!("image ids must be dense, found {} at position {k}", e.id),
            });
        }
    }

    let manifest = dir.join("manifest.csv");
    let mut reader = csv::Reader::from_path(&manifest)
        .map_err(|e| Error::io(&manifest, std::io::Error::other(e)))?;
    let mut pairs = Vec::new();
    for (k, rec) in reader.deserialize::<ManifestRow>().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(|e| Error::Format {
            file: "manifest.csv".into(),
            row,
            message: e.to_string(),
        })?;
        pairs.push(parse_row(&rec, row, &meta)?);
    }

    let size = meta.spec.canvas_size;
    let mut images = Vec::with_capacity(meta.images.len());
    for e in &meta.images {
        let path = dir.join(image_path(e.id));
        if !path.exists() {
            return Err(Error::io(
                &path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "missing image file"),
            ));
        }
        let img = image::open(&path)
            .map_err(|err| Error::Image {
                path: path.clone(),
                message: err.to_string(),
            })?
            .to_rgb8();
        if img.width() as usize != size || img.height() as usize != size {
            return Err(Error::Image {
                path,
                message: format!("expected {size}x{size}, found {}x{}", img.width(), img.height()),
            });
        }
        images.push(TrifeatureImage {
            id: e.id,
            size,
            pixels: img.into_raw(),
            attributes: Attributes::new(e.shape, e.texture, e.color),
            split: e.split,
        });
    }

    Ok(BimodalDataset {
        spec: meta.spec,
        seed: meta.seed,
        experiment: meta.experiment,
        mapping: meta.mapping,
        images,
        pairs,
    })
}
