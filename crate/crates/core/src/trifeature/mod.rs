//! Bimodal shapes/textures/colors benchmark.
//!
//! A base set of single images is rendered from every (shape, texture,
//! color) combination; combinations are split into disjoint train and test
//! groups. Pairs of base images form the two modalities:
//!
//! - experiment 1 pairs share the shape (redundant) and differ in texture
//!   (unique to each side),
//! - experiment 2 training pairs satisfy a texture-to-color bijection
//!   between the first image's texture and the second image's color
//!   (synergistic); its test pairs are the experiment 1 test pairs.

mod attributes;
mod io;
mod pairs;
mod render;

pub use attributes::{
    color_rgb, hsv_to_rgb, ShapeGeometry, BACKGROUND, COLOR_NAMES, SHAPE_NAMES, TEXTURE_NAMES,
};
pub use io::{load_dataset, write_dataset, ManifestRow, DATASET_FORMAT_VERSION};
pub use pairs::{
    build_pairs_experiment1, build_pairs_experiment2, candidate_pool_size, BimodalDataset,
    Experiment, ImageRef, PairOptions, PairedSample, SynergyMapping,
};
pub use render::{generate_base_set, render_image, Placement};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ResolutionProfile {
    #[serde(rename = "full_224")]
    Full224,
    #[serde(rename = "desk_64")]
    Desk64,
}

impl std::str::FromStr for ResolutionProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "full_224" => Ok(Self::Full224),
            "desk" | "desk_64" => Ok(Self::Desk64),
            other => Err(Error::validation(format!("unknown profile {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrifeatureSpec {
    pub num_shapes: usize,
    pub num_textures: usize,
    pub num_colors: usize,
    pub canvas_size: usize,
    pub shape_extent: usize,
    /// Inclusive rotation range in degrees, shared by shape and texture.
    pub rotation_range: (f64, f64),
    pub variants_per_combo: usize,
    /// Number of combinations held out for the test split.
    pub test_combinations: usize,
    pub resolution_profile: ResolutionProfile,
}

impl Default for TrifeatureSpec {
    fn default() -> Self {
        Self::full()
    }
}

impl TrifeatureSpec {
    pub fn full() -> Self {
        Self {
            num_shapes: 10,
            num_textures: 10,
            num_colors: 10,
            canvas_size: 224,
            shape_extent: 128,
            rotation_range: (-45.0, 45.0),
            variants_per_combo: 3,
            test_combinations: 200,
            resolution_profile: ResolutionProfile::Full224,
        }
    }

    pub fn desk() -> Self {
        Self {
            canvas_size: 64,
            shape_extent: 40,
            resolution_profile: ResolutionProfile::Desk64,
            ..Self::full()
        }
    }

    pub fn for_profile(profile: ResolutionProfile) -> Self {
        match profile {
            ResolutionProfile::Full224 => Self::full(),
            ResolutionProfile::Desk64 => Self::desk(),
        }
    }

    pub fn num_combinations(&self) -> usize {
        self.num_shapes * self.num_textures * self.num_colors
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_shapes", self.num_shapes),
            ("num_textures", self.num_textures),
            ("num_colors", self.num_colors),
        ];
        for (name, n) in counts {
            if n == 0 || n > 10 {
                return Err(Error::validation(format!("{name} must be in 1..=10, got {n}")));
            }
        }
        if self.shape_extent == 0 || self.shape_extent >= self.canvas_size {
            return Err(Error::validation(format!(
                "shape_extent {} must be positive and smaller than canvas_size {}",
                self.shape_extent, self.canvas_size
            )));
        }
        let (lo, hi) = self.rotation_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::validation("rotation_range must be a finite, ordered interval"));
        }
        if self.variants_per_combo == 0 {
            return Err(Error::validation("variants_per_combo must be at least 1"));
        }
        if self.test_combinations == 0 || self.test_combinations >= self.num_combinations() {
            return Err(Error::validation(format!(
                "test_combinations must be in 1..{}",
                self.num_combinations()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Attributes {
    pub shape: u8,
    pub texture: u8,
    pub color: u8,
}

impl Attributes {
    pub fn new(shape: u8, texture: u8, color: u8) -> Self {
        Self {
            shape,
            texture,
            color,
        }
    }

    pub fn validate(&self, spec: &TrifeatureSpec) -> Result<()> {
        if (self.shape as usize) >= spec.num_shapes
            || (self.texture as usize) >= spec.num_textures
            || (self.color as usize) >= spec.num_colors
        {
            return Err(Error::validation(format!("attribute ids out of range: {self:?}")));
        }
        Ok(())
    }

    /// Row-major index over (shape, texture, color).
    pub fn combination_index(&self, spec: &TrifeatureSpec) -> usize {
        (self.shape as usize * spec.num_textures + self.texture as usize) * spec.num_colors
            + self.color as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One rendered base image. Pixels are stored row-major, interleaved RGB,
/// quantized to 8 bits so that a PNG round trip is lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct TrifeatureImage {
    pub id: u32,
    pub size: usize,
    pub pixels: Vec<u8>,
    pub attributes: Attributes,
    pub split: Split,
}

impl TrifeatureImage {
    pub fn rgb(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.size + x) * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    /// Channel-major float copy with values in `[0, 1]`.
    pub fn to_chw(&self) -> Vec<f32> {
        let hw = self.size * self.size;
        let mut out = vec![0f32; 3 * hw];
        for (p, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * hw + p] = px[c] as f32 / 255.0;
            }
        }
        out
    }
}
