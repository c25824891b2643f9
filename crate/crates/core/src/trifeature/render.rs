use rand::Rng;

use super::attributes::{color_rgb, quantize, texture_on, ShapeGeometry, BACKGROUND, TEXTURE_SHADE};
use super::{Attributes, Split, TrifeatureImage, TrifeatureSpec};
use crate::rng::{derive, rng};
use crate::{Error, Result};

/// Where and how a shape is drawn: rotations in degrees and the top-left
/// corner of the `extent x extent` placement square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub rotation_shape: f64,
    pub rotation_texture: f64,
    pub x: usize,
    pub y: usize,
}

impl Placement {
    pub fn centered(spec: &TrifeatureSpec) -> Self {
        let off = (spec.canvas_size - spec.shape_extent) / 2;
        Self {
            rotation_shape: 0.0,
            rotation_texture: 0.0,
            x: off,
            y: off,
        }
    }
}

/// Renders one image. Deterministic in all arguments; `seed` only feeds the
/// noise texture.
pub fn render_image(
    attributes: Attributes,
    placement: Placement,
    spec: &TrifeatureSpec,
    seed: u64,
) -> Result<Vec<u8>> {
    spec.validate()?;
    attributes.validate(spec)?;
    let size = spec.canvas_size;
    let extent = spec.shape_extent;
    if placement.x + extent > size || placement.y + extent > size {
        return Err(Error::validation(format!(
            "placement ({}, {}) with extent {extent} does not fit a {size}px canvas",
            placement.x, placement.y
        )));
    }
    let geometry = ShapeGeometry::for_id(attributes.shape as usize);
    let base = color_rgb(attributes.color as usize, spec.num_colors);
    let on = base.map(quantize);
    let off = base.map(|v| quantize(v * TEXTURE_SHADE));
    let (ss, cs) = (-placement.rotation_shape).to_radians().sin_cos();
    let (st, ct) = (-placement.rotation_texture).to_radians().sin_cos();
    let half = extent as f64 / 2.0;
    let cx = placement.x as f64 + half;
    let cy = placement.y as f64 + half;
    let texture = attributes.texture as usize;

    let mut pixels = Vec::with_capacity(size * size * 3);
    for py in 0..size {
        for px in 0..size {
            let dx = (px as f64 + 0.5 - cx) / half;
            let dy = (py as f64 + 0.5 - cy) / half;
            let u = cs * dx - ss * dy;
            let v = ss * dx + cs * dy;
            let rgb = if dx.abs() <= 1.0 && dy.abs() <= 1.0 && geometry.contains(u, v) {
                let tx = ct * dx - st * dy;
                let ty = st * dx + ct * dy;
                if texture_on(texture, tx, ty, seed) {
                    on
                } else {
                    off
                }
            } else {
                BACKGROUND
            };
            pixels.extend_from_slice(&rgb);
        }
    }
    Ok(pixels)
}

fn sample_placement(spec: &TrifeatureSpec, seed: u64) -> Placement {
    let mut r = rng(seed);
    let (lo, hi) = spec.rotation_range;
    let slack = spec.canvas_size - spec.shape_extent;
    Placement {
        rotation_shape: r.random_range(lo..=hi),
        rotation_texture: r.random_range(lo..=hi),
        x: r.random_range(0..=slack),
        y: r.random_range(0..=slack),
    }
}

/// Test combinations, stratified per shape so that every shape class
/// appears in both splits.
fn test_combinations(spec: &TrifeatureSpec, seed: u64) -> Vec<bool> {
    use rand::seq::SliceRandom;
    let per_shape = spec.num_textures * spec.num_colors;
    let mut is_test = vec![false; spec.num_combinations()];
    for s in 0..spec.num_shapes {
        let quota = spec.test_combinations / spec.num_shapes
            + usize::from(s < spec.test_combinations % spec.num_shapes);
        let mut local: Vec<usize> = (0..per_shape).collect();
        local.shuffle(&mut rng(derive(seed, &[0x5e1d, s as u64])));
        for &k in local.iter().take(quota) {
            is_test[s * per_shape + k] = true;
        }
    }
    is_test
}

/// Renders every combination: `variants_per_combo` randomly placed
/// variants for train combinations and one for test combinations. Train
/// images come first; ids are dense and start at zero.
pub fn generate_base_set(spec: &TrifeatureSpec, seed: u64) -> Result<Vec<TrifeatureImage>> {
    spec.validate()?;
    let is_test = test_combinations(spec, seed);
    let mut jobs = Vec::new();
    for split in [Split::Train, Split::Test] {
        for s in 0..spec.num_shapes {
            for t in 0..spec.num_textures {
                for c in 0..spec.num_colors {
                    let attrs = Attributes::new(s as u8, t as u8, c as u8);
                    let combo = attrs.combination_index(spec);
                    let combo_split = if is_test[combo] { Split::Test } else { Split::Train };
                    if combo_split != split {
                        continue;
                    }
                    let variants = match split {
                        Split::Train => spec.variants_per_combo,
                        Split::Test => 1,
                    };
                    for v in 0..variants {
                        jobs.push((attrs, split, derive(seed, &[combo as u64, v as u64])));
                    }
                }
            }
        }
    }
    jobs.into_iter()
        .enumerate()
        .map(|(id, (attributes, split, img_seed))| {
            let placement = sample_placement(spec, img_seed);
            let pixels = render_image(attributes, placement, spec, derive(img_seed, &[1]))?;
            Ok(TrifeatureImage {
                id: id as u32,
                size: spec.canvas_size,
                pixels,
                attributes,
                split,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn solid_red_interior_is_uniform() {
        let spec = TrifeatureSpec::desk();
        let placement = Placement::centered(&spec);
        let px = render_image(Attributes::new(0, 0, 0), placement, &spec, 1).unwrap();
        let red = color_rgb(0, 10).map(quantize);
        let geometry = ShapeGeometry::for_id(0);
        let half = spec.shape_extent as f64 / 2.0;
        let c = placement.x as f64 + half;
        let mut interior = 0;
        for y in 0..spec.canvas_size {
            for x in 0..spec.canvas_size {
                let u = (x as f64 + 0.5 - c) / half;
                let v = (y as f64 + 0.5 - c) / half;
                let o = (y * spec.canvas_size + x) * 3;
                if geometry.contains(u, v) {
                    interior += 1;
                    assert_eq!(&px[o..o + 3], &red);
                } else {
                    assert_eq!(&px[o..o + 3], &BACKGROUND);
                }
            }
        }
        assert!(interior > 100);
    }

    #[test]
    fn rendering_is_deterministic() {
        let spec = TrifeatureSpec::desk();
        let p = Placement {
            rotation_shape: 13.0,
            rotation_texture: -30.0,
            x: 5,
            y: 17,
        };
        let a = render_image(Attributes::new(5, 5, 3), p, &spec, 42).unwrap();
        let b = render_image(Attributes::new(5, 5, 3), p, &spec, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_combinations_render_distinct_images() {
        let spec = TrifeatureSpec::desk();
        let p = Placement::centered(&spec);
        let mut seen = HashSet::new();
        for s in 0..10 {
            for t in 0..10 {
                for c in 0..10 {
                    let px = render_image(Attributes::new(s, t, c), p, &spec, 9).unwrap();
                    seen.insert(px);
                }
            }
        }
        assert_eq!(seen.len(), 1000);
    }

    #[test]
    fn out_of_range_ids_and_bad_placements_are_rejected() {
        let spec = TrifeatureSpec::desk();
        let p = Placement::centered(&spec);
        assert!(matches!(
            render_image(Attributes::new(10, 0, 0), p, &spec, 0),
            Err(Error::Validation(_))
        ));
        let bad = Placement { x: 30, ..p };
        assert!(matches!(
            render_image(Attributes::new(0, 0, 0), bad, &spec, 0),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn shapes_stay_inside_canvas_at_extreme_placements() {
        let spec = TrifeatureSpec::desk();
        let slack = spec.canvas_size - spec.shape_extent;
        for (x, y) in [(0, 0), (slack, slack), (0, slack)] {
            for rot in [-45.0, 45.0] {
                let p = Placement {
                    rotation_shape: rot,
                    rotation_texture: 0.0,
                    x,
                    y,
                };
                for s in 0..10 {
                    // Must not panic and must leave a background border where the
                    // disk does not reach.
                    let px = render_image(Attributes::new(s, 0, 0), p, &spec, 0).unwrap();
                    assert_eq!(px.len(), spec.canvas_size * spec.canvas_size * 3);
                }
            }
        }
    }

    #[test]
    fn base_set_counts_and_split_hygiene() {
        let spec = TrifeatureSpec::desk();
        let images = generate_base_set(&spec, 3).unwrap();
        let train: Vec<_> = images.iter().filter(|i| i.split == Split::Train).collect();
        let test: Vec<_> = images.iter().filter(|i| i.split == Split::Test).collect();
        assert_eq!(train.len(), 2400);
        assert_eq!(test.len(), 200);
        let train_combos: HashSet<_> = train.iter().map(|i| i.attributes).collect();
        let test_combos: HashSet<_> = test.iter().map(|i| i.attributes).collect();
        assert_eq!(train_combos.len(), 800);
        assert_eq!(test_combos.len(), 200);
        assert!(train_combos.is_disjoint(&test_combos));
        for s in 0..10u8 {
            assert_eq!(test.iter().filter(|i| i.attributes.shape == s).count(), 20);
        }
        for (k, img) in images.iter().enumerate() {
            assert_eq!(img.id as usize, k);
        }
    }

    #[test]
    fn single_variant_gives_800_train_images() {
        let spec = TrifeatureSpec {
            variants_per_combo: 1,
            ..TrifeatureSpec::desk()
        };
        let images = generate_base_set(&spec, 3).unwrap();
        assert_eq!(images.iter().filter(|i| i.split == Split::Train).count(), 800);
    }
}
