//! The fixed attribute vocabularies and their geometric definitions.
//!
//! Shape coordinates are normalized so that every shape lies inside the
//! unit disk; any rotation therefore stays inside the `extent x extent`
//! placement square. Texture coordinates are in the same normalized units
//! but measured in the independently rotated texture frame.

use std::f64::consts::{PI, TAU};

pub const SHAPE_NAMES: [&str; 10] = [
    "triangle",
    "square",
    "circle",
    "pentagon",
    "hexagon",
    "star",
    "cross",
    "heart",
    "trapezoid",
    "l_shape",
];

pub const TEXTURE_NAMES: [&str; 10] = [
    "solid",
    "stripes",
    "dots",
    "grid",
    "checker",
    "noise",
    "waves",
    "rings",
    "diagonal_stripes",
    "triangles",
];

pub const COLOR_NAMES: [&str; 10] = [
    "red",
    "orange",
    "yellow_green",
    "green",
    "spring_green",
    "cyan",
    "azure",
    "blue",
    "purple",
    "rose",
];

const COLOR_SATURATION: f64 = 0.9;
const COLOR_VALUE: f64 = 0.9;
/// Intensity multiplier for the "off" phase of a texture pattern.
pub const TEXTURE_SHADE: f64 = 0.3;

/// Mid-gray, quantized.
pub const BACKGROUND: [u8; 3] = [128, 128, 128];

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// RGB triple of color `id` out of `count` hues, spaced evenly around the
/// hue circle at fixed saturation and value.
pub fn color_rgb(id: usize, count: usize) -> [f64; 3] {
    hsv_to_rgb(id as f64 / count as f64, COLOR_SATURATION, COLOR_VALUE)
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn regular_polygon(n: usize, radius: f64, phase: f64) -> Vec<(f64, f64)> {
    (0..n)
        .map(|k| {
            let a = phase + TAU * k as f64 / n as f64;
            (radius * a.cos(), radius * a.sin())
        })
        .collect()
}

fn star_polygon(points: usize, outer: f64, inner: f64) -> Vec<(f64, f64)> {
    (0..2 * points)
        .map(|k| {
            let r = if k % 2 == 0 { outer } else { inner };
            let a = -PI / 2.0 + PI * k as f64 / points as f64;
            (r * a.cos(), r * a.sin())
        })
        .collect()
}

/// Even-odd point-in-polygon test.
fn in_polygon(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Precomputed geometry for one shape class.
#[derive(Debug, Clone)]
pub enum ShapeGeometry {
    Polygon(Vec<(f64, f64)>),
    Circle(f64),
    Cross { arm: f64, half_width: f64 },
    Heart { scale: f64, offset: f64 },
    LShape,
}

impl ShapeGeometry {
    pub fn for_id(id: usize) -> Self {
        match id {
            0 => Self::Polygon(regular_polygon(3, 0.95, -PI / 2.0)),
            1 => Self::Polygon(regular_polygon(4, 0.95, PI / 4.0)),
            2 => Self::Circle(0.75),
            3 => Self::Polygon(regular_polygon(5, 0.95, -PI / 2.0)),
            4 => Self::Polygon(regular_polygon(6, 0.95, 0.0)),
            5 => Self::Polygon(star_polygon(5, 0.95, 0.4)),
            6 => Self::Cross {
                arm: 0.9,
                half_width: 0.28,
            },
            7 => Self::Heart {
                scale: 0.62,
                offset: 0.12,
            },
            8 => Self::Polygon(vec![(-0.85, 0.45), (0.85, 0.45), (0.4, -0.45), (-0.4, -0.45)]),
            _ => Self::LShape,
        }
    }

    /// Membership in normalized shape coordinates (y grows downwards).
    pub fn contains(&self, u: f64, v: f64) -> bool {
        match self {
            Self::Polygon(poly) => in_polygon(poly, u, v),
            Self::Circle(r) => u * u + v * v <= r * r,
            Self::Cross { arm, half_width } => {
                (u.abs() <= *half_width && v.abs() <= *arm)
                    || (v.abs() <= *half_width && u.abs() <= *arm)
            }
            Self::Heart { scale, offset } => {
                let x = u / scale;
                let y = -v / scale + offset;
                let a = x * x + y * y - 1.0;
                a * a * a - x * x * y * y * y <= 0.0
            }
            Self::LShape => {
                ((-0.6..=-0.2).contains(&u) && (-0.7..=0.7).contains(&v))
                    || ((-0.6..=0.6).contains(&u) && (0.3..=0.7).contains(&v))
            }
        }
    }
}

fn frac(x: f64) -> f64 {
    x - x.floor()
}

fn cell_hash(seed: u64, i: i64, j: i64) -> u64 {
    crate::rng::derive(seed, &[i as u64, j as u64])
}

/// Pattern phase at texture coordinates `(x, y)`: `true` paints the full
/// color, `false` the shaded color.
pub fn texture_on(id: usize, x: f64, y: f64, seed: u64) -> bool {
    const P: f64 = 0.4;
    match id {
        0 => true,
        1 => (TAU * y / P).sin() > 0.0,
        2 => {
            let dx = frac(x / P) - 0.5;
            let dy = frac(y / P) - 0.5;
            (dx * dx + dy * dy).sqrt() * P < 0.12
        }
        3 => {
            let fx = frac(x / P);
            let fy = frac(y / P);
            fx < 0.3 || fy < 0.3
        }
        4 => ((x / P).floor() as i64 + (y / P).floor() as i64).rem_euclid(2) == 0,
        5 => {
            let c = 0.14;
            cell_hash(seed, (x / c).floor() as i64, (y / c).floor() as i64) & 1 == 1
        }
        6 => (TAU * (y + 0.12 * (TAU * x / 0.6).sin()) / P).sin() > 0.0,
        7 => (TAU * (x * x + y * y).sqrt() / 0.35).sin() > 0.0,
        8 => frac((x + y) / std::f64::consts::SQRT_2 / 0.25) < 0.3,
        _ => {
            let a = frac(x / P);
            let b = frac(y / P);
            b >= 0.15 && b <= 0.85 - (a - 0.5).abs() * 1.4
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_fit_inside_unit_disk() {
        for id in 0..10 {
            let g = ShapeGeometry::for_id(id);
            let mut area = 0usize;
            for iy in -200..=200 {
                for ix in -200..=200 {
                    let (u, v) = (ix as f64 / 200.0, iy as f64 / 200.0);
                    if g.contains(u, v) {
                        area += 1;
                        assert!(u * u + v * v <= 1.0 + 1e-9, "shape {id} leaves the disk");
                    }
                }
            }
            assert!(area > 20_000, "shape {id} is too small: {area}");
        }
    }

    #[test]
    fn textures_are_not_constant_except_solid() {
        for id in 0..10 {
            let mut on = 0;
            let n = 100;
            for iy in 0..n {
                for ix in 0..n {
                    let (x, y) = (ix as f64 / 50.0 - 1.0, iy as f64 / 50.0 - 1.0);
                    on += texture_on(id, x, y, 3) as usize;
                }
            }
            if id == 0 {
                assert_eq!(on, n * n);
            } else {
                assert!(on > n * n / 10 && on < n * n * 9 / 10, "texture {id}: {on}");
            }
        }
    }

    #[test]
    fn colors_are_distinct_after_quantization() {
        let rgb: Vec<[u8; 3]> = (0..10)
            .map(|i| color_rgb(i, 10).map(quantize))
            .collect();
        for i in 0..10 {
            for j in 0..i {
                assert_ne!(rgb[i], rgb[j]);
            }
        }
        assert_eq!(rgb[0], [230, 23, 23]);
    }
}
