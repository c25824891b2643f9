//! Pixel-level operations on channel-major float images.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Channel-major (`C x H x W`) values in `[0, 1]`.
    pub data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), channels * height * width, "image buffer size mismatch");
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    fn plane(&self) -> usize {
        self.height * self.width
    }

    fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }
}

/// Crops the `h x w` window at `(top, left)` and resizes it back to the
/// full image size with bilinear interpolation (half-pixel centers).
pub fn resized_crop(img: &ImageTensor, top: usize, left: usize, h: usize, w: usize) -> ImageTensor {
    let (oh, ow) = (img.height, img.width);
    if top == 0 && left == 0 && h == oh && w == ow {
        return img.clone();
    }
    let sy = h as f32 / oh as f32;
    let sx = w as f32 / ow as f32;
    let mut out = ImageTensor::zeros(img.channels, oh, ow);
    for oy in 0..oh {
        let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f32;
        for ox in 0..ow {
            let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f32;
            for c in 0..img.channels {
                let p = |y: usize, x: usize| img.at(c, top + y, left + x);
                let v = (1.0 - wy) * ((1.0 - wx) * p(y0, x0) + wx * p(y0, x1))
                    + wy * ((1.0 - wx) * p(y1, x0) + wx * p(y1, x1));
                out.data[(c * oh + oy) * ow + ox] = v;
            }
        }
    }
    out
}

pub fn hflip(img: &ImageTensor) -> ImageTensor {
    let mut out = img.clone();
    for c in 0..img.channels {
        for y in 0..img.height {
            for x in 0..img.width {
                out.data[(c * img.height + y) * img.width + x] = img.at(c, y, img.width - 1 - x);
            }
        }
    }
    out
}

/// ITU-R 601 luma for a 3-channel image; other channel counts are returned
/// unchanged.
fn luma(img: &ImageTensor) -> Vec<f32> {
    let n = img.plane();
    (0..n)
        .map(|p| 0.299 * img.data[p] + 0.587 * img.data[n + p] + 0.114 * img.data[2 * n + p])
        .collect()
}

pub fn grayscale(img: &ImageTensor) -> ImageTensor {
    if img.channels != 3 {
        return img.clone();
    }
    let g = luma(img);
    let mut out = img.clone();
    for c in 0..3 {
        out.data[c * g.len()..(c + 1) * g.len()].copy_from_slice(&g);
    }
    out
}

pub fn adjust_brightness(img: &ImageTensor, factor: f32) -> ImageTensor {
    img.map(|v| (v * factor).clamp(0.0, 1.0))
}

pub fn adjust_contrast(img: &ImageTensor, factor: f32) -> ImageTensor {
    if img.channels != 3 {
        return img.clone();
    }
    let g = luma(img);
    let mean = g.iter().sum::<f32>() / g.len() as f32;
    img.map(|v| (factor * v + (1.0 - factor) * mean).clamp(0.0, 1.0))
}

pub fn adjust_saturation(img: &ImageTensor, factor: f32) -> ImageTensor {
    if img.channels != 3 {
        return img.clone();
    }
    let g = luma(img);
    let n = g.len();
    let mut out = img.clone();
    for c in 0..3 {
        for p in 0..n {
            let v = img.data[c * n + p];
            out.data[c * n + p] = (factor * v + (1.0 - factor) * g[p]).clamp(0.0, 1.0);
        }
    }
    out
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as u32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Rotates the hue of every pixel by `shift` (a fraction of the circle).
pub fn adjust_hue(img: &ImageTensor, shift: f32) -> ImageTensor {
    if img.channels != 3 || shift == 0.0 {
        return img.clone();
    }
    let n = img.plane();
    let mut out = img.clone();
    for p in 0..n {
        let (h, s, v) = rgb_to_hsv(img.data[p], img.data[n + p], img.data[2 * n + p]);
        let (r, g, b) = hsv_to_rgb(h + shift, s, v);
        out.data[p] = r;
        out.data[n + p] = g;
        out.data[2 * n + p] = b;
    }
    out
}

fn gaussian_kernel(size: usize, sigma: f32) -> Vec<f32> {
    let half = (size / 2) as f32;
    let k: Vec<f32> = (0..size)
        .map(|i| {
            let x = i as f32 - half;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f32 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Separable Gaussian blur with reflect padding.
pub fn gaussian_blur(img: &ImageTensor, kernel_size: usize, sigma: f32) -> ImageTensor {
    if kernel_size <= 1 {
        return img.clone();
    }
    let k = gaussian_kernel(kernel_size, sigma);
    let half = (kernel_size / 2) as isize;
    let (h, w) = (img.height, img.width);
    let mut tmp = img.clone();
    for c in 0..img.channels {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let xx = reflect(x as isize + t as isize - half, w);
                    acc += kv * img.at(c, y, xx);
                }
                tmp.data[(c * h + y) * w + x] = acc;
            }
        }
    }
    let mut out = tmp.clone();
    for c in 0..img.channels {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let yy = reflect(y as isize + t as isize - half, h);
                    acc += kv * tmp.at(c, yy, x);
                }
                out.data[(c * h + y) * w + x] = acc;
            }
        }
    }
    out
}
