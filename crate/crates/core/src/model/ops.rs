//! Differentiable building blocks on top of candle.
//!
//! Convolution runs as im2col followed by a GEMM so that its backward pass is
//! two matrix products and a scatter. Max pooling routes gradients to the
//! arg-max of each window.

use std::collections::BTreeMap;

use candle_core::{CpuStorage, CustomOp1, DType, Device, Layout, Module, Shape, Tensor, Var, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

fn contiguous_f32<'a>(storage: &'a CpuStorage, layout: &Layout, op: &str) -> candle_core::Result<&'a [f32]> {
    let data = match storage {
        CpuStorage::F32(v) => v.as_slice(),
        _ => candle_core::bail!("{op}: only f32 is supported"),
    };
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("{op}: input must be contiguous"),
    }
}

/// Output side length of a convolution or pooling window sweep.
pub fn out_size(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

/// `(B, C, H, W) -> (B, Ho*Wo, C*k*k)`, column index `c*k*k + ky*k + kx`.
#[derive(Debug, Clone, Copy)]
pub struct Im2Col {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Im2Col {
    fn geometry(&self, dims: &[usize]) -> (usize, usize, usize, usize, usize, usize) {
        let (b, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
        let ho = out_size(h, self.kernel, self.stride, self.padding);
        let wo = out_size(w, self.kernel, self.stride, self.padding);
        (b, c, h, w, ho, wo)
    }

    /// Visits every (column slot, input offset) pair that lies inside the
    /// unpadded input.
    fn for_each(&self, dims: &[usize], mut f: impl FnMut(usize, usize)) {
        let (b, c, h, w, ho, wo) = self.geometry(dims);
        let k = self.kernel;
        let cols = c * k * k;
        for bi in 0..b {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = (bi * ho * wo + oy * wo + ox) * cols;
                    for ci in 0..c {
                        for ky in 0..k {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let src = ((bi * c + ci) * h + iy as usize) * w + ix as usize;
                                f(row + ci * k * k + ky * k + kx, src);
                            }
                        }
                    }
                }
            }
        }
    }
}

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let dims = layout.dims();
        if dims.len() != 4 {
            candle_core::bail!("im2col expects (B, C, H, W), got {dims:?}");
        }
        if dims[2] + 2 * self.padding < self.kernel || dims[3] + 2 * self.padding < self.kernel {
            candle_core::bail!("im2col: kernel {} larger than padded input {dims:?}", self.kernel);
        }
        let x = contiguous_f32(storage, layout, "im2col")?;
        let (b, c, _, _, ho, wo) = self.geometry(dims);
        let cols = c * self.kernel * self.kernel;
        let mut out = vec![0f32; b * ho * wo * cols];
        self.for_each(dims, |dst, src| out[dst] = x[src]);
        Ok((CpuStorage::F32(out), Shape::from((b, ho * wo, cols))))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let g = grad_res.contiguous()?.flatten_all()?.to_vec1::<f32>()?;
        let mut dx = vec![0f32; arg.elem_count()];
        self.for_each(arg.dims(), |col, src| dx[src] += g[col]);
        Ok(Some(Tensor::from_vec(dx, arg.shape(), arg.device())?))
    }
}

/// Max pooling over `(B, C, H, W)` without padding; windows may overlap.
#[derive(Debug, Clone, Copy)]
pub struct MaxPool {
    pub kernel: usize,
    pub stride: usize,
}

impl MaxPool {
    fn argmax(&self, x: &[f32], dims: &[usize]) -> (Vec<f32>, Vec<usize>, (usize, usize)) {
        let (b, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
        let ho = out_size(h, self.kernel, self.stride, 0);
        let wo = out_size(w, self.kernel, self.stride, 0);
        let mut vals = Vec::with_capacity(b * c * ho * wo);
        let mut idx = Vec::with_capacity(b * c * ho * wo);
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * self.stride * w + ox * self.stride;
                    for ky in 0..self.kernel {
                        for kx in 0..self.kernel {
                            let i = base + (oy * self.stride + ky) * w + ox * self.stride + kx;
                            if x[i] > x[best] {
                                best = i;
                            }
                        }
                    }
                    vals.push(x[best]);
                    idx.push(best);
                }
            }
        }
        (vals, idx, (ho, wo))
    }
}

impl CustomOp1 for MaxPool {
    fn name(&self) -> &'static str {
        "max_pool"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let dims = layout.dims();
        if dims.len() != 4 || dims[2] < self.kernel || dims[3] < self.kernel {
            candle_core::bail!("max_pool: invalid input {dims:?} for kernel {}", self.kernel);
        }
        let x = contiguous_f32(storage, layout, "max_pool")?;
        let (vals, _, (ho, wo)) = self.argmax(x, dims);
        Ok((CpuStorage::F32(vals), Shape::from((dims[0], dims[1], ho, wo))))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let x = arg.contiguous()?.flatten_all()?.to_vec1::<f32>()?;
        let g = grad_res.contiguous()?.flatten_all()?.to_vec1::<f32>()?;
        let (_, idx, _) = self.argmax(&x, arg.dims());
        let mut dx = vec![0f32; x.len()];
        for (gi, &i) in g.iter().zip(&idx) {
            dx[i] += gi;
        }
        Ok(Some(Tensor::from_vec(dx, arg.shape(), arg.device())?))
    }
}

pub fn max_pool(x: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(MaxPool { kernel, stride })?)
}

/// Layer normalization over the last dimension, built from primitive ops so
/// it is differentiable.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&(var + eps)?.sqrt()?)?;
    Ok(normed.broadcast_mul(gamma)?.broadcast_add(beta)?)
}

/// Group normalization of `(B, C, H, W)` with per-channel affine.
pub fn group_norm(x: &Tensor, groups: usize, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if c % groups != 0 {
        return Err(Error::validation(format!("{c} channels not divisible into {groups} groups")));
    }
    let g = x.reshape((b, groups, (c / groups) * h * w))?;
    let mean = g.mean_keepdim(D::Minus1)?;
    let centered = g.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&(var + eps)?.sqrt()?)?.reshape((b, c, h, w))?;
    Ok(normed
        .broadcast_mul(&gamma.reshape((1, c, 1, 1))?)?
        .broadcast_add(&beta.reshape((1, c, 1, 1))?)?)
}

/// Named trainable variables with seeded initialization.
#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::validation(format!("duplicate parameter {name}")));
        }
        let var = Var::from_vec(data, shape, &Device::Cpu)?;
        let t = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(t)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| if bound == 0.0 { 0.0 } else { rng.random_range(-bound..bound) as f32 })
            .collect();
        self.insert(name, data, shape)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                (z * std) as f32
            })
            .collect();
        self.insert(name, data, shape)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f32) -> Result<Tensor> {
        let n = shape.iter().product();
        self.insert(name, vec![value; n], shape)
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a String> + 'a {
        self.vars.keys().filter(move |k| k.starts_with(prefix))
    }

    pub fn num_parameters(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn num_parameters_with_prefix(&self, prefix: &str) -> usize {
        self.vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.elem_count())
            .sum()
    }

    /// Overwrites every variable from `tensors`; names and shapes must match.
    pub fn load_from(&self, tensors: &std::collections::HashMap<String, Tensor>) -> Result<()> {
        if tensors.len() != self.vars.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model expects {}",
                tensors.len(),
                self.vars.len()
            )));
        }
        for (name, var) in &self.vars {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, model expects {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(DType::F32)?)?;
        }
        Ok(())
    }

    pub fn to_map(&self) -> std::collections::HashMap<String, Tensor> {
        self.vars.iter().map(|(k, v)| (k.clone(), v.as_tensor().clone())).collect()
    }

    /// Order-sensitive digest input: every value's bit pattern.
    pub fn flat_values(&self) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for v in self.vars.values() {
            out.extend(v.as_tensor().flatten_all()?.to_vec1::<f32>()?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        Ok(Self {
            weight: ps.uniform(&format!("{name}.weight"), &[output, input], bound, rng)?,
            bias: Some(ps.uniform(&format!("{name}.bias"), &[output], bound, rng)?),
        })
    }

    pub fn no_bias(ps: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        Ok(Self {
            weight: ps.uniform(&format!("{name}.weight"), &[output, input], bound, rng)?,
            bias: None,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[0]
    }
}

impl Module for Linear {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let dims = x.dims().to_vec();
        let input = *dims.last().expect("non-scalar input");
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let y = x.reshape((rows, input))?.matmul(&self.weight.t()?)?;
        let y = match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        };
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.out_dim();
        y.reshape(out_dims)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    /// `(out, in*k*k)`.
    pub weight: Tensor,
    pub bias: Tensor,
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: Im2Col,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Ok(Self {
            weight: ps.uniform(&format!("{name}.weight"), &[out_channels, fan_in], bound, rng)?,
            bias: ps.uniform(&format!("{name}.bias"), &[out_channels], bound, rng)?,
            in_channels,
            out_channels,
            geometry: Im2Col { kernel, stride, padding },
        })
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let g = self.geometry;
        (out_size(h, g.kernel, g.stride, g.padding), out_size(w, g.kernel, g.stride, g.padding))
    }
}

impl Module for Conv2d {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        if c != self.in_channels {
            candle_core::bail!("conv expects {} channels, got {c}", self.in_channels);
        }
        let (ho, wo) = self.output_size(h, w);
        let cols = x.contiguous()?.apply_op1(self.geometry)?;
        let k = cols.dim(2)?;
        let y = cols
            .reshape((b * ho * wo, k))?
            .matmul(&self.weight.t()?)?
            .broadcast_add(&self.bias)?;
        y.reshape((b, ho * wo, self.out_channels))?
            .transpose(1, 2)?
            .reshape((b, self.out_channels, ho, wo))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut r = rng(seed);
        let n: usize = shape.iter().product();
        let v: Vec<f32> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    fn max_abs_diff(a: &Tensor, b: &Tensor) -> f32 {
        (a - b).unwrap().abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar::<f32>().unwrap()
    }

    #[test]
    fn conv_matches_reference_forward_and_backward() {
        for &(k, s, p) in &[(3usize, 1usize, 1usize), (5, 2, 2), (11, 4, 2), (3, 2, 0)] {
            let mut ps = ParamStore::new();
            let conv = Conv2d::new(&mut ps, "c", 3, 5, k, s, p, &mut rng(1)).unwrap();
            let x = Var::from_tensor(&random(&[2, 3, 19, 17], 2)).unwrap();
            let ours = conv.forward(x.as_tensor()).unwrap();
            let w4 = conv.weight.reshape((5, 3, k, k)).unwrap();
            let reference = x
                .as_tensor()
                .conv2d(&w4, p, s, 1, 1)
                .unwrap()
                .broadcast_add(&conv.bias.reshape((1, 5, 1, 1)).unwrap())
                .unwrap();
            assert_eq!(ours.dims(), reference.dims());
            assert!(max_abs_diff(&ours, &reference) < 1e-4);

            // The map is linear in both x and the weights, so a central
            // difference with a unit step is the exact directional derivative.
            let probe = random(ours.dims(), 3);
            let objective = |x: &Tensor, conv: &Conv2d| -> f32 {
                (conv.forward(x).unwrap() * &probe).unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap()
            };
            let grads = (ours * &probe).unwrap().sum_all().unwrap().backward().unwrap();
            let dx: Vec<f32> = grads.get(x.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
            let dw: Vec<f32> = grads.get(&conv.weight).unwrap().flatten_all().unwrap().to_vec1().unwrap();
            let x0: Vec<f32> = x.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
            let w0: Vec<f32> = conv.weight.flatten_all().unwrap().to_vec1().unwrap();
            let mut r = rng(4);
            for _ in 0..20 {
                let i = r.random_range(0..x0.len());
                let bump = |d: f32| {
                    let mut v = x0.clone();
                    v[i] += d;
                    Tensor::from_vec(v, x.dims(), &Device::Cpu).unwrap()
                };
                let fd = (objective(&bump(1.0), &conv) - objective(&bump(-1.0), &conv)) / 2.0;
                assert!((fd - dx[i]).abs() < 1e-3 * (1.0 + fd.abs()), "input grad k={k} s={s} p={p}");

                let j = r.random_range(0..w0.len());
                let with_w = |d: f32| {
                    let mut v = w0.clone();
                    v[j] += d;
                    Conv2d {
                        weight: Tensor::from_vec(v, conv.weight.dims(), &Device::Cpu).unwrap(),
                        ..conv.clone()
                    }
                };
                let fd = (objective(x.as_tensor(), &with_w(1.0)) - objective(x.as_tensor(), &with_w(-1.0))) / 2.0;
                assert!((fd - dw[j]).abs() < 1e-3 * (1.0 + fd.abs()), "weight grad k={k} s={s} p={p}");
            }
        }
    }

    #[test]
    fn overlapping_max_pool_values_and_gradient() {
        let x = Var::from_tensor(&random(&[2, 3, 13, 11], 5)).unwrap();
        let y = max_pool(x.as_tensor(), 3, 2).unwrap();
        assert_eq!(y.dims(), &[2, 3, 6, 5]);
        let data = x.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let out = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        // Brute-force window maxima.
        let mut k = 0;
        for plane in 0..6 {
            for oy in 0..6 {
                for ox in 0..5 {
                    let mut m = f32::MIN;
                    for dy in 0..3 {
                        for dx in 0..3 {
                            m = m.max(data[plane * 143 + (2 * oy + dy) * 11 + 2 * ox + dx]);
                        }
                    }
                    assert_eq!(out[k], m);
                    k += 1;
                }
            }
        }
        let grads = y.sum_all().unwrap().backward().unwrap();
        let g = grads.get(x.as_tensor()).unwrap();
        let total = g.sum_all().unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(total, (2 * 3 * 6 * 5) as f32);
    }

    #[test]
    fn layer_norm_zero_mean_unit_variance() {
        let x = random(&[4, 16], 9);
        let y = layer_norm(&x, &Tensor::ones(16, DType::F32, &Device::Cpu).unwrap(), &Tensor::zeros(16, DType::F32, &Device::Cpu).unwrap(), 1e-5).unwrap();
        for row in y.to_vec2::<f32>().unwrap() {
            let mean: f32 = row.iter().sum::<f32>() / 16.0;
            let var: f32 = row.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / 16.0;
            assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let build = || {
            let mut ps = ParamStore::new();
            Linear::new(&mut ps, "l", 8, 4, &mut rng(42)).unwrap();
            ps.flat_values().unwrap()
        };
        assert_eq!(build(), build());
    }
}
