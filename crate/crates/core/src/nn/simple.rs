//! Parameter-free layers: ReLU, pooling, softmax, nearest upsampling and
//! the two-input merges.

use super::layer::{Layer, LayerKind};
use super::tensor::shape_str;
use super::Tensor;
use crate::{Error, Result};

fn missing_cache(kind: &str) -> Error {
    Error::State(format!("{kind} backward called before forward"))
}

#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Option<(Vec<usize>, Vec<bool>)>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Relu {
    fn kind(&self) -> LayerKind {
        LayerKind::Relu
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(input.to_vec())
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let mask: Vec<bool> = input.data().iter().map(|&v| v > 0.0).collect();
        let data = input.data().iter().map(|&v| v.max(0.0)).collect();
        self.mask = Some((input.shape().to_vec(), mask));
        Tensor::new(input.shape().to_vec(), data)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let (shape, mask) = self.mask.take().ok_or_else(|| missing_cache("relu"))?;
        grad_output.expect_shape("relu backward", &shape)?;
        let data = grad_output
            .data()
            .iter()
            .zip(&mask)
            .map(|(&g, &m)| if m { g } else { 0.0 })
            .collect();
        Tensor::new(shape, data)
    }
}

/// Max pooling without padding; the first maximum in a window wins.
#[derive(Clone, Debug)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize) -> Self {
        Self {
            kernel,
            stride,
            cache: None,
        }
    }
}

impl Layer for MaxPool2d {
    fn kind(&self) -> LayerKind {
        LayerKind::MaxPool
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *input {
            [n, c, h, w] if h >= self.kernel && w >= self.kernel && self.stride > 0 => Ok(vec![
                n,
                c,
                (h - self.kernel) / self.stride + 1,
                (w - self.kernel) / self.stride + 1,
            ]),
            _ => Err(Error::shape(
                "max_pool",
                format!("[N, C, H>={k}, W>={k}]", k = self.kernel),
                shape_str(input),
            )),
        }
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(input.shape())?;
        let (n, c, h, w) = input.dims4("max_pool")?;
        let (oh, ow) = (out_shape[2], out_shape[3]);
        let x = input.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * self.stride * w + ox * self.stride;
                    for ky in 0..self.kernel {
                        for kx in 0..self.kernel {
                            let idx = base + (oy * self.stride + ky) * w + ox * self.stride + kx;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        self.cache = Some((input.shape().to_vec(), argmax));
        Tensor::new(out_shape, out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let (shape, argmax) = self.cache.take().ok_or_else(|| missing_cache("max_pool"))?;
        if grad_output.numel() != argmax.len() {
            return Err(Error::shape("max_pool backward", argmax.len(), shape_str(grad_output.shape())));
        }
        let mut dx = Tensor::zeros(&shape);
        for (&g, &i) in grad_output.data().iter().zip(&argmax) {
            dx.data_mut()[i] += g;
        }
        Ok(dx)
    }
}

/// `[N, C, H, W] -> [N, C]` spatial mean.
#[derive(Clone, Debug, Default)]
pub struct GlobalAvgPool {
    cache: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for GlobalAvgPool {
    fn kind(&self) -> LayerKind {
        LayerKind::GlobalAvgPool
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *input {
            [n, c, _, _] => Ok(vec![n, c]),
            _ => Err(Error::shape("global_avg_pool", "[N, C, H, W]", shape_str(input))),
        }
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = input.dims4("global_avg_pool")?;
        let hw = h * w;
        let data = input
            .data()
            .chunks(hw)
            .map(|p| p.iter().sum::<f64>() / hw as f64)
            .collect();
        self.cache = Some(input.shape().to_vec());
        Tensor::new(vec![n, c], data)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let shape = self.cache.take().ok_or_else(|| missing_cache("global_avg_pool"))?;
        grad_output.expect_shape("global_avg_pool backward", &shape[..2])?;
        let hw = shape[2] * shape[3];
        let mut data = Vec::with_capacity(shape.iter().product());
        for &g in grad_output.data() {
            data.extend(std::iter::repeat_n(g / hw as f64, hw));
        }
        Tensor::new(shape, data)
    }
}

/// Row-wise softmax over the last axis of `[N, K]`.
#[derive(Clone, Debug, Default)]
pub struct Softmax {
    cache: Option<Tensor>,
}

impl Softmax {
    pub fn new() -> Self {
        Self::default()
    }
}

pub fn softmax_rows(input: &Tensor) -> Result<Tensor> {
    let (n, k) = input.dims2("softmax")?;
    let mut out = Vec::with_capacity(n * k);
    for row in input.data().chunks(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    Tensor::new(vec![n, k], out)
}

impl Layer for Softmax {
    fn kind(&self) -> LayerKind {
        LayerKind::Softmax
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *input {
            [n, k] => Ok(vec![n, k]),
            _ => Err(Error::shape("softmax", "[N, K]", shape_str(input))),
        }
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out = softmax_rows(input)?;
        self.cache = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let y = self.cache.take().ok_or_else(|| missing_cache("softmax"))?;
        grad_output.expect_shape("softmax backward", y.shape())?;
        let k = y.shape()[1];
        let mut dx = Vec::with_capacity(y.numel());
        for (yr, gr) in y.data().chunks(k).zip(grad_output.data().chunks(k)) {
            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
            dx.extend(yr.iter().zip(gr).map(|(yi, gi)| yi * (gi - dot)));
        }
        Tensor::new(y.shape().to_vec(), dx)
    }
}

/// Nearest-neighbor upsampling by an integer factor on both spatial axes.
#[derive(Clone, Debug)]
pub struct UpsampleNearest {
    pub factor: usize,
    cache: Option<Vec<usize>>,
}

impl UpsampleNearest {
    pub fn new(factor: usize) -> Self {
        Self { factor, cache: None }
    }
}

impl Layer for UpsampleNearest {
    fn kind(&self) -> LayerKind {
        LayerKind::UpsampleNearest
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *input {
            [n, c, h, w] if self.factor > 0 => Ok(vec![n, c, h * self.factor, w * self.factor]),
            _ => Err(Error::shape("upsample_nearest", "[N, C, H, W]", shape_str(input))),
        }
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(input.shape())?;
        let (_, _, h, w) = input.dims4("upsample_nearest")?;
        let f = self.factor;
        let (oh, ow) = (h * f, w * f);
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for plane in input.data().chunks(h * w) {
            for oy in 0..oh {
                let src = &plane[(oy / f) * w..(oy / f + 1) * w];
                out.extend((0..ow).map(|ox| src[ox / f]));
            }
        }
        self.cache = Some(input.shape().to_vec());
        Tensor::new(out_shape, out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let shape = self.cache.take().ok_or_else(|| missing_cache("upsample_nearest"))?;
        let out_shape = self.output_shape(&shape)?;
        grad_output.expect_shape("upsample_nearest backward", &out_shape)?;
        let (h, w) = (shape[2], shape[3]);
        let f = self.factor;
        let (oh, ow) = (h * f, w * f);
        let mut dx = Tensor::zeros(&shape);
        for (dplane, gplane) in dx.data_mut().chunks_mut(h * w).zip(grad_output.data().chunks(oh * ow)) {
            for oy in 0..oh {
                for ox in 0..ow {
                    dplane[(oy / f) * w + ox / f] += gplane[oy * ow + ox];
                }
            }
        }
        Ok(dx)
    }
}

/// Elementwise sum of two same-shaped tensors (residual merge).
#[derive(Clone, Debug, Default)]
pub struct Add {
    shape: Option<Vec<usize>>,
}

impl Add {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn kind(&self) -> LayerKind {
        LayerKind::Add
    }

    pub fn forward(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        b.expect_shape("add", a.shape())?;
        let mut out = a.clone();
        out.add_assign(b)?;
        self.shape = Some(a.shape().to_vec());
        Ok(out)
    }

    pub fn backward(&mut self, grad_output: &Tensor) -> Result<(Tensor, Tensor)> {
        let shape = self.shape.take().ok_or_else(|| missing_cache("add"))?;
        grad_output.expect_shape("add backward", &shape)?;
        Ok((grad_output.clone(), grad_output.clone()))
    }
}

/// Concatenation along axis 1 of `[N, C_i, ...]` tensors sharing all other
/// extents. Works for both `[N, C]` and `[N, C, H, W]`.
#[derive(Clone, Debug, Default)]
pub struct Concat {
    widths: Option<(Vec<usize>, Vec<Vec<usize>>)>,
}

impl Concat {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn kind(&self) -> LayerKind {
        LayerKind::Concat
    }

    pub fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::EmptyInput("concat of zero tensors".into()))?;
        let n = first.shape()[0];
        let tail: Vec<usize> = first.shape().get(2..).unwrap_or(&[]).to_vec();
        let inner: usize = tail.iter().product();
        for t in inputs {
            let s = t.shape();
            if s.len() < 2 || s[0] != n || s[2..] != tail[..] {
                return Err(Error::shape("concat", shape_str(first.shape()), shape_str(s)));
            }
        }
        let total_c: usize = inputs.iter().map(|t| t.shape()[1]).sum();
        let mut out = Vec::with_capacity(n * total_c * inner);
        for b in 0..n {
            for t in inputs {
                let len = t.shape()[1] * inner;
                out.extend_from_slice(&t.data()[b * len..(b + 1) * len]);
            }
        }
        let mut shape = vec![n, total_c];
        shape.extend(&tail);
        self.widths = Some((shape.clone(), inputs.iter().map(|t| t.shape().to_vec()).collect()));
        Tensor::new(shape, out)
    }

    pub fn backward(&mut self, grad_output: &Tensor) -> Result<Vec<Tensor>> {
        let (shape, parts) = self.widths.take().ok_or_else(|| missing_cache("concat"))?;
        grad_output.expect_shape("concat backward", &shape)?;
        let n = shape[0];
        let inner: usize = shape[2..].iter().product();
        let total = shape[1] * inner;
        let mut grads: Vec<Vec<f64>> = parts.iter().map(|s| Vec::with_capacity(s.iter().product())).collect();
        for b in 0..n {
            let row = &grad_output.data()[b * total..(b + 1) * total];
            let mut offset = 0;
            for (g, s) in grads.iter_mut().zip(&parts) {
                let len = s[1] * inner;
                g.extend_from_slice(&row[offset..offset + len]);
                offset += len;
            }
        }
        grads
            .into_iter()
            .zip(parts)
            .map(|(g, s)| Tensor::new(s, g))
            .collect()
    }
}
