use rand::Rng;

use super::gemm::gemm;
use super::layer::{Layer, LayerKind, Param, Parameterized};
use super::tensor::shape_str;
use super::Tensor;
use crate::{Error, Result};

/// 2-D convolution with square kernels, stride and zero padding, computed as
/// im2col followed by a matrix product.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out, in, k, k]`
    pub weight: Param,
    /// `[out]`
    pub bias: Param,
    cache: Option<Tensor>,
}

impl Conv2d {
    /// He-normal initialized weights, zero bias.
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let weight = Tensor::randn(
            &[out_channels, in_channels, kernel, kernel],
            (2.0 / fan_in).sqrt(),
            rng,
        );
        Self::from_weights(weight, Tensor::zeros(&[out_channels]), stride, padding)
            .expect("shapes built consistently")
    }

    pub fn from_weights(weight: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        let (out_channels, in_channels, kh, kw) = weight.dims4("conv2d weight")?;
        if kh != kw {
            return Err(Error::shape("conv2d weight", "square kernel", shape_str(weight.shape())));
        }
        bias.expect_shape("conv2d bias", &[out_channels])?;
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be >= 1".into()));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel: kh,
            stride,
            padding,
            weight: Param::new(weight),
            bias: Param::new(bias),
            cache: None,
        })
    }

    fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kernel || pw < self.kernel {
            return Err(Error::shape(
                "conv2d",
                format!("spatial extent >= kernel {}", self.kernel),
                format!("{h}x{w} with padding {}", self.padding),
            ));
        }
        Ok(((ph - self.kernel) / self.stride + 1, (pw - self.kernel) / self.stride + 1))
    }

    fn im2col(&self, x: &[f64], h: usize, w: usize, oh: usize, ow: usize, cols: &mut [f64]) {
        let k = self.kernel;
        let (s, p) = (self.stride as isize, self.padding as isize);
        let ohw = oh * ow;
        for c in 0..self.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * ohw..(row + 1) * ohw];
                    for oy in 0..oh {
                        let iy = oy as isize * s - p + ky as isize;
                        let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            out_row.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = ox as isize * s - p + kx as isize;
                            *v = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize, oh: usize, ow: usize, dx: &mut [f64]) {
        let k = self.kernel;
        let (s, p) = (self.stride as isize, self.padding as isize);
        let ohw = oh * ow;
        for c in 0..self.in_channels {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * ohw..(row + 1) * ohw];
                    for oy in 0..oh {
                        let iy = oy as isize * s - p + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = ox as isize * s - p + kx as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Layer for Conv2d {
    fn kind(&self) -> LayerKind {
        LayerKind::Conv2d
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *input {
            [n, c, h, w] if c == self.in_channels => {
                let (oh, ow) = self.out_hw(h, w)?;
                Ok(vec![n, self.out_channels, oh, ow])
            }
            _ => Err(Error::shape(
                "conv2d",
                format!("[N, {}, H, W]", self.in_channels),
                shape_str(input),
            )),
        }
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(input.shape())?;
        let (n, _, h, w) = input.dims4("conv2d")?;
        let (oh, ow) = (out_shape[2], out_shape[3]);
        let ckk = self.in_channels * self.kernel * self.kernel;
        let ohw = oh * ow;
        let mut cols = vec![0.0; ckk * ohw];
        let mut out = Tensor::zeros(&out_shape);
        let in_len = self.in_channels * h * w;
        let out_len = self.out_channels * ohw;
        for b in 0..n {
            self.im2col(&input.data()[b * in_len..(b + 1) * in_len], h, w, oh, ow, &mut cols);
            let dst = &mut out.data_mut()[b * out_len..(b + 1) * out_len];
            for (o, chunk) in dst.chunks_mut(ohw).enumerate() {
                chunk.fill(self.bias.value.data()[o]);
            }
            gemm(self.out_channels, ckk, ohw, self.weight.value.data(), false, &cols, false, dst, 1.0);
        }
        self.cache = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let input = self
            .cache
            .take()
            .ok_or_else(|| Error::State("conv2d backward called before forward".into()))?;
        let out_shape = self.output_shape(input.shape())?;
        grad_output.expect_shape("conv2d backward", &out_shape)?;
        let (n, _, h, w) = input.dims4("conv2d")?;
        let (oh, ow) = (out_shape[2], out_shape[3]);
        let ckk = self.in_channels * self.kernel * self.kernel;
        let ohw = oh * ow;
        let in_len = self.in_channels * h * w;
        let out_len = self.out_channels * ohw;
        let mut cols = vec![0.0; ckk * ohw];
        let mut dcols = vec![0.0; ckk * ohw];
        let mut dx = Tensor::zeros(input.shape());
        for b in 0..n {
            let g = &grad_output.data()[b * out_len..(b + 1) * out_len];
            self.im2col(&input.data()[b * in_len..(b + 1) * in_len], h, w, oh, ow, &mut cols);
            // dW += g * cols^T
            gemm(self.out_channels, ohw, ckk, g, false, &cols, true, self.weight.grad.data_mut(), 1.0);
            for (o, chunk) in g.chunks(ohw).enumerate() {
                self.bias.grad.data_mut()[o] += chunk.iter().sum::<f64>();
            }
            // dcols = W^T * g
            gemm(ckk, self.out_channels, ohw, self.weight.value.data(), true, g, false, &mut dcols, 0.0);
            self.col2im(&dcols, h, w, oh, ow, &mut dx.data_mut()[b * in_len..(b + 1) * in_len]);
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl Parameterized for Conv2d {
    fn named_params(&self) -> Vec<(String, &Param)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![("weight".into(), &mut self.weight), ("bias".into(), &mut self.bias)]
    }
}
