use super::layer::{Layer, LayerKind, Param, Parameterized};
use super::tensor::shape_str;
use super::Tensor;
use crate::{Error, Result};

/// Per-channel batch normalization over `(N, H, W)`.
///
/// Training mode normalizes with batch statistics and updates running
/// averages with momentum 0.1; eval mode uses the running averages.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub training: bool,
    cache: Option<BnCache>,
}

#[derive(Clone, Debug)]
struct BnCache {
    shape: Vec<usize>,
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    training: bool,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(Tensor::full(&[channels], 1.0)),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
            training: true,
            cache: None,
        }
    }
}

impl Layer for BatchNorm2d {
    fn kind(&self) -> LayerKind {
        LayerKind::BatchNorm
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *input {
            [_, c, _, _] if c == self.channels => Ok(input.to_vec()),
            _ => Err(Error::shape(
                "batch_norm",
                format!("[N, {}, H, W]", self.channels),
                shape_str(input),
            )),
        }
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        self.output_shape(input.shape())?;
        let (n, c, h, w) = input.dims4("batch_norm")?;
        let hw = h * w;
        let count = (n * hw) as f64;
        let x = input.data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        if self.training {
            for b in 0..n {
                for ch in 0..c {
                    mean[ch] += x[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count);
            for b in 0..n {
                for ch in 0..c {
                    var[ch] += x[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                        .iter()
                        .map(|v| (v - mean[ch]).powi(2))
                        .sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count);
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            for ch in 0..c {
                self.running_mean[ch] =
                    (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * mean[ch];
                self.running_var[ch] =
                    (1.0 - self.momentum) * self.running_var[ch] + self.momentum * var[ch] * unbias;
            }
        } else {
            mean.clone_from(&self.running_mean);
            var.clone_from(&self.running_var);
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut x_hat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for b in 0..n {
            for ch in 0..c {
                let (g, bt) = (self.gamma.value.data()[ch], self.beta.value.data()[ch]);
                for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                    x_hat[i] = (x[i] - mean[ch]) * inv_std[ch];
                    out[i] = g * x_hat[i] + bt;
                }
            }
        }
        self.cache = Some(BnCache {
            shape: input.shape().to_vec(),
            x_hat,
            inv_std,
            training: self.training,
        });
        Tensor::new(input.shape().to_vec(), out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("batch_norm backward called before forward".into()))?;
        grad_output.expect_shape("batch_norm backward", &cache.shape)?;
        let (n, c, h, w) = (cache.shape[0], cache.shape[1], cache.shape[2], cache.shape[3]);
        let hw = h * w;
        let count = (n * hw) as f64;
        let g = grad_output.data();
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                    sum_g[ch] += g[i];
                    sum_gx[ch] += g[i] * cache.x_hat[i];
                }
            }
        }
        for ch in 0..c {
            self.gamma.grad.data_mut()[ch] += sum_gx[ch];
            self.beta.grad.data_mut()[ch] += sum_g[ch];
        }
        let mut dx = vec![0.0; g.len()];
        for b in 0..n {
            for ch in 0..c {
                let gamma = self.gamma.value.data()[ch];
                let k = gamma * cache.inv_std[ch];
                for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                    dx[i] = if cache.training {
                        k * (g[i] - sum_g[ch] / count - cache.x_hat[i] * sum_gx[ch] / count)
                    } else {
                        k * g[i]
                    };
                }
            }
        }
        Tensor::new(cache.shape, dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn set_training(&mut self, training: bool) {
        self.training = training;
    }
}

impl Parameterized for BatchNorm2d {
    fn named_params(&self) -> Vec<(String, &Param)> {
        vec![("gamma".into(), &self.gamma), ("beta".into(), &self.beta)]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![("gamma".into(), &mut self.gamma), ("beta".into(), &mut self.beta)]
    }
}
