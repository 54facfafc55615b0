use rand::Rng;

use super::gemm::gemm;
use super::layer::{Layer, LayerKind, Param, Parameterized};
use super::tensor::shape_str;
use super::Tensor;
use crate::{Error, Result};

/// Fully connected layer. Inputs `[N, ...]` are flattened to `[N, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out, in]`
    pub weight: Param,
    /// `[out]`
    pub bias: Param,
    cache: Option<Tensor>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let weight = Tensor::randn(&[out_features, in_features], (2.0 / in_features as f64).sqrt(), rng);
        Self::from_weights(weight, Tensor::zeros(&[out_features])).expect("consistent shapes")
    }

    /// Small-variance init for output heads.
    pub fn new_scaled<R: Rng + ?Sized>(in_features: usize, out_features: usize, std: f64, rng: &mut R) -> Self {
        let weight = Tensor::randn(&[out_features, in_features], std, rng);
        Self::from_weights(weight, Tensor::zeros(&[out_features])).expect("consistent shapes")
    }

    pub fn from_weights(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (out_features, in_features) = weight.dims2("linear weight")?;
        bias.expect_shape("linear bias", &[out_features])?;
        Ok(Self {
            in_features,
            out_features,
            weight: Param::new(weight),
            bias: Param::new(bias),
            cache: None,
        })
    }
}

impl Layer for Linear {
    fn kind(&self) -> LayerKind {
        LayerKind::FullyConnected
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let features: usize = input.get(1..).map(|s| s.iter().product()).unwrap_or(0);
        if input.len() < 2 || features != self.in_features {
            return Err(Error::shape(
                "fully_connected",
                format!("[N, {}]", self.in_features),
                shape_str(input),
            ));
        }
        Ok(vec![input[0], self.out_features])
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(input.shape())?;
        let n = out_shape[0];
        let mut out = Vec::with_capacity(n * self.out_features);
        for _ in 0..n {
            out.extend_from_slice(self.bias.value.data());
        }
        // out[n, out] += x[n, in] * W^T
        gemm(n, self.in_features, self.out_features, input.data(), false, self.weight.value.data(), true, &mut out, 1.0);
        self.cache = Some(input.clone());
        Tensor::new(out_shape, out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let input = self
            .cache
            .take()
            .ok_or_else(|| Error::State("fully_connected backward called before forward".into()))?;
        let n = input.shape()[0];
        grad_output.expect_shape("fully_connected backward", &[n, self.out_features])?;
        let g = grad_output.data();
        // dW[out, in] += g^T * x
        gemm(self.out_features, n, self.in_features, g, true, input.data(), false, self.weight.grad.data_mut(), 1.0);
        for row in g.chunks(self.out_features) {
            for (b, v) in self.bias.grad.data_mut().iter_mut().zip(row) {
                *b += v;
            }
        }
        let mut dx = vec![0.0; n * self.in_features];
        gemm(n, self.out_features, self.in_features, g, false, self.weight.value.data(), false, &mut dx, 0.0);
        Tensor::new(input.shape().to_vec(), dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl Parameterized for Linear {
    fn named_params(&self) -> Vec<(String, &Param)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![("weight".into(), &mut self.weight), ("bias".into(), &mut self.bias)]
    }
}
