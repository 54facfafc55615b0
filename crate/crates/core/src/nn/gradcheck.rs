//! Central finite-difference gradient checking.
//!
//! The error measure is the max-norm relative error
//! `max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|)`, which stays meaningful
//! when individual entries are near zero.

use rand::Rng;

use super::layer::{Layer, Parameterized};
use super::Tensor;
use crate::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Central differences of `f` at `x`, perturbing one coordinate at a time.
pub fn numeric_gradient(
    x: &[f64],
    step: f64,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&probe)?;
        probe[i] = orig - step;
        let down = f(&probe)?;
        probe[i] = orig;
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerCheck {
    pub input_error: f64,
    pub param_errors: Vec<f64>,
}

impl LayerCheck {
    pub fn max_error(&self) -> f64 {
        self.param_errors.iter().copied().fold(self.input_error, f64::max)
    }
}

/// Checks a single-input layer with the scalar loss `sum(r * layer(x))` for a
/// random projection `r`.
pub fn check_layer<L: Layer, R: Rng + ?Sized>(
    layer: &mut L,
    input: &Tensor,
    rng: &mut R,
) -> Result<LayerCheck> {
    let out_shape = layer.output_shape(input.shape())?;
    let proj = Tensor::from_fn(&out_shape, |_| rng.random_range(-1.0..1.0));
    let loss = |layer: &mut L, x: &Tensor| -> Result<f64> {
        let y = layer.forward(x)?;
        Ok(y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum())
    };

    for p in layer.params_mut() {
        p.zero_grad();
    }
    layer.forward(input)?;
    let dx = layer.backward(&proj)?;
    let analytic_params: Vec<Vec<f64>> = layer.params().iter().map(|p| p.grad.data().to_vec()).collect();

    let shape = input.shape().to_vec();
    let numeric_dx = numeric_gradient(input.data(), DEFAULT_STEP, |x| {
        loss(layer, &Tensor::new(shape.clone(), x.to_vec())?)
    })?;
    let input_error = relative_error(dx.data(), &numeric_dx);

    let mut param_errors = Vec::new();
    for (pi, analytic) in analytic_params.iter().enumerate() {
        let start = layer.params()[pi].value.data().to_vec();
        let numeric = numeric_gradient(&start, DEFAULT_STEP, |w| {
            layer.params_mut()[pi].value.data_mut().copy_from_slice(w);
            loss(layer, input)
        })?;
        layer.params_mut()[pi].value.data_mut().copy_from_slice(&start);
        param_errors.push(relative_error(analytic, &numeric));
    }
    Ok(LayerCheck {
        input_error,
        param_errors,
    })
}

/// Central differences of `loss` with respect to every parameter of `model`,
/// flattened in `named_params` order.
pub fn numeric_param_gradient<P: Parameterized + ?Sized>(
    model: &mut P,
    step: f64,
    mut loss: impl FnMut(&mut P) -> Result<f64>,
) -> Result<Vec<f64>> {
    let sizes: Vec<usize> = model.named_params().iter().map(|(_, p)| p.value.numel()).collect();
    let mut grad = Vec::with_capacity(sizes.iter().sum());
    for (pi, &n) in sizes.iter().enumerate() {
        for j in 0..n {
            let nudge = |m: &mut P, delta: f64| {
                m.named_params_mut()[pi].1.value.data_mut()[j] += delta;
            };
            let orig = model.named_params()[pi].1.value.data()[j];
            nudge(model, step);
            let up = loss(model)?;
            nudge(model, -2.0 * step);
            let down = loss(model)?;
            model.named_params_mut()[pi].1.value.data_mut()[j] = orig;
            grad.push((up - down) / (2.0 * step));
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((relative_error(&[1.0, 2.0], &[1.0, 2.2]) - 0.2 / 2.2).abs() < 1e-12);
    }

    #[test]
    fn numeric_gradient_of_quadratic() {
        let g = numeric_gradient(&[1.0, -3.0], 1e-5, |x| Ok(x[0] * x[0] + 2.0 * x[1])).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8);
        assert!((g[1] - 2.0).abs() < 1e-8);
    }
}
