use serde::{Deserialize, Serialize};

use super::layer::Parameterized;
use crate::{Error, Result};

/// One momentum-SGD update on flat arrays:
/// `v = momentum * v + g; p -= lr * v`.
///
/// Aborts without touching anything if a gradient is non-finite.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    learning_rate: f64,
    momentum: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::shape("sgd_step", params.len(), grads.len()));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i} is {}", grads[i])));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= learning_rate * *v;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Rescale the whole gradient when its L2 norm exceeds this.
    pub grad_clip_norm: Option<f64>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            grad_clip_norm: Some(10.0),
        }
    }
}

/// Per-epoch learning-rate multiplier.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from 1 down towards `floor` over the run.
    Cosine { floor: f64 },
}

impl LrSchedule {
    /// Multiplier for 1-based `epoch` of `epochs`.
    pub fn factor(&self, epoch: usize, epochs: usize) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine { floor } => {
                let t = (epoch.saturating_sub(1)) as f64 / epochs.max(1) as f64;
                floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

/// Momentum SGD holding one velocity buffer per parameter, matched by
/// position in `named_params` order.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub config: SgdConfig,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            velocity: Vec::new(),
        }
    }

    /// Applies the accumulated gradients in `model` and leaves them in place.
    pub fn step<P: Parameterized + ?Sized>(&mut self, model: &mut P) -> Result<()> {
        let mut params = model.named_params_mut();
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::State("optimizer bound to a different model".into()));
        }
        let mut sq = 0.0;
        for (name, p) in &params {
            if !p.grad.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
            sq += p.grad.data().iter().map(|g| g * g).sum::<f64>();
        }
        let scale = match self.config.grad_clip_norm {
            Some(max) if sq.sqrt() > max => max / sq.sqrt(),
            _ => 1.0,
        };
        for ((_, p), v) in params.iter_mut().zip(&mut self.velocity) {
            let wd = self.config.weight_decay;
            let grads: Vec<f64> = p
                .grad
                .data()
                .iter()
                .zip(p.value.data())
                .map(|(g, w)| g * scale + wd * w)
                .collect();
            sgd_step(p.value.data_mut(), &grads, v, self.config.learning_rate, self.config.momentum)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_starts_at_one_and_decreases() {
        let s = LrSchedule::Cosine { floor: 0.1 };
        assert_eq!(s.factor(1, 10), 1.0);
        let f: Vec<f64> = (1..=10).map(|e| s.factor(e, 10)).collect();
        assert!(f.windows(2).all(|w| w[1] < w[0]));
        assert!(f[9] > 0.1);
        assert_eq!(LrSchedule::Constant.factor(7, 10), 1.0);
    }

    #[test]
    fn zero_lr_is_noop() {
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0; 2];
        sgd_step(&mut p, &[3.0, 4.0], &mut v, 0.0, 0.9).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn plain_gradient_step() {
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0; 2];
        sgd_step(&mut p, &[0.5, -0.25], &mut v, 1.0, 0.0).unwrap();
        assert_eq!(p, vec![0.5, -1.75]);
    }

    #[test]
    fn momentum_recurrence() {
        // v1 = g1 = 1.0, p1 = 10 - 0.1 * 1.0 = 9.9
        // v2 = 0.9 * 1.0 + 2.0 = 2.9, p2 = 9.9 - 0.1 * 2.9 = 9.61
        let mut p = vec![10.0];
        let mut v = vec![0.0];
        sgd_step(&mut p, &[1.0], &mut v, 0.1, 0.9).unwrap();
        assert_eq!(p[0], 10.0 - 0.1 * 1.0);
        sgd_step(&mut p, &[2.0], &mut v, 0.1, 0.9).unwrap();
        assert_eq!(v[0], 0.9 * 1.0 + 2.0);
        assert_eq!(p[0], (10.0 - 0.1 * 1.0) - 0.1 * (0.9 * 1.0 + 2.0));
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = vec![1.0, 1.0];
        let mut v = vec![0.0; 2];
        let err = sgd_step(&mut p, &[0.1, f64::NAN], &mut v, 1.0, 0.9).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(p, vec![1.0, 1.0]);
    }
}
