use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        Adam {
            config,
            first: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            step: 0,
        }
    }

    /// One update of every parameter. `names` is only used for error messages.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], names: &[String]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::contract(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::Dimension {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
                return Err(Error::Training(format!("non-finite gradient for parameter {name}")));
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for ((pv, &gv), (mv, vv)) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut().zip(v.iter_mut())) {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(g: f64) -> f64 {
        let mut params = vec![Tensor::<f64>::full([1], 1.0)];
        let grads = vec![Tensor::<f64>::full([1], g)];
        let mut adam = Adam::new(AdamConfig::default(), &params);
        adam.step(&mut params, &grads, &["w".into()]).unwrap();
        params[0].data()[0] - 1.0
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient() {
        // m_hat = g, v_hat = g^2, so the step is -lr * g / (|g| + eps).
        let lr = AdamConfig::default().lr;
        let eps = AdamConfig::default().eps;
        for g in [3.0, -0.5, 1e-2] {
            let want = -lr * g / (g.abs() + eps);
            assert!((run(g) - want).abs() < 1e-15, "g = {g}");
            assert!((run(g).abs() - lr).abs() < lr * 1e-5);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        assert_eq!(run(0.0), 0.0);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut params = vec![Tensor::<f64>::full([2], 1.0)];
        let grads = vec![Tensor::<f64>::from_vec([2], vec![0.0, f64::NAN]).unwrap()];
        let mut adam = Adam::new(AdamConfig::default(), &params);
        let err = adam.step(&mut params, &grads, &["head.w".into()]).unwrap_err();
        assert!(err.to_string().contains("head.w"));
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let trajectory = || {
            let mut params = vec![Tensor::<f64>::from_fn([3], |i| i as f64)];
            let mut adam = Adam::new(AdamConfig::default(), &params);
            for s in 0..20 {
                let grads = vec![Tensor::from_fn([3], |i| ((s * 3 + i) as f64).sin())];
                adam.step(&mut params, &grads, &[]).unwrap();
            }
            params[0].clone()
        };
        assert_eq!(trajectory(), trajectory());
    }
}
