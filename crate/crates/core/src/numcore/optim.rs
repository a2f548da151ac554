use super::tensor::Tensor;
use crate::error::{Error, Result};

/// SGD with classic momentum and per-group learning rates.
///
/// Update rule, per parameter `p` with gradient `g` in group `k`:
///
/// ```text
/// v <- momentum * v + g
/// p <- p - lr[k] * v
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentum {
    momentum: f64,
    learning_rates: Vec<f64>,
    velocity: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(momentum: f64, learning_rates: Vec<f64>) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        if let Some(lr) = learning_rates.iter().find(|lr| !(**lr > 0.0) || !lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rates must be positive, got {lr}"
            )));
        }
        Ok(Self {
            momentum,
            learning_rates,
            velocity: Vec::new(),
        })
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn learning_rates(&self) -> &[f64] {
        &self.learning_rates
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// Applies one update. `groups[i]` selects the learning rate of
    /// `params[i]`. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Tensor], groups: &[usize], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != groups.len() {
            return Err(Error::shape(
                "sgd_step",
                format!(
                    "{} params, {} groups, {} grads",
                    params.len(),
                    groups.len(),
                    grads.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::shape(
                    "sgd_step",
                    format!("param {i}: {} values, {} grads", p.len(), g.len()),
                ));
            }
            if let Some(j) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    index: j,
                    which: "sgd_step",
                });
            }
            if groups[i] >= self.learning_rates.len() {
                return Err(Error::InvalidArgument(format!(
                    "param {i} routed to missing group {}",
                    groups[i]
                )));
            }
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        } else if self.velocity.len() != params.len()
            || self.velocity.iter().zip(params.iter()).any(|(v, p)| v.len() != p.len())
        {
            return Err(Error::shape("sgd_step", "velocity does not match parameter shapes"));
        }
        for ((p, g), (v, &group)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.velocity.iter_mut().zip(groups))
        {
            let lr = self.learning_rates[group];
            for ((x, &gi), vi) in p.data_mut().iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi;
                *x -= lr * *vi;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(momentum: f64, lr: f64, p0: f64, grads: &[f64]) -> (f64, f64) {
        let mut opt = SgdMomentum::new(momentum, vec![lr]).unwrap();
        let mut p = Tensor::vector(vec![p0]);
        for &g in grads {
            opt.step(&mut [&mut p], &[0], &[vec![g]]).unwrap();
        }
        (p.data()[0], opt.velocity()[0][0])
    }

    #[test]
    fn plain_gradient_descent() {
        assert_eq!(run(0.0, 1.0, 1.0, &[0.5]).0, 0.5);
    }

    #[test]
    fn two_momentum_steps() {
        let (p, _) = run(0.9, 0.1, 0.0, &[1.0, 1.0]);
        assert!((p + 0.29).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_decays_velocity() {
        let mut opt = SgdMomentum::new(0.9, vec![0.1]).unwrap();
        let mut p = Tensor::vector(vec![0.0]);
        opt.step(&mut [&mut p], &[0], &[vec![1.0]]).unwrap();
        let mut v = 1.0;
        for _ in 0..5 {
            let before = p.data()[0];
            opt.step(&mut [&mut p], &[0], &[vec![0.0]]).unwrap();
            v *= 0.9;
            assert!((opt.velocity()[0][0] - v).abs() < 1e-15);
            assert!((p.data()[0] - (before - 0.1 * v)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_from_rest_leaves_params() {
        assert_eq!(run(0.9, 0.1, 3.0, &[0.0; 10]), (3.0, 0.0));
    }

    #[test]
    fn non_finite_gradient_is_refused() {
        let mut opt = SgdMomentum::new(0.9, vec![0.1]).unwrap();
        let mut p = Tensor::vector(vec![1.0, 2.0]);
        let err = opt.step(&mut [&mut p], &[0], &[vec![0.0, f64::NAN]]);
        assert!(matches!(err, Err(Error::NonFiniteGradient { index: 1, .. })));
        assert_eq!(p.data(), &[1.0, 2.0]);
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(SgdMomentum::new(1.0, vec![0.1]).is_err());
        assert!(SgdMomentum::new(0.9, vec![0.0]).is_err());
    }
}
