//! SGD with optional momentum, Nesterov lookahead and L2 weight decay.

use crate::real::Real;
use crate::tensor::Tensor;

/// Optimizer state. Velocity buffers are allocated lazily and always
/// match their parameter's shape.
#[derive(Debug, Clone)]
pub struct SgdState<T> {
    pub learning_rate: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub l2: f64,
    velocities: Vec<Vec<T>>,
}

impl<T: Real> SgdState<T> {
    pub fn new(learning_rate: f64, momentum: f64, nesterov: bool, l2: f64) -> Self {
        assert!((0.0..1.0).contains(&momentum), "momentum must be in [0, 1)");
        assert!(l2 >= 0.0, "l2 must be >= 0");
        SgdState {
            learning_rate,
            momentum,
            nesterov,
            l2,
            velocities: Vec::new(),
        }
    }

    /// One update step. `lr_scales[i]` multiplies the base learning rate
    /// for parameter i (the localization learning-rate multiplier).
    /// Update rule with momentum mu:
    ///   g <- grad + l2 * p
    ///   v <- mu * v + g
    ///   p <- p - lr * (g + mu * v)   (nesterov)
    ///   p <- p - lr * v              (plain momentum)
    /// and plain gradient descent when mu == 0.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Vec<T>], lr_scales: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), lr_scales.len());
        if self.velocities.len() < params.len() {
            for p in params[self.velocities.len()..].iter() {
                self.velocities.push(vec![T::ZERO; p.numel()]);
            }
        }
        let mu = T::from_f64(self.momentum);
        let l2 = T::from_f64(self.l2);
        for ((p, g), (v, &scale)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.velocities.iter_mut().zip(lr_scales.iter()))
        {
            debug_assert_eq!(p.numel(), g.len());
            let lr = T::from_f64(self.learning_rate * scale);
            if self.momentum == 0.0 {
                for (pv, &gv) in p.values_mut().iter_mut().zip(g.iter()) {
                    let eff = gv + l2 * *pv;
                    *pv -= lr * eff;
                }
            } else if self.nesterov {
                for ((pv, &gv), vv) in p.values_mut().iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                    let eff = gv + l2 * *pv;
                    *vv = mu * *vv + eff;
                    *pv -= lr * (eff + mu * *vv);
                }
            } else {
                for ((pv, &gv), vv) in p.values_mut().iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                    let eff = gv + l2 * *pv;
                    *vv = mu * *vv + eff;
                    *pv -= lr * *vv;
                }
            }
        }
    }
}
