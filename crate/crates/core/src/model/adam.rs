use serde::{Deserialize, Serialize};

use super::Params;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Adam with bias-corrected moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize, lr: f64) -> Self {
        Self::with_betas(len, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }

    /// Applies one update. A non-finite gradient leaves the parameters and
    /// the moments untouched and names the offending tensor.
    pub fn update(&mut self, params: &mut Params<T>, grad: &[T]) -> Result<()> {
        if grad.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Shape(format!(
                "gradient of length {} for {} parameters",
                grad.len(),
                params.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            let name = params
                .layout
                .tensor_of(i)
                .map(|t| t.name.clone())
                .unwrap_or_else(|| format!("#{i}"));
            return Err(Error::NonFiniteGradient(name));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let (inv_c1, inv_c2) = (T::of(1.0 / c1), T::of(1.0 / c2));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));
        for (((p, &g), m), v) in params.values.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let m_hat = *m * inv_c1;
            let v_hat = *v * inv_c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
