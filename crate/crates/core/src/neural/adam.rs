use serde::{Deserialize, Serialize};

use super::graph::Matrix;
use crate::error::{Error, Result};

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Moment buffers, for checkpointing.
    pub fn moments(&self) -> (&[Matrix], &[Matrix]) {
        (&self.m, &self.v)
    }

    /// One update of `params` in place. Moment buffers are created on the
    /// first call and must keep the same layout afterwards.
    pub fn step(&mut self, params: Vec<&mut Matrix>, grads: Vec<&Matrix>) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} parameter tensors, {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
            if p.dim() != g.dim() {
                return Err(Error::Shape(format!(
                    "tensor {i}: parameter {:?}, gradient {:?}",
                    p.dim(),
                    g.dim()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of tensor {i} at optimizer step {}",
                    self.step + 1
                )));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Matrix::zeros(p.dim())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len()
            || self.m.iter().zip(&params).any(|(m, p)| m.dim() != p.dim())
        {
            return Err(Error::Shape("parameter layout changed between steps".into()));
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - self.lr * self.weight_decay;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);

        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p = *p * decay - lr * mhat / (vhat.sqrt() + eps);
                });
        }
        Ok(())
    }
}
