//! Adam optimizer with bias correction.

#![allow(clippy::needless_range_loop)] // index math mirrors the written rules
use super::params::ParamStore;
use super::tensor::Tensor;

/// Adam update state: first/second moment estimates per parameter plus the
/// shared step counter used for bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    moments: Vec<Option<(Tensor, Tensor)>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Applies one Adam step. `grads[i]` is the gradient for parameter `i`
    /// of the store, or `None` when it received no gradient this step.
    /// Frozen parameters are skipped.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>]) {
        assert_eq!(grads.len(), params.len(), "grads misaligned with params");
        self.moments.resize(params.len(), None);
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            if !params.is_trainable(i) {
                continue;
            }
            let Some(g) = &grads[i] else { continue };
            let value = params.value_mut(i);
            let (m, v) = self.moments[i].get_or_insert_with(|| {
                (
                    Tensor::zeros(value.shape().to_vec()),
                    Tensor::zeros(value.shape().to_vec()),
                )
            });
            let (md, vd) = (m.data_mut(), v.data_mut());
            let pd = value.data_mut();
            for j in 0..pd.len() {
                let gj = g.data()[j];
                md[j] = self.beta1 * md[j] + (1.0 - self.beta1) * gj;
                vd[j] = self.beta2 * vd[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = md[j] / bc1;
                let v_hat = vd[j] / bc2;
                pd[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
