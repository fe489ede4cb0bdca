use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Bias-corrected Adam moments for a list of parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self::with_betas(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &[Tensor], beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], learning_rate: f64) -> Result<()> {
        self.step_where(params, grads, learning_rate, |_| true)
    }

    /// Update only the parameters for which `active(i)` holds; the others
    /// keep both their values and their moments.
    ///
    /// Gradients are validated before anything is written, so a non-finite
    /// gradient leaves parameters and state untouched.
    pub fn step_where(
        &mut self,
        params: &mut [Tensor],
        grads: &[Tensor],
        learning_rate: f64,
        active: impl Fn(usize) -> bool,
    ) -> Result<()> {
        self.step_scaled(params, grads, learning_rate, |i| if active(i) { 1.0 } else { 0.0 })
    }

    /// Per-parameter learning rate `learning_rate * scale(i)`; a scale of
    /// zero freezes the parameter as in `step_where`.
    pub fn step_scaled(
        &mut self,
        params: &mut [Tensor],
        grads: &[Tensor],
        learning_rate: f64,
        scale: impl Fn(usize) -> f64,
    ) -> Result<()> {
        let active = |i: usize| scale(i) != 0.0;
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::invalid(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first_moment[i].shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if active(i) {
                let bad = g.data().iter().filter(|v| !v.is_finite()).count();
                if bad > 0 {
                    return Err(Error::NonFiniteGradient {
                        param: format!("#{i}"),
                        count: bad,
                    });
                }
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if !active(i) {
                continue;
            }
            let lr = learning_rate * scale(i);
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
