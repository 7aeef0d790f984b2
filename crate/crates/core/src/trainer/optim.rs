//! AdamW with decoupled weight decay: the L2 term of the prediction loss is
//! realized here rather than as an explicit loss term.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

pub struct AdamW<S> {
    config: AdamWConfig,
    step_count: u64,
    first_moment: Vec<Tensor<S>>,
    second_moment: Vec<Tensor<S>>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(config: AdamWConfig, shapes: &[(usize, usize)]) -> Self {
        Self {
            config,
            step_count: 0,
            first_moment: shapes.iter().map(|(r, c)| Tensor::zeros(*r, *c)).collect(),
            second_moment: shapes.iter().map(|(r, c)| Tensor::zeros(*r, *c)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update. `grads[i]` of `None` counts as a zero gradient; weight
    /// decay still applies.
    pub fn step(&mut self, params: Vec<&mut Tensor<S>>, grads: &[Option<Tensor<S>>]) {
        assert_eq!(params.len(), self.first_moment.len(), "parameter count changed");
        assert_eq!(params.len(), grads.len(), "gradient count mismatch");
        self.step_count += 1;
        let b1 = S::real(self.config.beta1);
        let b2 = S::real(self.config.beta2);
        let lr = S::real(self.config.learning_rate);
        let eps = S::real(self.config.eps);
        let wd = S::real(self.config.weight_decay);
        let t = self.step_count as i32;
        let bias1 = S::one() - b1.powi(t);
        let bias2 = S::one() - b2.powi(t);

        for (i, param) in params.into_iter().enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            let zero_grad;
            let grad = match &grads[i] {
                Some(g) => g,
                None => {
                    zero_grad = Tensor::zeros(param.rows(), param.cols());
                    &zero_grad
                }
            };
            assert_eq!(grad.rows(), param.rows(), "gradient shape mismatch at {i}");
            assert_eq!(grad.cols(), param.cols(), "gradient shape mismatch at {i}");
            for ((p, g), (mi, vi)) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mi = b1 * *mi + (S::one() - b1) * *g;
                *vi = b2 * *vi + (S::one() - b2) * *g * *g;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *p = *p - lr * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
            }
        }
    }
}
