//! First-order optimizer shared by VAE training and affine registration.

use crate::real::Real;

/// Adam with bias correction. Defaults beta1 = 0.9, beta2 = 0.999,
/// eps = 1e-8; state is one first and second moment per parameter.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    beta1: T,
    beta2: T,
    eps: T,
    step_count: i32,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(n_params: usize) -> Self {
        Adam {
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            step_count: 0,
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
        }
    }

    pub fn with_hyper(n_params: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1: T::of(beta1),
            beta2: T::of(beta2),
            eps: T::of(eps),
            ..Adam::new(n_params)
        }
    }

    /// One descent step along `grads`.
    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: T) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step_count += 1;
        let c1 = T::one() - self.beta1.powi(self.step_count);
        let c2 = T::one() - self.beta2.powi(self.step_count);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (T::one() - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (T::one() - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
