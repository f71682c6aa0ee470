use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates. Moments start at zero.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    config: AdamConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients held in `store`.
    ///
    /// Nothing is modified when any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if let Some((_, p)) = store.iter().find(|(_, p)| !p.grad.all_finite()) {
            return Err(TensorError::NonFiniteGradient(p.name.clone()));
        }
        if self.first.len() != store.len() {
            self.first = store.iter().map(|(_, p)| vec![T::zero(); p.value.numel()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = T::from_f64_lossy(1.0 / (1.0 - beta1.powi(t)));
        let c2 = T::from_f64_lossy(1.0 / (1.0 - beta2.powi(t)));
        let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
        let (lr, eps) = (T::from_f64_lossy(lr), T::from_f64_lossy(epsilon));
        for ((p, m), v) in store.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let grad = p.grad.data().to_vec();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let m_hat = m[i] * c1;
                let v_hat = v[i] * c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(store: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let total: f64 = store
        .iter()
        .flat_map(|(_, p)| p.grad.data().iter())
        .map(|g| {
            let g = g.to_f64().unwrap_or(f64::NAN);
            g * g
        })
        .sum();
    let norm = total.sqrt();
    if norm.is_finite() && norm > max_norm {
        let factor = T::from_f64_lossy(max_norm / (norm + 1e-6));
        for p in store.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::InitScheme;

    fn store_with(values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new(0);
        let id = s
            .add("w", &[values.len()], InitScheme::Constant { value: 0.0 })
            .unwrap();
        s.get_mut(id).value.data_mut().copy_from_slice(values);
        s
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut s = store_with(&[1.0, -2.0, 3.0]);
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut s, 0.001).unwrap();
        }
        assert_eq!(s.iter().next().unwrap().1.value.data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = g, v_hat = g^2 -> update = lr * g / (|g| + eps)
        let mut s = store_with(&[0.0, 0.0]);
        s.iter_mut().next().unwrap().grad.data_mut().copy_from_slice(&[0.5, -3.0]);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut s, 0.001).unwrap();
        let w = s.iter().next().unwrap().1.value.data().to_vec();
        let expected = [-0.001 * 0.5 / (0.5 + 1e-8), 0.001 * 3.0 / (3.0 + 1e-8)];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = store_with(&[1.0]);
        s.iter_mut().next().unwrap().grad.data_mut()[0] = f64::NAN;
        let err = Adam::new(AdamConfig::default()).step(&mut s, 0.1).unwrap_err();
        assert!(matches!(err, TensorError::NonFiniteGradient(ref n) if n == "w"));
        assert_eq!(s.iter().next().unwrap().1.value.data(), &[1.0]);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut s = store_with(&[0.0, 0.0]);
        s.iter_mut().next().unwrap().grad.data_mut().copy_from_slice(&[3.0, 4.0]);
        let norm = clip_grad_norm(&mut s, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        let g = s.iter().next().unwrap().1.grad.data().to_vec();
        assert!(((g[0] * g[0] + g[1] * g[1]).sqrt() - 1.0).abs() < 1e-5);
    }
}
