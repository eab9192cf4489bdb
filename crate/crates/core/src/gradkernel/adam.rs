use super::{ParamStore, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 4e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment buffers and the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = |t: &Tensor<T>| vec![T::zero(); t.len()];
        AdamState { step: 0, m: params.tensors().map(zeros).collect(), v: params.tensors().map(zeros).collect() }
    }

    /// One bias-corrected Adam update; `grads` align with the store's order.
    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], cfg: &AdamConfig) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.step += 1;
        let b1 = T::from_f64_lossy(cfg.beta1);
        let b2 = T::from_f64_lossy(cfg.beta2);
        let c1 = T::from_f64_lossy(1.0 - cfg.beta1.powi(self.step as i32));
        let c2 = T::from_f64_lossy(1.0 - cfg.beta2.powi(self.step as i32));
        let lr = T::from_f64_lossy(cfg.lr);
        let eps = T::from_f64_lossy(cfg.eps);
        for (id, g) in grads.iter().enumerate() {
            let p = params.tensor_mut(id).data_mut();
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p[j] = p[j] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.data().iter()).map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::from_f64_lossy(max_norm / norm);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v = *v * s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(w: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(w));
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = store(1.5);
        let mut st = AdamState::new(&p);
        st.update(&mut p, &[Tensor::scalar(0.0)], &AdamConfig::default());
        assert_eq!(p.get("w").unwrap().item(), 1.5);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [-250.0, -0.01, 0.3, 42.0] {
            let mut p = store(0.0);
            let mut st = AdamState::new(&p);
            st.update(&mut p, &[Tensor::scalar(g)], &AdamConfig::with_lr(0.05));
            let w = p.get("w").unwrap().item();
            assert!((w + 0.05 * f64::signum(g)).abs() < 1e-6, "g={g} w={w}");
        }
    }

    #[test]
    fn quadratic_converges_like_the_scalar_recursion() {
        // oracle: the same recursion written out on plain floats
        let (mut w, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * (w - 3.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((w - 3.0).abs() < 0.1);

        let mut p = store(0.0);
        let mut st = AdamState::new(&p);
        for _ in 0..100 {
            let cur = p.get("w").unwrap().item();
            st.update(&mut p, &[Tensor::scalar(2.0 * (cur - 3.0))], &AdamConfig::with_lr(0.1));
        }
        let got = p.get("w").unwrap().item();
        assert!((got - 3.0).abs() < 0.1);
        assert!((got - w).abs() < 1e-12);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = vec![Tensor::<f64>::from_f64(&[2], &[3.0, 4.0]).unwrap()];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-12);
    }
}
