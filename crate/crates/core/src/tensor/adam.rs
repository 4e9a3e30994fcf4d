use thiserror::Error;

use super::{Matrix, ParamSet, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AdamError {
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("parameter layout mismatch at `{0}`")]
    Layout(String),
}

/// First/second moment estimates mirroring a parameter set.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<P: ParamSet<T>>(config: AdamConfig, params: &P) -> Self {
        let zeros: Vec<_> =
            params.tensors().iter().map(|(_, m)| Matrix::zeros(m.rows(), m.cols())).collect();
        AdamState { config, step: 0, m: zeros.clone(), v: zeros }
    }

    /// One bias-corrected Adam update. Parameters are untouched on error.
    pub fn step<P: ParamSet<T>>(&mut self, params: &mut P, grads: &P) -> Result<(), AdamError> {
        let grads = grads.tensors();
        for (name, g) in &grads {
            if !g.is_finite() {
                return Err(AdamError::NonFiniteGradient(name.clone()));
            }
        }
        let mut params = params.tensors_mut();
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(AdamError::Layout(format!("{} params vs {} grads", params.len(), grads.len())));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let bc1 = T::from_f64(1.0 - c.beta1.powi(t));
        let bc2 = T::from_f64(1.0 - c.beta2.powi(t));
        let (lr, eps) = (T::from_f64(c.lr), T::from_f64(c.eps));
        for (k, ((pname, p), (gname, g))) in params.iter_mut().zip(&grads).enumerate() {
            if pname != gname || p.shape() != g.shape() {
                return Err(AdamError::Layout(pname.clone()));
            }
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (((pi, gi), mi), vi) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut())
            {
                *mi = b1 * *mi + (T::one() - b1) * *gi;
                *vi = b2 * *vi + (T::one() - b2) * *gi * *gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi = *pi - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[derive(Clone)]
    struct Two(Matrix<f64>, Matrix<f64>);

    impl ParamSet<f64> for Two {
        fn tensors(&self) -> Vec<(String, &Matrix<f64>)> {
            vec![("a".into(), &self.0), ("b".into(), &self.1)]
        }
        fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix<f64>)> {
            vec![("a".into(), &mut self.0), ("b".into(), &mut self.1)]
        }
    }

    fn random(seed: u64) -> Two {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Two(Matrix::random_normal(2, 3, 1.0, &mut rng), Matrix::random_normal(4, 1, 1.0, &mut rng))
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = random(1);
        let before = p.clone();
        let zero = Two(Matrix::zeros(2, 3), Matrix::zeros(4, 1));
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        adam.step(&mut p, &zero).unwrap();
        assert_eq!(p.0, before.0);
        assert_eq!(p.1, before.1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = random(2);
        let before = p.clone();
        let g = random(3);
        let cfg = AdamConfig::default();
        let mut adam = AdamState::new(cfg, &p);
        adam.step(&mut p, &g).unwrap();
        for (after, (orig, grad)) in [(&p.0, (&before.0, &g.0)), (&p.1, (&before.1, &g.1))] {
            for ((a, o), gv) in after.data().iter().zip(orig.data()).zip(grad.data()) {
                let delta = a - o;
                assert!((delta + cfg.lr * gv / (gv.abs() + cfg.eps)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn two_steps_match_textbook_recurrence() {
        let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
        let mut p = random(4);
        let mut reference: Vec<f64> = p.0.data().iter().chain(p.1.data()).copied().collect();
        let mut m = vec![0.0; reference.len()];
        let mut v = vec![0.0; reference.len()];
        let mut adam = AdamState::new(cfg, &p);
        for (t, seed) in [(1, 5u64), (2, 6)] {
            let g = random(seed);
            let flat: Vec<f64> = g.0.data().iter().chain(g.1.data()).copied().collect();
            for i in 0..reference.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * flat[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * flat[i] * flat[i];
                let mh = m[i] / (1.0 - cfg.beta1.powi(t));
                let vh = v[i] / (1.0 - cfg.beta2.powi(t));
                reference[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            }
            adam.step(&mut p, &g).unwrap();
        }
        let got: Vec<f64> = p.0.data().iter().chain(p.1.data()).copied().collect();
        for (a, b) in got.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(adam.step, 2);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = random(7);
        let mut g = random(8);
        g.1.data_mut()[2] = f64::NAN;
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        let before = p.0.clone();
        assert_eq!(adam.step(&mut p, &g), Err(AdamError::NonFiniteGradient("b".into())));
        assert_eq!(p.0, before);
        assert_eq!(adam.step, 0);
    }
}
