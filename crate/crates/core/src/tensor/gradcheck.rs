use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ParamSet;

/// Five-point stencil step. Plain central differences could not serve both
/// near-zero gradients (cancellation) and saturated losses (truncation).
pub const FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
    pub max_rel_error: f64,
    /// Parameter holding the largest error.
    pub worst: Option<String>,
    pub passed: bool,
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares analytic gradients from `loss_and_grads` with five-point
/// finite differences on a random `sample_frac` of the coordinates of every
/// parameter (at least one per tensor).
pub fn grad_check<P, F>(
    loss_and_grads: F,
    params: &P,
    tolerance: f64,
    sample_frac: f64,
    seed: u64,
) -> GradCheckReport
where
    P: ParamSet<f64> + Clone,
    F: Fn(&P) -> (f64, P),
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, analytic) = loss_and_grads(params);
    let analytic = analytic.tensors();
    let mut probe = params.clone();
    let mut checks = Vec::new();
    for (k, (name, tensor)) in params.tensors().into_iter().enumerate() {
        let len = tensor.data().len();
        let count = ((len as f64 * sample_frac).ceil() as usize).clamp(1, len);
        let mut worst: f64 = 0.0;
        for idx in index::sample(&mut rng, len, count) {
            let orig = tensor.data()[idx];
            let mut eval = |v: f64| {
                probe.tensors_mut()[k].1.data_mut()[idx] = v;
                loss_and_grads(&probe).0
            };
            let h = FD_STEP;
            let numeric =
                (8.0 * (eval(orig + h) - eval(orig - h)) - (eval(orig + 2.0 * h) - eval(orig - 2.0 * h))) / (12.0 * h);
            probe.tensors_mut()[k].1.data_mut()[idx] = orig;
            worst = worst.max(rel_error(analytic[k].1.data()[idx], numeric));
        }
        checks.push(ParamCheck { name, checked: count, max_rel_error: worst });
    }
    let worst = checks.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error));
    let max_rel_error = worst.map_or(0.0, |c| c.max_rel_error);
    GradCheckReport {
        worst: worst.map(|c| c.name.clone()),
        params: checks.clone(),
        tolerance,
        max_rel_error,
        passed: max_rel_error < tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    #[derive(Clone)]
    struct One(Matrix<f64>);

    impl ParamSet<f64> for One {
        fn tensors(&self) -> Vec<(String, &Matrix<f64>)> {
            vec![("w".into(), &self.0)]
        }
        fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix<f64>)> {
            vec![("w".into(), &mut self.0)]
        }
    }

    #[test]
    fn constant_loss_passes() {
        let p = One(Matrix::filled(3, 3, 0.5));
        let r = grad_check(|_| (4.2, One(Matrix::zeros(3, 3))), &p, 1e-4, 1.0, 0);
        assert!(r.passed);
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn quadratic_passes_and_wrong_gradient_fails() {
        let p = One(Matrix::from_rows(&[&[1.0, -2.0], &[0.5, 3.0]]));
        let f = |q: &One| (q.0.data().iter().map(|v| v * v * v).sum::<f64>(), One(q.0.map(|v| 3.0 * v * v)));
        assert!(grad_check(f, &p, 1e-4, 1.0, 1).passed);
        let bad = |q: &One| (f(q).0, One(q.0.map(|v| 6.0 * v * v)));
        let r = grad_check(bad, &p, 1e-4, 1.0, 1);
        assert!(!r.passed);
        assert_eq!(r.worst.as_deref(), Some("w"));
    }
}
