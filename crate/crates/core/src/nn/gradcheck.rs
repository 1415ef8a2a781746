//! Central finite-difference gradient checker.
//!
//! The loss closure is expected to *accumulate* analytic gradients into the
//! model's `ParamTensor::grad` fields and return the scalar loss. The checker
//! zeroes gradients before every call, so closures never need to.

use super::{Parameters, Rng};

/// Relative error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares analytic gradients against central differences on `coords`
/// coordinates sampled uniformly without replacement across every parameter
/// (all coordinates when the model has fewer). Returns the worst relative error.
pub fn grad_check<M, F>(model: &mut M, mut loss_fn: F, epsilon: f64, coords: usize, rng: &mut Rng) -> f64
where
    M: Parameters,
    F: FnMut(&mut M) -> f64,
{
    model.zero_grad();
    loss_fn(model);
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.as_slice().to_vec()).collect();

    let mut all: Vec<(usize, usize)> = analytic
        .iter()
        .enumerate()
        .flat_map(|(p, g)| (0..g.len()).map(move |i| (p, i)))
        .collect();
    if coords < all.len() {
        rng.shuffle(&mut all);
        all.truncate(coords);
    }

    let mut worst = 0.0_f64;
    for (p, i) in all {
        let original = model.params()[p].value.as_slice()[i];
        model.params_mut()[p].value.as_mut_slice()[i] = original + epsilon;
        model.zero_grad();
        let plus = loss_fn(model);
        model.params_mut()[p].value.as_mut_slice()[i] = original - epsilon;
        model.zero_grad();
        let minus = loss_fn(model);
        model.params_mut()[p].value.as_mut_slice()[i] = original;

        let numeric = (plus - minus) / (2.0 * epsilon);
        worst = worst.max(relative_error(analytic[p][i], numeric));
    }
    model.zero_grad();
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{DenseMatrix, ParamTensor};

    struct Quadratic {
        w: ParamTensor,
    }

    impl Parameters for Quadratic {
        fn params(&self) -> Vec<&ParamTensor> {
            vec![&self.w]
        }
        fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
            vec![&mut self.w]
        }
    }

    fn half_norm_sq(m: &mut Quadratic) -> f64 {
        let w = m.w.value.clone();
        m.w.grad.add_scaled(&w, 1.0);
        0.5 * w.as_slice().iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn quadratic_gradient_is_exact() {
        let mut rng = Rng::new(0);
        let mut m = Quadratic {
            w: ParamTensor::glorot("w", &mut rng, 5, 4).unwrap(),
        };
        let err = grad_check(&mut m, half_norm_sq, 1e-5, 100, &mut rng);
        assert!(err < 1e-7, "relative error {err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut rng = Rng::new(0);
        let mut m = Quadratic {
            w: ParamTensor::new("w", DenseMatrix::filled(2, 2, 0.7)),
        };
        let err = grad_check(
            &mut m,
            |m| {
                let w = m.w.value.clone();
                m.w.grad.add_scaled(&w, 2.0);
                0.5 * w.as_slice().iter().map(|v| v * v).sum::<f64>()
            },
            1e-5,
            4,
            &mut rng,
        );
        assert!((err - 1.0 / 3.0).abs() < 1e-6, "relative error {err}");
    }

    #[test]
    fn values_restored_after_check() {
        let mut rng = Rng::new(1);
        let mut m = Quadratic {
            w: ParamTensor::glorot("w", &mut rng, 3, 3).unwrap(),
        };
        let before = m.w.value.clone();
        grad_check(&mut m, half_norm_sq, 1e-5, 9, &mut rng);
        assert_eq!(m.w.value, before);
    }
}
