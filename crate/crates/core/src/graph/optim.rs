use serde::{Deserialize, Serialize};

use crate::graph::{GraphError, ParamStore};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(self, lr: f64) -> Self {
        Self { lr, ..self }
    }

    pub fn step<T: Real>(&self, store: &mut ParamStore<T>) -> Result<(), GraphError> {
        adam_step(store, self.lr, self.beta1, self.beta2, self.eps)
    }
}

/// One bias-corrected Adam update over every trainable parameter.
///
/// All parameters are checked for a gradient before any of them is touched.
pub fn adam_step<T: Real>(
    store: &mut ParamStore<T>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<(), GraphError> {
    if let Some((_, p)) = store
        .iter()
        .find(|(_, p)| p.trainable && p.tensor.grad().is_none())
    {
        return Err(GraphError::MissingGrad {
            name: p.name.clone(),
        });
    }
    let (b1, b2) = (T::lit(beta1), T::lit(beta2));
    let (lr, eps) = (T::lit(lr), T::lit(eps));
    let one = T::one();
    for p in store.iter_mut().filter(|p| p.trainable) {
        p.step_count += 1;
        let t = i32::try_from(p.step_count).unwrap_or(i32::MAX);
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        let grad = p.tensor.grad().expect("checked above").to_vec();
        let data = p.tensor.data_mut();
        for i in 0..data.len() {
            let g = grad[i];
            p.adam_m[i] = b1 * p.adam_m[i] + (one - b1) * g;
            p.adam_v[i] = b2 * p.adam_v[i] + (one - b2) * g * g;
            let m_hat = p.adam_m[i] / c1;
            let v_hat = p.adam_v[i] / c2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Tensor;

    fn store_with(values: &[f64], grad: Option<&[f64]>) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::new(&[values.len()], values.to_vec()).unwrap());
        if let Some(g) = grad {
            s.get_mut(id).tensor.set_grad(Some(g.to_vec()));
        }
        s
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        let lr = 1e-3;
        let x0 = [0.3, -1.2, 5.0, 0.0];
        let mut s = store_with(&x0, Some(&[0.5, -2.0, 1e-3, 10.0]));
        adam_step(&mut s, lr, 0.9, 0.999, 1e-8).unwrap();
        let p = s.get(s.id("w").unwrap());
        assert_eq!(p.step_count, 1);
        for (x, x0) in p.tensor.data().iter().zip(x0) {
            let d = (x - x0).abs();
            assert!(d >= 0.999 * lr && d <= lr, "update {d}");
        }
    }

    #[test]
    fn zero_grad_leaves_params_but_counts_step() {
        let x0 = [1.0, 2.0];
        let mut s = store_with(&x0, Some(&[0.0, 0.0]));
        adam_step(&mut s, 1e-3, 0.9, 0.999, 1e-8).unwrap();
        let p = s.get(s.id("w").unwrap());
        assert_eq!(p.tensor.data(), &x0);
        assert_eq!(p.step_count, 1);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut s = store_with(&[1.0], None);
        let err = adam_step(&mut s, 1e-3, 0.9, 0.999, 1e-8).unwrap_err();
        assert_eq!(err, GraphError::MissingGrad { name: "w".into() });
        assert_eq!(s.get(s.id("w").unwrap()).step_count, 0);
    }

    #[test]
    fn two_steps_reduce_quadratic_loss() {
        // loss = sum (x - 3)^2, grad = 2 (x - 3)
        let loss = |x: &[f64]| x.iter().map(|v| (v - 3.0).powi(2)).sum::<f64>();
        let mut s = store_with(&[0.0, 1.0, 7.0], None);
        let id = s.id("w").unwrap();
        let start = loss(s.tensor(id).data());
        for _ in 0..2 {
            let g: Vec<f64> = s.tensor(id).data().iter().map(|v| 2.0 * (v - 3.0)).collect();
            s.get_mut(id).tensor.set_grad(Some(g));
            adam_step(&mut s, 0.1, 0.9, 0.999, 1e-8).unwrap();
        }
        assert!(loss(s.tensor(id).data()) < start);
    }
}
