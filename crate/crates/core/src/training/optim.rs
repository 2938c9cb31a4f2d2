//! Loss, learning-rate schedule and the Adam optimizer.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::network::ParamStore;

/// Smooth-L1 (Huber-style) loss of the error `e` and its derivative in `e`.
pub fn smooth_l1(e: f64, delta: f64) -> (f64, f64) {
    debug_assert!(delta > 0.0);
    if e.abs() < delta {
        (0.5 * e * e / delta, e / delta)
    } else {
        (e.abs() - 0.5 * delta, e.signum())
    }
}

/// Linear warm-up from 0 to `max_lr`, then half a cosine down to 0.
///
/// `epoch` may be fractional (the optimizer evaluates it per step).
pub fn lr_schedule(epoch: f64, max_lr: f64, warmup: usize, cosine: usize) -> f64 {
    let (w, c) = (warmup as f64, cosine as f64);
    if epoch <= 0.0 {
        0.0
    } else if epoch < w {
        max_lr * epoch / w
    } else if epoch < w + c {
        0.5 * max_lr * (1.0 + (PI * (epoch - w) / c).cos())
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// One bias-corrected update. A non-finite gradient aborts the step before
    /// anything is modified and names the tensor it belongs to.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[f64], lr: f64) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            let name = store
                .tensors
                .iter()
                .find(|t| (t.offset..t.offset + t.len()).contains(&i))
                .map_or_else(|| format!("#{i}"), |t| t.name.clone());
            return Err(Error::NonFiniteGradient(name));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in store
            .data
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_l1_values_and_kink() {
        assert_eq!(smooth_l1(0.0, 1.0), (0.0, 0.0));
        assert_eq!(smooth_l1(2.0, 1.0).0, 1.5);
        assert_eq!(smooth_l1(-2.0, 1.0), (1.5, -1.0));
        let below = smooth_l1(1.0 - 1e-12, 1.0);
        let above = smooth_l1(1.0, 1.0);
        assert!((below.0 - above.0).abs() < 1e-11);
        assert!((below.1 - 1.0).abs() < 1e-11 && above.1 == 1.0);
    }

    #[test]
    fn schedule_shape() {
        let lr = |e: f64| lr_schedule(e, 5e-4, 100, 200);
        assert_eq!(lr(0.0), 0.0);
        assert!((lr(50.0) - 2.5e-4).abs() < 1e-18);
        assert_eq!(lr(100.0), 5e-4);
        assert!((lr(200.0) - 2.5e-4).abs() < 1e-15);
        assert_eq!(lr(300.0), 0.0);
        let mut prev = 0.0;
        for k in 1..=100 {
            assert!(lr(k as f64) >= prev);
            prev = lr(k as f64);
        }
        for k in 101..=300 {
            assert!(lr(k as f64) <= prev);
            prev = lr(k as f64);
        }
    }

    fn store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.register("w", &[values.len()]);
        s.get_mut(id).copy_from_slice(values);
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store(&[1.0, -2.0]);
        let mut adam = Adam::new(2);
        adam.update(&mut s, &[0.0, 0.0], 1e-2).unwrap();
        assert_eq!(s.data, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_on_quadratic_matches_hand_value() {
        // f = x^2 + 3 y^2 at (1, 1): g = (2, 6). After one step m_hat = g and
        // v_hat = g^2, so each coordinate moves by lr * g / (|g| + eps).
        let mut s = store(&[1.0, 1.0]);
        let mut adam = Adam::new(2);
        adam.update(&mut s, &[2.0, 6.0], 0.1).unwrap();
        let want = [
            1.0 - 0.1 * 2.0 / (2.0 + 1e-8),
            1.0 - 0.1 * 6.0 / (6.0 + 1e-8),
        ];
        for (a, b) in s.data.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_gradient_moves_by_lr() {
        let mut s = store(&[0.0]);
        let mut adam = Adam::new(1);
        let mut last = 0.0;
        for _ in 0..2000 {
            let before = s.data[0];
            adam.update(&mut s, &[3.7], 1e-3).unwrap();
            last = before - s.data[0];
        }
        assert!((last - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut s = store(&[1.0, 2.0]);
        let mut adam = Adam::new(2);
        let err = adam.update(&mut s, &[0.0, f64::NAN], 1e-3).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "w"));
        assert_eq!(s.data, vec![1.0, 2.0]);
        assert_eq!(adam.step, 0);
    }
}
