//! AdamW with decoupled weight decay.
//!
//! Parameters are updated functionally: each step reads the parameter's
//! accumulated gradient, computes the new value, and rebinds the slot to a
//! fresh tensor (with a zeroed gradient buffer), so values seen by earlier
//! graphs are never mutated in place.

use super::Tensor;
use crate::error::{Error, Result};

/// First/second-moment state for one parameter.
struct Slot {
    m: Vec<f32>,
    v: Vec<f32>,
}

pub struct AdamW {
    pub lr: f32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f32,
    step: u64,
    slots: Vec<Slot>,
}

impl AdamW {
    /// Optimizer with the stated learning rate and decay; betas 0.9/0.999,
    /// epsilon 1e-8.
    pub fn new(lr: f32, weight_decay: f32) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            slots: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update to every parameter, in slice order. Moment buffers
    /// are allocated on the first call and must stay congruent afterwards.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.slots.is_empty() && !params.is_empty() {
            self.slots = params
                .iter()
                .map(|p| Slot {
                    m: vec![0.0; p.numel()],
                    v: vec![0.0; p.numel()],
                })
                .collect();
        }
        if self.slots.len() != params.len() {
            return Err(Error::Config(format!(
                "optimizer was initialized with {} parameters, stepped with {}",
                self.slots.len(),
                params.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let lr = f64::from(self.lr);
        let decay_mul = 1.0 - self.lr * self.weight_decay;
        for (slot, param) in self.slots.iter_mut().zip(params.iter_mut()) {
            let grad = param.grad().ok_or_else(|| {
                Error::Config("optimizer parameter has no gradient buffer".into())
            })?;
            if grad.len() != slot.m.len() {
                return Err(Error::Shape(format!(
                    "optimizer slot holds {} elements, parameter has {}",
                    slot.m.len(),
                    grad.len()
                )));
            }
            let mut next = param.data().to_vec();
            for i in 0..grad.len() {
                let g = f64::from(grad[i]);
                let m = self.beta1 * f64::from(slot.m[i]) + (1.0 - self.beta1) * g;
                let v = self.beta2 * f64::from(slot.v[i]) + (1.0 - self.beta2) * g * g;
                slot.m[i] = m as f32;
                slot.v[i] = v as f32;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                let update = (lr * m_hat / (v_hat.sqrt() + self.eps)) as f32;
                // A zero step must be exactly +0.0: subtracting -0.0 would
                // flip the sign bit of a -0.0 parameter.
                let update = if update == 0.0 { 0.0 } else { update };
                next[i] = next[i] * decay_mul - update;
            }
            **param = param.replace_data(next);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;
    use crate::tensor::tape::{backward, Tape};

    /// Run one forward/backward of loss = mse(w ⊙ x, y) and return w's grad.
    fn grads_for(w: &Tensor, x: &[f32], y: &[f32]) -> Vec<f32> {
        let tape = Tape::new();
        let xt = Tensor::from_vec(&[1, x.len()], x.to_vec()).unwrap();
        let yt = Tensor::from_vec(&[1, y.len()], y.to_vec()).unwrap();
        // elementwise product via diagonal trick: w is [1,n]; use add of
        // scaled pieces is overkill — a plain matmul with diag(x) works.
        let mut diag = vec![0.0f32; x.len() * x.len()];
        for (i, &v) in x.iter().enumerate() {
            diag[i * x.len() + i] = v;
        }
        let d = Tensor::from_vec(&[x.len(), x.len()], diag).unwrap();
        let pred = ops::matmul(&tape, w, &d).unwrap();
        let loss = ops::mse_loss(&tape, &pred, &yt).unwrap();
        backward(&loss, &tape).unwrap();
        drop(xt);
        w.grad().unwrap()
    }

    #[test]
    fn single_step_matches_hand_computation() {
        let mut w = Tensor::from_vec(&[1, 1], vec![0.5]).unwrap().with_grad();
        let g = {
            let tape = Tape::new();
            let x = Tensor::from_vec(&[1, 1], vec![2.0]).unwrap();
            let y = Tensor::from_vec(&[1, 1], vec![0.0]).unwrap();
            let pred = ops::matmul(&tape, &w, &x).unwrap();
            let loss = ops::mse_loss(&tape, &pred, &y).unwrap();
            backward(&loss, &tape).unwrap();
            w.grad().unwrap()[0]
        };
        assert!((g - 4.0).abs() < 1e-6); // 2 * x * (w*x - y) = 2*2*1
        let mut opt = AdamW::new(1e-3, 0.05);
        opt.step(&mut [&mut w]).unwrap();
        // Hand state: m = 0.1*g, v = 0.001*g^2, mhat = g, vhat = g^2,
        // update = lr * g / (|g| + eps); decay first: 0.5 * (1 - lr*wd).
        let expect = 0.5 * (1.0 - 1e-3 * 0.05) - 1e-3 * (4.0 / (4.0 + 1e-8));
        let got = f64::from(w.data()[0]);
        // width of one f32 ulp around 0.5 dominates the error budget
        assert!((got - expect).abs() < 1e-6, "{got} vs {expect}");
    }

    #[test]
    fn zero_learning_rate_keeps_bits() {
        let before = vec![0.25f32, -1.5, 3.0e-7, -0.0];
        let mut w = Tensor::from_vec(&[1, 4], before.clone()).unwrap().with_grad();
        let mut opt = AdamW::new(0.0, 0.05);
        for _ in 0..3 {
            let g = grads_for(&w, &[1.0, -2.0, 0.5, 4.0], &[0.3, 0.1, -0.2, 0.9]);
            assert!(g.iter().any(|&v| v != 0.0));
            opt.step(&mut [&mut w]).unwrap();
            w.zero_grad();
        }
        let after = w.data();
        for (a, b) in before.iter().zip(after) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn zero_grad_applies_pure_decay() {
        let mut w = Tensor::from_vec(&[1, 1], vec![2.0]).unwrap().with_grad();
        let mut opt = AdamW::new(0.1, 0.5);
        opt.step(&mut [&mut w]).unwrap();
        let expect = 2.0 * (1.0 - 0.1 * 0.5);
        assert!((w.data()[0] - expect).abs() < 1e-7);
    }

    #[test]
    fn descends_on_quadratic() {
        // minimize (w*2)^2 — gradient always points back toward zero.
        let mut w = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap().with_grad();
        let mut opt = AdamW::new(0.05, 0.0);
        let mut last = f32::MAX;
        for _ in 0..50 {
            let tape = Tape::new();
            let x = Tensor::from_vec(&[1, 1], vec![2.0]).unwrap();
            let y = Tensor::from_vec(&[1, 1], vec![0.0]).unwrap();
            let pred = ops::matmul(&tape, &w, &x).unwrap();
            let loss = ops::mse_loss(&tape, &pred, &y).unwrap();
            backward(&loss, &tape).unwrap();
            opt.step(&mut [&mut w]).unwrap();
            last = loss.item().unwrap();
        }
        assert!(last < 0.05, "loss stayed at {last}");
        assert!(w.data()[0].abs() < 0.5);
    }

    #[test]
    fn rejects_parameter_count_change() {
        let mut a = Tensor::from_vec(&[1], vec![1.0]).unwrap().with_grad();
        let mut b = Tensor::from_vec(&[1], vec![1.0]).unwrap().with_grad();
        a.accumulate_grad(&[1.0]);
        b.accumulate_grad(&[1.0]);
        let mut opt = AdamW::new(0.1, 0.0);
        opt.step(&mut [&mut a, &mut b]).unwrap();
        let err = opt.step(&mut [&mut a]).unwrap_err();
        assert!(err.to_string().contains("parameters"));
    }

    #[test]
    fn replaced_parameter_has_fresh_zero_grad() {
        let mut w = Tensor::from_vec(&[1], vec![1.0]).unwrap().with_grad();
        w.accumulate_grad(&[3.0]);
        let mut opt = AdamW::new(0.1, 0.0);
        opt.step(&mut [&mut w]).unwrap();
        assert_eq!(w.grad().unwrap(), vec![0.0]);
        assert!(w.requires_grad());
    }
}
