use crate::error::{Error, Result};

/// Adaptive-moment optimizer state over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::SizeMismatch {
                expected: self.m.len(),
                got: params.len().min(grads.len()),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("optimizer gradient".into()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut adam = Adam::new(3, 1e-2);
        let mut p = vec![1.0, -2.0, 0.5];
        for _ in 0..10 {
            adam.step(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn constant_gradient_moves_by_lr_times_sign() {
        let mut adam = Adam::new(2, 1e-3);
        let mut p = vec![0.0, 0.0];
        let mut prev = p.clone();
        for _ in 0..2000 {
            prev.clone_from(&p);
            adam.step(&mut p, &[3.0, -0.2]).unwrap();
        }
        assert!((p[0] - prev[0] + 1e-3).abs() < 1e-9);
        assert!((p[1] - prev[1] - 1e-3).abs() < 1e-8);
    }

    #[test]
    fn quadratic_converges() {
        let mut adam = Adam::new(1, 1e-2);
        let mut p: Vec<f64> = vec![3.0];
        let mut steps = 0;
        while (p[0] - 0.7).abs() >= 1e-6 && steps < 5000 {
            let g = [2.0 * (p[0] - 0.7)];
            adam.step(&mut p, &g).unwrap();
            steps += 1;
        }
        assert!((p[0] - 0.7).abs() < 1e-6, "{} after {steps}", p[0]);
    }
}
