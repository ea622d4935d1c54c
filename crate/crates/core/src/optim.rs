//! Adam optimizer over a flat list of parameter matrices.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    /// One update. `params` and `grads` are parallel; grads must be finite.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        for g in grads {
            if !g.is_finite() {
                return Err(Error::NonFinite("gradient".into()));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in
            params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..g.data().len() {
                let gi = g.data()[i];
                m.data_mut()[i] = self.beta1 * m.data()[i] + (1.0 - self.beta1) * gi;
                v.data_mut()[i] = self.beta2 * v.data()[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m.data()[i] / bc1;
                let vhat = v.data()[i] / bc2;
                p.data_mut()[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut p = Matrix::from_rows(&[vec![1.0, -2.0]]);
        let before = p.clone();
        let g = Matrix::from_rows(&[vec![0.5, 0.5]]);
        let mut opt = Adam::new(0.0, &[(1, 2)]);
        opt.step(&mut [&mut p], &[g]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn descends_a_quadratic() {
        // f(x) = x^2, grad = 2x; Adam should drive x toward 0.
        let mut p = Matrix::scalar(3.0);
        let mut opt = Adam::new(0.1, &[(1, 1)]);
        for _ in 0..200 {
            let g = Matrix::scalar(2.0 * p.item());
            opt.step(&mut [&mut p], &[g]).unwrap();
        }
        assert!(p.item().abs() < 0.1, "got {}", p.item());
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let mut p = Matrix::scalar(1.0);
        let mut opt = Adam::new(0.1, &[(1, 1)]);
        let err = opt.step(&mut [&mut p], &[Matrix::scalar(f64::NAN)]);
        assert!(err.is_err());
    }
}
