use super::{cast, EmbeddingNetParams, Scalar};
use crate::error::{Error, Result};

/// Adam moments and hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState {
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut EmbeddingNetParams<T>, grads: &EmbeddingNetParams<T>) -> Result<()> {
        let n = params.values.len();
        if grads.values.len() != n || self.m.len() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{n} parameters"),
                got: format!("{} gradients, {} moments", grads.values.len(), self.m.len()),
            });
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let (b1t, b2t): (T, T) = (cast(b1), cast(b2));
        let (one_b1, one_b2): (T, T) = (cast(1.0 - b1), cast(1.0 - b2));
        let (inv_bc1, inv_bc2): (T, T) = (cast(1.0 / bc1), cast(1.0 / bc2));
        let (lr, eps): (T, T) = (cast(self.lr), cast(self.eps));

        for i in 0..n {
            let g = grads.values[i];
            self.m[i] = b1t * self.m[i] + one_b1 * g;
            self.v[i] = b2t * self.v[i] + one_b2 * g * g;
            let m_hat = self.m[i] * inv_bc1;
            let v_hat = self.v[i] * inv_bc2;
            params.values[i] = params.values[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{ArchConfig, ConvBlock};
    use super::*;

    fn params(vals: &[f64]) -> EmbeddingNetParams<f64> {
        // smallest valid arch: 1 channel, len 1, no conv blocks, dim 2 -> 2*1 + 2 params
        let arch = ArchConfig {
            input_channels: 1,
            input_len: 1,
            blocks: Vec::<ConvBlock>::new(),
            embedding_dim: 2,
            l2_normalize_output: false,
        };
        let mut p = EmbeddingNetParams::zeros(&arch).unwrap();
        p.values.copy_from_slice(vals);
        p
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = params(&[1.0, -2.0, 0.5, 3.0]);
        let before = p.clone();
        let g = p.zeros_like();
        let mut s = AdamState::new(4, 1e-4);
        s.step(&mut p, &g).unwrap();
        assert_eq!(p.values, before.values);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_closed_form() {
        // m_hat = g and v_hat = g^2, so w -= lr * g / (|g| + eps)
        let mut p = params(&[1.0, 1.0, 1.0, 1.0]);
        let mut g = p.zeros_like();
        g.values = vec![0.5, 0.5, -0.25, 0.0];
        let mut s = AdamState::new(4, 1e-4);
        s.step(&mut p, &g).unwrap();
        let expected = 1.0 - 1e-4 * 0.5 / (0.5 + 1e-8);
        assert!((p.values[0] - expected).abs() <= 1e-15);
        assert_eq!(p.values[0], p.values[1]);
        let expected = 1.0 + 1e-4 * 0.25 / (0.25 + 1e-8);
        assert!((p.values[2] - expected).abs() <= 1e-15);
        assert_eq!(p.values[3], 1.0);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = params(&[0.0; 4]);
        let g = p.zeros_like();
        let mut s = AdamState::<f64>::new(3, 1e-4);
        assert!(s.step(&mut p, &g).is_err());
    }
}
