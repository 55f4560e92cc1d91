use crate::error::{Error, Result};

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
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
    pub fn new(num_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update. A non-finite gradient leaves both the
    /// parameters and the state untouched and returns
    /// [`Error::TrainingDiverged`].
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                context: "adam parameter count",
                expected: self.m.len(),
                found: if params.len() != self.m.len() {
                    params.len()
                } else {
                    grads.len()
                },
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged {
                last_finite_epoch: 0,
            });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut opt = Adam::new(3, 0.1);
        let mut p = vec![1.0, -2.0, 0.5];
        opt.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn one_step_descends_quadratic() {
        let mut opt = Adam::new(1, 0.1);
        let mut w = [1.0];
        let g = [2.0 * w[0]];
        opt.step(&mut w, &g).unwrap();
        assert!(w[0] < 1.0);
    }

    #[test]
    fn ten_steps_match_hand_recurrence() {
        let mut opt = Adam::new(1, 0.3);
        let mut w = [0.0];
        // independent scalar recurrence
        let (mut m, mut v, mut wh) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=10 {
            let g = 2.0 * (w[0] - 3.0);
            opt.step(&mut w, &[g]).unwrap();
            let gh = 2.0 * (wh - 3.0);
            m = 0.9 * m + 0.1 * gh;
            v = 0.999 * v + 0.001 * gh * gh;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            wh -= 0.3 * mh / (vh.sqrt() + 1e-8);
            assert!((w[0] - wh).abs() < 1e-12, "step {t}: {} vs {wh}", w[0]);
        }
        assert!((w[0] - 3.0).abs() < 3.0);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut opt = Adam::new(2, 0.1);
        let mut p = vec![1.0, 1.0];
        assert!(matches!(
            opt.step(&mut p, &[f64::NAN, 0.0]),
            Err(Error::TrainingDiverged { .. })
        ));
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!(opt.steps(), 0);
    }
}
