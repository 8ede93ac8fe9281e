//! Adam with bias correction.

use super::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

/// First/second moment state for a fixed list of parameter tensors.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Adam {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let first: Vec<Matrix> = params
            .into_iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Adam {
            config,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates `params[i]` from `grads[i]`, then zeroes every gradient.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &mut [Matrix]) {
        assert_eq!(params.len(), self.first.len(), "parameter list changed");
        assert_eq!(grads.len(), self.first.len(), "gradient list changed");
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads.iter_mut())
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            debug_assert_eq!(p.shape(), g.shape());
            for (((pv, gv), mv), vv) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
            g.fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut p = Matrix::from_vec(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::default(), [&p]);
        let mut grads = vec![Matrix::zeros(1, 3)];
        for _ in 0..5 {
            adam.step(&mut [&mut p], &mut grads);
        }
        assert!(p.bit_eq(&before));
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Matrix::scalar(1.0);
        let mut adam = Adam::new(AdamConfig::with_lr(0.001), [&p]);
        let mut grads = vec![Matrix::scalar(1.0)];
        adam.step(&mut [&mut p], &mut grads);
        let moved = 1.0 - p.item().unwrap();
        assert!((moved - 0.001).abs() < 1e-9, "moved {moved}");
        assert_eq!(grads[0].item(), Some(0.0));
    }

    #[test]
    fn descends_a_quadratic() {
        let mut x = Matrix::scalar(1.0);
        let mut adam = Adam::new(AdamConfig::with_lr(0.001), [&x]);
        for _ in 0..100 {
            let mut g = vec![Matrix::scalar(2.0 * x.item().unwrap())];
            adam.step(&mut [&mut x], &mut g);
        }
        assert!(x.item().unwrap().abs() < 1.0);
    }
}
