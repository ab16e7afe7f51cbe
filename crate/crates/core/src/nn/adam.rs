/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. `params` and `grads` must list tensors in the same order
    /// on every call.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient tensor count");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.epsilon);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.len(), g.len());
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut adam = Adam::new(1e-3);
        let mut p = [0.5];
        adam.step(vec![&mut p], vec![&[1.0]]);
        assert!((p[0] - (0.5 - 1e-3)).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut adam = Adam::new(0.1);
        let mut p = [1.0, -2.0];
        for _ in 0..50 {
            adam.step(vec![&mut p], vec![&[0.0, 0.0]]);
        }
        assert_eq!(p, [1.0, -2.0]);
    }

    #[test]
    fn identical_runs_agree() {
        let run = || {
            let mut adam = Adam::new(0.01);
            let mut p = [0.3, 0.7];
            for i in 0..20 {
                let g = [p[0] - 1.0 + i as f64 * 0.01, 2.0 * p[1]];
                adam.step(vec![&mut p], vec![&g]);
            }
            p
        };
        assert_eq!(run(), run());
    }
}
