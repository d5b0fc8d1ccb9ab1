//! Adaptive-moment optimizer over flat parameter tensors.

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam state for one tensor. Structural changes (splits, replicated
/// networks) reset the moments via `reset`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub hyper: AdamHyper,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(hyper: AdamHyper, len: usize) -> Self {
        Self {
            hyper,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.t = 0;
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grads.len(), self.m.len());
        if self.hyper.lr == 0.0 {
            return;
        }
        self.t += 1;
        let b1 = self.hyper.beta1;
        let b2 = self.hyper.beta2;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.hyper.lr * m_hat / (v_hat.sqrt() + self.hyper.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_learning_rate_is_a_bitexact_noop() {
        let mut opt = Adam::new(AdamHyper::with_lr(0.0), 3);
        let mut p = vec![0.1, -0.2, 0.3];
        let before = p.clone();
        opt.step(&mut p, &[1.0, -2.0, 3.0]);
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_roughly_lr() {
        let mut opt = Adam::new(AdamHyper::with_lr(0.01), 1);
        let mut p = vec![1.0];
        opt.step(&mut p, &[5.0]);
        // m_hat = g, v_hat = g^2: update ~ lr * sign(g).
        assert_relative_eq!(p[0], 1.0 - 0.01, epsilon = 1e-6);
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut opt = Adam::new(AdamHyper::with_lr(0.05), 2);
        let mut p = vec![3.0, -4.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (p[0] - 1.0), 2.0 * (p[1] + 2.0)];
            opt.step(&mut p, &g);
        }
        assert_relative_eq!(p[0], 1.0, epsilon = 1e-4);
        assert_relative_eq!(p[1], -2.0, epsilon = 1e-4);
    }

    #[test]
    fn reset_clears_momentum() {
        let mut opt = Adam::new(AdamHyper::with_lr(0.1), 1);
        let mut p = vec![0.0];
        opt.step(&mut p, &[1.0]);
        opt.reset();
        let fresh = Adam::new(AdamHyper::with_lr(0.1), 1);
        assert_eq!(opt, fresh);
    }
}
