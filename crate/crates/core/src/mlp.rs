//! Minimal fully-connected network with manual reverse-mode gradients.
//!
//! Hidden layers use ReLU; the output head is linear. Weights live in
//! flat row-major buffers so the optimizer can treat each layer as one
//! tensor.

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// Row-major (out_dim x in_dim).
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    fn forward(&self, input: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(input.len(), self.in_dim);
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            out.push(acc);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Layer inputs saved during a cached forward pass (post-activation for
/// hidden layers), plus pre-activations for the ReLU masks.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
    pre_acts: Vec<Vec<f64>>,
}

/// Per-layer (d_weight, d_bias) in the same flat layout as `Linear`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl MlpGrad {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrad) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.0.iter_mut().zip(&b.0) {
                *x += y;
            }
            for (x, y) in a.1.iter_mut().zip(&b.1) {
                *x += y;
            }
        }
    }
}

impl Mlp {
    /// He-initialized network with the given layer sizes, e.g.
    /// `[in, hidden, hidden, out]`.
    pub fn new<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let std = (2.0 / fan_in as f64).sqrt();
                Linear {
                    weight: (0..fan_in * fan_out)
                        .map(|_| {
                            // Box-Muller: two uniforms to one normal sample.
                            let u1: f64 = rng.random_range(1e-12..1.0);
                            let u2: f64 = rng.random_range(0.0..1.0);
                            std * (-2.0 * u1.ln()).sqrt()
                                * (2.0 * std::f64::consts::PI * u2).cos()
                        })
                        .collect(),
                    bias: vec![0.0; fan_out],
                    in_dim: fan_in,
                    out_dim: fan_out,
                }
            })
            .collect();
        Self { layers }
    }

    /// Zero the output head so the network starts as the zero function.
    pub fn zero_output_head(&mut self) {
        let last = self.layers.last_mut().expect("at least one layer");
        last.weight.iter_mut().for_each(|w| *w = 0.0);
        last.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().expect("non-empty").in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward(&cur, &mut next);
            if i != last {
                for v in next.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn forward_cached(&self, input: &[f64]) -> (Vec<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_acts = Vec::with_capacity(self.layers.len().saturating_sub(1));
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            inputs.push(cur.clone());
            layer.forward(&cur, &mut next);
            if i != last {
                pre_acts.push(next.clone());
                for v in next.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        (cur, MlpCache { inputs, pre_acts })
    }

    /// Exact reverse-mode pass: returns the input cotangent and the
    /// per-layer weight/bias gradients.
    pub fn backward(&self, cache: &MlpCache, d_out: &[f64]) -> (Vec<f64>, MlpGrad) {
        debug_assert_eq!(d_out.len(), self.out_dim());
        let mut grad = MlpGrad::zeros_like(self);
        let mut delta = d_out.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            // ReLU mask applies to this layer's *output* except for the head.
            if i != last {
                for (d, z) in delta.iter_mut().zip(&cache.pre_acts[i]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &cache.inputs[i];
            let (d_w, d_b) = &mut grad.layers[i];
            for o in 0..layer.out_dim {
                d_b[o] += delta[o];
                let row = &mut d_w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (slot, x) in row.iter_mut().zip(input) {
                    *slot += delta[o] * x;
                }
            }
            let mut d_in = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (slot, w) in d_in.iter_mut().zip(row) {
                    *slot += delta[o] * w;
                }
            }
            delta = d_in;
        }
        (delta, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_head_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut mlp = Mlp::new(&[4, 8, 8, 3], &mut rng);
        mlp.zero_output_head();
        let out = mlp.forward(&[0.3, -0.7, 1.2, 0.0]);
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn forward_matches_hand_evaluation() {
        // 2 -> 2 -> 1 with fixed weights, evaluated with independent
        // nested-loop arithmetic in the test.
        let mlp = Mlp {
            layers: vec![
                Linear {
                    weight: vec![0.5, -0.25, 0.1, 0.75],
                    bias: vec![0.1, -0.2],
                    in_dim: 2,
                    out_dim: 2,
                },
                Linear {
                    weight: vec![1.5, -2.0],
                    bias: vec![0.05],
                    in_dim: 2,
                    out_dim: 1,
                },
            ],
        };
        let x = [0.4f64, -0.6];
        let h0 = (0.5 * x[0] - 0.25 * x[1] + 0.1).max(0.0);
        let h1 = (0.1 * x[0] + 0.75 * x[1] - 0.2).max(0.0);
        let expect = 1.5 * h0 - 2.0 * h1 + 0.05;
        assert_relative_eq!(mlp.forward(&x)[0], expect, epsilon = 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mlp = Mlp::new(&[3, 6, 6, 2], &mut rng);
        let input = [0.3, -0.8, 1.1];
        let d_out = [0.7, -0.4];

        let (_, cache) = mlp.forward_cached(&input);
        let (d_input, grad) = mlp.backward(&cache, &d_out);

        let loss = |m: &Mlp, inp: &[f64]| -> f64 {
            m.forward(inp)
                .iter()
                .zip(&d_out)
                .map(|(o, d)| o * d)
                .sum()
        };

        let h = 1e-6;
        for k in 0..3 {
            let mut ip = input;
            ip[k] += h;
            let mut im = input;
            im[k] -= h;
            let fd = (loss(&mlp, &ip) - loss(&mlp, &im)) / (2.0 * h);
            assert_relative_eq!(d_input[k], fd, epsilon = 1e-7, max_relative = 1e-6);
        }
        for li in 0..mlp.layers.len() {
            for wi in 0..mlp.layers[li].weight.len() {
                let mut mp = mlp.clone();
                mp.layers[li].weight[wi] += h;
                let mut mm = mlp.clone();
                mm.layers[li].weight[wi] -= h;
                let fd = (loss(&mp, &input) - loss(&mm, &input)) / (2.0 * h);
                assert_relative_eq!(grad.layers[li].0[wi], fd, epsilon = 1e-7, max_relative = 1e-6);
            }
            for bi in 0..mlp.layers[li].bias.len() {
                let mut mp = mlp.clone();
                mp.layers[li].bias[bi] += h;
                let mut mm = mlp.clone();
                mm.layers[li].bias[bi] -= h;
                let fd = (loss(&mp, &input) - loss(&mm, &input)) / (2.0 * h);
                assert_relative_eq!(grad.layers[li].1[bi], fd, epsilon = 1e-7, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn deterministic_init() {
        let a = Mlp::new(&[4, 16, 2], &mut ChaCha8Rng::seed_from_u64(42));
        let b = Mlp::new(&[4, 16, 2], &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
    }
}
