//! Activations, pooling, resampling and dense layers with their backward passes.

use crate::grid::FeatureStack;
use crate::nn::conv::gemm;
use crate::nn::params::{Gradients, ParamId, ParamSet};

pub fn relu(x: &FeatureStack) -> FeatureStack {
    let mut y = x.clone();
    y.data.iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Backward through ReLU given its output.
pub fn relu_backward(y: &FeatureStack, dy: &FeatureStack) -> FeatureStack {
    let mut dx = dy.clone();
    for (d, &o) in dx.data.iter_mut().zip(&y.data) {
        if o <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

pub fn tanh(x: &FeatureStack) -> FeatureStack {
    let mut y = x.clone();
    y.data.iter_mut().for_each(|v| *v = v.tanh());
    y
}

/// Backward through tanh given its output.
pub fn tanh_backward(y: &FeatureStack, dy: &FeatureStack) -> FeatureStack {
    let mut dx = dy.clone();
    for (d, &o) in dx.data.iter_mut().zip(&y.data) {
        *d *= 1.0 - o * o;
    }
    dx
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// 2x2 max-pool, stride 2. Returns the pooled stack and the flat argmax of each output.
pub fn maxpool2(x: &FeatureStack) -> (FeatureStack, Vec<u32>) {
    let (c, h, w) = x.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut y = FeatureStack::zeros(c, oh, ow);
    let mut arg = vec![0u32; c * oh * ow];
    for ch in 0..c {
        for r in 0..oh {
            for col in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let i = (ch * h + 2 * r + dr) * w + 2 * col + dc;
                    if x.data[i] > best {
                        best = x.data[i];
                        best_i = i;
                    }
                }
                let o = (ch * oh + r) * ow + col;
                y.data[o] = best;
                arg[o] = best_i as u32;
            }
        }
    }
    (y, arg)
}

pub fn maxpool2_backward(input_shape: (usize, usize, usize), argmax: &[u32], dy: &FeatureStack) -> FeatureStack {
    let (c, h, w) = input_shape;
    let mut dx = FeatureStack::zeros(c, h, w);
    for (&i, &g) in argmax.iter().zip(&dy.data) {
        dx.data[i as usize] += g;
    }
    dx
}

/// Place each input pixel at the even positions of a twice-as-large zero grid.
///
/// Followed by a 3x3 "same" convolution this is a stride-2 transposed
/// convolution (kernel 3, padding 1, output padding 1) up to kernel flipping.
pub fn zero_insert2(x: &FeatureStack) -> FeatureStack {
    let (c, h, w) = x.shape();
    let mut y = FeatureStack::zeros(c, 2 * h, 2 * w);
    for ch in 0..c {
        for r in 0..h {
            for col in 0..w {
                y.data[(ch * 2 * h + 2 * r) * 2 * w + 2 * col] = x.get(ch, r, col);
            }
        }
    }
    y
}

pub fn zero_insert2_backward(dy: &FeatureStack) -> FeatureStack {
    let (c, h2, w2) = dy.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = FeatureStack::zeros(c, h, w);
    for ch in 0..c {
        for r in 0..h {
            for col in 0..w {
                dx.data[(ch * h + r) * w + col] = dy.data[(ch * h2 + 2 * r) * w2 + 2 * col];
            }
        }
    }
    dx
}

pub fn global_avg_pool(x: &FeatureStack) -> Vec<f64> {
    let n = x.plane_len() as f64;
    (0..x.channels).map(|c| x.channel(c).iter().sum::<f64>() / n).collect()
}

pub fn global_avg_pool_backward(shape: (usize, usize, usize), dy: &[f64]) -> FeatureStack {
    let (c, h, w) = shape;
    let n = (h * w) as f64;
    let mut dx = FeatureStack::zeros(c, h, w);
    for (ch, &g) in dy.iter().enumerate() {
        dx.data[ch * h * w..(ch + 1) * h * w].iter_mut().for_each(|v| *v = g / n);
    }
    dx
}

/// Dense layer `y = W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn forward(&self, params: &ParamSet, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input);
        let mut y = params.get(self.bias).to_vec();
        gemm(self.output, self.input, 1, params.get(self.weight), false, x, false, 1.0, &mut y);
        y
    }

    pub fn backward(&self, params: &ParamSet, x: &[f64], dy: &[f64], grads: &mut Gradients) -> Vec<f64> {
        gemm(self.output, 1, self.input, dy, false, x, false, 1.0, grads.slot_mut(params, self.weight));
        for (g, d) in grads.slot_mut(params, self.bias).iter_mut().zip(dy) {
            *g += d;
        }
        let mut dx = vec![0.0; self.input];
        gemm(self.input, self.output, 1, params.get(self.weight), true, dy, false, 0.0, &mut dx);
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Group;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let x = FeatureStack::from_vec(1, 2, 4, vec![1.0, 5.0, 0.0, -1.0, 2.0, 3.0, -2.0, -3.0]).unwrap();
        let (y, arg) = maxpool2(&x);
        assert_eq!(y.data, vec![5.0, 0.0]);
        let dx = maxpool2_backward(x.shape(), &arg, &FeatureStack::from_vec(1, 1, 2, vec![7.0, 9.0]).unwrap());
        assert_eq!(dx.data, vec![0.0, 7.0, 9.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_insert_round_trip() {
        let x = FeatureStack::from_vec(2, 2, 2, (1..=8).map(f64::from).collect()).unwrap();
        let y = zero_insert2(&x);
        assert_eq!(y.shape(), (2, 4, 4));
        assert_eq!(y.get(1, 2, 2), 8.0);
        assert_eq!(y.data.iter().filter(|&&v| v != 0.0).count(), 8);
        assert_eq!(zero_insert2_backward(&y), x);
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = ParamSet::new();
        let lin = Linear {
            weight: p.add("w", &[3, 4], Group::Dec, 1.0, &mut rng),
            bias: p.add("b", &[3], Group::Dec, 1.0, &mut rng),
            input: 4,
            output: 3,
        };
        let x = [0.3, -1.2, 0.8, 2.0];
        let dy = [1.0, -0.5, 0.25];
        let f = |p: &ParamSet, x: &[f64]| -> f64 { lin.forward(p, x).iter().zip(&dy).map(|(a, b)| a * b).sum() };
        let mut g = Gradients::zeros_like(&p);
        let dx = lin.backward(&p, &x, &dy, &mut g);
        let h = 1e-6;
        for i in 0..4 {
            let mut xp = x;
            xp[i] += h;
            let mut xm = x;
            xm[i] -= h;
            assert!(((f(&p, &xp) - f(&p, &xm)) / (2.0 * h) - dx[i]).abs() < 1e-8);
        }
        for i in 0..p.len() {
            let mut pp = p.clone();
            pp.values_mut()[i] += h;
            let mut pm = p.clone();
            pm.values_mut()[i] -= h;
            assert!(((f(&pp, &x) - f(&pm, &x)) / (2.0 * h) - g.values()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
