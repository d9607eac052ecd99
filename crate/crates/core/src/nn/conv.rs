//! Stride-1 "same" convolutions lowered to matrix products.

use crate::grid::FeatureStack;
use crate::nn::params::{Gradients, ParamId, ParamSet};

/// `c = alpha * op(a) * op(b) + beta * c` with row-major operands.
///
/// `op(a)` is `m x k`, `op(b)` is `k x n`; `*_t` selects the transposed view of
/// the stored matrix.
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfold `x` into a `(cin * k * k) x (h * w)` patch matrix with zero padding.
fn im2col(x: &FeatureStack, k: usize) -> Vec<f64> {
    let (cin, h, w) = x.shape();
    let pad = (k / 2) as i64;
    let hw = h * w;
    let mut cols = vec![0.0; cin * k * k * hw];
    for ci in 0..cin {
        let plane = x.channel(ci);
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((ci * k + ki) * k + kj) * hw..][..hw];
                let dr = ki as i64 - pad;
                let dc = kj as i64 - pad;
                for r in 0..h {
                    let sr = r as i64 + dr;
                    if sr < 0 || sr >= h as i64 {
                        continue;
                    }
                    let src = &plane[sr as usize * w..][..w];
                    let dst = &mut row[r * w..][..w];
                    let c0 = (-dc).max(0) as usize;
                    let c1 = (w as i64 - dc).min(w as i64).max(0) as usize;
                    for c in c0..c1 {
                        dst[c] = src[(c as i64 + dc) as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Fold a patch-matrix gradient back onto the input grid (adjoint of [`im2col`]).
fn col2im(cols: &[f64], cin: usize, h: usize, w: usize, k: usize) -> FeatureStack {
    let pad = (k / 2) as i64;
    let hw = h * w;
    let mut dx = FeatureStack::zeros(cin, h, w);
    for ci in 0..cin {
        let plane = &mut dx.data[ci * hw..][..hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((ci * k + ki) * k + kj) * hw..][..hw];
                let dr = ki as i64 - pad;
                let dc = kj as i64 - pad;
                for r in 0..h {
                    let sr = r as i64 + dr;
                    if sr < 0 || sr >= h as i64 {
                        continue;
                    }
                    let src = &row[r * w..][..w];
                    let dst = &mut plane[sr as usize * w..][..w];
                    let c0 = (-dc).max(0) as usize;
                    let c1 = (w as i64 - dc).min(w as i64).max(0) as usize;
                    for c in c0..c1 {
                        dst[(c as i64 + dc) as usize] += src[c];
                    }
                }
            }
        }
    }
    dx
}

/// Square-kernel convolution, stride 1, padding `k / 2`, optional bias.
#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl Conv2d {
    pub fn fan_in(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn forward(&self, params: &ParamSet, x: &FeatureStack) -> FeatureStack {
        debug_assert_eq!(x.channels, self.cin);
        let hw = x.plane_len();
        let mut y = FeatureStack::zeros(self.cout, x.height, x.width);
        let w = params.get(self.weight);
        if self.k == 1 {
            gemm(self.cout, self.cin, hw, w, false, &x.data, false, 0.0, &mut y.data);
        } else {
            let cols = im2col(x, self.k);
            gemm(self.cout, self.fan_in(), hw, w, false, &cols, false, 0.0, &mut y.data);
        }
        if let Some(b) = self.bias {
            for (plane, &bias) in y.data.chunks_exact_mut(hw).zip(params.get(b)) {
                plane.iter_mut().for_each(|v| *v += bias);
            }
        }
        y
    }

    /// Accumulate parameter gradients; return the input gradient when `need_dx`.
    pub fn backward(
        &self,
        params: &ParamSet,
        x: &FeatureStack,
        dy: &FeatureStack,
        grads: &mut Gradients,
        need_dx: bool,
    ) -> Option<FeatureStack> {
        let hw = x.plane_len();
        let fan_in = self.fan_in();
        let cols_owned;
        let cols: &[f64] = if self.k == 1 {
            &x.data
        } else {
            cols_owned = im2col(x, self.k);
            &cols_owned
        };
        gemm(self.cout, hw, fan_in, &dy.data, false, cols, true, 1.0, grads.slot_mut(params, self.weight));
        if let Some(b) = self.bias {
            for (g, plane) in grads.slot_mut(params, b).iter_mut().zip(dy.data.chunks_exact(hw)) {
                *g += plane.iter().sum::<f64>();
            }
        }
        if !need_dx {
            return None;
        }
        let w = params.get(self.weight);
        let mut dcols = vec![0.0; fan_in * hw];
        gemm(fan_in, self.cout, hw, w, true, &dy.data, false, 0.0, &mut dcols);
        if self.k == 1 {
            Some(FeatureStack {
                channels: self.cin,
                height: x.height,
                width: x.width,
                data: dcols,
            })
        } else {
            Some(col2im(&dcols, self.cin, x.height, x.width, self.k))
        }
    }
}
