//! Closed-form batched kernels for the training loop.
//!
//! Batches are row-major `B × d` matrices (one sample per row). For the
//! potential network the kernels compute the input gradient `∂y/∂x` for the
//! whole batch and then back-propagate an upstream adjoint on that gradient
//! into the parameters, which is the double-backward pass the loss needs.
//! The tape engine computes the same quantities node by node; the tests in
//! `dynamics` check the two against each other.

use super::{DirectNet, PotentialNet};
use crate::linalg::{add_col_sums, add_row_bias, gemm, Op};

/// Activations kept from [`PotentialNet::batch_input_grad`].
pub struct PotentialCache {
    batch: usize,
    h1: Vec<f64>,
    t2: Vec<f64>,
    e2: Vec<f64>,
    gh1: Vec<f64>,
    e1: Vec<f64>,
}

/// Activations kept from [`DirectNet::batch_forward`].
pub struct DirectCache {
    batch: usize,
    h1: Vec<f64>,
    h2: Vec<f64>,
}

fn tanh_in_place(m: &mut [f64]) {
    m.iter_mut().for_each(|v| *v = v.tanh());
}

impl PotentialNet {
    /// Input gradients `∂y/∂x` for every row of `x` (`batch × input_dim`).
    pub fn batch_input_grad(&self, x: &[f64], batch: usize) -> (Vec<f64>, PotentialCache) {
        let d = self.input_dim();
        let h = self.hidden();
        assert_eq!(x.len(), batch * d);
        let w3 = &self.head.weights;

        let mut h1 = vec![0.0; batch * h];
        gemm(batch, d, h, x, Op::N, &self.layer1.weights, Op::T, 0.0, &mut h1);
        add_row_bias(&mut h1, &self.layer1.biases);
        tanh_in_place(&mut h1);

        let mut t2 = vec![0.0; batch * h];
        gemm(batch, h, h, &h1, Op::N, &self.layer2.weights, Op::T, 0.0, &mut t2);
        add_row_bias(&mut t2, &self.layer2.biases);
        tanh_in_place(&mut t2);

        // e2 = w3 ⊙ (1 - t2²): adjoint of the second pre-activation.
        let mut e2 = t2.clone();
        for row in e2.chunks_exact_mut(h) {
            row.iter_mut().zip(w3).for_each(|(t, w)| *t = w * (1.0 - *t * *t));
        }
        // gh1 = e2 W2 + w3 (the skip connection contributes w3 directly).
        let mut gh1 = vec![0.0; batch * h];
        for row in gh1.chunks_exact_mut(h) {
            row.copy_from_slice(w3);
        }
        gemm(batch, h, h, &e2, Op::N, &self.layer2.weights, Op::N, 1.0, &mut gh1);

        let mut e1 = gh1.clone();
        e1.iter_mut().zip(&h1).for_each(|(g, a)| *g *= 1.0 - a * a);

        let mut gx = vec![0.0; batch * d];
        gemm(batch, h, d, &e1, Op::N, &self.layer1.weights, Op::N, 0.0, &mut gx);

        let cache = PotentialCache {
            batch,
            h1,
            t2,
            e2,
            gh1,
            e1,
        };
        (gx, cache)
    }

    /// Accumulates into `grad` the parameter gradient of `Σ_b c_b · ∂y/∂x(x_b)`,
    /// i.e. back-propagates the upstream adjoint `c` (`batch × input_dim`)
    /// through [`PotentialNet::batch_input_grad`].
    pub fn batch_input_grad_backward(&self, x: &[f64], cache: &PotentialCache, c: &[f64], grad: &mut PotentialNet) {
        let d = self.input_dim();
        let h = self.hidden();
        let b = cache.batch;
        assert_eq!(c.len(), b * d);
        let w2 = &self.layer2.weights;
        let w3 = &self.head.weights;

        // gx = e1 W1
        gemm(h, b, d, &cache.e1, Op::T, c, Op::N, 1.0, &mut grad.layer1.weights);
        let mut e1_bar = vec![0.0; b * h];
        gemm(b, d, h, c, Op::N, &self.layer1.weights, Op::T, 0.0, &mut e1_bar);

        // e1 = gh1 ⊙ s1 with s1 = 1 - h1²
        let mut gh1_bar = vec![0.0; b * h];
        let mut h1_bar = vec![0.0; b * h];
        for i in 0..b * h {
            let a = cache.h1[i];
            gh1_bar[i] = e1_bar[i] * (1.0 - a * a);
            // through s1: ∂s1/∂h1 = -2 h1
            h1_bar[i] = -2.0 * a * (e1_bar[i] * cache.gh1[i]);
        }

        // gh1 = e2 W2 + w3
        gemm(h, b, h, &cache.e2, Op::T, &gh1_bar, Op::N, 1.0, &mut grad.layer2.weights);
        add_col_sums(&gh1_bar, &mut grad.head.weights);
        let mut e2_bar = vec![0.0; b * h];
        gemm(b, h, h, &gh1_bar, Op::N, w2, Op::T, 0.0, &mut e2_bar);

        // e2 = w3 ⊙ s2 with s2 = 1 - t2², t2 = tanh(a2)
        let mut a2_bar = vec![0.0; b * h];
        for (r, (ebar_row, t_row)) in e2_bar.chunks_exact(h).zip(cache.t2.chunks_exact(h)).enumerate() {
            let out = &mut a2_bar[r * h..(r + 1) * h];
            for j in 0..h {
                let t = t_row[j];
                let s2 = 1.0 - t * t;
                grad.head.weights[j] += ebar_row[j] * s2;
                let s2_bar = ebar_row[j] * w3[j];
                out[j] = -2.0 * t * s2_bar * s2;
            }
        }

        // a2 = h1 W2ᵀ + b2
        gemm(h, b, h, &a2_bar, Op::T, &cache.h1, Op::N, 1.0, &mut grad.layer2.weights);
        add_col_sums(&a2_bar, &mut grad.layer2.biases);
        gemm(b, h, h, &a2_bar, Op::N, w2, Op::N, 1.0, &mut h1_bar);

        // h1 = tanh(a1), a1 = x W1ᵀ + b1
        let mut a1_bar = h1_bar;
        a1_bar.iter_mut().zip(&cache.h1).for_each(|(g, a)| *g *= 1.0 - a * a);
        gemm(h, b, d, &a1_bar, Op::T, x, Op::N, 1.0, &mut grad.layer1.weights);
        add_col_sums(&a1_bar, &mut grad.layer1.biases);
    }
}

impl DirectNet {
    /// Outputs (`batch × 2`) for every row of `x`.
    pub fn batch_forward(&self, x: &[f64], batch: usize) -> (Vec<f64>, DirectCache) {
        let d = self.input_dim();
        let h = self.hidden();
        assert_eq!(x.len(), batch * d);

        let mut h1 = vec![0.0; batch * h];
        gemm(batch, d, h, x, Op::N, &self.layer1.weights, Op::T, 0.0, &mut h1);
        add_row_bias(&mut h1, &self.layer1.biases);
        tanh_in_place(&mut h1);

        let mut h2 = vec![0.0; batch * h];
        gemm(batch, h, h, &h1, Op::N, &self.layer2.weights, Op::T, 0.0, &mut h2);
        add_row_bias(&mut h2, &self.layer2.biases);
        tanh_in_place(&mut h2);

        let mut y = vec![0.0; batch * 2];
        gemm(batch, h, 2, &h2, Op::N, &self.head.weights, Op::T, 0.0, &mut y);
        add_row_bias(&mut y, &self.head.biases);
        (y, DirectCache { batch, h1, h2 })
    }

    /// Accumulates into `grad` the parameter gradient given the output
    /// adjoint `y_bar` (`batch × 2`).
    pub fn batch_backward(&self, x: &[f64], cache: &DirectCache, y_bar: &[f64], grad: &mut DirectNet) {
        let d = self.input_dim();
        let h = self.hidden();
        let b = cache.batch;
        assert_eq!(y_bar.len(), b * 2);

        gemm(2, b, h, y_bar, Op::T, &cache.h2, Op::N, 1.0, &mut grad.head.weights);
        add_col_sums(y_bar, &mut grad.head.biases);
        let mut a2_bar = vec![0.0; b * h];
        gemm(b, 2, h, y_bar, Op::N, &self.head.weights, Op::N, 0.0, &mut a2_bar);
        a2_bar.iter_mut().zip(&cache.h2).for_each(|(g, a)| *g *= 1.0 - a * a);

        gemm(h, b, h, &a2_bar, Op::T, &cache.h1, Op::N, 1.0, &mut grad.layer2.weights);
        add_col_sums(&a2_bar, &mut grad.layer2.biases);
        let mut a1_bar = vec![0.0; b * h];
        gemm(b, h, h, &a2_bar, Op::N, &self.layer2.weights, Op::N, 0.0, &mut a1_bar);
        a1_bar.iter_mut().zip(&cache.h1).for_each(|(g, a)| *g *= 1.0 - a * a);

        gemm(h, b, d, &a1_bar, Op::T, x, Op::N, 1.0, &mut grad.layer1.weights);
        add_col_sums(&a1_bar, &mut grad.layer1.biases);
    }
}
