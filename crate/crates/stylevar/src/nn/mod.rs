//! Small hand-rolled neural-network engine.
//!
//! Every layer exposes an explicit forward pass and an explicit backward
//! pass (input gradient plus parameter gradients), so the attack code can
//! chain exact vector-Jacobian products through detector, generator, and
//! discriminator without an autograd framework. Image tensors are
//! `(height, width, channels)` in row-major order; all math is `f64`.

mod conv;
mod dense;
mod stack;

pub use conv::{AvgPool2, Conv2d, Conv2dGrad};
pub use dense::{Dense, DenseGrad};
pub use stack::{ConvStack, ConvStackCache, ConvStackGrad};

use ndarray::{Array1, Array3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// LeakyReLU slope used by the mapping network (fixed by contract).
pub const MAPPING_LRELU_SLOPE: f64 = 0.2;

#[inline]
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

/// Derivative of LeakyReLU with respect to its input, evaluated from the
/// pre-activation value.
#[inline]
pub fn leaky_relu_grad(pre: f64, slope: f64) -> f64 {
    if pre >= 0.0 {
        1.0
    } else {
        slope
    }
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

/// Numerically stable `ln(1 + exp(x))`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Binary cross-entropy on a logit against a 0/1 target:
/// `softplus(logit) - target * logit`.
#[inline]
pub fn bce_with_logit(logit: f64, target: f64) -> f64 {
    softplus(logit) - target * logit
}

/// Gradient of [`bce_with_logit`] with respect to the logit.
#[inline]
pub fn bce_with_logit_grad(logit: f64, target: f64) -> f64 {
    sigmoid(logit) - target
}

/// He-style normal init scaled for LeakyReLU fan-in.
pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

pub fn sample_normal<R: Rng>(rng: &mut R, std: f64) -> f64 {
    let v: f64 = StandardNormal.sample(rng);
    v * std
}

/// Nearest-neighbor 2x upsampling of an `(H, W, C)` tensor.
pub fn upsample2(x: &Array3<f64>) -> Array3<f64> {
    let (h, w, c) = x.dim();
    Array3::from_shape_fn((h * 2, w * 2, c), |(y, xq, ch)| x[[y / 2, xq / 2, ch]])
}

/// Backward of [`upsample2`]: each source pixel accumulates the gradient
/// of the four pixels it was replicated into.
pub fn upsample2_backward(dout: &Array3<f64>, in_h: usize, in_w: usize) -> Array3<f64> {
    let (_, _, c) = dout.dim();
    let mut dx = Array3::<f64>::zeros((in_h, in_w, c));
    for y in 0..in_h * 2 {
        for xq in 0..in_w * 2 {
            for ch in 0..c {
                dx[[y / 2, xq / 2, ch]] += dout[[y, xq, ch]];
            }
        }
    }
    dx
}

/// Adam optimizer over a flat list of parameter slices.
///
/// Callers pass the parameter slices and matching gradient slices in a
/// stable order; the moment buffers are laid out once on first use.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            beta1,
            beta2,
            ..Self::new(lr)
        }
    }

    /// One update step. `params` and `grads` must align element for
    /// element across calls.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), grads.len(), "param/grad slice count mismatch");
        let total: usize = params.iter().map(|p| p.len()).sum();
        if self.m.is_empty() {
            self.m = vec![0.0; total];
            self.v = vec![0.0; total];
        }
        assert_eq!(self.m.len(), total, "parameter layout changed between steps");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut off = 0;
        for (p, g) in params.iter_mut().zip(grads.iter()) {
            assert_eq!(p.len(), g.len());
            for i in 0..p.len() {
                let gi = g[i];
                let m = &mut self.m[off + i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
                let v = &mut self.v[off + i];
                *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            off += p.len();
        }
    }
}

/// Adam over a single flat vector (used when optimizing a latent code
/// rather than network parameters).
#[derive(Debug, Clone)]
pub struct AdamVec {
    inner: Adam,
}

impl AdamVec {
    pub fn new(lr: f64) -> Self {
        Self { inner: Adam::new(lr) }
    }

    pub fn step(&mut self, params: &mut Array1<f64>, grads: &Array1<f64>) {
        let p = params.as_slice_mut().expect("contiguous");
        let g = grads.as_slice().expect("contiguous");
        self.inner.step(&mut [p], &[g]);
    }
}
