//! Three-block convolutional trunk shared by the small image models.
//!
//! `conv3x3 -> lrelu -> avgpool2`, three times, then a fully connected
//! layer to a hidden vector. On a 32x32 input the pooled map is 4x4, so
//! the flattened dimension is `16 * final_channels`.

use ndarray::{Array1, Array3};
use rand::Rng;

use super::{leaky_relu, leaky_relu_grad, AvgPool2, Conv2d, Conv2dGrad, Dense, DenseGrad};

const SLOPE: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct ConvStack {
    pub convs: Vec<Conv2d>,
    pub fc: Dense,
}

/// Per-pass activations needed by the backward pass.
pub struct ConvStackCache {
    /// Input to each conv block.
    pub inputs: Vec<Array3<f64>>,
    /// Conv pre-activations.
    pub pre: Vec<Array3<f64>>,
    /// Post-activation maps (before pooling).
    pub post: Vec<Array3<f64>>,
    /// Flattened pooled map fed to the fully connected layer.
    pub flat: Array1<f64>,
    pub fc_pre: Array1<f64>,
    /// Hidden vector after the final LeakyReLU.
    pub hidden: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct ConvStackGrad {
    pub convs: Vec<Conv2dGrad>,
    pub fc: DenseGrad,
}

impl ConvStack {
    /// `channels` lists the output channels of each conv block.
    pub fn new<R: Rng>(
        in_channels: usize,
        channels: &[usize],
        input_size: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut convs = Vec::with_capacity(channels.len());
        let mut cin = in_channels;
        for &cout in channels {
            convs.push(Conv2d::new(3, cin, cout, rng));
            cin = cout;
        }
        let side = input_size >> channels.len();
        let flat_dim = side * side * cin;
        Self {
            convs,
            fc: Dense::new(flat_dim, hidden_dim, rng),
        }
    }

    pub fn forward(&self, x: &Array3<f64>) -> ConvStackCache {
        let mut inputs = Vec::with_capacity(self.convs.len());
        let mut pre = Vec::with_capacity(self.convs.len());
        let mut post = Vec::with_capacity(self.convs.len());
        let mut cur = x.clone();
        for conv in &self.convs {
            inputs.push(cur.clone());
            let z = conv.forward(&cur);
            let act = z.mapv(|v| leaky_relu(v, SLOPE));
            cur = AvgPool2.forward(&act);
            pre.push(z);
            post.push(act);
        }
        let flat = Array1::from_iter(cur.iter().copied());
        let fc_pre = self.fc.forward(&flat);
        let hidden = fc_pre.mapv(|v| leaky_relu(v, SLOPE));
        ConvStackCache {
            inputs,
            pre,
            post,
            flat,
            fc_pre,
            hidden,
        }
    }

    /// Backward from a hidden-vector gradient. Returns the input-image
    /// gradient; parameter gradients accumulate into `grad` when given.
    pub fn backward(
        &self,
        cache: &ConvStackCache,
        dhidden: &Array1<f64>,
        mut grad: Option<&mut ConvStackGrad>,
    ) -> Array3<f64> {
        let dfc_pre = Array1::from_shape_fn(dhidden.len(), |i| {
            dhidden[i] * leaky_relu_grad(cache.fc_pre[i], SLOPE)
        });
        let dflat = match grad.as_deref_mut() {
            Some(g) => self.fc.backward(&cache.flat, &dfc_pre, &mut g.fc),
            None => self.fc.backward_input(&dfc_pre),
        };
        let last_post = &cache.post[self.convs.len() - 1];
        let (ph, pw, pc) = (last_post.dim().0 / 2, last_post.dim().1 / 2, last_post.dim().2);
        let dpool = Array3::from_shape_vec((ph, pw, pc), dflat.to_vec()).expect("shape");
        let mut dcur = dpool;
        for bi in (0..self.convs.len()).rev() {
            let dact = AvgPool2.backward(&dcur);
            let dz = Array3::from_shape_fn(dact.dim(), |idx| {
                dact[idx] * leaky_relu_grad(cache.pre[bi][idx], SLOPE)
            });
            dcur = match grad.as_deref_mut() {
                Some(g) => self.convs[bi].backward(&cache.inputs[bi], &dz, &mut g.convs[bi]),
                None => {
                    self.convs[bi]
                        .backward_input(&dz, cache.inputs[bi].dim().0, cache.inputs[bi].dim().1)
                }
            };
        }
        dcur
    }

    pub fn zero_grad(&self) -> ConvStackGrad {
        ConvStackGrad {
            convs: self.convs.iter().map(|c| c.zero_grad()).collect(),
            fc: self.fc.zero_grad(),
        }
    }

    pub fn param_slices(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            out.extend(c.param_slices());
        }
        out.extend(self.fc.param_slices());
        out
    }

    pub fn param_values(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.extend(c.param_values());
        }
        out.extend(self.fc.param_values());
        out
    }
}

impl ConvStackGrad {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.extend(c.slices());
        }
        out.extend(self.fc.slices());
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for c in &mut self.convs {
            c.scale(factor);
        }
        self.fc.scale(factor);
    }
}
