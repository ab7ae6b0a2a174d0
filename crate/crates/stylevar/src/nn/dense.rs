//! Fully connected layer.

use ndarray::{Array1, Array2};
use rand::Rng;

use super::{he_std, sample_normal};

/// `y = W x + b` with `W` stored `(out, in)`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct DenseGrad {
    pub dw: Array2<f64>,
    pub db: Array1<f64>,
}

impl Dense {
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let std = he_std(in_dim);
        Self {
            w: Array2::from_shape_fn((out_dim, in_dim), |_| sample_normal(rng, std)),
            b: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn forward(&self, x: &Array1<f64>) -> Array1<f64> {
        self.w.dot(x) + &self.b
    }

    /// Returns the input gradient and accumulates parameter gradients
    /// into `grad`.
    pub fn backward(
        &self,
        x: &Array1<f64>,
        dout: &Array1<f64>,
        grad: &mut DenseGrad,
    ) -> Array1<f64> {
        for (o, &g) in dout.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let mut row = grad.dw.row_mut(o);
            row.scaled_add(g, x);
            grad.db[o] += g;
        }
        self.w.t().dot(dout)
    }

    /// Input gradient only, for frozen-parameter passes.
    pub fn backward_input(&self, dout: &Array1<f64>) -> Array1<f64> {
        self.w.t().dot(dout)
    }

    pub fn zero_grad(&self) -> DenseGrad {
        DenseGrad {
            dw: Array2::zeros(self.w.dim()),
            db: Array1::zeros(self.b.len()),
        }
    }

    pub fn param_slices(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w.as_slice_mut().expect("contiguous"),
            self.b.as_slice_mut().expect("contiguous"),
        ]
    }

    pub fn param_values(&self) -> Vec<&[f64]> {
        vec![
            self.w.as_slice().expect("contiguous"),
            self.b.as_slice().expect("contiguous"),
        ]
    }
}

impl DenseGrad {
    pub fn slices(&self) -> Vec<&[f64]> {
        vec![
            self.dw.as_slice().expect("contiguous"),
            self.db.as_slice().expect("contiguous"),
        ]
    }

    pub fn scale(&mut self, factor: f64) {
        self.dw.mapv_inplace(|v| v * factor);
        self.db.mapv_inplace(|v| v * factor);
    }
}
