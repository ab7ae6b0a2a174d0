//! 2-D convolution and pooling on `(H, W, C)` tensors.
//!
//! Direct (no im2col) same-padding, stride-1 convolution. The inner loop
//! runs over the output-channel axis of a `(KH, KW, Cin, Cout)` weight
//! tensor, which is contiguous and autovectorizes well enough for the
//! image sizes used here.

use ndarray::{Array1, Array3, Array4};
use rand::Rng;

use super::{he_std, sample_normal};

#[derive(Debug, Clone)]
pub struct Conv2d {
    /// Weights, `(kh, kw, cin, cout)`.
    pub w: Array4<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct Conv2dGrad {
    pub dw: Array4<f64>,
    pub db: Array1<f64>,
}

impl Conv2d {
    /// Square odd kernel (1 or 3 here), He-normal init.
    pub fn new<R: Rng>(kernel: usize, cin: usize, cout: usize, rng: &mut R) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd for same padding");
        let std = he_std(kernel * kernel * cin);
        Self {
            w: Array4::from_shape_fn((kernel, kernel, cin, cout), |_| sample_normal(rng, std)),
            b: Array1::zeros(cout),
        }
    }

    pub fn kernel(&self) -> usize {
        self.w.dim().0
    }

    pub fn cin(&self) -> usize {
        self.w.dim().2
    }

    pub fn cout(&self) -> usize {
        self.w.dim().3
    }

    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        self.forward_impl(x, true)
    }

    /// Forward pass without the bias term, for tangent propagation
    /// (the Jacobian of a conv is the conv itself minus its bias).
    pub fn forward_no_bias(&self, x: &Array3<f64>) -> Array3<f64> {
        self.forward_impl(x, false)
    }

    fn forward_impl(&self, x: &Array3<f64>, with_bias: bool) -> Array3<f64> {
        let (h, w_dim, cin) = x.dim();
        let (kh, kw, wcin, cout) = self.w.dim();
        assert_eq!(cin, wcin, "input channel mismatch");
        let pad = kh / 2;
        let mut out = Array3::<f64>::zeros((h, w_dim, cout));
        let xs = x.as_slice().expect("contiguous");
        let ws = self.w.as_slice().expect("contiguous");
        let os = out.as_slice_mut().expect("contiguous");
        for oy in 0..h {
            for ox in 0..w_dim {
                let orow = &mut os[(oy * w_dim + ox) * cout..(oy * w_dim + ox + 1) * cout];
                if with_bias {
                    orow.copy_from_slice(self.b.as_slice().expect("contiguous"));
                }
                for ky in 0..kh {
                    let iy = oy + ky;
                    if iy < pad || iy >= h + pad {
                        continue;
                    }
                    let iy = iy - pad;
                    for kx in 0..kw {
                        let ix = ox + kx;
                        if ix < pad || ix >= w_dim + pad {
                            continue;
                        }
                        let ix = ix - pad;
                        let xrow = &xs[(iy * w_dim + ix) * cin..(iy * w_dim + ix + 1) * cin];
                        let wbase = ((ky * kw) + kx) * cin * cout;
                        for (ci, &xv) in xrow.iter().enumerate() {
                            if xv == 0.0 {
                                continue;
                            }
                            let wrow = &ws[wbase + ci * cout..wbase + (ci + 1) * cout];
                            for (co, &wv) in wrow.iter().enumerate() {
                                orow[co] += xv * wv;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Input gradient; parameter gradients accumulate into `grad`.
    pub fn backward(
        &self,
        x: &Array3<f64>,
        dout: &Array3<f64>,
        grad: &mut Conv2dGrad,
    ) -> Array3<f64> {
        let dx = self.backward_input(dout, x.dim().0, x.dim().1);
        self.accumulate_param_grad(x, dout, grad);
        dx
    }

    /// Input gradient only (frozen parameters).
    pub fn backward_input(&self, dout: &Array3<f64>, in_h: usize, in_w: usize) -> Array3<f64> {
        let (kh, kw, cin, cout) = self.w.dim();
        let pad = kh / 2;
        let mut dx = Array3::<f64>::zeros((in_h, in_w, cin));
        let ds = dout.as_slice().expect("contiguous");
        let ws = self.w.as_slice().expect("contiguous");
        let dxs = dx.as_slice_mut().expect("contiguous");
        for oy in 0..in_h {
            for ox in 0..in_w {
                let drow = &ds[(oy * in_w + ox) * cout..(oy * in_w + ox + 1) * cout];
                for ky in 0..kh {
                    let iy = oy + ky;
                    if iy < pad || iy >= in_h + pad {
                        continue;
                    }
                    let iy = iy - pad;
                    for kx in 0..kw {
                        let ix = ox + kx;
                        if ix < pad || ix >= in_w + pad {
                            continue;
                        }
                        let ix = ix - pad;
                        let wbase = ((ky * kw) + kx) * cin * cout;
                        let dxrow = &mut dxs[(iy * in_w + ix) * cin..(iy * in_w + ix + 1) * cin];
                        for ci in 0..cin {
                            let wrow = &ws[wbase + ci * cout..wbase + (ci + 1) * cout];
                            let mut acc = 0.0;
                            for (co, &wv) in wrow.iter().enumerate() {
                                acc += drow[co] * wv;
                            }
                            dxrow[ci] += acc;
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn accumulate_param_grad(&self, x: &Array3<f64>, dout: &Array3<f64>, grad: &mut Conv2dGrad) {
        let (h, w_dim, cin) = x.dim();
        let (kh, kw, _, cout) = self.w.dim();
        let pad = kh / 2;
        let xs = x.as_slice().expect("contiguous");
        let ds = dout.as_slice().expect("contiguous");
        let gws = grad.dw.as_slice_mut().expect("contiguous");
        let gbs = grad.db.as_slice_mut().expect("contiguous");
        for oy in 0..h {
            for ox in 0..w_dim {
                let drow = &ds[(oy * w_dim + ox) * cout..(oy * w_dim + ox + 1) * cout];
                for (co, &dv) in drow.iter().enumerate() {
                    gbs[co] += dv;
                }
                for ky in 0..kh {
                    let iy = oy + ky;
                    if iy < pad || iy >= h + pad {
                        continue;
                    }
                    let iy = iy - pad;
                    for kx in 0..kw {
                        let ix = ox + kx;
                        if ix < pad || ix >= w_dim + pad {
                            continue;
                        }
                        let ix = ix - pad;
                        let xrow = &xs[(iy * w_dim + ix) * cin..(iy * w_dim + ix + 1) * cin];
                        let wbase = ((ky * kw) + kx) * cin * cout;
                        for (ci, &xv) in xrow.iter().enumerate() {
                            if xv == 0.0 {
                                continue;
                            }
                            let gwrow = &mut gws[wbase + ci * cout..wbase + (ci + 1) * cout];
                            for (co, &dv) in drow.iter().enumerate() {
                                gwrow[co] += xv * dv;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn zero_grad(&self) -> Conv2dGrad {
        Conv2dGrad {
            dw: Array4::zeros(self.w.dim()),
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

impl Conv2dGrad {
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

/// 2x2 average pooling with stride 2. Input sides must be even.
#[derive(Debug, Clone, Copy)]
pub struct AvgPool2;

impl AvgPool2 {
    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        let (h, w, c) = x.dim();
        assert!(h % 2 == 0 && w % 2 == 0, "pooling needs even sides");
        Array3::from_shape_fn((h / 2, w / 2, c), |(y, xq, ch)| {
            0.25 * (x[[2 * y, 2 * xq, ch]]
                + x[[2 * y + 1, 2 * xq, ch]]
                + x[[2 * y, 2 * xq + 1, ch]]
                + x[[2 * y + 1, 2 * xq + 1, ch]])
        })
    }

    pub fn backward(&self, dout: &Array3<f64>) -> Array3<f64> {
        let (h, w, c) = dout.dim();
        let mut dx = Array3::<f64>::zeros((h * 2, w * 2, c));
        for y in 0..h {
            for xq in 0..w {
                for ch in 0..c {
                    let g = 0.25 * dout[[y, xq, ch]];
                    dx[[2 * y, 2 * xq, ch]] = g;
                    dx[[2 * y + 1, 2 * xq, ch]] = g;
                    dx[[2 * y, 2 * xq + 1, ch]] = g;
                    dx[[2 * y + 1, 2 * xq + 1, ch]] = g;
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_loss(conv: &Conv2d, x: &Array3<f64>) -> f64 {
        conv.forward(x).mapv(|v| v * v).sum()
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let conv = Conv2d::new(3, 2, 3, &mut rng);
        let x = Array3::from_shape_fn((5, 4, 2), |(y, xq, c)| {
            0.1 * (y as f64) - 0.2 * (xq as f64) + 0.3 * (c as f64) + 0.05
        });
        let y = conv.forward(&x);
        let dout = y.mapv(|v| 2.0 * v);
        let mut grad = conv.zero_grad();
        let dx = conv.backward(&x, &dout, &mut grad);

        let h = 1e-6;
        for idx in [(0usize, 0usize, 0usize), (2, 3, 1), (4, 0, 1)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (scalar_loss(&conv, &xp) - scalar_loss(&conv, &xm)) / (2.0 * h);
            assert!((fd - dx[idx]).abs() < 1e-5, "dx mismatch at {idx:?}");
        }
        for widx in [(0usize, 0usize, 0usize, 0usize), (1, 2, 1, 2), (2, 2, 0, 1)] {
            let mut cp = conv.clone();
            cp.w[widx] += h;
            let mut cm = conv.clone();
            cm.w[widx] -= h;
            let fd = (scalar_loss(&cp, &x) - scalar_loss(&cm, &x)) / (2.0 * h);
            assert!((fd - grad.dw[widx]).abs() < 1e-5, "dw mismatch at {widx:?}");
        }
        for bi in 0..3 {
            let mut cp = conv.clone();
            cp.b[bi] += h;
            let mut cm = conv.clone();
            cm.b[bi] -= h;
            let fd = (scalar_loss(&cp, &x) - scalar_loss(&cm, &x)) / (2.0 * h);
            assert!((fd - grad.db[bi]).abs() < 1e-5, "db mismatch at {bi}");
        }
    }

    #[test]
    fn one_by_one_conv_is_pixelwise_linear_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv2d::new(1, 2, 1, &mut rng);
        let x = Array3::from_shape_fn((3, 3, 2), |(y, xq, c)| (y + xq + c) as f64);
        let y = conv.forward(&x);
        for iy in 0..3 {
            for ix in 0..3 {
                let want = conv.w[[0, 0, 0, 0]] * x[[iy, ix, 0]]
                    + conv.w[[0, 0, 1, 0]] * x[[iy, ix, 1]]
                    + conv.b[0];
                assert!((y[[iy, ix, 0]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn avg_pool_forward_backward() {
        let x = Array3::from_shape_fn((4, 4, 1), |(y, xq, _)| (y * 4 + xq) as f64);
        let pooled = AvgPool2.forward(&x);
        assert_eq!(pooled.dim(), (2, 2, 1));
        assert!((pooled[[0, 0, 0]] - 2.5).abs() < 1e-12);
        let dout = Array3::from_elem((2, 2, 1), 1.0);
        let dx = AvgPool2.backward(&dout);
        assert!(dx.iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }
}
