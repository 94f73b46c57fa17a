//! Network building blocks with explicit backward passes.
//!
//! Every layer is stateless across calls: forward takes the input, backward
//! takes whatever forward cached plus the output gradient, accumulates
//! parameter gradients, and returns the input gradient. Convolutions run as
//! im2col + GEMM; the im2col matrix is rebuilt in backward instead of
//! cached, trading ~30% compute for a flat activation memory profile.

use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::float::Scalar;

/// Standard-normal draw via Box-Muller, deterministic given the rng.
pub fn normal_f64(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}

/// 2-D convolution, stride 1, "same" zero padding for odd kernels.
#[derive(Debug, Clone)]
pub struct Conv2d<F: Scalar> {
    /// (out_channels, in_channels, k, k)
    pub weight: Array4<F>,
    pub bias: Array1<F>,
    pub pad: usize,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<F: Scalar> {
    pub weight: Array4<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(in_ch: usize, out_ch: usize, k: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let weight = Array4::from_shape_fn((out_ch, in_ch, k, k), |_| {
            F::from_f64c(normal_f64(rng) * std)
        });
        Self { weight, bias: Array1::zeros(out_ch), pad: k / 2 }
    }

    /// He-style init for the given fan-in.
    pub fn he(in_ch: usize, out_ch: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (in_ch * k * k) as f64;
        Self::new(in_ch, out_ch, k, (2.0 / fan_in).sqrt(), rng)
    }

    pub fn zero_grads(&self) -> ConvGrads<F> {
        ConvGrads { weight: Array4::zeros(self.weight.raw_dim()), bias: Array1::zeros(self.bias.raw_dim()) }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().1
    }

    fn kernel(&self) -> usize {
        self.weight.dim().2
    }

    pub fn forward(&self, x: &Array3<F>) -> Array3<F> {
        let (cin, h, w) = x.dim();
        debug_assert_eq!(cin, self.in_channels());
        let k = self.kernel();
        let cout = self.out_channels();
        let col = im2col(x, k, self.pad);
        let w2 = self
            .weight
            .view()
            .into_shape_with_order((cout, cin * k * k))
            .expect("weight is contiguous");
        let mut y2 = w2.dot(&col);
        for (mut row, &b) in y2.rows_mut().into_iter().zip(self.bias.iter()) {
            row.mapv_inplace(|v| v + b);
        }
        y2.into_shape_with_order((cout, h, w)).expect("conv output reshape")
    }

    /// Accumulates dW, db into `grads` and returns dX.
    pub fn backward(
        &self,
        x: &Array3<F>,
        grad_out: &Array3<F>,
        grads: &mut ConvGrads<F>,
    ) -> Array3<F> {
        let (cin, h, w) = x.dim();
        let k = self.kernel();
        let cout = self.out_channels();
        let col = im2col(x, k, self.pad);
        let g2 = grad_out
            .view()
            .into_shape_with_order((cout, h * w))
            .expect("grad is contiguous");
        // dW += dY . col^T
        let dw = g2.dot(&col.t());
        {
            let mut gw2 = grads
                .weight
                .view_mut()
                .into_shape_with_order((cout, cin * k * k))
                .expect("grad weight reshape");
            gw2 += &dw;
        }
        for (gb, row) in grads.bias.iter_mut().zip(g2.rows()) {
            *gb = *gb + row.sum();
        }
        // dX = col2im(W^T . dY)
        let w2 = self
            .weight
            .view()
            .into_shape_with_order((cout, cin * k * k))
            .expect("weight reshape");
        let dcol = w2.t().dot(&g2);
        col2im(&dcol, cin, h, w, k, self.pad)
    }
}

/// (cin*k*k, h*w) patch matrix with zero padding.
fn im2col<F: Scalar>(x: &Array3<F>, k: usize, pad: usize) -> Array2<F> {
    let (cin, h, w) = x.dim();
    let mut col = Array2::<F>::zeros((cin * k * k, h * w));
    {
        let col_slice = col.as_slice_mut().expect("col is contiguous");
        for ci in 0..cin {
            for kr in 0..k {
                for kc in 0..k {
                    let row = (ci * k + kr) * k + kc;
                    let base = row * h * w;
                    for oh in 0..h {
                        let ih = oh as isize + kr as isize - pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let ih = ih as usize;
                        // Valid output columns for this kernel column.
                        let lo = pad.saturating_sub(kc);
                        let hi = (w + pad).saturating_sub(kc).min(w);
                        for ow in lo..hi {
                            let iw = ow + kc - pad;
                            col_slice[base + oh * w + ow] = x[(ci, ih, iw)];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Transpose of im2col: scatter-add columns back into an image.
fn col2im<F: Scalar>(
    col: &Array2<F>,
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
) -> Array3<F> {
    let mut x = Array3::<F>::zeros((cin, h, w));
    let col_slice = col.as_slice().expect("col is contiguous");
    for ci in 0..cin {
        for kr in 0..k {
            for kc in 0..k {
                let row = (ci * k + kr) * k + kc;
                let base = row * h * w;
                for oh in 0..h {
                    let ih = oh as isize + kr as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let ih = ih as usize;
                    let lo = pad.saturating_sub(kc);
                    let hi = (w + pad).saturating_sub(kc).min(w);
                    for ow in lo..hi {
                        let iw = ow + kc - pad;
                        x[(ci, ih, iw)] = x[(ci, ih, iw)] + col_slice[base + oh * w + ow];
                    }
                }
            }
        }
    }
    x
}

/// Per-sample, per-channel normalization with learned affine. Batch size
/// never enters the statistics, so training and batch-1 inference match.
#[derive(Debug, Clone)]
pub struct InstanceNorm<F: Scalar> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct NormGrads<F: Scalar> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
}

impl<F: Scalar> InstanceNorm<F> {
    pub fn new(channels: usize) -> Self {
        Self { gamma: Array1::ones(channels), beta: Array1::zeros(channels), eps: 1e-5 }
    }

    pub fn zero_grads(&self) -> NormGrads<F> {
        NormGrads { gamma: Array1::zeros(self.gamma.raw_dim()), beta: Array1::zeros(self.beta.raw_dim()) }
    }

    fn stats(&self, x: &Array3<F>) -> (Vec<f64>, Vec<f64>) {
        let (c, h, w) = x.dim();
        let n = (h * w) as f64;
        let mut means = Vec::with_capacity(c);
        let mut inv_stds = Vec::with_capacity(c);
        for ci in 0..c {
            let plane = x.index_axis(ndarray::Axis(0), ci);
            let mean = plane.iter().map(|v| v.to_f64c()).sum::<f64>() / n;
            let var = plane.iter().map(|v| (v.to_f64c() - mean).powi(2)).sum::<f64>() / n;
            means.push(mean);
            inv_stds.push(1.0 / (var + self.eps).sqrt());
        }
        (means, inv_stds)
    }

    pub fn forward(&self, x: &Array3<F>) -> Array3<F> {
        let (means, inv_stds) = self.stats(x);
        let mut y = x.clone();
        for (ci, mut plane) in y.axis_iter_mut(ndarray::Axis(0)).enumerate() {
            let m = means[ci];
            let inv = inv_stds[ci];
            let g = self.gamma[ci].to_f64c();
            let b = self.beta[ci].to_f64c();
            plane.mapv_inplace(|v| F::from_f64c((v.to_f64c() - m) * inv * g + b));
        }
        y
    }

    pub fn backward(
        &self,
        x: &Array3<F>,
        grad_out: &Array3<F>,
        grads: &mut NormGrads<F>,
    ) -> Array3<F> {
        let (c, h, w) = x.dim();
        let n = (h * w) as f64;
        let (means, inv_stds) = self.stats(x);
        let mut dx = Array3::<F>::zeros((c, h, w));
        for ci in 0..c {
            let m = means[ci];
            let inv = inv_stds[ci];
            let g = self.gamma[ci].to_f64c();
            let xp = x.index_axis(ndarray::Axis(0), ci);
            let gp = grad_out.index_axis(ndarray::Axis(0), ci);
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for (xv, gv) in xp.iter().zip(gp.iter()) {
                let xhat = (xv.to_f64c() - m) * inv;
                let dy = gv.to_f64c();
                sum_dy += dy;
                sum_dy_xhat += dy * xhat;
            }
            grads.gamma[ci] = grads.gamma[ci] + F::from_f64c(sum_dy_xhat);
            grads.beta[ci] = grads.beta[ci] + F::from_f64c(sum_dy);
            let mut dp = dx.index_axis_mut(ndarray::Axis(0), ci);
            for ((dv, xv), gv) in dp.iter_mut().zip(xp.iter()).zip(gp.iter()) {
                let xhat = (xv.to_f64c() - m) * inv;
                let dy = gv.to_f64c();
                let v = g * inv * (dy - sum_dy / n - xhat * sum_dy_xhat / n);
                *dv = F::from_f64c(v);
            }
        }
        dx
    }
}

/// ELU(alpha = 1): smooth enough for tight finite-difference checks.
pub fn elu_forward<F: Scalar>(x: &Array3<F>) -> Array3<F> {
    x.mapv(|v| {
        if v > F::zero() {
            v
        } else {
            F::from_f64c(v.to_f64c().exp() - 1.0)
        }
    })
}

/// Needs the forward *output*: dy/dx = 1 for y > 0, else y + 1.
pub fn elu_backward<F: Scalar>(y: &Array3<F>, grad_out: &Array3<F>) -> Array3<F> {
    let mut dx = grad_out.clone();
    for (d, &yv) in dx.iter_mut().zip(y.iter()) {
        if yv <= F::zero() {
            *d = *d * (yv + F::one());
        }
    }
    dx
}

pub fn sigmoid_forward<F: Scalar>(x: &Array3<F>) -> Array3<F> {
    x.mapv(|v| F::from_f64c(1.0 / (1.0 + (-v.to_f64c()).exp())))
}

/// Needs the forward output: dy/dx = y (1 - y).
pub fn sigmoid_backward<F: Scalar>(y: &Array3<F>, grad_out: &Array3<F>) -> Array3<F> {
    let mut dx = grad_out.clone();
    for (d, &yv) in dx.iter_mut().zip(y.iter()) {
        *d = *d * yv * (F::one() - yv);
    }
    dx
}

/// 2x2 average pooling (dims must be even).
pub fn avgpool2_forward<F: Scalar>(x: &Array3<F>) -> Array3<F> {
    let (c, h, w) = x.dim();
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let quarter = F::from_f64c(0.25);
    let mut y = Array3::<F>::zeros((c, h / 2, w / 2));
    for ci in 0..c {
        for oh in 0..h / 2 {
            for ow in 0..w / 2 {
                let s = x[(ci, 2 * oh, 2 * ow)]
                    + x[(ci, 2 * oh, 2 * ow + 1)]
                    + x[(ci, 2 * oh + 1, 2 * ow)]
                    + x[(ci, 2 * oh + 1, 2 * ow + 1)];
                y[(ci, oh, ow)] = s * quarter;
            }
        }
    }
    y
}

pub fn avgpool2_backward<F: Scalar>(grad_out: &Array3<F>, h: usize, w: usize) -> Array3<F> {
    let (c, oh, ow) = grad_out.dim();
    debug_assert_eq!((oh, ow), (h / 2, w / 2));
    let quarter = F::from_f64c(0.25);
    let mut dx = Array3::<F>::zeros((c, h, w));
    for ci in 0..c {
        for r in 0..oh {
            for cc in 0..ow {
                let g = grad_out[(ci, r, cc)] * quarter;
                dx[(ci, 2 * r, 2 * cc)] = g;
                dx[(ci, 2 * r, 2 * cc + 1)] = g;
                dx[(ci, 2 * r + 1, 2 * cc)] = g;
                dx[(ci, 2 * r + 1, 2 * cc + 1)] = g;
            }
        }
    }
    dx
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2_forward<F: Scalar>(x: &Array3<F>) -> Array3<F> {
    let (c, h, w) = x.dim();
    let mut y = Array3::<F>::zeros((c, h * 2, w * 2));
    for ci in 0..c {
        for r in 0..h {
            for cc in 0..w {
                let v = x[(ci, r, cc)];
                y[(ci, 2 * r, 2 * cc)] = v;
                y[(ci, 2 * r, 2 * cc + 1)] = v;
                y[(ci, 2 * r + 1, 2 * cc)] = v;
                y[(ci, 2 * r + 1, 2 * cc + 1)] = v;
            }
        }
    }
    y
}

pub fn upsample2_backward<F: Scalar>(grad_out: &Array3<F>) -> Array3<F> {
    let (c, h2, w2) = grad_out.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Array3::<F>::zeros((c, h, w));
    for ci in 0..c {
        for r in 0..h {
            for cc in 0..w {
                dx[(ci, r, cc)] = grad_out[(ci, 2 * r, 2 * cc)]
                    + grad_out[(ci, 2 * r, 2 * cc + 1)]
                    + grad_out[(ci, 2 * r + 1, 2 * cc)]
                    + grad_out[(ci, 2 * r + 1, 2 * cc + 1)];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::gradcheck::{central_difference, relative_error};
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn rand_image(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Array3<f64> {
        Array3::from_shape_fn((c, h, w), |_| normal_f64(rng) * 0.5)
    }

    #[test]
    fn conv_identity_kernel_passes_through() {
        let mut conv = Conv2d::<f64>::he(1, 1, 3, &mut rng());
        conv.weight.fill(0.0);
        conv.weight[(0, 0, 1, 1)] = 1.0;
        conv.bias.fill(0.0);
        let x = rand_image(1, 5, 5, &mut rng());
        let y = conv.forward(&x);
        assert!(x.iter().zip(y.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut r = rng();
        let mut conv = Conv2d::<f64>::he(2, 3, 3, &mut r);
        let x = rand_image(2, 6, 6, &mut r);
        // Scalar objective: weighted sum of outputs.
        let w_obj = rand_image(3, 6, 6, &mut r);
        let loss = |conv: &Conv2d<f64>, x: &Array3<f64>| -> f64 {
            (conv.forward(x) * &w_obj).sum()
        };
        let mut grads = conv.zero_grads();
        let dx = conv.backward(&x, &w_obj, &mut grads);
        let h = 1e-6;
        for &(o, i, kr, kc) in &[(0usize, 0usize, 0usize, 0usize), (1, 1, 2, 0), (2, 0, 1, 2)] {
            let orig = conv.weight[(o, i, kr, kc)];
            let num = central_difference(
                |v| {
                    let mut c2 = conv.clone();
                    c2.weight[(o, i, kr, kc)] = v;
                    loss(&c2, &x)
                },
                orig,
                h,
            );
            assert!(
                relative_error(grads.weight[(o, i, kr, kc)], num) < 1e-6,
                "dW({o},{i},{kr},{kc})"
            );
        }
        let orig = x[(1, 3, 2)];
        let num = central_difference(
            |v| {
                let mut x2 = x.clone();
                x2[(1, 3, 2)] = v;
                loss(&conv, &x2)
            },
            orig,
            h,
        );
        assert!(relative_error(dx[(1, 3, 2)], num) < 1e-6, "dX");
        let numb = central_difference(
            |v| {
                let mut c2 = conv.clone();
                c2.bias[1] = v;
                loss(&c2, &x)
            },
            conv.bias[1],
            h,
        );
        assert!(relative_error(grads.bias[1], numb) < 1e-6, "db");
    }

    #[test]
    fn instance_norm_gradients_match_finite_differences() {
        let mut r = rng();
        let norm = InstanceNorm::<f64>::new(2);
        let x = rand_image(2, 4, 4, &mut r);
        let w_obj = rand_image(2, 4, 4, &mut r);
        let loss = |norm: &InstanceNorm<f64>, x: &Array3<f64>| (norm.forward(x) * &w_obj).sum();
        let mut grads = norm.zero_grads();
        let dx = norm.backward(&x, &w_obj, &mut grads);
        let h = 1e-6;
        for idx in [(0usize, 1usize, 2usize), (1, 3, 0)] {
            let orig = x[idx];
            let num = central_difference(
                |v| {
                    let mut x2 = x.clone();
                    x2[idx] = v;
                    loss(&norm, &x2)
                },
                orig,
                h,
            );
            assert!(relative_error(dx[idx], num) < 1e-5, "dx at {idx:?}");
        }
        let num = central_difference(
            |v| {
                let mut n2 = norm.clone();
                n2.gamma[0] = v;
                loss(&n2, &x)
            },
            norm.gamma[0],
            h,
        );
        assert!(relative_error(grads.gamma[0], num) < 1e-6, "dgamma");
    }

    #[test]
    fn pool_and_upsample_are_adjoint_shaped() {
        let mut r = rng();
        let x = rand_image(2, 4, 6, &mut r);
        let y = avgpool2_forward(&x);
        assert_eq!(y.dim(), (2, 2, 3));
        let dx = avgpool2_backward(&y, 4, 6);
        assert_eq!(dx.dim(), x.dim());
        let up = upsample2_forward(&y);
        assert_eq!(up.dim(), (2, 4, 6));
        let back = upsample2_backward(&up);
        // Summing a nearest-upsampled map recovers 4x the original.
        assert!(back.iter().zip(y.iter()).all(|(a, b)| (a - 4.0 * b).abs() < 1e-12));
    }

    #[test]
    fn elu_and_sigmoid_backward_use_outputs() {
        let mut r = rng();
        let x = rand_image(1, 3, 3, &mut r);
        let y = elu_forward(&x);
        let g = Array3::<f64>::ones((1, 3, 3));
        let dx = elu_backward(&y, &g);
        for (i, (&xv, &dv)) in x.iter().zip(dx.iter()).enumerate() {
            let num = central_difference(
                |v| {
                    if v > 0.0 {
                        v
                    } else {
                        v.exp() - 1.0
                    }
                },
                xv,
                1e-6,
            );
            assert!(relative_error(dv, num) < 1e-6, "elu grad {i}");
        }
        let s = sigmoid_forward(&x);
        let ds = sigmoid_backward(&s, &g);
        for (&xv, &dv) in x.iter().zip(ds.iter()) {
            let num = central_difference(|v| 1.0 / (1.0 + (-v).exp()), xv, 1e-6);
            assert!(relative_error(dv, num) < 1e-6);
        }
    }
}
