//! Tanimoto-gated channel + spatial attention.
//!
//! A self-contained unit inserted after a residual block's convolution
//! path. Sigmoid 1x1 projections produce query/key/value maps; per-channel
//! and per-pixel similarities between query and key are measured by the
//! depth-averaged Tanimoto coefficient `mean_{i=0..d} T^i` (the same
//! functional family as the training loss), and their outer product gates
//! the value map. A per-channel gate scalar, initialized to zero and kept
//! in [0, 1], scales the whole map:
//!
//! `out = u * (1 + gate[c] * t_ch[c] * t_sp[y,x] * v[c,y,x])`
//!
//! Zero gate means the unit is the identity, so attention-on and
//! attention-off networks coincide at initialization.

use ndarray::{Array1, Array2, Array3};
use rand_chacha::ChaCha8Rng;

use super::float::Scalar;
use super::layers::{sigmoid_backward, sigmoid_forward, Conv2d, ConvGrads};

const EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct TanimotoAttention<F: Scalar> {
    pub query: Conv2d<F>,
    pub key: Conv2d<F>,
    pub value: Conv2d<F>,
    /// Per-channel gate in [0, 1], zero at init.
    pub gate: Array1<F>,
    /// Fractal depth d: similarities average T^0..T^d.
    pub depth: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionGrads<F: Scalar> {
    pub query: ConvGrads<F>,
    pub key: ConvGrads<F>,
    pub value: ConvGrads<F>,
    pub gate: Array1<F>,
}

/// Everything backward needs, captured by forward.
#[derive(Debug, Clone)]
pub struct AttentionCache<F: Scalar> {
    input: Array3<F>,
    q: Array3<F>,
    k: Array3<F>,
    v: Array3<F>,
    /// Per-channel similarity of q/k planes.
    t_ch: Vec<f64>,
    /// Per-pixel similarity of q/k fibers.
    t_sp: Array2<f64>,
    /// (dot, |q|^2, |k|^2) per channel.
    ch_terms: Vec<(f64, f64, f64)>,
    /// Same per pixel.
    sp_terms: Array2<(f64, f64, f64)>,
}

/// Depth-averaged Tanimoto similarity of two accumulated dot/norm terms.
fn ftan(dot: f64, na: f64, nb: f64, depth: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..=depth {
        let p = (1u64 << i) as f64;
        let denom = p * (na + nb) - (2.0 * p - 1.0) * dot + EPS;
        acc += (dot + EPS) / denom;
    }
    acc / (depth + 1) as f64
}

/// d/d(dot), d/d(na), d/d(nb) of [`ftan`].
fn ftan_partials(dot: f64, na: f64, nb: f64, depth: usize) -> (f64, f64, f64) {
    let mut d_dot = 0.0;
    let mut d_na = 0.0;
    for i in 0..=depth {
        let p = (1u64 << i) as f64;
        let denom = p * (na + nb) - (2.0 * p - 1.0) * dot + EPS;
        let num = dot + EPS;
        d_dot += (denom + num * (2.0 * p - 1.0)) / (denom * denom);
        d_na += -num * p / (denom * denom);
    }
    let scale = 1.0 / (depth + 1) as f64;
    (d_dot * scale, d_na * scale, d_na * scale)
}

impl<F: Scalar> TanimotoAttention<F> {
    pub fn new(channels: usize, depth: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (1.0 / channels as f64).sqrt();
        Self {
            query: Conv2d::new(channels, channels, 1, std, rng),
            key: Conv2d::new(channels, channels, 1, std, rng),
            value: Conv2d::new(channels, channels, 1, std, rng),
            gate: Array1::zeros(channels),
            depth,
        }
    }

    pub fn zero_grads(&self) -> AttentionGrads<F> {
        AttentionGrads {
            query: self.query.zero_grads(),
            key: self.key.zero_grads(),
            value: self.value.zero_grads(),
            gate: Array1::zeros(self.gate.raw_dim()),
        }
    }

    pub fn forward(&self, u: &Array3<F>) -> (Array3<F>, AttentionCache<F>) {
        let (c, h, w) = u.dim();
        let q = sigmoid_forward(&self.query.forward(u));
        let k = sigmoid_forward(&self.key.forward(u));
        let v = sigmoid_forward(&self.value.forward(u));

        let mut ch_terms = Vec::with_capacity(c);
        let mut t_ch = Vec::with_capacity(c);
        for ci in 0..c {
            let qp = q.index_axis(ndarray::Axis(0), ci);
            let kp = k.index_axis(ndarray::Axis(0), ci);
            let mut dot = 0.0;
            let mut na = 0.0;
            let mut nb = 0.0;
            for (&a, &b) in qp.iter().zip(kp.iter()) {
                let (a, b) = (a.to_f64c(), b.to_f64c());
                dot += a * b;
                na += a * a;
                nb += b * b;
            }
            ch_terms.push((dot, na, nb));
            t_ch.push(ftan(dot, na, nb, self.depth));
        }

        let mut sp_terms = Array2::<(f64, f64, f64)>::from_elem((h, w), (0.0, 0.0, 0.0));
        let mut t_sp = Array2::<f64>::zeros((h, w));
        for r in 0..h {
            for cc in 0..w {
                let mut dot = 0.0;
                let mut na = 0.0;
                let mut nb = 0.0;
                for ci in 0..c {
                    let a = q[(ci, r, cc)].to_f64c();
                    let b = k[(ci, r, cc)].to_f64c();
                    dot += a * b;
                    na += a * a;
                    nb += b * b;
                }
                sp_terms[(r, cc)] = (dot, na, nb);
                t_sp[(r, cc)] = ftan(dot, na, nb, self.depth);
            }
        }

        let mut out = u.clone();
        for ci in 0..c {
            let g = self.gate[ci].to_f64c() * t_ch[ci];
            for r in 0..h {
                for cc in 0..w {
                    let a = g * t_sp[(r, cc)] * v[(ci, r, cc)].to_f64c();
                    out[(ci, r, cc)] = F::from_f64c(u[(ci, r, cc)].to_f64c() * (1.0 + a));
                }
            }
        }
        let cache =
            AttentionCache { input: u.clone(), q, k, v, t_ch, t_sp, ch_terms, sp_terms };
        (out, cache)
    }

    pub fn backward(
        &self,
        cache: &AttentionCache<F>,
        grad_out: &Array3<F>,
        grads: &mut AttentionGrads<F>,
    ) -> Array3<F> {
        let (c, h, w) = cache.input.dim();
        let u = &cache.input;

        // Direct path plus accumulators for the similarity paths.
        let mut du = Array3::<F>::zeros((c, h, w));
        let mut dv = Array3::<F>::zeros((c, h, w));
        let mut d_tch = vec![0.0f64; c];
        let mut d_tsp = Array2::<f64>::zeros((h, w));
        for ci in 0..c {
            let gate = self.gate[ci].to_f64c();
            let tch = cache.t_ch[ci];
            for r in 0..h {
                for cc in 0..w {
                    let go = grad_out[(ci, r, cc)].to_f64c();
                    let uv = u[(ci, r, cc)].to_f64c();
                    let vv = cache.v[(ci, r, cc)].to_f64c();
                    let tsp = cache.t_sp[(r, cc)];
                    du[(ci, r, cc)] = F::from_f64c(go * (1.0 + gate * tch * tsp * vv));
                    dv[(ci, r, cc)] = F::from_f64c(go * uv * gate * tch * tsp);
                    d_tch[ci] += go * uv * gate * tsp * vv;
                    d_tsp[(r, cc)] += go * uv * gate * tch * vv;
                    grads.gate[ci] =
                        grads.gate[ci] + F::from_f64c(go * uv * tch * tsp * vv);
                }
            }
        }

        // Similarity gradients into q and k.
        let mut dq = Array3::<F>::zeros((c, h, w));
        let mut dk = Array3::<F>::zeros((c, h, w));
        for ci in 0..c {
            let (dot, na, nb) = cache.ch_terms[ci];
            let (p_dot, p_na, p_nb) = ftan_partials(dot, na, nb, self.depth);
            let scale = d_tch[ci];
            for r in 0..h {
                for cc in 0..w {
                    let a = cache.q[(ci, r, cc)].to_f64c();
                    let b = cache.k[(ci, r, cc)].to_f64c();
                    dq[(ci, r, cc)] =
                        dq[(ci, r, cc)] + F::from_f64c(scale * (p_dot * b + 2.0 * p_na * a));
                    dk[(ci, r, cc)] =
                        dk[(ci, r, cc)] + F::from_f64c(scale * (p_dot * a + 2.0 * p_nb * b));
                }
            }
        }
        for r in 0..h {
            for cc in 0..w {
                let (dot, na, nb) = cache.sp_terms[(r, cc)];
                let (p_dot, p_na, p_nb) = ftan_partials(dot, na, nb, self.depth);
                let scale = d_tsp[(r, cc)];
                for ci in 0..c {
                    let a = cache.q[(ci, r, cc)].to_f64c();
                    let b = cache.k[(ci, r, cc)].to_f64c();
                    dq[(ci, r, cc)] =
                        dq[(ci, r, cc)] + F::from_f64c(scale * (p_dot * b + 2.0 * p_na * a));
                    dk[(ci, r, cc)] =
                        dk[(ci, r, cc)] + F::from_f64c(scale * (p_dot * a + 2.0 * p_nb * b));
                }
            }
        }

        // Through the sigmoids and 1x1 convs back to the input.
        let dq_pre = sigmoid_backward(&cache.q, &dq);
        let dk_pre = sigmoid_backward(&cache.k, &dk);
        let dv_pre = sigmoid_backward(&cache.v, &dv);
        let du_q = self.query.backward(u, &dq_pre, &mut grads.query);
        let du_k = self.key.backward(u, &dk_pre, &mut grads.key);
        let du_v = self.value.backward(u, &dv_pre, &mut grads.value);
        du + &du_q + &du_k + &du_v
    }
}
