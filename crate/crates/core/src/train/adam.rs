//! Adam with fixed moment coefficients and a post-step projection of the
//! attention gates back into [0, 1].

use crate::nn::{is_gate_param, AttentionResUNet, NetGrads, Scalar};

pub struct Adam<F: Scalar> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    _marker: std::marker::PhantomData<F>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(net: &AttentionResUNet<F>, lr: f64) -> Self {
        let mut sizes = Vec::new();
        let mut clone = net.clone();
        clone.visit_params_mut(&mut |_, slice| sizes.push(slice.len()));
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            _marker: std::marker::PhantomData,
        }
    }

    pub fn step(&mut self, net: &mut AttentionResUNet<F>, grads: &NetGrads<F>) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let flat = grads.export_flat();
        let mut i = 0usize;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let (m, v) = (&mut self.m, &mut self.v);
        net.visit_params_mut(&mut |name, slice| {
            let g = &flat[i];
            let ms = &mut m[i];
            let vs = &mut v[i];
            for j in 0..slice.len() {
                let gj = g[j].to_f64c();
                ms[j] = b1 * ms[j] + (1.0 - b1) * gj;
                vs[j] = b2 * vs[j] + (1.0 - b2) * gj * gj;
                let mhat = ms[j] / bc1;
                let vhat = vs[j] / bc2;
                let mut val = slice[j].to_f64c() - lr * mhat / (vhat.sqrt() + eps);
                if is_gate_param(name) {
                    val = val.clamp(0.0, 1.0);
                }
                slice[j] = F::from_f64c(val);
            }
            i += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetworkSpec;

    #[test]
    fn adam_reduces_a_simple_quadratic_objective() {
        // Drive every parameter toward zero: grad = param.
        let spec = NetworkSpec {
            depth: 1,
            base_filters: 2,
            in_channels: 1,
            attention: true,
            attention_depth_d: 0,
            separate_head_tails: false,
        };
        let mut net = AttentionResUNet::<f64>::build(&spec, 1).unwrap();
        let mut opt = Adam::new(&net, 0.05);
        let norm = |n: &AttentionResUNet<f64>| -> f64 {
            let mut acc = 0.0;
            let mut c = n.clone();
            c.visit_params_mut(&mut |_, s| acc += s.iter().map(|v| v * v).sum::<f64>());
            acc
        };
        let before = norm(&net);
        for _ in 0..50 {
            // grads <- params (visit orders line up), i.e. descend |w|^2.
            let flat: Vec<Vec<f64>> = {
                let mut out = Vec::new();
                let mut c = net.clone();
                c.visit_params_mut(&mut |_, s| out.push(s.to_vec()));
                out
            };
            let mut grads = net.zero_grads();
            grads.import_flat(&flat);
            opt.step(&mut net, &grads);
        }
        let after = norm(&net);
        assert!(after < before * 0.5, "{before} -> {after}");
        // Gates stayed in range.
        let mut c = net.clone();
        c.visit_params_mut(&mut |name, s| {
            if is_gate_param(name) {
                assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        });
    }
}
