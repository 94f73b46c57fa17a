//! Tanimoto-with-complement loss over masked multi-task predictions.
//!
//! For label vector y and prediction vector p (reductions over all pixels),
//! the depth-d Tanimoto coefficient is
//!
//! `T^d(y,p) = (y.p + eps) / (2^d (y.y + p.p) - (2^{d+1} - 1) y.p + eps)`
//!
//! and the complemented form averages T^d on (y, p) and (1-y, 1-p). The
//! epsilon sits in both numerator and denominator, so identical inputs
//! score exactly 1 and the all-zero pair resolves to 1 (perfect agreement
//! on emptiness) instead of 0/0. The masked loss multiplies labels and
//! predictions by the supervision mask before the reduction; masked-out
//! pixels therefore contribute a constant and their gradient is exactly
//! zero.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{FieldkitError, Result};
use crate::geom::LabelStack;
use crate::nn::{HeadMaps, Scalar};

/// Loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TanimotoConfig {
    /// Fractal depth d.
    pub depth: usize,
    /// Average the complemented coefficient over i = 0..d instead of using
    /// depth d alone.
    pub average_over_depths: bool,
    /// Stabilizer added to numerator and denominator; must be > 0.
    pub epsilon: f64,
}

impl Default for TanimotoConfig {
    fn default() -> Self {
        Self { depth: 0, average_over_depths: true, epsilon: 1e-12 }
    }
}

impl TanimotoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 {
            return Err(FieldkitError::InvalidArgument(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    fn depths(&self) -> std::ops::RangeInclusive<usize> {
        if self.average_over_depths {
            0..=self.depth
        } else {
            self.depth..=self.depth
        }
    }
}

/// Accumulated reduction terms: (y.p, y.y, p.p).
fn terms<F: Scalar>(y: &Array2<F>, p: &Array2<F>) -> (f64, f64, f64) {
    let mut dot = 0.0;
    let mut ny = 0.0;
    let mut np = 0.0;
    for (&a, &b) in y.iter().zip(p.iter()) {
        let (a, b) = (a.to_f64c(), b.to_f64c());
        dot += a * b;
        ny += a * a;
        np += b * b;
    }
    (dot, ny, np)
}

fn t_single(dot: f64, ny: f64, np: f64, d: usize, eps: f64) -> f64 {
    let p = (1u64 << d) as f64;
    (dot + eps) / (p * (ny + np) - (2.0 * p - 1.0) * dot + eps)
}

/// T^d of Eq-form above, reduced over all pixels. Returns a value in [0,1].
pub fn tanimoto<F: Scalar>(y: &Array2<F>, p: &Array2<F>, d: usize, eps: f64) -> Result<f64> {
    if y.dim() != p.dim() {
        return Err(FieldkitError::ShapeMismatch(format!("{:?} vs {:?}", y.dim(), p.dim())));
    }
    let (dot, ny, np) = terms(y, p);
    Ok(t_single(dot, ny, np, d, eps))
}

/// 0.5 (T^d(y,p) + T^d(1-y, 1-p)); equals 1 iff p == y.
pub fn tanimoto_with_complement<F: Scalar>(
    y: &Array2<F>,
    p: &Array2<F>,
    d: usize,
    eps: f64,
) -> Result<f64> {
    let t = tanimoto(y, p, d, eps)?;
    let yc = y.mapv(|v| F::one() - v);
    let pc = p.mapv(|v| F::one() - v);
    let tc = tanimoto(&yc, &pc, d, eps)?;
    Ok(0.5 * (t + tc))
}

/// Complemented coefficient under the config's depth policy.
pub fn fractal_tanimoto_with_complement<F: Scalar>(
    y: &Array2<F>,
    p: &Array2<F>,
    cfg: &TanimotoConfig,
) -> Result<f64> {
    cfg.validate()?;
    let mut acc = 0.0;
    let mut n = 0usize;
    for d in cfg.depths() {
        acc += tanimoto_with_complement(y, p, d, cfg.epsilon)?;
        n += 1;
    }
    Ok(acc / n as f64)
}

/// One task's loss and gradient with pre-masked arrays.
/// Returns (loss, dloss/dp_masked) where the gradient is with respect to
/// the *masked* prediction; callers multiply by the mask again via the
/// chain rule.
fn task_loss_grad<F: Scalar>(
    ym: &Array2<F>,
    pm: &Array2<F>,
    mask: &Array2<F>,
    cfg: &TanimotoConfig,
) -> (f64, Array2<F>) {
    let (dot, ny, np) = terms(ym, pm);
    let ymc = ym.mapv(|v| F::one() - v);
    let pmc = pm.mapv(|v| F::one() - v);
    let (dot_c, ny_c, np_c) = terms(&ymc, &pmc);

    let depths: Vec<usize> = cfg.depths().collect();
    let n_depths = depths.len() as f64;
    let eps = cfg.epsilon;

    let mut loss_acc = 0.0;
    // Per-depth scalar coefficients of the gradient: d(T)/d(dot), d(T)/d(np).
    let mut coef_dot = 0.0;
    let mut coef_np = 0.0;
    let mut coef_dot_c = 0.0;
    let mut coef_np_c = 0.0;
    for &d in &depths {
        let p2 = (1u64 << d) as f64;
        let eval = |dot: f64, na: f64, nb: f64| -> (f64, f64, f64) {
            let num = dot + eps;
            let den = p2 * (na + nb) - (2.0 * p2 - 1.0) * dot + eps;
            let t = num / den;
            let d_dot = (den + num * (2.0 * p2 - 1.0)) / (den * den);
            let d_nb = -num * p2 / (den * den);
            (t, d_dot, d_nb)
        };
        let (t, d_dot, d_np) = eval(dot, ny, np);
        let (tc, d_dot_c, d_np_c) = eval(dot_c, ny_c, np_c);
        loss_acc += 0.5 * (t + tc);
        coef_dot += d_dot;
        coef_np += d_np;
        coef_dot_c += d_dot_c;
        coef_np_c += d_np_c;
    }
    let ft = loss_acc / n_depths;
    let loss = 1.0 - ft;

    // dloss/dp_j = -(1/n) * 0.5 * [ (coef_dot y_j + 2 coef_np p_j) * m_j
    //                             - (coef_dot_c y'_j + 2 coef_np_c p'_j) * m_j ]
    let scale = -0.5 / n_depths;
    let mut grad = Array2::<F>::zeros(ym.raw_dim());
    for (((g, &yj), &pj), &mj) in
        grad.iter_mut().zip(ym.iter()).zip(pm.iter()).zip(mask.iter())
    {
        let (yj, pj, mj) = (yj.to_f64c(), pj.to_f64c(), mj.to_f64c());
        let direct = coef_dot * yj + 2.0 * coef_np * pj;
        let compl = coef_dot_c * (1.0 - yj) + 2.0 * coef_np_c * (1.0 - pj);
        *g = F::from_f64c(scale * (direct - compl) * mj);
    }
    (loss, grad)
}

/// Masked multi-task loss: sum over (extent, boundary, distance) of
/// `weight * (1 - FT(mask * label, mask * prediction))`, plus its gradient
/// with respect to the raw predictions.
pub fn masked_loss<F: Scalar>(
    predictions: &HeadMaps<F>,
    labels: &LabelStack,
    cfg: &TanimotoConfig,
    weights: (f64, f64, f64),
) -> Result<(f64, HeadMaps<F>)> {
    cfg.validate()?;
    let dim = predictions.extent.dim();
    if labels.extent.dim() != dim || labels.mask.dim() != dim {
        return Err(FieldkitError::ShapeMismatch(format!(
            "predictions {:?} vs labels {:?}",
            dim,
            labels.extent.dim()
        )));
    }
    if !labels.is_supervisable() {
        return Err(FieldkitError::UnsupervisableBatch(format!("{}x{} tile", dim.0, dim.1)));
    }
    let mask = labels.mask.mapv(|v| F::from_f64c(v as f64));
    let apply_mask = |arr: &Array2<F>| -> Array2<F> {
        let mut out = arr.clone();
        for (o, &m) in out.iter_mut().zip(mask.iter()) {
            *o = *o * m;
        }
        out
    };
    let label_planes: [Array2<F>; 3] = [
        labels.extent.mapv(|v| F::from_f64c(v as f64)),
        labels.boundary.mapv(|v| F::from_f64c(v as f64)),
        labels.distance.mapv(|v| F::from_f64c(v as f64)),
    ];
    let preds = predictions.as_array();
    let w = [weights.0, weights.1, weights.2];

    let mut total = 0.0;
    let mut grads = predictions.zeros_like();
    let grad_slots: [&mut Array2<F>; 3] =
        [&mut grads.extent, &mut grads.boundary, &mut grads.distance];
    for ((label, pred), (wt, slot)) in label_planes
        .iter()
        .zip(preds)
        .zip(w.into_iter().zip(grad_slots))
    {
        let ym = apply_mask(label);
        let pm = apply_mask(pred);
        let (loss, g) = task_loss_grad(&ym, &pm, &mask, cfg);
        total += wt * loss;
        let wtf = F::from_f64c(wt);
        for (dst, &src) in slot.iter_mut().zip(g.iter()) {
            *dst = wtf * src;
        }
    }
    Ok((total, grads))
}
