//! Mean-reduced training losses.

use super::tape::{mismatch, sigmoid_scalar, AutodiffError, Ctx, Op, Tape, Var};
use crate::tensor::Tensor;

/// Per-element binary cross-entropy on a logit, in the overflow-free form.
pub fn bce_scalar(x: f64, t: f64) -> f64 {
    x.max(0.0) - x * t + (-x.abs()).exp().ln_1p()
}

impl Tape {
    /// Mean absolute difference. The subgradient at zero difference is 0.
    pub fn l1_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var, AutodiffError> {
        if self.shape(pred) != target.shape() {
            return Err(mismatch("l1_loss", target.shape(), self.shape(pred)));
        }
        let p = self.value(pred).data();
        let n = p.len() as f64;
        let s: f64 = p.iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum();
        let op = Op::L1 {
            pred,
            target: target.clone(),
        };
        Ok(self.push(Tensor::scalar(s / n), op, &[pred]))
    }

    /// Mean binary cross-entropy of `logits` against targets in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logits: Var, target: &Tensor) -> Result<Var, AutodiffError> {
        if self.shape(logits) != target.shape() {
            return Err(mismatch("bce_with_logits", target.shape(), self.shape(logits)));
        }
        if let Some(bad) = target.data().iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(AutodiffError::TargetOutOfRange(*bad));
        }
        let x = self.value(logits).data();
        let n = x.len() as f64;
        let s: f64 = x.iter().zip(target.data()).map(|(x, t)| bce_scalar(*x, *t)).sum();
        let op = Op::Bce {
            logits,
            target: target.clone(),
        };
        Ok(self.push(Tensor::scalar(s / n), op, &[logits]))
    }
}

pub(crate) fn l1_backward(pred: Var, target: &Tensor, g: f64, ctx: &mut Ctx<'_>) {
    let p = ctx.value(pred).data().to_vec();
    let scale = g / p.len() as f64;
    if let Some(gp) = ctx.grad_mut(pred) {
        for ((a, x), t) in gp.iter_mut().zip(&p).zip(target.data()) {
            let d = x - t;
            if d > 0.0 {
                *a += scale;
            } else if d < 0.0 {
                *a -= scale;
            }
        }
    }
}

pub(crate) fn bce_backward(logits: Var, target: &Tensor, g: f64, ctx: &mut Ctx<'_>) {
    let x = ctx.value(logits).data().to_vec();
    let scale = g / x.len() as f64;
    if let Some(gx) = ctx.grad_mut(logits) {
        for ((a, x), t) in gx.iter_mut().zip(&x).zip(target.data()) {
            *a += scale * (sigmoid_scalar(*x) - t);
        }
    }
}
