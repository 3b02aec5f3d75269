//! Central finite-difference validation of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{AutodiffError, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Denominator floor of the relative error, so gradients near zero are
    /// judged on absolute error instead.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct InputReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// Elements sitting on a kink of the function, where the one-sided
    /// differences disagree and no derivative exists.
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub inputs: Vec<InputReport>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error() < tol && self.inputs.iter().any(|r| r.checked > 0)
    }
}

/// Compares the tape gradient of `f` with central differences at `inputs`.
///
/// Non-scalar outputs are projected onto fixed random weights drawn from
/// `seed`, so every output element contributes to the check.
pub fn grad_check<F>(
    f: F,
    inputs: &[Tensor],
    seed: u64,
    cfg: GradCheckConfig,
) -> Result<GradReport, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |xs: &[Tensor]| -> Result<(Tape, Var, Vec<Var>), AutodiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, out, vars))
    };

    let (tape, out, _) = eval(inputs)?;
    let n_out = tape.value(out).len();
    let out_shape = tape.shape(out).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proj = if n_out == 1 {
        Tensor::scalar(1.0)
    } else {
        let w = (0..n_out)
            .map(|_| rng.random_range(0.5..1.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        Tensor::new(out_shape, w)?
    };

    let project = |xs: &[Tensor]| -> Result<f64, AutodiffError> {
        let (tape, out, _) = eval(xs)?;
        Ok(tape
            .value(out)
            .data()
            .iter()
            .zip(proj.data())
            .map(|(a, b)| a * b)
            .sum())
    };

    let (mut tape, out, vars) = eval(inputs)?;
    let w = tape.constant(proj.clone());
    let prod = if n_out == 1 { out } else { tape.mul(out, w)? };
    let loss = tape.sum(prod);
    let grads = tape.backward(loss)?;

    let h = cfg.step;
    let centre = project(inputs)?;
    let mut reports = Vec::with_capacity(inputs.len());
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var, inputs[i].len());
        let mut rep = InputReport::default();
        for k in 0..inputs[i].len() {
            let x0 = inputs[i].data()[k];
            probe[i].data_mut()[k] = x0 + h;
            let fp = project(&probe)?;
            probe[i].data_mut()[k] = x0 - h;
            let fm = project(&probe)?;
            probe[i].data_mut()[k] = x0;

            let right = (fp - centre) / h;
            let left = (centre - fm) / h;
            let gap = (right - left).abs();
            if gap > 1e-3 && gap > 1e-2 * right.abs().max(left.abs()) {
                rep.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let abs = (analytic[k] - numeric).abs();
            let rel = abs / analytic[k].abs().max(numeric.abs()).max(cfg.floor);
            rep.max_abs_error = rep.max_abs_error.max(abs);
            rep.max_rel_error = rep.max_rel_error.max(rel);
            rep.checked += 1;
        }
        reports.push(rep);
    }
    Ok(GradReport { inputs: reports })
}
