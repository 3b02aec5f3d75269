//! Gated recurrent unit, fused into a single tape op per step.
//!
//! ```text
//! z  = σ(W_z·[x; h] + b_z)
//! r  = σ(W_r·[x; h] + b_r)
//! h̃  = tanh(W_h·[x; r∘h] + b_h)
//! h' = (1 − z)∘h̃ + z∘h
//! ```
//! with every `W` shaped `K × (D + K)`.

use super::tape::{dot, mismatch, sigmoid_scalar, AutodiffError, Ctx, Op, Tape, Var};
use crate::tensor::Tensor;

/// Tape handles of one direction's GRU parameters.
#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub w_z: Var,
    pub w_r: Var,
    pub w_h: Var,
    pub b_z: Var,
    pub b_r: Var,
    pub b_h: Var,
}

pub(crate) struct GruSaved {
    x: Var,
    h: Var,
    p: GruParams,
    xh: Vec<f64>,
    xrh: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
}

fn matvec(w: &[f64], v: &[f64], b: &[f64]) -> Vec<f64> {
    let n = v.len();
    w.chunks(n).zip(b).map(|(row, bias)| bias + dot(row, v)).collect()
}

impl Tape {
    pub fn gru_cell(&mut self, x: Var, h: Var, p: &GruParams) -> Result<Var, AutodiffError> {
        let d = self.value(x).len();
        let k = self.value(h).len();
        for w in [p.w_z, p.w_r, p.w_h] {
            if self.shape(w) != [k, d + k] {
                return Err(mismatch("gru_cell weight", &[k, d + k], self.shape(w)));
            }
        }
        for b in [p.b_z, p.b_r, p.b_h] {
            if self.shape(b) != [k] {
                return Err(mismatch("gru_cell bias", &[k], self.shape(b)));
            }
        }
        let hv = self.value(h).data().to_vec();
        let mut xh = self.value(x).data().to_vec();
        xh.extend_from_slice(&hv);

        let z: Vec<f64> = matvec(self.value(p.w_z).data(), &xh, self.value(p.b_z).data())
            .into_iter()
            .map(sigmoid_scalar)
            .collect();
        let r: Vec<f64> = matvec(self.value(p.w_r).data(), &xh, self.value(p.b_r).data())
            .into_iter()
            .map(sigmoid_scalar)
            .collect();
        let mut xrh = xh.clone();
        for j in 0..k {
            xrh[d + j] = r[j] * hv[j];
        }
        let cand: Vec<f64> = matvec(self.value(p.w_h).data(), &xrh, self.value(p.b_h).data())
            .into_iter()
            .map(f64::tanh)
            .collect();
        let out: Vec<f64> = (0..k)
            .map(|j| (1.0 - z[j]) * cand[j] + z[j] * hv[j])
            .collect();

        let saved = GruSaved {
            x,
            h,
            p: *p,
            xh,
            xrh,
            z,
            r,
            cand,
        };
        let inputs = [x, h, p.w_z, p.w_r, p.w_h, p.b_z, p.b_r, p.b_h];
        Ok(self.push(
            Tensor::from_vec(out),
            Op::GruCell(Box::new(saved)),
            &inputs,
        ))
    }

    /// Runs `fwd` left to right and `bwd` right to left over `seq [T, D]`,
    /// returning `[T, 2K]` with the forward state first at every step.
    pub fn bi_gru(
        &mut self,
        seq: Var,
        fwd: &GruParams,
        bwd: &GruParams,
    ) -> Result<Var, AutodiffError> {
        let shape = self.shape(seq).to_vec();
        if shape.len() != 2 {
            return Err(mismatch("bi_gru", &[0, 0], &shape));
        }
        let steps = shape[0];
        let k = self.shape(fwd.b_z)[0];
        if self.shape(bwd.b_z) != [k] {
            return Err(mismatch("bi_gru", &[k], self.shape(bwd.b_z)));
        }
        let rows: Vec<Var> = (0..steps)
            .map(|t| self.row(seq, t))
            .collect::<Result<_, _>>()?;

        let mut forward = Vec::with_capacity(steps);
        let mut h = self.constant(Tensor::zeros(&[k]));
        for x in &rows {
            h = self.gru_cell(*x, h, fwd)?;
            forward.push(h);
        }
        let mut backward = vec![h; steps];
        let mut h = self.constant(Tensor::zeros(&[k]));
        for t in (0..steps).rev() {
            h = self.gru_cell(rows[t], h, bwd)?;
            backward[t] = h;
        }
        let parts: Vec<Var> = forward
            .iter()
            .zip(&backward)
            .flat_map(|(f, b)| [*f, *b])
            .collect();
        self.concat(&parts, vec![steps, 2 * k])
    }
}

impl GruSaved {
    pub(crate) fn backward(&self, g: &[f64], ctx: &mut Ctx<'_>) {
        let k = self.z.len();
        let n = self.xh.len();
        let d = n - k;
        let hv = &self.xh[d..];

        let mut dz = vec![0.0; k];
        let mut dcand_pre = vec![0.0; k];
        let mut dh = vec![0.0; k];
        for j in 0..k {
            dz[j] = g[j] * (hv[j] - self.cand[j]) * self.z[j] * (1.0 - self.z[j]);
            dcand_pre[j] = g[j] * (1.0 - self.z[j]) * (1.0 - self.cand[j] * self.cand[j]);
            dh[j] = g[j] * self.z[j];
        }

        // candidate branch: input [x; r∘h]
        let wh = ctx.value(self.p.w_h).data().to_vec();
        let mut dxrh = vec![0.0; n];
        for j in 0..k {
            let row = &wh[j * n..(j + 1) * n];
            dxrh.iter_mut().zip(row).for_each(|(a, w)| *a += dcand_pre[j] * w);
        }
        let mut dr = vec![0.0; k];
        for j in 0..k {
            dr[j] = dxrh[d + j] * hv[j] * self.r[j] * (1.0 - self.r[j]);
            dh[j] += dxrh[d + j] * self.r[j];
        }
        let mut dxh = vec![0.0; n];
        dxh[..d].copy_from_slice(&dxrh[..d]);

        for (w, pre) in [(self.p.w_z, &dz), (self.p.w_r, &dr)] {
            let wv = ctx.value(w).data();
            for j in 0..k {
                let row = &wv[j * n..(j + 1) * n];
                dxh.iter_mut().zip(row).for_each(|(a, w)| *a += pre[j] * w);
            }
        }

        for (w, pre, input) in [
            (self.p.w_z, &dz, &self.xh),
            (self.p.w_r, &dr, &self.xh),
            (self.p.w_h, &dcand_pre, &self.xrh),
        ] {
            if let Some(gw) = ctx.grad_mut(w) {
                for j in 0..k {
                    let gj = pre[j];
                    gw[j * n..(j + 1) * n]
                        .iter_mut()
                        .zip(input.iter())
                        .for_each(|(a, v)| *a += gj * v);
                }
            }
        }
        for (b, pre) in [(self.p.b_z, &dz), (self.p.b_r, &dr), (self.p.b_h, &dcand_pre)] {
            if let Some(gb) = ctx.grad_mut(b) {
                gb.iter_mut().zip(pre.iter()).for_each(|(a, v)| *a += v);
            }
        }
        if let Some(gx) = ctx.grad_mut(self.x) {
            gx.iter_mut().zip(&dxh[..d]).for_each(|(a, v)| *a += v);
        }
        if let Some(gh) = ctx.grad_mut(self.h) {
            for j in 0..k {
                gh[j] += dh[j] + dxh[d + j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(tape: &mut Tape, d: usize, k: usize, mut fill: impl FnMut() -> f64) -> GruParams {
        let mut mk = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            tape.leaf(
                Tensor::new(shape.to_vec(), (0..n).map(|_| fill()).collect()).unwrap(),
                true,
            )
        };
        GruParams {
            w_z: mk(&[k, d + k]),
            w_r: mk(&[k, d + k]),
            w_h: mk(&[k, d + k]),
            b_z: mk(&[k]),
            b_r: mk(&[k]),
            b_h: mk(&[k]),
        }
    }

    #[test]
    fn zero_params_zero_state() {
        let mut tape = Tape::new();
        let p = params(&mut tape, 3, 2, || 0.0);
        let x = tape.constant(Tensor::from_vec(vec![1.0, -2.0, 0.5]));
        let h = tape.constant(Tensor::zeros(&[2]));
        let out = tape.gru_cell(x, h, &p).unwrap();
        assert_eq!(tape.value(out).data(), &[0.0, 0.0]);
    }

    #[test]
    fn saturated_update_gate_carries_state() {
        let mut tape = Tape::new();
        let p = params(&mut tape, 1, 1, || 0.0);
        let p = GruParams {
            b_z: tape.constant(Tensor::from_vec(vec![10.0])),
            ..p
        };
        let x = tape.constant(Tensor::from_vec(vec![0.3]));
        let h = tape.constant(Tensor::from_vec(vec![0.8]));
        let out = tape.gru_cell(x, h, &p).unwrap();
        assert!((tape.value(out).data()[0] - 0.8).abs() < 1e-4);
    }

    #[test]
    fn scalar_cell_matches_hand_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..11).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (x, h) = (v[0], v[1]);
        let (wzx, wzh, wrx, wrh, whx, whh, bz, br, bh) =
            (v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9], v[10]);
        let sig = |a: f64| 1.0 / (1.0 + (-a).exp());
        let z = sig(wzx * x + wzh * h + bz);
        let r = sig(wrx * x + wrh * h + br);
        let c = (whx * x + whh * (r * h) + bh).tanh();
        let expect = (1.0 - z) * c + z * h;

        let mut tape = Tape::new();
        let mut leaf = |vals: &[f64], shape: Vec<usize>| {
            tape.leaf(Tensor::new(shape, vals.to_vec()).unwrap(), true)
        };
        let p = GruParams {
            w_z: leaf(&[wzx, wzh], vec![1, 2]),
            w_r: leaf(&[wrx, wrh], vec![1, 2]),
            w_h: leaf(&[whx, whh], vec![1, 2]),
            b_z: leaf(&[bz], vec![1]),
            b_r: leaf(&[br], vec![1]),
            b_h: leaf(&[bh], vec![1]),
        };
        let xv = leaf(&[x], vec![1]);
        let hv = leaf(&[h], vec![1]);
        let out = tape.gru_cell(xv, hv, &p).unwrap();
        assert!((tape.value(out).data()[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn single_step_bi_gru_concatenates_both_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut tape = Tape::new();
        let f = params(&mut tape, 3, 2, || rng.random_range(-0.5..0.5));
        let b = params(&mut tape, 3, 2, || rng.random_range(-0.5..0.5));
        let seq = tape.constant(Tensor::new(vec![1, 3], vec![0.1, 0.2, -0.3]).unwrap());
        let out = tape.bi_gru(seq, &f, &b).unwrap();
        let x = tape.row(seq, 0).unwrap();
        let h0 = tape.constant(Tensor::zeros(&[2]));
        let hf = tape.gru_cell(x, h0, &f).unwrap();
        let hb = tape.gru_cell(x, h0, &b).unwrap();
        let mut expect = tape.value(hf).data().to_vec();
        expect.extend_from_slice(tape.value(hb).data());
        assert_eq!(tape.value(out).data(), expect.as_slice());
    }

    #[test]
    fn reversal_swaps_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tape = Tape::new();
        let f = params(&mut tape, 2, 3, || rng.random_range(-0.5..0.5));
        let b = params(&mut tape, 2, 3, || rng.random_range(-0.5..0.5));
        let data: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rev: Vec<f64> = data.chunks(2).rev().flatten().copied().collect();
        let seq = tape.constant(Tensor::new(vec![5, 2], data).unwrap());
        let seq_rev = tape.constant(Tensor::new(vec![5, 2], rev).unwrap());
        let a = tape.bi_gru(seq, &f, &b).unwrap();
        let r = tape.bi_gru(seq_rev, &b, &f).unwrap();
        let (a, r) = (tape.value(a).data(), tape.value(r).data());
        for t in 0..5 {
            let at = &a[t * 6..(t + 1) * 6];
            let rt = &r[(4 - t) * 6..(5 - t) * 6];
            assert_eq!(&at[..3], &rt[3..]);
            assert_eq!(&at[3..], &rt[..3]);
        }
    }

    #[test]
    fn bi_gru_matches_manual_unroll() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut tape = Tape::new();
        let f = params(&mut tape, 2, 2, || rng.random_range(-0.5..0.5));
        let b = params(&mut tape, 2, 2, || rng.random_range(-0.5..0.5));
        let data: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let seq = tape.constant(Tensor::new(vec![3, 2], data).unwrap());
        let out = tape.bi_gru(seq, &f, &b).unwrap();
        let xs: Vec<Var> = (0..3).map(|t| tape.row(seq, t).unwrap()).collect();
        let zero = tape.constant(Tensor::zeros(&[2]));
        let f1 = tape.gru_cell(xs[0], zero, &f).unwrap();
        let f2 = tape.gru_cell(xs[1], f1, &f).unwrap();
        let f3 = tape.gru_cell(xs[2], f2, &f).unwrap();
        let b3 = tape.gru_cell(xs[2], zero, &b).unwrap();
        let b2 = tape.gru_cell(xs[1], b3, &b).unwrap();
        let b1 = tape.gru_cell(xs[0], b2, &b).unwrap();
        let mut expect = Vec::new();
        for (fv, bv) in [(f1, b1), (f2, b2), (f3, b3)] {
            expect.extend_from_slice(tape.value(fv).data());
            expect.extend_from_slice(tape.value(bv).data());
        }
        assert_eq!(tape.value(out).data(), expect.as_slice());
    }
}
