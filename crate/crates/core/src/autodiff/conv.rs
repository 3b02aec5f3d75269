//! Convolution whose tap positions come from a [`SamplingGrid`].

use std::sync::Arc;

use super::tape::{mismatch, AutodiffError, Ctx, Op, Tape, Var};
use crate::sampling::SamplingGrid;
use crate::tensor::Tensor;

pub(crate) struct ConvSaved {
    input: Var,
    weight: Var,
    bias: Var,
    grid: Arc<SamplingGrid>,
    channels_in: usize,
    channels_out: usize,
    /// Sampled input, `[C_in · taps, H_out · W_out]`.
    cols: Vec<f64>,
}

/// Gathers the bilinear samples of every tap into a `[C · taps, H_out · W_out]` matrix.
fn im2col(x: &[f64], channels: usize, grid: &SamplingGrid) -> Vec<f64> {
    let (h, w) = grid.input();
    let (ho, wo) = grid.output();
    let taps = grid.taps_per_row();
    let p = ho * wo;
    let mut cols = vec![0.0; channels * taps * p];
    for ch in 0..channels {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for r in 0..ho {
            for (t, tap) in grid.row_taps(r).iter().enumerate() {
                let dst = &mut cols[(ch * taps + t) * p + r * wo..][..wo];
                let rows = tap.rows.map(|row| &plane[row * w..(row + 1) * w]);
                for (c, d) in dst.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for q in 0..4 {
                        acc += tap.weights[q] * rows[q][grid.source_col(tap, q, c)];
                    }
                    *d = acc;
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
fn col2im(dcols: &[f64], dx: &mut [f64], channels: usize, grid: &SamplingGrid) {
    let (h, w) = grid.input();
    let (ho, wo) = grid.output();
    let taps = grid.taps_per_row();
    let p = ho * wo;
    for ch in 0..channels {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for r in 0..ho {
            for (t, tap) in grid.row_taps(r).iter().enumerate() {
                let src = &dcols[(ch * taps + t) * p + r * wo..][..wo];
                for (c, g) in src.iter().enumerate() {
                    for q in 0..4 {
                        let idx = tap.rows[q] * w + grid.source_col(tap, q, c);
                        plane[idx] += tap.weights[q] * g;
                    }
                }
            }
        }
    }
}

impl Tape {
    /// `out[o, r, c] = bias[o] + Σ weight[o, ci, i, j] · sample(input, grid, r, c, (i, j))`.
    pub fn grid_conv(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        grid: Arc<SamplingGrid>,
    ) -> Result<Var, AutodiffError> {
        let (h, w) = grid.input();
        let (kh, kw) = grid.kernel();
        let xs = self.shape(input).to_vec();
        if xs.len() != 3 || xs[1] != h || xs[2] != w {
            return Err(mismatch("grid_conv input", &[0, h, w], &xs));
        }
        let cin = xs[0];
        let ws = self.shape(weight).to_vec();
        if ws.len() != 4 || ws[1] != cin || ws[2] != kh || ws[3] != kw {
            return Err(mismatch("grid_conv weight", &[0, cin, kh, kw], &ws));
        }
        let cout = ws[0];
        if self.shape(bias) != [cout] {
            return Err(mismatch("grid_conv bias", &[cout], self.shape(bias)));
        }

        let cols = im2col(self.value(input).data(), cin, &grid);
        let (ho, wo) = grid.output();
        let p = ho * wo;
        let k = cin * kh * kw;
        let wv = self.value(weight).data();
        let bv = self.value(bias).data();
        let mut out = vec![0.0; cout * p];
        for o in 0..cout {
            let row = &mut out[o * p..(o + 1) * p];
            row.fill(bv[o]);
            for kk in 0..k {
                let wgt = wv[o * k + kk];
                let src = &cols[kk * p..(kk + 1) * p];
                row.iter_mut().zip(src).for_each(|(a, s)| *a += wgt * s);
            }
        }
        let out = Tensor::new(vec![cout, ho, wo], out)?;
        let saved = ConvSaved {
            input,
            weight,
            bias,
            grid,
            channels_in: cin,
            channels_out: cout,
            cols,
        };
        Ok(self.push(out, Op::GridConv(Box::new(saved)), &[input, weight, bias]))
    }
}

impl ConvSaved {
    pub(crate) fn backward(&self, g: &[f64], ctx: &mut Ctx<'_>) {
        let (ho, wo) = self.grid.output();
        let p = ho * wo;
        let k = self.channels_in * self.grid.taps_per_row();
        if let Some(gb) = ctx.grad_mut(self.bias) {
            for (o, b) in gb.iter_mut().enumerate() {
                *b += g[o * p..(o + 1) * p].iter().sum::<f64>();
            }
        }
        if let Some(gw) = ctx.grad_mut(self.weight) {
            for o in 0..self.channels_out {
                let go = &g[o * p..(o + 1) * p];
                for kk in 0..k {
                    let src = &self.cols[kk * p..(kk + 1) * p];
                    gw[o * k + kk] += super::tape::dot(go, src);
                }
            }
        }
        if ctx.wants(self.input) {
            let wv = ctx.value(self.weight).data();
            let mut dcols = vec![0.0; k * p];
            for o in 0..self.channels_out {
                let go = &g[o * p..(o + 1) * p];
                for kk in 0..k {
                    let wgt = wv[o * k + kk];
                    dcols[kk * p..(kk + 1) * p]
                        .iter_mut()
                        .zip(go)
                        .for_each(|(a, b)| *a += wgt * b);
                }
            }
            let gx = ctx.grad_mut(self.input).unwrap();
            col2im(&dcols, gx, self.channels_in, &self.grid);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{build_grid, GridMode, GridSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn identity_kernel_copies_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random(&mut rng, &[2, 6, 8]);
        let grid = Arc::new(build_grid(GridSpec::new(GridMode::Planar, (1, 1), (6, 8))).unwrap());
        let mut tape = Tape::new();
        let xi = tape.constant(x.clone());
        let mut w = Tensor::zeros(&[2, 2, 1, 1]);
        w.data_mut()[0] = 1.0;
        w.data_mut()[3] = 1.0;
        let wi = tape.constant(w);
        let b = tape.constant(Tensor::zeros(&[2]));
        let y = tape.grid_conv(xi, wi, b, grid).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let grid = Arc::new(build_grid(GridSpec::new(GridMode::Planar, (3, 3), (6, 8))).unwrap());
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 6, 9]));
        let w = tape.constant(Tensor::zeros(&[1, 2, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[1]));
        assert!(tape.grid_conv(x, w, b, grid.clone()).is_err());
        let x = tape.constant(Tensor::zeros(&[2, 6, 8]));
        let w3 = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
        assert!(tape.grid_conv(x, w3, b, grid).is_err());
    }

    #[test]
    fn scatter_conserves_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for mode in GridMode::ALL {
            let grid = Arc::new(
                build_grid(GridSpec::new(mode, (3, 3), (8, 16)).with_stride((2, 2))).unwrap(),
            );
            let mut tape = Tape::new();
            let x = tape.leaf(random(&mut rng, &[1, 8, 16]), true);
            // a single active tap with weight 1
            let mut w = Tensor::zeros(&[1, 1, 3, 3]);
            w.data_mut()[rng.random_range(0..9)] = 1.0;
            let w = tape.constant(w);
            let b = tape.constant(Tensor::zeros(&[1]));
            let y = tape.grid_conv(x, w, b, grid).unwrap();
            let s = tape.sum(y);
            let g = tape.backward(s).unwrap();
            let total: f64 = g.get(x).unwrap().iter().sum();
            assert!((total - tape.value(y).len() as f64).abs() < 1e-12);
        }
    }
}
