//! Fused single-direction LSTM over a `(batch, seq, features)` tensor.
//!
//! Gate order in the stacked weights is input, forget, cell, output.

use crate::numerics::tape::{gemm, sigmoid, Backward, Tape, Tensor, Var};

/// Runs one LSTM direction; `reverse` walks the sequence from its end.
///
/// `w_ih` is `(4H, D)`, `w_hh` is `(4H, H)`, `b` is `(4H)`. Output `(B, L, H)`.
pub fn lstm(tape: &mut Tape, x: Var, w_ih: Var, w_hh: Var, b: Var, reverse: bool) -> Var {
    let (vx, vi, vh, vb) = (tape.value(x), tape.value(w_ih), tape.value(w_hh), tape.value(b));
    let s = vx.shape();
    assert_eq!(s.len(), 3, "lstm input must be (batch, seq, features)");
    let (bsz, len, d) = (s[0], s[1], s[2]);
    let h4 = vi.shape()[0];
    let h = h4 / 4;
    assert_eq!(vi.shape(), &[h4, d], "lstm: input weight shape");
    assert_eq!(vh.shape(), &[h4, h], "lstm: recurrent weight shape");
    assert_eq!(vb.numel(), h4, "lstm: bias shape");

    // Pre-activations for every (b, t), then activated in place step by step.
    let rows = bsz * len;
    let mut gates = vec![0.0; rows * h4];
    for row in gates.chunks_exact_mut(h4) {
        row.copy_from_slice(vb.data());
    }
    gemm(rows, d, h4, 1.0, vx.data(), d, 1, vi.data(), 1, d, 1.0, &mut gates, h4, 1);

    let mut out = vec![0.0; rows * h];
    let mut cells = vec![0.0; rows * h];
    for step in 0..len {
        let t = if reverse { len - 1 - step } else { step };
        let prev = (step > 0).then(|| if reverse { t + 1 } else { t - 1 });
        if let Some(p) = prev {
            gemm(bsz, h, h4, 1.0, &out[p * h..], len * h, 1, vh.data(), 1, h, 1.0, &mut gates[t * h4..], len * h4, 1);
        }
        for bi in 0..bsz {
            let r = bi * len + t;
            let g = &mut gates[r * h4..(r + 1) * h4];
            for u in 0..h {
                g[u] = sigmoid(g[u]);
                g[h + u] = sigmoid(g[h + u]);
                g[2 * h + u] = g[2 * h + u].tanh();
                g[3 * h + u] = sigmoid(g[3 * h + u]);
            }
            for u in 0..h {
                let c_prev = prev.map_or(0.0, |p| cells[(bi * len + p) * h + u]);
                let c = g[h + u] * c_prev + g[u] * g[2 * h + u];
                cells[r * h + u] = c;
                out[r * h + u] = g[3 * h + u] * c.tanh();
            }
        }
    }
    let value = Tensor::new(vec![bsz, len, h], out);
    tape.record(
        value,
        vec![x, w_ih, w_hh, b],
        Box::new(LstmRule {
            gates,
            cells,
            reverse,
            dims: (bsz, len, d, h),
        }),
    )
}

struct LstmRule {
    /// Activated gates per (b, t).
    gates: Vec<f64>,
    cells: Vec<f64>,
    reverse: bool,
    dims: (usize, usize, usize, usize),
}

impl Backward for LstmRule {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], output: &Tensor) -> Vec<Option<Tensor>> {
        let (bsz, len, d, h) = self.dims;
        let h4 = 4 * h;
        let rows = bsz * len;
        let (x, w_ih, w_hh) = (inputs[0], inputs[1], inputs[2]);
        let hs = output.data();
        let dh_out = grad.data();

        let mut dz = vec![0.0; rows * h4];
        let mut dh_next = vec![0.0; bsz * h];
        let mut dc_next = vec![0.0; bsz * h];
        for step in (0..len).rev() {
            let t = if self.reverse { len - 1 - step } else { step };
            let prev = (step > 0).then(|| if self.reverse { t + 1 } else { t - 1 });
            for bi in 0..bsz {
                let r = bi * len + t;
                let g = &self.gates[r * h4..(r + 1) * h4];
                let dzr = &mut dz[r * h4..(r + 1) * h4];
                for u in 0..h {
                    let (i, f, gg, o) = (g[u], g[h + u], g[2 * h + u], g[3 * h + u]);
                    let c = self.cells[r * h + u];
                    let tc = c.tanh();
                    let dh = dh_out[r * h + u] + dh_next[bi * h + u];
                    let dc = dc_next[bi * h + u] + dh * o * (1.0 - tc * tc);
                    let c_prev = prev.map_or(0.0, |p| self.cells[(bi * len + p) * h + u]);
                    dzr[u] = dc * gg * i * (1.0 - i);
                    dzr[h + u] = dc * c_prev * f * (1.0 - f);
                    dzr[2 * h + u] = dc * i * (1.0 - gg * gg);
                    dzr[3 * h + u] = dh * tc * o * (1.0 - o);
                    dc_next[bi * h + u] = dc * f;
                }
            }
            // dh_prev = dZ_t · W_hh
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            if prev.is_some() {
                gemm(bsz, h4, h, 1.0, &dz[t * h4..], len * h4, 1, w_hh.data(), h, 1, 0.0, &mut dh_next, h, 1);
            }
        }

        // Hidden state that fed each step (zero at the first step).
        let mut h_prev = vec![0.0; rows * h];
        for bi in 0..bsz {
            for t in 0..len {
                let p = if self.reverse { t + 1 } else { t.wrapping_sub(1) };
                if p < len {
                    let (dst, src) = ((bi * len + t) * h, (bi * len + p) * h);
                    h_prev[dst..dst + h].copy_from_slice(&hs[src..src + h]);
                }
            }
        }

        let mut dx = Tensor::zeros(vec![bsz, len, d]);
        gemm(rows, h4, d, 1.0, &dz, h4, 1, w_ih.data(), d, 1, 0.0, dx.data_mut(), d, 1);
        let mut dw_ih = Tensor::zeros(vec![h4, d]);
        gemm(h4, rows, d, 1.0, &dz, 1, h4, x.data(), d, 1, 0.0, dw_ih.data_mut(), d, 1);
        let mut dw_hh = Tensor::zeros(vec![h4, h]);
        gemm(h4, rows, h, 1.0, &dz, 1, h4, &h_prev, h, 1, 0.0, dw_hh.data_mut(), h, 1);
        let mut db = vec![0.0; h4];
        for row in dz.chunks_exact(h4) {
            for (a, v) in db.iter_mut().zip(row) {
                *a += v;
            }
        }
        vec![Some(dx), Some(dw_ih), Some(dw_hh), Some(Tensor::new(vec![h4], db))]
    }
}
