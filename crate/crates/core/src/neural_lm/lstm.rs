//! Single-layer LSTM cell with hand-written backpropagation through time.
//!
//! Gate rows are stacked as input, forget, output, candidate.

use crate::nn::{DenseMatrix, ParamId, ParamStore};
use crate::{rng, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) struct Lstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

pub(crate) struct Step {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates i, f, o, g.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Lstm {
    pub fn add(params: &mut ParamStore, prefix: &str, input: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut r = rng::substream(seed, &["lstm-init", prefix]);
        let wx = params.add(&format!("{prefix}.wx"), DenseMatrix::glorot(4 * hidden, input, &mut r))?;
        let wh = params.add(&format!("{prefix}.wh"), DenseMatrix::glorot(4 * hidden, hidden, &mut r))?;
        let b = params.add(&format!("{prefix}.b"), DenseMatrix::zeros(1, 4 * hidden))?;
        Ok(Lstm { wx, wh, b, hidden })
    }

    pub fn step(&self, p: &ParamStore, x: Vec<f64>, h_prev: &[f64], c_prev: &[f64]) -> Step {
        let n = self.hidden;
        let mut z = p.value(self.wx).matvec(&x);
        let zh = p.value(self.wh).matvec(h_prev);
        for ((zi, a), b) in z.iter_mut().zip(&zh).zip(p.value(self.b).data()) {
            *zi += a + b;
        }
        for (k, zi) in z.iter_mut().enumerate() {
            *zi = if k < 3 * n { sigmoid(*zi) } else { zi.tanh() };
        }
        let mut c = vec![0.0; n];
        let mut tanh_c = vec![0.0; n];
        let mut h = vec![0.0; n];
        for j in 0..n {
            c[j] = z[n + j] * c_prev[j] + z[j] * z[3 * n + j];
            tanh_c[j] = c[j].tanh();
            h[j] = z[2 * n + j] * tanh_c[j];
        }
        Step {
            x,
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates: z,
            tanh_c,
            c,
            h,
        }
    }

    /// Runs the cell over `xs` from the given state.
    pub fn run(&self, p: &ParamStore, xs: Vec<Vec<f64>>, h0: &[f64], c0: &[f64]) -> Vec<Step> {
        let mut steps: Vec<Step> = Vec::with_capacity(xs.len());
        for x in xs {
            let s = match steps.last() {
                Some(prev) => self.step(p, x, &prev.h, &prev.c),
                None => self.step(p, x, h0, c0),
            };
            steps.push(s);
        }
        steps
    }

    /// BPTT. `dh_out[t]` is the loss gradient flowing into `h_t` from
    /// outside the recurrence. Accumulates weight gradients into `grads`
    /// and returns the input gradients and the gradient of the initial
    /// hidden state.
    pub fn backward(
        &self,
        p: &ParamStore,
        steps: &[Step],
        dh_out: &[Vec<f64>],
        grads: &mut [DenseMatrix],
    ) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n = self.hidden;
        let mut dh_next = vec![0.0; n];
        let mut dc_next = vec![0.0; n];
        let mut dxs = vec![Vec::new(); steps.len()];
        let mut dz = vec![0.0; 4 * n];
        for t in (0..steps.len()).rev() {
            let s = &steps[t];
            let g = &s.gates;
            for j in 0..n {
                let dh = dh_out[t][j] + dh_next[j];
                let (i, f, o, cand) = (g[j], g[n + j], g[2 * n + j], g[3 * n + j]);
                let dc = dc_next[j] + dh * o * (1.0 - s.tanh_c[j] * s.tanh_c[j]);
                dz[j] = dc * cand * i * (1.0 - i);
                dz[n + j] = dc * s.c_prev[j] * f * (1.0 - f);
                dz[2 * n + j] = dh * s.tanh_c[j] * o * (1.0 - o);
                dz[3 * n + j] = dc * i * (1.0 - cand * cand);
                dc_next[j] = dc * f;
            }
            grads[self.wx.0].add_outer(&dz, &s.x);
            grads[self.wh.0].add_outer(&dz, &s.h_prev);
            for (gb, d) in grads[self.b.0].data_mut().iter_mut().zip(&dz) {
                *gb += d;
            }
            let mut dx = vec![0.0; s.x.len()];
            p.value(self.wx).matvec_t_acc(&dz, &mut dx);
            dxs[t] = dx;
            dh_next.fill(0.0);
            p.value(self.wh).matvec_t_acc(&dz, &mut dh_next);
        }
        (dxs, dh_next)
    }
}
