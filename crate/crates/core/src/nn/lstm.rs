use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::activation::sigmoid;
use crate::nn::dense::glorot_limit;
use crate::nn::{gemm, ParamRange, ParameterSet, Tensor};

/// Single LSTM layer returning every hidden state.
///
/// Gate blocks are stacked `[input; forget; cell; output]` along the rows of
/// the `[4h x in]` input weights, the `[4h x h]` recurrent weights and the
/// `4h` bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    pub input_size: usize,
    pub hidden_size: usize,
    pub input_weights: ParamRange,
    pub recurrent_weights: ParamRange,
    pub bias: ParamRange,
}

/// Forget-gate bias at initialization.
pub const FORGET_BIAS_INIT: f64 = 1.0;

impl LstmLayer {
    pub fn new(
        params: &mut ParameterSet,
        name: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let h = hidden_size;
        let lim_x = glorot_limit(input_size, 4 * h);
        let input_weights = params.alloc(format!("{name}.wx"), &[4 * h, input_size], || {
            rng.gen_range(-lim_x..lim_x)
        });
        let lim_h = 1.0 / (h as f64).sqrt();
        let recurrent_weights = params.alloc(format!("{name}.wh"), &[4 * h, h], || {
            rng.gen_range(-lim_h..lim_h)
        });
        let mut k = 0usize;
        let bias = params.alloc(format!("{name}.b"), &[4 * h], || {
            let v = if (h..2 * h).contains(&k) {
                FORGET_BIAS_INIT
            } else {
                0.0
            };
            k += 1;
            v
        });
        LstmLayer {
            input_size,
            hidden_size,
            input_weights,
            recurrent_weights,
            bias,
        }
    }

    /// `4 * ((in + 1) * h + h^2)`.
    pub fn param_count(&self) -> usize {
        self.input_weights.len + self.recurrent_weights.len + self.bias.len
    }

    /// Gate activations in place: sigmoid on i, f, o and tanh on g.
    fn activate(&self, z: &mut [f64]) {
        let h = self.hidden_size;
        for row in z.chunks_exact_mut(4 * h) {
            for (k, v) in row.iter_mut().enumerate() {
                *v = if (2 * h..3 * h).contains(&k) {
                    v.tanh()
                } else {
                    sigmoid(*v)
                };
            }
        }
    }

    /// One recurrence step for a batch: returns `(h, c)`.
    pub fn step(
        &self,
        params: &[f64],
        x_t: &Tensor,
        h_prev: &Tensor,
        c_prev: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let h = self.hidden_size;
        let batch = x_t.rows();
        if x_t.cols() != self.input_size {
            return Err(Error::dim(format!(
                "lstm expects {} inputs, got {}",
                self.input_size,
                x_t.cols()
            )));
        }
        for (name, t) in [("h_prev", h_prev), ("c_prev", c_prev)] {
            if t.rows() != batch || t.cols() != h {
                return Err(Error::dim(format!(
                    "{name} must be {batch} x {h}, got {:?}",
                    t.shape()
                )));
            }
        }
        let mut z = vec![0.0; batch * 4 * h];
        let b = self.bias.slice(params);
        for row in z.chunks_exact_mut(4 * h) {
            row.copy_from_slice(b);
        }
        gemm(batch, self.input_size, 4 * h, 1.0, x_t.data(), false, self.input_weights.slice(params), true, 1.0, &mut z);
        gemm(batch, h, 4 * h, 1.0, h_prev.data(), false, self.recurrent_weights.slice(params), true, 1.0, &mut z);
        self.activate(&mut z);
        let mut h_new = vec![0.0; batch * h];
        let mut c_new = vec![0.0; batch * h];
        for s in 0..batch {
            let g = &z[s * 4 * h..(s + 1) * 4 * h];
            for k in 0..h {
                let c = g[h + k] * c_prev.data()[s * h + k] + g[k] * g[2 * h + k];
                c_new[s * h + k] = c;
                h_new[s * h + k] = g[3 * h + k] * c.tanh();
            }
        }
        Ok((
            Tensor::new(vec![batch, h], h_new)?,
            Tensor::new(vec![batch, h], c_new)?,
        ))
    }

    /// Runs the recurrence over `xs` (`[batch x n_t x in]`, zero initial
    /// state) and returns all hidden states as `[batch x n_t x h]`.
    pub fn forward(&self, params: &[f64], xs: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(params, xs)?.0)
    }

    pub fn forward_cached(&self, params: &[f64], xs: &Tensor) -> Result<(Tensor, LstmCache)> {
        let shape = xs.shape();
        if shape.len() != 3 || shape[2] != self.input_size {
            return Err(Error::dim(format!(
                "lstm expects [batch, t, {}] input, got {shape:?}",
                self.input_size
            )));
        }
        let (batch, n_t) = (shape[0], shape[1]);
        let h = self.hidden_size;
        let g4 = 4 * h;

        // input projections for every (sample, step) row at once
        let mut xw = vec![0.0; batch * n_t * g4];
        let b = self.bias.slice(params);
        for row in xw.chunks_exact_mut(g4) {
            row.copy_from_slice(b);
        }
        gemm(batch * n_t, self.input_size, g4, 1.0, xs.data(), false, self.input_weights.slice(params), true, 1.0, &mut xw);

        let wh = self.recurrent_weights.slice(params);
        let mut gates = vec![0.0; n_t * batch * g4];
        let mut cs = vec![0.0; (n_t + 1) * batch * h];
        let mut hs = vec![0.0; (n_t + 1) * batch * h];
        let mut out = vec![0.0; batch * n_t * h];
        for t in 0..n_t {
            let z = &mut gates[t * batch * g4..(t + 1) * batch * g4];
            for s in 0..batch {
                let src = (s * n_t + t) * g4;
                z[s * g4..(s + 1) * g4].copy_from_slice(&xw[src..src + g4]);
            }
            let (h_prev, h_rest) = hs.split_at_mut((t + 1) * batch * h);
            let h_prev = &h_prev[t * batch * h..];
            gemm(batch, h, g4, 1.0, h_prev, false, wh, true, 1.0, z);
            self.activate(z);
            let (c_prev, c_rest) = cs.split_at_mut((t + 1) * batch * h);
            let c_prev = &c_prev[t * batch * h..];
            let c_cur = &mut c_rest[..batch * h];
            let h_cur = &mut h_rest[..batch * h];
            for s in 0..batch {
                let g = &z[s * g4..(s + 1) * g4];
                for k in 0..h {
                    let c = g[h + k] * c_prev[s * h + k] + g[k] * g[2 * h + k];
                    let hv = g[3 * h + k] * c.tanh();
                    c_cur[s * h + k] = c;
                    h_cur[s * h + k] = hv;
                    out[(s * n_t + t) * h + k] = hv;
                }
            }
        }
        let cache = LstmCache {
            batch,
            n_t,
            gates,
            cs,
            hs,
        };
        Ok((Tensor::new(vec![batch, n_t, h], out)?, cache))
    }

    /// Backpropagation through time. `d_out` is `[batch x n_t x h]`.
    pub fn backward(
        &self,
        params: &[f64],
        xs: &Tensor,
        cache: &LstmCache,
        d_out: &Tensor,
        grad: &mut [f64],
        want_input: bool,
    ) -> Option<Tensor> {
        let LstmCache {
            batch,
            n_t,
            ref gates,
            ref cs,
            ref hs,
        } = *cache;
        let h = self.hidden_size;
        let g4 = 4 * h;
        let wh = self.recurrent_weights.slice(params);
        let dout = d_out.data();

        let mut dz_all = vec![0.0; batch * n_t * g4];
        let mut dz = vec![0.0; batch * g4];
        let mut dh_next = vec![0.0; batch * h];
        let mut dc_next = vec![0.0; batch * h];
        for t in (0..n_t).rev() {
            let gt = &gates[t * batch * g4..(t + 1) * batch * g4];
            let c_prev = &cs[t * batch * h..(t + 1) * batch * h];
            let c_cur = &cs[(t + 1) * batch * h..(t + 2) * batch * h];
            for s in 0..batch {
                let g = &gt[s * g4..(s + 1) * g4];
                let d = &mut dz[s * g4..(s + 1) * g4];
                for k in 0..h {
                    let idx = s * h + k;
                    let dh = dout[(s * n_t + t) * h + k] + dh_next[idx];
                    let (gi, gf, gg, go) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
                    let tc = c_cur[idx].tanh();
                    let dc = dc_next[idx] + dh * go * (1.0 - tc * tc);
                    d[k] = dc * gg * gi * (1.0 - gi);
                    d[h + k] = dc * c_prev[idx] * gf * (1.0 - gf);
                    d[2 * h + k] = dc * gi * (1.0 - gg * gg);
                    d[3 * h + k] = dh * tc * go * (1.0 - go);
                    dc_next[idx] = dc * gf;
                }
                let dst = (s * n_t + t) * g4;
                dz_all[dst..dst + g4].copy_from_slice(d);
            }
            let h_prev = &hs[t * batch * h..(t + 1) * batch * h];
            gemm(g4, batch, h, 1.0, &dz, true, h_prev, false, 1.0, self.recurrent_weights.slice_mut(grad));
            gemm(batch, g4, h, 1.0, &dz, false, wh, false, 0.0, &mut dh_next);
        }
        gemm(g4, batch * n_t, self.input_size, 1.0, &dz_all, true, xs.data(), false, 1.0, self.input_weights.slice_mut(grad));
        let gb = self.bias.slice_mut(grad);
        for row in dz_all.chunks_exact(g4) {
            for (acc, v) in gb.iter_mut().zip(row) {
                *acc += v;
            }
        }
        if !want_input {
            return None;
        }
        let mut dx = vec![0.0; batch * n_t * self.input_size];
        gemm(batch * n_t, g4, self.input_size, 1.0, &dz_all, false, self.input_weights.slice(params), false, 0.0, &mut dx);
        Some(Tensor::new(vec![batch, n_t, self.input_size], dx).expect("shape"))
    }
}

/// Per-step gate activations and states kept for backpropagation.
#[derive(Debug, Clone)]
pub struct LstmCache {
    batch: usize,
    n_t: usize,
    gates: Vec<f64>,
    cs: Vec<f64>,
    hs: Vec<f64>,
}
