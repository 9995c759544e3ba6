//! LSTM cell and bidirectional LSTM layer with explicit backward passes.
//! Gate order inside the stacked weight matrix is input, forget, cell, output.

use rand::Rng;

use crate::error::{MddError, Result};
use crate::tensor::{gemv_acc, gemv_backward, prefixed, prefixed_mut, sigmoid, Params, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    /// `[4H, D + H]` acting on `[x; h_prev]`.
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Activations of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmStep {
    input: Vec<f64>,
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: usize, scale: f64, rng: &mut R) -> Self {
        LstmCell {
            weight: Tensor::uniform(&[4 * hidden, input_dim + hidden], scale, rng),
            bias: Tensor::uniform(&[4 * hidden], scale, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.bias.len() / 4
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1] - self.hidden()
    }

    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmStep {
        let hd = self.hidden();
        let mut input = Vec::with_capacity(x.len() + hd);
        input.extend_from_slice(x);
        input.extend_from_slice(h_prev);
        let mut z = self.bias.data().to_vec();
        gemv_acc(self.weight.data(), &input, &mut z);
        let mut gates = z;
        for (k, v) in gates.iter_mut().enumerate() {
            *v = if k / hd == 2 { v.tanh() } else { sigmoid(*v) };
        }
        let mut c = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        for j in 0..hd {
            let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
            c[j] = f * c_prev[j] + i * g;
            h[j] = o * c[j].tanh();
        }
        LstmStep {
            input,
            gates,
            c_prev: c_prev.to_vec(),
            c,
            h,
        }
    }

    /// Returns `(dx, dh_prev, dc_prev)`.
    pub fn step_backward(&self, st: &LstmStep, dh: &[f64], dc: &[f64], grads: &mut LstmCell) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden();
        let g = &st.gates;
        let mut dz = vec![0.0; 4 * hd];
        let mut dc_prev = vec![0.0; hd];
        for j in 0..hd {
            let (i, f, gg, o) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
            let tc = st.c[j].tanh();
            let dct = dc[j] + dh[j] * o * (1.0 - tc * tc);
            dz[j] = dct * gg * i * (1.0 - i);
            dz[hd + j] = dct * st.c_prev[j] * f * (1.0 - f);
            dz[2 * hd + j] = dct * i * (1.0 - gg * gg);
            dz[3 * hd + j] = dh[j] * tc * o * (1.0 - o);
            dc_prev[j] = dct * f;
        }
        let mut dinput = vec![0.0; st.input.len()];
        gemv_backward(self.weight.data(), &st.input, &dz, grads.weight.data_mut(), &mut dinput);
        for (b, d) in grads.bias.data_mut().iter_mut().zip(&dz) {
            *b += d;
        }
        let dh_prev = dinput.split_off(self.input_dim());
        (dinput, dh_prev, dc_prev)
    }
}

impl Params for LstmCell {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("weight".into(), &mut self.weight), ("bias".into(), &mut self.bias)]
    }
}

/// Forward and backward LSTMs over a `[T, D]` sequence, outputs concatenated.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    fwd: Vec<LstmStep>,
    /// Stored in processing order (last frame first).
    bwd: Vec<LstmStep>,
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: usize, scale: f64, rng: &mut R) -> Self {
        BiLstm {
            fwd: LstmCell::new(input_dim, hidden, scale, rng),
            bwd: LstmCell::new(input_dim, hidden, scale, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden()
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, BiLstmCache)> {
        if x.shape().len() != 2 || x.shape()[1] != self.fwd.input_dim() {
            return Err(MddError::Contract(format!(
                "BiLSTM expects [T, {}], got {:?}",
                self.fwd.input_dim(),
                x.shape()
            )));
        }
        let t_len = x.shape()[0];
        let hd = self.fwd.hidden();
        let mut out = Tensor::zeros(&[t_len, 2 * hd]);
        let zeros = vec![0.0; hd];
        let mut fwd = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let st = {
                let (h, c) = fwd.last().map_or((&zeros, &zeros), |s: &LstmStep| (&s.h, &s.c));
                self.fwd.step(x.row(t), h, c)
            };
            out.row_mut(t)[..hd].copy_from_slice(&st.h);
            fwd.push(st);
        }
        let mut bwd = Vec::with_capacity(t_len);
        for t in (0..t_len).rev() {
            let st = {
                let (h, c) = bwd.last().map_or((&zeros, &zeros), |s: &LstmStep| (&s.h, &s.c));
                self.bwd.step(x.row(t), h, c)
            };
            out.row_mut(t)[hd..].copy_from_slice(&st.h);
            bwd.push(st);
        }
        Ok((out, BiLstmCache { fwd, bwd }))
    }

    pub fn backward(&self, cache: &BiLstmCache, dout: &Tensor, grads: &mut BiLstm) -> Tensor {
        let t_len = cache.fwd.len();
        let hd = self.fwd.hidden();
        let mut dx = Tensor::zeros(&[t_len, self.fwd.input_dim()]);
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        for t in (0..t_len).rev() {
            let dh: Vec<f64> = dout.row(t)[..hd].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            let (dxi, dhp, dcp) = self.fwd.step_backward(&cache.fwd[t], &dh, &dc_next, &mut grads.fwd);
            for (a, b) in dx.row_mut(t).iter_mut().zip(&dxi) {
                *a += b;
            }
            dh_next = dhp;
            dc_next = dcp;
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        dc_next.iter_mut().for_each(|v| *v = 0.0);
        for k in (0..t_len).rev() {
            let t = t_len - 1 - k;
            let dh: Vec<f64> = dout.row(t)[hd..].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            let (dxi, dhp, dcp) = self.bwd.step_backward(&cache.bwd[k], &dh, &dc_next, &mut grads.bwd);
            for (a, b) in dx.row_mut(t).iter_mut().zip(&dxi) {
                *a += b;
            }
            dh_next = dhp;
            dc_next = dcp;
        }
        dx
    }
}

impl Params for BiLstm {
    fn params(&self) -> Vec<(String, &Tensor)> {
        prefixed("fwd", self.fwd.params())
            .chain(prefixed("bwd", self.bwd.params()))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let BiLstm { fwd, bwd } = self;
        prefixed_mut("fwd", fwd.params_mut())
            .chain(prefixed_mut("bwd", bwd.params_mut()))
            .collect()
    }
}
