//! Single-layer LSTM cell built from graph ops.

use rand::Rng;

use crate::error::GraphError;
use crate::graph::{Graph, ParamStore, Var};

/// Gate order inside the packed 4H weight rows: input, forget, cell, output.
pub struct LstmCell {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b: Var,
    pub hidden: usize,
}

impl LstmCell {
    pub fn bind(g: &mut Graph, prefix: &str, hidden: usize) -> Result<Self, GraphError> {
        Ok(LstmCell {
            w_ih: g.param(&format!("{prefix}.w_ih"))?,
            w_hh: g.param(&format!("{prefix}.w_hh"))?,
            b: g.param(&format!("{prefix}.b"))?,
            hidden,
        })
    }

    pub fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> Result<(Var, Var), GraphError> {
        let hh = self.hidden;
        let xi = g.matvec(self.w_ih, x)?;
        let hi = g.matvec(self.w_hh, h)?;
        let s = g.add(xi, hi)?;
        let gates = g.add(s, self.b)?;
        let i_raw = g.slice(gates, 0, hh)?;
        let f_raw = g.slice(gates, hh, hh)?;
        let q_raw = g.slice(gates, 2 * hh, hh)?;
        let o_raw = g.slice(gates, 3 * hh, hh)?;
        let i = g.sigmoid(i_raw)?;
        let f = g.sigmoid(f_raw)?;
        let q = g.tanh(q_raw)?;
        let o = g.sigmoid(o_raw)?;
        let fc = g.mul(f, c)?;
        let iq = g.mul(i, q)?;
        let c_new = g.add(fc, iq)?;
        let tc = g.tanh(c_new)?;
        let h_new = g.mul(o, tc)?;
        Ok((h_new, c_new))
    }
}

/// Register LSTM weights: Xavier matrices, zero biases with the forget-gate
/// slice initialized to 1.0.
pub fn init_lstm<R: Rng>(params: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut R) {
    params.insert_matrix(&format!("{prefix}.w_ih"), 4 * hidden, input, rng);
    params.insert_matrix(&format!("{prefix}.w_hh"), 4 * hidden, hidden, rng);
    let id = params.insert_zeros(&format!("{prefix}.b"), &[4 * hidden]);
    let b = params.value_mut(id);
    for v in &mut b.data_mut()[hidden..2 * hidden] {
        *v = 1.0;
    }
}
