use rand::Rng;

use crate::error::Result;
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};

/// One LSTM direction: `[x ∥ h] · w + b` gives the `[i f g o]` pre-activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParams {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let w = store.add_glorot(format!("{name}.w"), input + hidden, 4 * hidden, rng)?;
        let mut bias = vec![0.0; 4 * hidden];
        // forget gate starts open
        for v in &mut bias[hidden..2 * hidden] {
            *v = 1.0;
        }
        let b = store.add(format!("{name}.b"), Tensor::matrix(1, 4 * hidden, bias)?)?;
        Ok(LstmParams { w, b, input, hidden })
    }

    /// One step on a batch of rows; returns `(h, c)`.
    pub fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let xh = g.concat_cols(&[x, h])?;
        let pre = g.linear(xh, w, Some(b))?;
        let out = g.lstm_cell(pre, c)?;
        let h = g.slice_cols(out, 0, self.hidden)?;
        let c = g.slice_cols(out, self.hidden, self.hidden)?;
        Ok((h, c))
    }

    /// Runs over `inputs` (each `rows × input`) from zero state with masks shared
    /// across time steps. Outputs are returned in input order.
    pub fn run(&self, g: &mut Graph, inputs: &[Var], reverse: bool, recurrent_dropout: f64) -> Result<Vec<Var>> {
        let Some(&first) = inputs.first() else {
            return Ok(Vec::new());
        };
        let rows = g.shape(first).0;
        let x_mask = g.dropout_mask(rows, self.input, recurrent_dropout);
        let h_mask = g.dropout_mask(rows, self.hidden, recurrent_dropout);
        let mut h = g.zeros(rows, self.hidden);
        let mut c = g.zeros(rows, self.hidden);
        let mut out = vec![h; inputs.len()];
        let order: Vec<usize> = if reverse {
            (0..inputs.len()).rev().collect()
        } else {
            (0..inputs.len()).collect()
        };
        for t in order {
            let x = match &x_mask {
                Some(m) => g.apply_mask(inputs[t], m.clone()),
                None => inputs[t],
            };
            let h_in = match &h_mask {
                Some(m) => g.apply_mask(h, m.clone()),
                None => h,
            };
            let (nh, nc) = self.step(g, x, h_in, c)?;
            h = nh;
            c = nc;
            out[t] = h;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BiLstmParams {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl BiLstmParams {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(BiLstmParams {
            fwd: LstmParams::new(store, &format!("{name}.fwd"), input, hidden, rng)?,
            bwd: LstmParams::new(store, &format!("{name}.bwd"), input, hidden, rng)?,
        })
    }

    /// Per-position outputs `[h_fwd ∥ h_bwd]`, stacked as `len × 2h` (single sequence).
    pub fn outputs(&self, g: &mut Graph, inputs: &[Var], recurrent_dropout: f64) -> Result<Var> {
        let f = self.fwd.run(g, inputs, false, recurrent_dropout)?;
        let b = self.bwd.run(g, inputs, true, recurrent_dropout)?;
        let f = g.concat_rows(&f)?;
        let b = g.concat_rows(&b)?;
        g.concat_cols(&[f, b])
    }

    /// Final states `[h_fwd(last) ∥ h_bwd(first)]` for a batch of equal-length sequences.
    pub fn final_states(&self, g: &mut Graph, inputs: &[Var], recurrent_dropout: f64) -> Result<Var> {
        let f = self.fwd.run(g, inputs, false, recurrent_dropout)?;
        let b = self.bwd.run(g, inputs, true, recurrent_dropout)?;
        g.concat_cols(&[f[f.len() - 1], b[0]])
    }
}
