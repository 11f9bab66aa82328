use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, PairIndex, ParamId, ParamStore, Var};

/// Weights of one relation-aware self-attention layer. Heads are column
/// blocks of `wq`, `wk`, `wv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RatLayerParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ff1_w: ParamId,
    pub ff1_b: ParamId,
    pub ff2_w: ParamId,
    pub ff2_b: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

impl RatLayerParams {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d: usize, ff: usize, rng: &mut R) -> Result<Self> {
        Ok(RatLayerParams {
            wq: store.add_glorot(format!("{name}.wq"), d, d, rng)?,
            wk: store.add_glorot(format!("{name}.wk"), d, d, rng)?,
            wv: store.add_glorot(format!("{name}.wv"), d, d, rng)?,
            ln1_gain: store.add_const(format!("{name}.ln1.gain"), 1, d, 1.0)?,
            ln1_bias: store.add_const(format!("{name}.ln1.bias"), 1, d, 0.0)?,
            ff1_w: store.add_glorot(format!("{name}.ff1.w"), d, ff, rng)?,
            ff1_b: store.add_const(format!("{name}.ff1.b"), 1, ff, 0.0)?,
            ff2_w: store.add_glorot(format!("{name}.ff2.w"), ff, d, rng)?,
            ff2_b: store.add_const(format!("{name}.ff2.b"), 1, d, 0.0)?,
            ln2_gain: store.add_const(format!("{name}.ln2.gain"), 1, d, 1.0)?,
            ln2_bias: store.add_const(format!("{name}.ln2.bias"), 1, d, 0.0)?,
        })
    }
}

/// Relation-aware self-attention followed by the residual, layer-norm and
/// feed-forward sublayers. `rel_k` / `rel_v` are the relation embedding tables
/// (one row per relation id, `d / heads` wide) and `index` maps every node
/// pair to its rows. Returns the new `n × d` encodings and the per-head
/// attention weights.
#[allow(clippy::too_many_arguments)]
pub fn rat_layer(
    g: &mut Graph,
    x: Var,
    p: &RatLayerParams,
    rel_k: Var,
    rel_v: Var,
    index: &Arc<PairIndex>,
    heads: usize,
    dropout: f64,
) -> Result<(Var, Vec<Var>)> {
    let (n, d) = g.shape(x);
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("width {d} is not divisible by {heads} heads")));
    }
    let dh = d / heads;
    if index.rows != n || index.cols != n {
        return Err(Error::ShapeMismatch {
            op: "rat_layer",
            left: vec![n, d],
            right: vec![index.rows, index.cols],
        });
    }
    let wq = g.param(p.wq);
    let wk = g.param(p.wk);
    let wv = g.param(p.wv);
    let q = g.matmul(x, wq)?;
    let k = g.matmul(x, wk)?;
    let v = g.matmul(x, wv)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut zs = Vec::with_capacity(heads);
    let mut alphas = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let plain = g.matmul_t(qh, kh)?;
        let rel = g.rel_scores(qh, rel_k, index)?;
        let e = g.add(plain, rel)?;
        let e = g.scale(e, scale);
        let alpha = g.softmax(e, None)?;
        let zv = g.matmul(alpha, vh)?;
        let zr = g.rel_mix(alpha, rel_v, index)?;
        zs.push(g.add(zv, zr)?);
        alphas.push(alpha);
    }
    let z = g.concat_cols(&zs)?;
    let z = g.dropout(z, dropout);
    let res = g.add(x, z)?;
    let (g1, b1) = (g.param(p.ln1_gain), g.param(p.ln1_bias));
    let y1 = g.layer_norm(res, g1, b1)?;
    let (w1, c1) = (g.param(p.ff1_w), g.param(p.ff1_b));
    let hidden = g.linear(y1, w1, Some(c1))?;
    let hidden = g.relu(hidden);
    let (w2, c2) = (g.param(p.ff2_w), g.param(p.ff2_b));
    let ff = g.linear(hidden, w2, Some(c2))?;
    let ff = g.dropout(ff, dropout);
    let res2 = g.add(y1, ff)?;
    let (g2, b2) = (g.param(p.ln2_gain), g.param(p.ln2_bias));
    let y = g.layer_norm(res2, g2, b2)?;
    Ok((y, alphas))
}
