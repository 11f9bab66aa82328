//! Straight-line reference for one relation-aware layer.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use ratsql::numerics::*;
use ratsql::rat_encoder::*;
use ratsql::schema_graph::RelationMode;

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[i * m + j] = (0..k).map(|t| a[i * k + t] * b[t * m + j]).sum();
        }
    }
    out
}

pub fn layer_norm(x: &[f64], d: usize, gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (r, row) in x.chunks(d).enumerate() {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        for j in 0..d {
            out[r * d + j] = (row[j] - mean) / (var + LAYER_NORM_EPS).sqrt() * gain[j] + bias[j];
        }
    }
    out
}

pub struct Layer {
    pub store: ParamStore,
    pub p: RatLayerParams,
    pub rel_k: ParamId,
    pub rel_v: ParamId,
    pub d: usize,
    pub ff: usize,
}

pub fn random_layer(rng: &mut ChaCha8Rng, d: usize, ff: usize, rel_rows: usize, rel_width: usize) -> Layer {
    let mut store = ParamStore::new();
    let p = RatLayerParams::new(&mut store, "l", d, ff, rng).unwrap();
    // Non-trivial affine and bias values so every term is exercised.
    for id in [p.ln1_gain, p.ln1_bias, p.ff1_b, p.ff2_b, p.ln2_gain, p.ln2_bias] {
        let n = store.get(id).numel();
        let v = rand_vec(rng, n);
        store.get_mut(id).data_mut().copy_from_slice(&v);
    }
    let rk = rand_vec(rng, rel_rows * rel_width);
    let rv = rand_vec(rng, rel_rows * rel_width);
    let rel_k = store.add("rel_k", Tensor::matrix(rel_rows, rel_width, rk).unwrap()).unwrap();
    let rel_v = store.add("rel_v", Tensor::matrix(rel_rows, rel_width, rv).unwrap()).unwrap();
    Layer {
        store,
        p,
        rel_k,
        rel_v,
        d,
        ff,
    }
}

pub fn run_layer(l: &Layer, x: &[f64], n: usize, index: &Arc<PairIndex>, heads: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut g = Graph::eval(&l.store);
    let xv = g.constant(n, l.d, x.to_vec()).unwrap();
    let rk = g.param(l.rel_k);
    let rv = g.param(l.rel_v);
    let (y, alphas) = rat_layer(&mut g, xv, &l.p, rk, rv, index, heads, 0.0).unwrap();
    (g.value(y).to_vec(), alphas.iter().map(|a| g.value(*a).to_vec()).collect())
}

/// Relation vector of pair `(i, j)`: every present slot fills its segment.
pub fn relation_vector(table: &[f64], width: usize, index: &PairIndex, i: usize, j: usize) -> Vec<f64> {
    let mut r = vec![0.0; width];
    for (k, seg) in index.segments.iter().enumerate() {
        let id = index.get(i, j, k);
        if id != PairIndex::NONE {
            let row = &table[id as usize * width..(id as usize + 1) * width];
            r[seg.start..seg.start + seg.width].copy_from_slice(&row[seg.start..seg.start + seg.width]);
        }
    }
    r
}

/// Straight-line reference: per-head scaled dot-product attention with
/// relation vectors added to keys and values, then the two sublayers.
pub fn naive_layer(l: &Layer, x: &[f64], n: usize, index: Option<&PairIndex>, heads: usize) -> Vec<f64> {
    let d = l.d;
    let dh = d / heads;
    let s = &l.store;
    let q = matmul(x, s.get(l.p.wq).data(), n, d, d);
    let k = matmul(x, s.get(l.p.wk).data(), n, d, d);
    let v = matmul(x, s.get(l.p.wv).data(), n, d, d);
    let rk = s.get(l.rel_k).data();
    let rv = s.get(l.rel_v).data();
    let mut z = vec![0.0; n * d];
    for h in 0..heads {
        for i in 0..n {
            let mut e = vec![0.0; n];
            for (j, ej) in e.iter_mut().enumerate() {
                let r = index.map_or(vec![0.0; dh], |ix| relation_vector(rk, dh, ix, i, j));
                *ej = (0..dh)
                    .map(|t| q[i * d + h * dh + t] * (k[j * d + h * dh + t] + r[t]))
                    .sum::<f64>()
                    / (dh as f64).sqrt();
            }
            let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = e.iter().map(|v| (v - m).exp()).collect();
            let total: f64 = w.iter().sum();
            for j in 0..n {
                let a = w[j] / total;
                let r = index.map_or(vec![0.0; dh], |ix| relation_vector(rv, dh, ix, i, j));
                for t in 0..dh {
                    z[i * d + h * dh + t] += a * (v[j * d + h * dh + t] + r[t]);
                }
            }
        }
    }
    let res: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a + b).collect();
    let y1 = layer_norm(&res, d, s.get(l.p.ln1_gain).data(), s.get(l.p.ln1_bias).data());
    let mut hidden = matmul(&y1, s.get(l.p.ff1_w).data(), n, d, l.ff);
    let b1 = s.get(l.p.ff1_b).data();
    for (i, hv) in hidden.iter_mut().enumerate() {
        *hv = (*hv + b1[i % l.ff]).max(0.0);
    }
    let mut ff = matmul(&hidden, s.get(l.p.ff2_w).data(), n, l.ff, d);
    let b2 = s.get(l.p.ff2_b).data();
    for (i, fv) in ff.iter_mut().enumerate() {
        *fv += b2[i % d] + y1[i];
    }
    layer_norm(&ff, d, s.get(l.p.ln2_gain).data(), s.get(l.p.ln2_bias).data())
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn empty_index(n: usize, width: usize) -> Arc<PairIndex> {
    let segs = RelationMode::Composite.segments(width).unwrap();
    Arc::new(PairIndex::new(n, n, segs, vec![PairIndex::NONE; n * n]).unwrap())
}

pub fn random_index(rng: &mut ChaCha8Rng, n: usize, width: usize, rows: u32) -> Arc<PairIndex> {
    let segs = RelationMode::Concat.segments(width).unwrap();
    let ids = (0..n * n * segs.len())
        .map(|_| if rng.random_bool(0.25) { PairIndex::NONE } else { rng.random_range(0..rows) })
        .collect();
    Arc::new(PairIndex::new(n, n, segs, ids).unwrap())
}
