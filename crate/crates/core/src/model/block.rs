//! Pre-norm transformer block: causal multi-head attention and a GELU MLP,
//! both without biases.

use ndarray::{s, Array1, Array2, Zip};

use super::ops::{gelu, gelu_grad, gelu_tanh, rms_norm, rms_norm_backward, rms_norm_vec, softmax_in_place};
use super::params::{BlockIds, Params};

/// Rows are `seqs` independent sequences of `seq_len` positions each,
/// stored contiguously.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub seqs: usize,
    pub seq_len: usize,
    pub heads: usize,
}

pub(crate) struct BlockCache {
    x: Array2<f64>,
    n1: Array2<f64>,
    inv1: Vec<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    attn: Array2<f64>,
    x1: Array2<f64>,
    n2: Array2<f64>,
    inv2: Vec<f64>,
    h: Array2<f64>,
    th: Array2<f64>,
    g: Array2<f64>,
}

fn causal_attention(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    geo: Geometry,
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let d = q.ncols();
    let dh = d / geo.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let len = geo.seq_len;
    let mut out = Array2::zeros(q.raw_dim());
    let mut probs = Vec::with_capacity(geo.seqs * geo.heads);
    for s in 0..geo.seqs {
        let rows = s * len..(s + 1) * len;
        for h in 0..geo.heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = q.slice(s![rows.clone(), cols.clone()]);
            let kh = k.slice(s![rows.clone(), cols.clone()]);
            let vh = v.slice(s![rows.clone(), cols.clone()]);
            let mut p = qh.dot(&kh.t());
            for (i, mut row) in p.rows_mut().into_iter().enumerate() {
                let row = row.as_slice_mut().expect("contiguous");
                for x in &mut row[..=i] {
                    *x *= scale;
                }
                softmax_in_place(&mut row[..=i]);
                for x in &mut row[i + 1..] {
                    *x = 0.0;
                }
            }
            out.slice_mut(s![rows.clone(), cols]).assign(&p.dot(&vh));
            probs.push(p);
        }
    }
    (out, probs)
}

pub(crate) fn block_forward(
    p: &Params,
    ids: &BlockIds,
    x: Array2<f64>,
    geo: Geometry,
) -> (Array2<f64>, BlockCache) {
    let (n1, inv1) = rms_norm(&x, &p[ids.attn_norm]);
    let q = n1.dot(&p[ids.wq]);
    let k = n1.dot(&p[ids.wk]);
    let v = n1.dot(&p[ids.wv]);
    let (attn, probs) = causal_attention(&q, &k, &v, geo);
    let x1 = &x + &attn.dot(&p[ids.wo]);
    let (n2, inv2) = rms_norm(&x1, &p[ids.mlp_norm]);
    let h = n2.dot(&p[ids.w1]);
    let th = h.mapv(gelu_tanh);
    let mut g = h.clone();
    Zip::from(&mut g).and(&th).for_each(|g, &t| *g *= 0.5 * (1.0 + t));
    let out = &x1 + &g.dot(&p[ids.w2]);
    let cache = BlockCache {
        x,
        n1,
        inv1,
        q,
        k,
        v,
        probs,
        attn,
        x1,
        n2,
        inv2,
        h,
        th,
        g,
    };
    (out, cache)
}

pub(crate) fn block_backward(
    p: &Params,
    ids: &BlockIds,
    c: &BlockCache,
    dout: Array2<f64>,
    grads: &mut Params,
    geo: Geometry,
) -> Array2<f64> {
    // MLP branch
    grads[ids.w2] += &c.g.t().dot(&dout);
    let mut dh = dout.dot(&p[ids.w2].t());
    Zip::from(&mut dh).and(&c.h).and(&c.th).for_each(|d, &h, &t| *d *= gelu_grad(h, t));
    grads[ids.w1] += &c.n2.t().dot(&dh);
    let dn2 = dh.dot(&p[ids.w1].t());
    let mut dx1 = rms_norm_backward(&dn2, &c.x1, &c.inv2, &p[ids.mlp_norm], &mut grads[ids.mlp_norm]);
    dx1 += &dout;

    // attention branch
    grads[ids.wo] += &c.attn.t().dot(&dx1);
    let dattn = dx1.dot(&p[ids.wo].t());
    let d = c.q.ncols();
    let dh_ = d / geo.heads;
    let scale = 1.0 / (dh_ as f64).sqrt();
    let len = geo.seq_len;
    let mut dq = Array2::zeros(c.q.raw_dim());
    let mut dk = Array2::zeros(c.k.raw_dim());
    let mut dv = Array2::zeros(c.v.raw_dim());
    for s in 0..geo.seqs {
        let rows = s * len..(s + 1) * len;
        for h in 0..geo.heads {
            let cols = h * dh_..(h + 1) * dh_;
            let pr = &c.probs[s * geo.heads + h];
            let qh = c.q.slice(s![rows.clone(), cols.clone()]);
            let kh = c.k.slice(s![rows.clone(), cols.clone()]);
            let vh = c.v.slice(s![rows.clone(), cols.clone()]);
            let da = dattn.slice(s![rows.clone(), cols.clone()]);
            let dp = da.dot(&vh.t());
            dv.slice_mut(s![rows.clone(), cols.clone()]).assign(&pr.t().dot(&da));
            let mut ds = pr * &dp;
            for (mut ds_row, p_row) in ds.rows_mut().into_iter().zip(pr.rows()) {
                let total: f64 = ds_row.sum();
                Zip::from(&mut ds_row)
                    .and(&p_row)
                    .for_each(|x, &p| *x -= p * total);
            }
            ds *= scale;
            dq.slice_mut(s![rows.clone(), cols.clone()]).assign(&ds.dot(&kh));
            dk.slice_mut(s![rows.clone(), cols]).assign(&ds.t().dot(&qh));
        }
    }
    grads[ids.wq] += &c.n1.t().dot(&dq);
    grads[ids.wk] += &c.n1.t().dot(&dk);
    grads[ids.wv] += &c.n1.t().dot(&dv);
    let dn1 = dq.dot(&p[ids.wq].t()) + dk.dot(&p[ids.wk].t()) + dv.dot(&p[ids.wv].t());
    let mut dx = rms_norm_backward(&dn1, &c.x, &c.inv1, &p[ids.attn_norm], &mut grads[ids.attn_norm]);
    dx += &dx1;
    dx
}

/// Keys and values seen so far by one layer during incremental decoding.
#[derive(Debug, Clone)]
pub(crate) struct KvCache {
    keys: Vec<Array1<f64>>,
    values: Vec<Array1<f64>>,
}

impl KvCache {
    pub fn new() -> Self {
        KvCache {
            keys: Vec::new(),
            values: Vec::new(),
        }
    }
}

/// Process one new position given the cached prefix.
pub(crate) fn block_step(
    p: &Params,
    ids: &BlockIds,
    x: &Array1<f64>,
    cache: &mut KvCache,
    heads: usize,
) -> Array1<f64> {
    let n1 = rms_norm_vec(x.view(), &p[ids.attn_norm]);
    let q = n1.dot(&p[ids.wq]);
    cache.keys.push(n1.dot(&p[ids.wk]));
    cache.values.push(n1.dot(&p[ids.wv]));
    let d = x.len();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut attn = Array1::zeros(d);
    let mut scores = vec![0.0; cache.keys.len()];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let qh = q.slice(s![cols.clone()]);
        for (sc, k) in scores.iter_mut().zip(&cache.keys) {
            *sc = qh.dot(&k.slice(s![cols.clone()])) * scale;
        }
        softmax_in_place(&mut scores);
        let mut out = attn.slice_mut(s![cols.clone()]);
        for (&w, v) in scores.iter().zip(&cache.values) {
            out.scaled_add(w, &v.slice(s![cols.clone()]));
        }
    }
    let x1 = x + &attn.dot(&p[ids.wo]);
    let n2 = rms_norm_vec(x1.view(), &p[ids.mlp_norm]);
    let g = n2.dot(&p[ids.w1]).mapv(gelu);
    x1 + g.dot(&p[ids.w2])
}
