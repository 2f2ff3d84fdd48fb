//! One causal self-attention stack and an affine output head, with
//! hand-written backward passes.
//!
//! A batch is a list of token sequences stacked row-wise into one
//! `(total_len x model_dim)` matrix; dense layers run on the whole stack and
//! attention runs per sequence, so sequences never attend to each other.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::LmConfig;
use crate::corpus::TokenId;

const NORM_EPS: f64 = 1e-6;
const EMBED_STD: f64 = 1.0;
const HEAD_STD: f64 = 0.02;

fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Block {
    pub norm1: Array1<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub norm2: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Block {
    fn init<R: Rng>(rng: &mut R, cfg: &LmConfig) -> Self {
        let (d, f) = (cfg.model_dim, cfg.ff_dim);
        let in_std = 1.0 / (d as f64).sqrt();
        let out_scale = 1.0 / (2.0 * cfg.num_layers as f64).sqrt();
        Block {
            norm1: Array1::ones(d),
            wq: normal_matrix(rng, d, d, in_std),
            wk: normal_matrix(rng, d, d, in_std),
            wv: normal_matrix(rng, d, d, in_std),
            wo: normal_matrix(rng, d, d, in_std * out_scale),
            norm2: Array1::ones(d),
            w1: normal_matrix(rng, d, f, in_std),
            b1: Array1::zeros(f),
            w2: normal_matrix(rng, f, d, out_scale / (f as f64).sqrt()),
            b2: Array1::zeros(d),
        }
    }

    fn zeros_like(&self) -> Self {
        Block {
            norm1: Array1::zeros(self.norm1.raw_dim()),
            wq: Array2::zeros(self.wq.raw_dim()),
            wk: Array2::zeros(self.wk.raw_dim()),
            wv: Array2::zeros(self.wv.raw_dim()),
            wo: Array2::zeros(self.wo.raw_dim()),
            norm2: Array1::zeros(self.norm2.raw_dim()),
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.raw_dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Tower {
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub blocks: Vec<Block>,
    pub norm_f: Array1<f64>,
    pub num_heads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Head {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Row ranges of the sequences stacked in a batch.
#[derive(Debug, Clone)]
pub(crate) struct Segments {
    pub offsets: Vec<usize>,
    pub lens: Vec<usize>,
    pub total: usize,
}

impl Segments {
    pub fn new<'a>(seqs: impl IntoIterator<Item = &'a [TokenId]>) -> Self {
        let mut offsets = Vec::new();
        let mut lens = Vec::new();
        let mut total = 0;
        for s in seqs {
            offsets.push(total);
            lens.push(s.len());
            total += s.len();
        }
        Segments { offsets, lens, total }
    }

    fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.offsets.iter().copied().zip(self.lens.iter().copied())
    }
}

struct NormCache {
    xhat: Array2<f64>,
    inv_rms: Array1<f64>,
}

fn rms_norm(x: &Array2<f64>, gain: &Array1<f64>) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_rms = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(inv_rms.iter_mut()) {
        let ms = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (ms + NORM_EPS).sqrt();
        let inv = *r;
        row.mapv_inplace(|v| v * inv);
    }
    let y = &xhat * gain;
    (y, NormCache { xhat, inv_rms })
}

fn rms_norm_backward(dy: &Array2<f64>, gain: &Array1<f64>, cache: &NormCache, dgain: &mut Array1<f64>) -> Array2<f64> {
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let mut dx = dy * gain;
    for ((mut row, xh), &r) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(cache.inv_rms.iter()) {
        let proj = row.dot(&xh) / d;
        row.zip_mut_with(&xh, |g, &h| *g = r * (*g - h * proj));
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// tanh approximation of GELU.
/// Returns the activation and its derivative.
fn gelu(z: f64) -> (f64, f64) {
    let t = (GELU_C * (z + GELU_A * z * z * z)).tanh();
    let value = 0.5 * z * (1.0 + t);
    let grad = 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * z * z);
    (value, grad)
}

fn add_bias(x: &mut Array2<f64>, b: &Array1<f64>) {
    for mut row in x.rows_mut() {
        row += b;
    }
}

/// `c += a^T b`
fn acc_at_b(c: &mut Array2<f64>, a: &Array2<f64>, b: &Array2<f64>) {
    general_mat_mul(1.0, &a.t(), b, 1.0, c);
}

struct BlockCache {
    norm1: NormCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    att: Array2<f64>,
    norm2: NormCache,
    m: Array2<f64>,
    act: Array2<f64>,
    act_grad: Array2<f64>,
}

pub(crate) struct TowerCache {
    ids: Vec<TokenId>,
    positions: Vec<usize>,
    segs: Segments,
    blocks: Vec<BlockCache>,
    norm_f: NormCache,
}

fn causal_attention(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    segs: &Segments,
    heads: usize,
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let d = q.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut att = Array2::zeros(q.raw_dim());
    let mut probs = Vec::with_capacity(segs.lens.len() * heads);
    for (off, len) in segs.iter() {
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let qs = q.slice(s![off..off + len, cols.clone()]);
            let ks = k.slice(s![off..off + len, cols.clone()]);
            let vs = v.slice(s![off..off + len, cols.clone()]);
            let mut p = qs.dot(&ks.t());
            for (i, mut row) in p.rows_mut().into_iter().enumerate() {
                let max = row.iter().take(i + 1).fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                let mut z = 0.0;
                for (j, x) in row.iter_mut().enumerate() {
                    if j <= i {
                        *x = ((*x - max) * scale).exp();
                        z += *x;
                    } else {
                        *x = 0.0;
                    }
                }
                row.mapv_inplace(|x| x / z);
            }
            att.slice_mut(s![off..off + len, cols]).assign(&p.dot(&vs));
            probs.push(p);
        }
    }
    (att, probs)
}

#[allow(clippy::too_many_arguments)]
fn causal_attention_backward(
    datt: &Array2<f64>,
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    probs: &[Array2<f64>],
    segs: &Segments,
    heads: usize,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let d = q.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros(q.raw_dim());
    let mut dk = Array2::zeros(k.raw_dim());
    let mut dv = Array2::zeros(v.raw_dim());
    let mut idx = 0;
    for (off, len) in segs.iter() {
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let rows = off..off + len;
            let p = &probs[idx];
            idx += 1;
            let d_o = datt.slice(s![rows.clone(), cols.clone()]);
            let qs = q.slice(s![rows.clone(), cols.clone()]);
            let ks = k.slice(s![rows.clone(), cols.clone()]);
            let vs = v.slice(s![rows.clone(), cols.clone()]);
            let mut ds = d_o.dot(&vs.t());
            dv.slice_mut(s![rows.clone(), cols.clone()]).assign(&p.t().dot(&d_o));
            for (mut drow, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                let inner: f64 = drow.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
                drow.zip_mut_with(&prow, |g, &pv| *g = pv * (*g - inner) * scale);
            }
            dq.slice_mut(s![rows.clone(), cols.clone()]).assign(&ds.dot(&ks));
            dk.slice_mut(s![rows, cols]).assign(&ds.t().dot(&qs));
        }
    }
    (dq, dk, dv)
}

impl Tower {
    pub fn init<R: Rng>(rng: &mut R, cfg: &LmConfig) -> Self {
        let d = cfg.model_dim;
        Tower {
            tok_emb: normal_matrix(rng, cfg.vocab_size, d, EMBED_STD),
            pos_emb: normal_matrix(rng, cfg.context_window, d, EMBED_STD),
            blocks: (0..cfg.num_layers).map(|_| Block::init(rng, cfg)).collect(),
            norm_f: Array1::ones(d),
            num_heads: cfg.num_heads,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Tower {
            tok_emb: Array2::zeros(self.tok_emb.raw_dim()),
            pos_emb: Array2::zeros(self.pos_emb.raw_dim()),
            blocks: self.blocks.iter().map(Block::zeros_like).collect(),
            norm_f: Array1::zeros(self.norm_f.raw_dim()),
            num_heads: self.num_heads,
        }
    }

    pub fn model_dim(&self) -> usize {
        self.tok_emb.ncols()
    }

    /// Final hidden states for every position of every sequence, stacked.
    /// Callers guarantee every sequence fits the positional table.
    pub fn forward(&self, seqs: &[&[TokenId]]) -> (Array2<f64>, TowerCache) {
        let segs = Segments::new(seqs.iter().copied());
        let d = self.model_dim();
        let mut ids = Vec::with_capacity(segs.total);
        let mut positions = Vec::with_capacity(segs.total);
        for s in seqs {
            ids.extend_from_slice(s);
            positions.extend(0..s.len());
        }
        let mut x = Array2::zeros((segs.total, d));
        for ((mut row, &id), &p) in x.rows_mut().into_iter().zip(&ids).zip(&positions) {
            row.assign(&self.tok_emb.row(id as usize));
            row += &self.pos_emb.row(p);
        }

        let mut caches = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let (a, norm1) = rms_norm(&x, &blk.norm1);
            let q = a.dot(&blk.wq);
            let k = a.dot(&blk.wk);
            let v = a.dot(&blk.wv);
            let (att, probs) = causal_attention(&q, &k, &v, &segs, self.num_heads);
            general_mat_mul(1.0, &att, &blk.wo, 1.0, &mut x);
            let (m, norm2) = rms_norm(&x, &blk.norm2);
            let mut pre_act = m.dot(&blk.w1);
            add_bias(&mut pre_act, &blk.b1);
            let mut act = pre_act;
            let mut act_grad = Array2::zeros(act.raw_dim());
            ndarray::Zip::from(&mut act).and(&mut act_grad).for_each(|z, g| {
                let (v, dv) = gelu(*z);
                *z = v;
                *g = dv;
            });
            general_mat_mul(1.0, &act, &blk.w2, 1.0, &mut x);
            add_bias(&mut x, &blk.b2);
            caches.push(BlockCache {
                norm1,
                a,
                q,
                k,
                v,
                probs,
                att,
                norm2,
                m,
                act,
                act_grad,
            });
        }
        let (h, norm_f) = rms_norm(&x, &self.norm_f);
        (
            h,
            TowerCache {
                ids,
                positions,
                segs,
                blocks: caches,
                norm_f,
            },
        )
    }

    /// Accumulates parameter gradients into `grads` given the gradient of the
    /// loss with respect to the stacked hidden states.
    pub fn backward(&self, dh: &Array2<f64>, cache: &TowerCache, grads: &mut Tower) {
        let mut dx = rms_norm_backward(dh, &self.norm_f, &cache.norm_f, &mut grads.norm_f);
        for ((blk, bc), g) in self
            .blocks
            .iter()
            .zip(&cache.blocks)
            .zip(grads.blocks.iter_mut())
            .rev()
        {
            // feed-forward sublayer; dx is the gradient of the block output
            let mut dpre = dx.dot(&blk.w2.t());
            acc_at_b(&mut g.w2, &bc.act, &dx);
            g.b2 += &dx.sum_axis(Axis(0));
            dpre *= &bc.act_grad;
            acc_at_b(&mut g.w1, &bc.m, &dpre);
            g.b1 += &dpre.sum_axis(Axis(0));
            let dm = dpre.dot(&blk.w1.t());
            dx += &rms_norm_backward(&dm, &blk.norm2, &bc.norm2, &mut g.norm2);

            // attention sublayer
            let datt = dx.dot(&blk.wo.t());
            acc_at_b(&mut g.wo, &bc.att, &dx);
            let (dq, dk, dv) =
                causal_attention_backward(&datt, &bc.q, &bc.k, &bc.v, &bc.probs, &cache.segs, self.num_heads);
            acc_at_b(&mut g.wq, &bc.a, &dq);
            acc_at_b(&mut g.wk, &bc.a, &dk);
            acc_at_b(&mut g.wv, &bc.a, &dv);
            let mut da = dq.dot(&blk.wq.t());
            general_mat_mul(1.0, &dk, &blk.wk.t(), 1.0, &mut da);
            general_mat_mul(1.0, &dv, &blk.wv.t(), 1.0, &mut da);
            dx += &rms_norm_backward(&da, &blk.norm1, &bc.norm1, &mut g.norm1);
        }
        for ((row, &id), &p) in dx.rows().into_iter().zip(&cache.ids).zip(&cache.positions) {
            let mut t = grads.tok_emb.row_mut(id as usize);
            t += &row;
            let mut pe = grads.pos_emb.row_mut(p);
            pe += &row;
        }
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [f64], Vec<usize>)>) {
        let mut push2 = |name: String, a: &'a Array2<f64>| {
            out.push((name, a.as_slice().expect("standard layout"), a.shape().to_vec()))
        };
        push2(format!("{prefix}tok_emb"), &self.tok_emb);
        push2(format!("{prefix}pos_emb"), &self.pos_emb);
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("{prefix}blocks.{i}.");
            out.push((format!("{p}norm1"), b.norm1.as_slice().unwrap(), b.norm1.shape().to_vec()));
            for (n, a) in [("wq", &b.wq), ("wk", &b.wk), ("wv", &b.wv), ("wo", &b.wo), ("w1", &b.w1)] {
                out.push((format!("{p}{n}"), a.as_slice().unwrap(), a.shape().to_vec()));
            }
            out.push((format!("{p}b1"), b.b1.as_slice().unwrap(), b.b1.shape().to_vec()));
            out.push((format!("{p}w2"), b.w2.as_slice().unwrap(), b.w2.shape().to_vec()));
            out.push((format!("{p}b2"), b.b2.as_slice().unwrap(), b.b2.shape().to_vec()));
            out.push((format!("{p}norm2"), b.norm2.as_slice().unwrap(), b.norm2.shape().to_vec()));
        }
        out.push((format!("{prefix}norm_f"), self.norm_f.as_slice().unwrap(), self.norm_f.shape().to_vec()));
    }

    /// Same order as [`Tower::tensors`].
    pub fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(self.tok_emb.as_slice_mut().unwrap());
        out.push(self.pos_emb.as_slice_mut().unwrap());
        for b in self.blocks.iter_mut() {
            out.push(b.norm1.as_slice_mut().unwrap());
            out.push(b.wq.as_slice_mut().unwrap());
            out.push(b.wk.as_slice_mut().unwrap());
            out.push(b.wv.as_slice_mut().unwrap());
            out.push(b.wo.as_slice_mut().unwrap());
            out.push(b.w1.as_slice_mut().unwrap());
            out.push(b.b1.as_slice_mut().unwrap());
            out.push(b.w2.as_slice_mut().unwrap());
            out.push(b.b2.as_slice_mut().unwrap());
            out.push(b.norm2.as_slice_mut().unwrap());
        }
        out.push(self.norm_f.as_slice_mut().unwrap());
    }
}

impl Head {
    pub fn init<R: Rng>(rng: &mut R, input_dim: usize, vocab: usize) -> Self {
        Head {
            w: normal_matrix(rng, input_dim, vocab, HEAD_STD),
            b: Array1::zeros(vocab),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Head {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }

    /// Row-wise log-softmax of `h W + b`.
    pub fn log_probs(&self, h: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut logits = h.dot(&self.w);
        add_bias(&mut logits, &self.b);
        for mut row in logits.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        logits
    }

    /// Mean NLL of `targets` under the head's predictions for the rows of `h`,
    /// plus the gradient with respect to `h`. Head gradients go to `grads`.
    pub fn nll_backward(&self, h: &Array2<f64>, targets: &[TokenId], grads: &mut Head) -> (f64, Array2<f64>) {
        let mut probs = self.log_probs(h.view());
        let n = targets.len() as f64;
        let mut loss = 0.0;
        for (mut row, &t) in probs.rows_mut().into_iter().zip(targets) {
            loss -= row[t as usize];
            row.mapv_inplace(|lp| lp.exp() / n);
            row[t as usize] -= 1.0 / n;
        }
        acc_at_b(&mut grads.w, h, &probs);
        grads.b += &probs.sum_axis(Axis(0));
        (loss / n, probs.dot(&self.w.t()))
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [f64], Vec<usize>)>) {
        out.push((format!("{prefix}w"), self.w.as_slice().unwrap(), self.w.shape().to_vec()));
        out.push((format!("{prefix}b"), self.b.as_slice().unwrap(), self.b.shape().to_vec()));
    }

    pub fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(self.w.as_slice_mut().unwrap());
        out.push(self.b.as_slice_mut().unwrap());
    }
}
