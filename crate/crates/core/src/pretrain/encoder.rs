//! Small pre-LN transformer encoder with hand-written backward passes.
//!
//! ```text
//! x0 = dropout(emb + pos[..L])
//! h  = x + dropout(attn(ln1(x)))          per layer
//! x  = h + dropout(ffn(ln2(h)))
//! logits = ln_f(x) W_head + b_head        L x 3
//! ```
//!
//! Sequences are processed one at a time without padding, so attention needs
//! no mask.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedkit::{normal_init, INIT_STD};
use crate::error::{Error, Result};

pub const N_CLASSES: usize = 3;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyEncoderConfig {
    #[serde(default = "defaults::layers")]
    pub layers: usize,
    #[serde(default = "defaults::d")]
    pub d: usize,
    #[serde(default = "defaults::heads")]
    pub heads: usize,
    #[serde(default = "defaults::ff_dim")]
    pub ff_dim: usize,
    #[serde(default = "defaults::max_seq_len")]
    pub max_seq_len: usize,
    #[serde(default = "defaults::dropout")]
    pub dropout: f64,
}

mod defaults {
    pub fn layers() -> usize {
        2
    }
    pub fn d() -> usize {
        64
    }
    pub fn heads() -> usize {
        4
    }
    pub fn ff_dim() -> usize {
        256
    }
    pub fn max_seq_len() -> usize {
        128
    }
    pub fn dropout() -> f64 {
        0.1
    }
}

impl Default for ToyEncoderConfig {
    fn default() -> Self {
        Self {
            layers: defaults::layers(),
            d: defaults::d(),
            heads: defaults::heads(),
            ff_dim: defaults::ff_dim(),
            max_seq_len: defaults::max_seq_len(),
            dropout: defaults::dropout(),
        }
    }
}

impl ToyEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.d == 0 || self.heads == 0 || self.ff_dim == 0 || self.max_seq_len == 0 {
            return Err(Error::InvalidArgument(format!("encoder sizes must be positive: {self:?}")));
        }
        if !self.d.is_multiple_of(self.heads) {
            return Err(Error::InvalidArgument(format!(
                "d={} is not divisible by heads={}",
                self.d, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// All encoder tensors. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub pos: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

/// Name, shape, and whether weight decay applies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub decay: bool,
}

macro_rules! layer_fields {
    ($m:ident) => {
        $m!(ln1_g, false);
        $m!(ln1_b, false);
        $m!(wq, true);
        $m!(bq, false);
        $m!(wk, true);
        $m!(bk, false);
        $m!(wv, true);
        $m!(bv, false);
        $m!(wo, true);
        $m!(bo, false);
        $m!(ln2_g, false);
        $m!(ln2_b, false);
        $m!(w1, true);
        $m!(b1, false);
        $m!(w2, true);
        $m!(b2, false);
    };
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(cfg: &ToyEncoderConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d;
        let ff = cfg.ff_dim;
        let pos = normal_init((cfg.max_seq_len, d), INIT_STD, rng);
        let layers = (0..cfg.layers)
            .map(|_| LayerParams {
                ln1_g: Array1::ones(d),
                ln1_b: Array1::zeros(d),
                wq: normal_init((d, d), INIT_STD, rng),
                bq: Array1::zeros(d),
                wk: normal_init((d, d), INIT_STD, rng),
                bk: Array1::zeros(d),
                wv: normal_init((d, d), INIT_STD, rng),
                bv: Array1::zeros(d),
                wo: normal_init((d, d), INIT_STD, rng),
                bo: Array1::zeros(d),
                ln2_g: Array1::ones(d),
                ln2_b: Array1::zeros(d),
                w1: normal_init((d, ff), INIT_STD, rng),
                b1: Array1::zeros(ff),
                w2: normal_init((ff, d), INIT_STD, rng),
                b2: Array1::zeros(d),
            })
            .collect();
        Ok(Self {
            pos,
            layers,
            lnf_g: Array1::ones(d),
            lnf_b: Array1::zeros(d),
            head_w: normal_init((d, N_CLASSES), INIT_STD, rng),
            head_b: Array1::zeros(N_CLASSES),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Tensor descriptions in the order of [`Self::tensors`].
    pub fn slots(&self) -> Vec<ParamSlot> {
        let mut out = Vec::new();
        let mut push = |name: String, shape: &[usize], decay: bool| {
            out.push(ParamSlot {
                name,
                shape: shape.to_vec(),
                decay,
            })
        };
        push("encoder.pos".into(), self.pos.shape(), false);
        for (i, l) in self.layers.iter().enumerate() {
            macro_rules! slot {
                ($f:ident, $decay:expr) => {
                    push(format!("encoder.layer{i}.{}", stringify!($f)), l.$f.shape(), $decay)
                };
            }
            layer_fields!(slot);
        }
        push("encoder.lnf_g".into(), self.lnf_g.shape(), false);
        push("encoder.lnf_b".into(), self.lnf_b.shape(), false);
        push("encoder.head_w".into(), self.head_w.shape(), true);
        push("encoder.head_b".into(), self.head_b.shape(), false);
        out
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.pos.as_slice().unwrap()];
        for l in &self.layers {
            macro_rules! get {
                ($f:ident, $decay:expr) => {
                    out.push(l.$f.as_slice().unwrap())
                };
            }
            layer_fields!(get);
        }
        out.push(self.lnf_g.as_slice().unwrap());
        out.push(self.lnf_b.as_slice().unwrap());
        out.push(self.head_w.as_slice().unwrap());
        out.push(self.head_b.as_slice().unwrap());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.pos.as_slice_mut().unwrap()];
        for l in &mut self.layers {
            macro_rules! get {
                ($f:ident, $decay:expr) => {
                    out.push(l.$f.as_slice_mut().unwrap())
                };
            }
            layer_fields!(get);
        }
        out.push(self.lnf_g.as_slice_mut().unwrap());
        out.push(self.lnf_b.as_slice_mut().unwrap());
        out.push(self.head_w.as_slice_mut().unwrap());
        out.push(self.head_b.as_slice_mut().unwrap());
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Adds `other` element-wise.
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.dot(&row) / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        let rs = *r;
        row.mapv_inplace(|v| v * rs);
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    g: &Array1<f64>,
    dg: &mut Array1<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let dxhat = dy * g;
    let mut dx = Array2::zeros(dy.raw_dim());
    Zip::from(dx.rows_mut())
        .and(dxhat.rows())
        .and(cache.xhat.rows())
        .and(&cache.rstd)
        .for_each(|mut dx, dxh, xh, &rstd| {
            let m1 = dxh.sum() / d;
            let m2 = dxh.dot(&xh) / d;
            Zip::from(&mut dx)
                .and(&dxh)
                .and(&xh)
                .for_each(|o, &a, &x| *o = rstd * (a - m1 - x * m2));
        });
    dx
}

/// `x W + b`.
fn linear(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(w) + b
}

/// Accumulates `dW`, `db` and returns `dx`.
fn linear_backward(
    x: &Array2<f64>,
    w: &Array2<f64>,
    dy: &Array2<f64>,
    dw: &mut Array2<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    ndarray::linalg::general_mat_mul(1.0, &x.t(), dy, 1.0, dw);
    *db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row /= z;
    }
}

/// Inverted-dropout mask, or `None` when dropout is off.
fn dropout_mask<R: Rng + ?Sized>(shape: (usize, usize), p: f64, rng: Option<&mut R>) -> Option<Array2<f64>> {
    let rng = rng?;
    if p == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(Array2::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < p {
            0.0
        } else {
            keep
        }
    }))
}

fn apply_mask(x: &mut Array2<f64>, mask: &Option<Array2<f64>>) {
    if let Some(m) = mask {
        *x *= m;
    }
}

struct LayerCache {
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    o: Array2<f64>,
    attn_mask: Option<Array2<f64>>,
    ln2: LnCache,
    a2: Array2<f64>,
    h1: Array2<f64>,
    g: Array2<f64>,
    ffn_mask: Option<Array2<f64>>,
}

/// Activations kept for the backward pass of one sequence.
pub struct ForwardCache {
    input_mask: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
    x_final: Array2<f64>,
    lnf: LnCache,
    y: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub cfg: ToyEncoderConfig,
    pub params: EncoderParams,
}

impl Encoder {
    pub fn init<R: Rng + ?Sized>(cfg: ToyEncoderConfig, rng: &mut R) -> Result<Self> {
        Ok(Self {
            params: EncoderParams::init(&cfg, rng)?,
            cfg,
        })
    }

    /// Checks `params` against `cfg`.
    pub fn new(cfg: ToyEncoderConfig, params: EncoderParams) -> Result<Self> {
        cfg.validate()?;
        let expected = EncoderParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0))?.slots();
        if params.slots() != expected {
            return Err(Error::ShapeMismatch("encoder parameters do not match config".into()));
        }
        Ok(Self { cfg, params })
    }

    fn check_input(&self, emb: &ArrayView2<'_, f64>) -> Result<()> {
        let (len, d) = emb.dim();
        if d != self.cfg.d {
            return Err(Error::ShapeMismatch(format!("embedding dim {d}, encoder dim {}", self.cfg.d)));
        }
        if len == 0 || len > self.cfg.max_seq_len {
            return Err(Error::InvalidArgument(format!(
                "sequence length {len} not in 1..={}",
                self.cfg.max_seq_len
            )));
        }
        Ok(())
    }

    /// Logits without dropout.
    pub fn logits(&self, emb: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.forward::<ChaCha8Rng>(emb, None).map(|(l, _)| l)
    }

    /// Forward pass. Dropout is active only when `rng` is given.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        emb: ArrayView2<'_, f64>,
        mut rng: Option<&mut R>,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&emb)?;
        let p = &self.params;
        let cfg = &self.cfg;
        let len = emb.nrows();
        let shape = (len, cfg.d);
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let mut x = &emb + &p.pos.slice(s![..len, ..]);
        let input_mask = dropout_mask(shape, cfg.dropout, rng.as_deref_mut());
        apply_mask(&mut x, &input_mask);

        let mut layers = Vec::with_capacity(cfg.layers);
        for lp in &p.layers {
            let (a, ln1) = layer_norm(&x, &lp.ln1_g, &lp.ln1_b);
            let q = linear(&a, &lp.wq, &lp.bq);
            let k = linear(&a, &lp.wk, &lp.bk);
            let v = linear(&a, &lp.wv, &lp.bv);
            let mut o = Array2::zeros(shape);
            let mut probs = Vec::with_capacity(cfg.heads);
            for hd in 0..cfg.heads {
                let cols = s![.., hd * dh..(hd + 1) * dh];
                let mut sc = q.slice(cols).dot(&k.slice(cols).t()) * scale;
                softmax_rows(&mut sc);
                o.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
                probs.push(sc);
            }
            let mut attn = linear(&o, &lp.wo, &lp.bo);
            let attn_mask = dropout_mask(shape, cfg.dropout, rng.as_deref_mut());
            apply_mask(&mut attn, &attn_mask);
            let h = &x + &attn;

            let (a2, ln2) = layer_norm(&h, &lp.ln2_g, &lp.ln2_b);
            let h1 = linear(&a2, &lp.w1, &lp.b1);
            let g = h1.mapv(gelu);
            let mut f = linear(&g, &lp.w2, &lp.b2);
            let ffn_mask = dropout_mask(shape, cfg.dropout, rng.as_deref_mut());
            apply_mask(&mut f, &ffn_mask);
            let next = &h + &f;

            layers.push(LayerCache {
                ln1,
                a,
                q,
                k,
                v,
                probs,
                o,
                attn_mask,
                ln2,
                a2,
                h1,
                g,
                ffn_mask,
            });
            x = next;
        }
        let (y, lnf) = layer_norm(&x, &p.lnf_g, &p.lnf_b);
        let logits = linear(&y, &p.head_w, &p.head_b);
        Ok((
            logits,
            ForwardCache {
                input_mask,
                layers,
                x_final: x,
                lnf,
                y,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input embeddings.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        dlogits: ArrayView2<'_, f64>,
        grads: &mut EncoderParams,
    ) -> Result<Array2<f64>> {
        let p = &self.params;
        let cfg = &self.cfg;
        let len = cache.x_final.nrows();
        if dlogits.dim() != (len, N_CLASSES) {
            return Err(Error::ShapeMismatch("logit gradient".into()));
        }
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let dlogits = dlogits.to_owned();

        let dy = linear_backward(&cache.y, &p.head_w, &dlogits, &mut grads.head_w, &mut grads.head_b);
        let mut dx = layer_norm_backward(&dy, &cache.lnf, &p.lnf_g, &mut grads.lnf_g, &mut grads.lnf_b);

        for ((lp, lc), lg) in p.layers.iter().zip(&cache.layers).rev().zip(grads.layers.iter_mut().rev()) {
            // ffn block: x_out = h + mask * (gelu(a2 W1 + b1) W2 + b2)
            let mut df = dx.clone();
            apply_mask(&mut df, &lc.ffn_mask);
            let dg = linear_backward(&lc.g, &lp.w2, &df, &mut lg.w2, &mut lg.b2);
            let dh1 = dg * &lc.h1.mapv(gelu_grad);
            let da2 = linear_backward(&lc.a2, &lp.w1, &dh1, &mut lg.w1, &mut lg.b1);
            let mut dhid = dx;
            dhid += &layer_norm_backward(&da2, &lc.ln2, &lp.ln2_g, &mut lg.ln2_g, &mut lg.ln2_b);

            // attention block: h = x + mask * (attn(a) Wo + bo)
            let mut dattn = dhid.clone();
            apply_mask(&mut dattn, &lc.attn_mask);
            let d_o = linear_backward(&lc.o, &lp.wo, &dattn, &mut lg.wo, &mut lg.bo);
            let mut dq = Array2::zeros((len, cfg.d));
            let mut dk = Array2::zeros((len, cfg.d));
            let mut dv = Array2::zeros((len, cfg.d));
            for (hd, probs) in lc.probs.iter().enumerate() {
                let cols = s![.., hd * dh..(hd + 1) * dh];
                let doh = d_o.slice(cols);
                let dp = doh.dot(&lc.v.slice(cols).t());
                dv.slice_mut(cols).assign(&probs.t().dot(&doh));
                let row_dot = (&dp * probs).sum_axis(Axis(1)).insert_axis(Axis(1));
                let ds = (dp - &row_dot) * probs * scale;
                dq.slice_mut(cols).assign(&ds.dot(&lc.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&lc.q.slice(cols)));
            }
            let mut da = linear_backward(&lc.a, &lp.wq, &dq, &mut lg.wq, &mut lg.bq);
            da += &linear_backward(&lc.a, &lp.wk, &dk, &mut lg.wk, &mut lg.bk);
            da += &linear_backward(&lc.a, &lp.wv, &dv, &mut lg.wv, &mut lg.bv);
            dx = dhid;
            dx += &layer_norm_backward(&da, &lc.ln1, &lp.ln1_g, &mut lg.ln1_g, &mut lg.ln1_b);
        }

        apply_mask(&mut dx, &cache.input_mask);
        let mut dpos = grads.pos.slice_mut(s![..len, ..]);
        dpos += &dx;
        Ok(dx)
    }
}

/// Mean cross-entropy over positions and its gradient with respect to the
/// logits, scaled by `1 / normalizer`. Returns the summed (unnormalized) loss.
pub fn cross_entropy(
    logits: ArrayView2<'_, f64>,
    targets: &[usize],
    normalizer: f64,
) -> Result<(f64, Array2<f64>)> {
    if logits.nrows() != targets.len() {
        return Err(Error::ShapeMismatch("targets and logits differ in length".into()));
    }
    let mut probs = logits.to_owned();
    softmax_rows(&mut probs);
    let mut loss = 0.0;
    for (mut row, &t) in probs.rows_mut().into_iter().zip(targets) {
        if t >= N_CLASSES {
            return Err(Error::IndexOutOfRange {
                index: t,
                len: N_CLASSES,
            });
        }
        loss -= row[t].max(f64::MIN_POSITIVE).ln();
        row[t] -= 1.0;
    }
    probs /= normalizer;
    Ok((loss, probs))
}

/// Index of the largest logit in each row (first on ties).
pub fn argmax_rows(logits: ArrayView2<'_, f64>) -> Vec<usize> {
    logits.rows().into_iter().map(|r| argmax(r)).collect()
}

fn argmax(r: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in r.iter().enumerate() {
        if v > r[best] {
            best = i;
        }
    }
    best
}
