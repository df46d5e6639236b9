use std::sync::OnceLock;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::action::{encode_action, ActionIndex, NUM_ACTIONS};
use super::params::*;
use super::QnetError;
use crate::obs::{Heightmap, ObservationBundle, HEIGHTMAP_SIZE, PAST_EE_SLOTS};

/// Positions (m) and heights (m) are multiplied by this before entering the network.
pub const INPUT_SCALE: f64 = 10.0;
const LN_EPS: f64 = 1e-5;

pub fn layout() -> &'static Layout {
    static LAYOUT: OnceLock<Layout> = OnceLock::new();
    LAYOUT.get_or_init(Layout::new)
}

/// Which observation channels reach the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Heightmap feature and object tokens.
    PoseRaw,
    /// Object tokens with the heightmap feature zeroed.
    PoseOnly,
    /// Null token only, carrying the heightmap feature.
    RawOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::PoseRaw, Variant::PoseOnly, Variant::RawOnly];

    pub fn name(self) -> &'static str {
        match self {
            Variant::PoseRaw => "pose+raw",
            Variant::PoseOnly => "pose-only",
            Variant::RawOnly => "raw-only",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }

    fn uses_heightmap(self) -> bool {
        self != Variant::PoseOnly
    }

    fn uses_objects(self) -> bool {
        self != Variant::RawOnly
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub variant: Variant,
    pub params: Vec<f64>,
}

fn mat(p: &[f64], off: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), &p[off..off + rows * cols]).expect("layout")
}

fn vec1(p: &[f64], off: usize, n: usize) -> ArrayView1<'_, f64> {
    ArrayView1::from(&p[off..off + n])
}

fn add_mat(g: &mut [f64], off: usize, m: &Array2<f64>) {
    for (dst, src) in g[off..off + m.len()].iter_mut().zip(m.iter()) {
        *dst += src;
    }
}

fn add_vec(g: &mut [f64], off: usize, v: &Array1<f64>) {
    for (dst, src) in g[off..off + v.len()].iter_mut().zip(v.iter()) {
        *dst += src;
    }
}

/// `x · wᵀ + b` for a row-major `(out, in)` weight.
fn linear(x: &Array2<f64>, p: &[f64], w: usize, b: usize, out: usize, inp: usize) -> Array2<f64> {
    let mut y = x.dot(&mat(p, w, out, inp).t());
    y += &vec1(p, b, out);
    y
}

/// Accumulates weight/bias gradients of `linear` and returns the input gradient.
#[allow(clippy::too_many_arguments)]
fn linear_back(
    dy: &Array2<f64>,
    x: &Array2<f64>,
    p: &[f64],
    g: &mut [f64],
    w: usize,
    b: usize,
    out: usize,
    inp: usize,
    need_dx: bool,
) -> Option<Array2<f64>> {
    add_mat(g, w, &dy.t().dot(x));
    add_vec(g, b, &dy.sum_axis(Axis(0)));
    need_dx.then(|| dy.dot(&mat(p, w, out, inp)))
}

struct LnCache {
    xhat: Array2<f64>,
    inv: Vec<f64>,
}

fn layer_norm(x: &Array2<f64>, p: &[f64], g: usize, b: usize) -> (Array2<f64>, LnCache) {
    let d = x.ncols();
    let gamma = vec1(p, g, d);
    let beta = vec1(p, b, d);
    let mut xhat = x.clone();
    let mut inv = Vec::with_capacity(x.nrows());
    for mut row in xhat.rows_mut() {
        let mean = row.sum() / d as f64;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
        let iv = 1.0 / (var + LN_EPS).sqrt();
        row *= iv;
        inv.push(iv);
    }
    let y = &xhat * &gamma + &beta;
    (y, LnCache { xhat, inv })
}

fn layer_norm_back(dy: &Array2<f64>, c: &LnCache, p: &[f64], grad: &mut [f64], g: usize, b: usize) -> Array2<f64> {
    let d = dy.ncols();
    let gamma = vec1(p, g, d);
    add_vec(grad, g, &(dy * &c.xhat).sum_axis(Axis(0)));
    add_vec(grad, b, &dy.sum_axis(Axis(0)));
    let mut dx = dy * &gamma;
    for ((mut row, xh), &iv) in dx.rows_mut().into_iter().zip(c.xhat.rows()).zip(&c.inv) {
        let sum = row.sum();
        let dot = row.dot(&xh);
        let n = d as f64;
        for (v, &x) in row.iter_mut().zip(xh.iter()) {
            *v = iv / n * (n * *v - sum - x * dot);
        }
    }
    dx
}

/// Contiguous token rows `[start, start + len)` forming one set.
type Group = (usize, usize);

struct LayerCache {
    ln1: LnCache,
    u1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Per group, per head, row-major `len × len` attention weights.
    probs: Vec<Vec<Vec<f64>>>,
    ctx: Array2<f64>,
    y: Array2<f64>,
    ln2: LnCache,
    u2: Array2<f64>,
    hid: Array2<f64>,
}

fn attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, groups: &[Group]) -> (Array2<f64>, Vec<Vec<Vec<f64>>>) {
    let scale = 1.0 / (D_HEAD as f64).sqrt();
    let mut ctx = Array2::zeros(q.raw_dim());
    let mut probs = Vec::with_capacity(groups.len());
    let (qs, ks, vs) = (q.as_slice().unwrap(), k.as_slice().unwrap(), v.as_slice().unwrap());
    let cs = ctx.as_slice_mut().unwrap();
    for &(start, len) in groups {
        let mut per_head = Vec::with_capacity(N_HEADS);
        for h in 0..N_HEADS {
            let o = h * D_HEAD;
            let mut pm = vec![0.0; len * len];
            for i in 0..len {
                let qi = &qs[(start + i) * D_MODEL + o..(start + i) * D_MODEL + o + D_HEAD];
                let row = &mut pm[i * len..(i + 1) * len];
                let mut max = f64::NEG_INFINITY;
                for (j, r) in row.iter_mut().enumerate() {
                    let kj = &ks[(start + j) * D_MODEL + o..(start + j) * D_MODEL + o + D_HEAD];
                    *r = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    max = max.max(*r);
                }
                let mut sum = 0.0;
                for r in row.iter_mut() {
                    *r = (*r - max).exp();
                    sum += *r;
                }
                for r in row.iter_mut() {
                    *r /= sum;
                }
                let ci = (start + i) * D_MODEL + o;
                for (j, &w) in row.iter().enumerate() {
                    let vj = &vs[(start + j) * D_MODEL + o..(start + j) * D_MODEL + o + D_HEAD];
                    for (c, &vv) in cs[ci..ci + D_HEAD].iter_mut().zip(vj) {
                        *c += w * vv;
                    }
                }
            }
            per_head.push(pm);
        }
        probs.push(per_head);
    }
    (ctx, probs)
}

/// Returns `(dq, dk, dv)`.
fn attention_back(
    dctx: &Array2<f64>,
    c: &LayerCache,
    groups: &[Group],
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let scale = 1.0 / (D_HEAD as f64).sqrt();
    let mut dq = Array2::zeros(c.q.raw_dim());
    let mut dk = Array2::zeros(c.q.raw_dim());
    let mut dv = Array2::zeros(c.q.raw_dim());
    let (qs, ks, vs) = (c.q.as_slice().unwrap(), c.k.as_slice().unwrap(), c.v.as_slice().unwrap());
    let dcs = dctx.as_slice().unwrap();
    let (dqs, dks, dvs) = (dq.as_slice_mut().unwrap(), dk.as_slice_mut().unwrap(), dv.as_slice_mut().unwrap());
    for (gi, &(start, len)) in groups.iter().enumerate() {
        for h in 0..N_HEADS {
            let o = h * D_HEAD;
            let pm = &c.probs[gi][h];
            let at = |t: usize| (start + t) * D_MODEL + o;
            for i in 0..len {
                let dci = &dcs[at(i)..at(i) + D_HEAD];
                let prow = &pm[i * len..(i + 1) * len];
                // dP_ij = dctx_i · v_j ; dv_j += P_ij dctx_i
                let mut dp = vec![0.0; len];
                for j in 0..len {
                    let vj = &vs[at(j)..at(j) + D_HEAD];
                    dp[j] = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                    for (d, &g) in dvs[at(j)..at(j) + D_HEAD].iter_mut().zip(dci) {
                        *d += prow[j] * g;
                    }
                }
                let dot: f64 = dp.iter().zip(prow).map(|(a, b)| a * b).sum();
                for j in 0..len {
                    let ds = prow[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for t in 0..D_HEAD {
                        dqs[at(i) + t] += ds * ks[at(j) + t];
                        dks[at(j) + t] += ds * qs[at(i) + t];
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}

fn relu(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

fn transformer_layer(x: Array2<f64>, p: &[f64], lo: &LayerOffsets, groups: &[Group]) -> LayerCache {
    let (u1, ln1) = layer_norm(&x, p, lo.ln1_g, lo.ln1_b);
    let q = linear(&u1, p, lo.wq, lo.bq, D_MODEL, D_MODEL);
    let k = linear(&u1, p, lo.wk, lo.bk, D_MODEL, D_MODEL);
    let v = linear(&u1, p, lo.wv, lo.bv, D_MODEL, D_MODEL);
    let (ctx, probs) = attention(&q, &k, &v, groups);
    let y = &x + &linear(&ctx, p, lo.wo, lo.bo, D_MODEL, D_MODEL);
    let (u2, ln2) = layer_norm(&y, p, lo.ln2_g, lo.ln2_b);
    let mut hid = linear(&u2, p, lo.w1, lo.b1, D_FF, D_MODEL);
    relu(&mut hid);
    LayerCache { ln1, u1, q, k, v, probs, ctx, y, ln2, u2, hid }
}

fn layer_output(c: &LayerCache, p: &[f64], lo: &LayerOffsets) -> Array2<f64> {
    &c.y + &linear(&c.hid, p, lo.w2, lo.b2, D_MODEL, D_FF)
}

fn transformer_layer_back(dz: &Array2<f64>, c: &LayerCache, p: &[f64], g: &mut [f64], lo: &LayerOffsets, groups: &[Group]) -> Array2<f64> {
    let mut dhid = linear_back(dz, &c.hid, p, g, lo.w2, lo.b2, D_MODEL, D_FF, true).unwrap();
    dhid.zip_mut_with(&c.hid, |d, &h| {
        if h <= 0.0 {
            *d = 0.0;
        }
    });
    let du2 = linear_back(&dhid, &c.u2, p, g, lo.w1, lo.b1, D_FF, D_MODEL, true).unwrap();
    let dy = dz + &layer_norm_back(&du2, &c.ln2, p, g, lo.ln2_g, lo.ln2_b);
    let dctx = linear_back(&dy, &c.ctx, p, g, lo.wo, lo.bo, D_MODEL, D_MODEL, true).unwrap();
    let (dq, dk, dv) = attention_back(&dctx, c, groups);
    let mut du1 = linear_back(&dq, &c.u1, p, g, lo.wq, lo.bq, D_MODEL, D_MODEL, true).unwrap();
    du1 += &linear_back(&dk, &c.u1, p, g, lo.wk, lo.bk, D_MODEL, D_MODEL, true).unwrap();
    du1 += &linear_back(&dv, &c.u1, p, g, lo.wv, lo.bv, D_MODEL, D_MODEL, true).unwrap();
    &dy + &layer_norm_back(&du1, &c.ln1, p, g, lo.ln1_g, lo.ln1_b)
}

struct ConvCache {
    cols: Array2<f64>,
    /// Post-ReLU output, `(cout, batch · ho · wo)`.
    out: Array2<f64>,
    hin: usize,
    win: usize,
}

fn im2col(input: &Array2<f64>, batch: usize, hi: usize, wi: usize) -> Array2<f64> {
    let cin = input.nrows();
    let (ho, wo) = (hi / 2, wi / 2);
    let mut cols = Array2::zeros((cin * 9, batch * ho * wo));
    let src = input.as_slice().unwrap();
    let ncols = batch * ho * wo;
    let dst = cols.as_slice_mut().unwrap();
    for ci in 0..cin {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * ncols;
                for b in 0..batch {
                    let base_in = ci * batch * hi * wi + b * hi * wi;
                    for oy in 0..ho {
                        let iy = (2 * oy + ky) as isize - 1;
                        if iy < 0 || iy >= hi as isize {
                            continue;
                        }
                        let out_row = row + b * ho * wo + oy * wo;
                        let in_row = base_in + iy as usize * wi;
                        for ox in 0..wo {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix >= 0 && ix < wi as isize {
                                dst[out_row + ox] = src[in_row + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(dcols: &Array2<f64>, cin: usize, batch: usize, hi: usize, wi: usize) -> Array2<f64> {
    let (ho, wo) = (hi / 2, wi / 2);
    let ncols = batch * ho * wo;
    let mut dx = Array2::zeros((cin, batch * hi * wi));
    let src = dcols.as_slice().unwrap();
    let dst = dx.as_slice_mut().unwrap();
    for ci in 0..cin {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * ncols;
                for b in 0..batch {
                    let base_in = ci * batch * hi * wi + b * hi * wi;
                    for oy in 0..ho {
                        let iy = (2 * oy + ky) as isize - 1;
                        if iy < 0 || iy >= hi as isize {
                            continue;
                        }
                        let out_row = row + b * ho * wo + oy * wo;
                        let in_row = base_in + iy as usize * wi;
                        for ox in 0..wo {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix >= 0 && ix < wi as isize {
                                dst[in_row + ix as usize] += src[out_row + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Heightmaps → `(batch, HFEAT)` features.
fn conv_forward(p: &[f64], hms: &[&Heightmap], mut cache: Option<&mut Vec<ConvCache>>) -> Array2<f64> {
    let l = layout();
    let batch = hms.len();
    let n = HEIGHTMAP_SIZE;
    let mut x = Array2::zeros((1, batch * n * n));
    for (b, hm) in hms.iter().enumerate() {
        for (dst, &h) in x.slice_mut(s![0, b * n * n..(b + 1) * n * n]).iter_mut().zip(hm.data()) {
            *dst = h * INPUT_SCALE;
        }
    }
    let (mut hi, mut wi) = (n, n);
    for layer in 0..4 {
        let (ci, co) = (CONV_CHANNELS[layer], CONV_CHANNELS[layer + 1]);
        let cols = im2col(&x, batch, hi, wi);
        let mut out = mat(p, l.conv_w[layer], co, ci * 9).dot(&cols);
        out += &vec1(p, l.conv_b[layer], co).insert_axis(Axis(1));
        relu(&mut out);
        let next = out.clone();
        if let Some(c) = cache.as_deref_mut() {
            c.push(ConvCache { cols, out, hin: hi, win: wi });
        }
        x = next;
        hi /= 2;
        wi /= 2;
    }
    let per = hi * wi;
    let mut feat = Array2::zeros((batch, HFEAT));
    for c in 0..HFEAT {
        for b in 0..batch {
            feat[[b, c]] = x.slice(s![c, b * per..(b + 1) * per]).sum() / per as f64;
        }
    }
    feat
}

fn conv_back(dfeat: &Array2<f64>, cache: &[ConvCache], p: &[f64], g: &mut [f64]) {
    let l = layout();
    let batch = dfeat.nrows();
    let last = &cache[3];
    let per = (last.hin / 2) * (last.win / 2);
    let mut dout = Array2::zeros(last.out.raw_dim());
    for c in 0..HFEAT {
        for b in 0..batch {
            let v = dfeat[[b, c]] / per as f64;
            dout.slice_mut(s![c, b * per..(b + 1) * per]).fill(v);
        }
    }
    for layer in (0..4).rev() {
        let cc = &cache[layer];
        let (ci, co) = (CONV_CHANNELS[layer], CONV_CHANNELS[layer + 1]);
        dout.zip_mut_with(&cc.out, |d, &o| {
            if o <= 0.0 {
                *d = 0.0;
            }
        });
        add_mat(g, l.conv_w[layer], &dout.dot(&cc.cols.t()));
        add_vec(g, l.conv_b[layer], &dout.sum_axis(Axis(1)));
        if layer > 0 {
            let dcols = mat(p, l.conv_w[layer], co, ci * 9).t().dot(&dout);
            dout = col2im(&dcols, ci, batch, cc.hin, cc.win);
        }
    }
}

/// Token inputs of one observation without the action columns, and whether
/// the rows are the null token.
fn token_rows(p: &[f64], variant: Variant, obs: &ObservationBundle, h: ArrayView1<f64>) -> (Array2<f64>, bool) {
    let l = layout();
    let objects = if variant.uses_objects() { obs.pose_obs.objects.as_slice() } else { &[] };
    let null = objects.is_empty();
    let rows = objects.len().max(1);
    let mut x = Array2::zeros((rows, TOKEN_DIM));
    let past = obs.past_ee_features();
    for (r, mut row) in x.rows_mut().into_iter().enumerate() {
        if null {
            row.slice_mut(s![OBJ_COLS]).assign(&vec1(p, l.null_obj, OBJ_DIM));
        } else {
            let o = &objects[r];
            row[0] = if o.target { 1.0 } else { 0.0 };
            for (i, v) in o.one_hot().into_iter().enumerate() {
                row[1 + i] = v;
            }
            let a = o.pose.to_array();
            for i in 0..7 {
                row[1 + crate::sim::NUM_CATEGORIES + i] = if i < 3 { a[i] * INPUT_SCALE } else { a[i] };
            }
        }
        if variant.uses_heightmap() {
            row.slice_mut(s![H_COLS]).assign(&h);
        }
        for slot in 0..PAST_EE_SLOTS {
            for i in 0..8 {
                let v = past[slot * 8 + i];
                row[PAST_COLS.start + slot * 8 + i] = if i < 3 { v * INPUT_SCALE } else { v };
            }
        }
    }
    (x, null)
}

struct BatchCache {
    conv: Vec<ConvCache>,
    xin: Array2<f64>,
    null_rows: Vec<bool>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    pooled: Array2<f64>,
}

impl QNetwork {
    pub fn new(variant: Variant, seed: u64) -> Self {
        Self { variant, params: layout().init(seed) }
    }

    pub fn from_params(variant: Variant, params: Vec<f64>) -> Result<Self, QnetError> {
        if params.len() != layout().total {
            return Err(QnetError::Shape(format!("expected {} parameters, got {}", layout().total, params.len())));
        }
        Ok(Self { variant, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Zeroes the output layer so every Q-value is exactly 0.
    pub fn zero_head(&mut self) {
        let l = layout();
        self.params[l.head_w..l.head_w + D_MODEL].fill(0.0);
        self.params[l.head_b] = 0.0;
    }

    fn features(&self, hms: &[&Heightmap], cache: Option<&mut Vec<ConvCache>>) -> Array2<f64> {
        if self.variant.uses_heightmap() {
            conv_forward(&self.params, hms, cache)
        } else {
            Array2::zeros((hms.len(), HFEAT))
        }
    }

    /// Runs the transformer over grouped embedded tokens and returns one Q per group.
    fn encode(&self, x: Array2<f64>, groups: &[Group], mut cache: Option<&mut BatchCache>) -> Vec<f64> {
        let l = layout();
        let p = &self.params;
        let mut x = x;
        for lo in &l.layers {
            let c = transformer_layer(x, p, lo, groups);
            x = layer_output(&c, p, lo);
            if let Some(bc) = cache.as_deref_mut() {
                bc.layers.push(c);
            }
        }
        let (z, lnf) = layer_norm(&x, p, l.lnf_g, l.lnf_b);
        let mut pooled = Array2::zeros((groups.len(), D_MODEL));
        for (gi, &(start, len)) in groups.iter().enumerate() {
            let m = z.slice(s![start..start + len, ..]).sum_axis(Axis(0)) / len as f64;
            pooled.row_mut(gi).assign(&m);
        }
        let q = pooled.dot(&vec1(p, l.head_w, D_MODEL)) + p[l.head_b];
        if let Some(bc) = cache {
            bc.lnf = lnf;
            bc.pooled = pooled;
        }
        q.to_vec()
    }

    fn forward_batch(&self, batch: &[(&ObservationBundle, ActionIndex)], mut cache: Option<&mut BatchCache>) -> (Vec<f64>, Vec<Group>) {
        let l = layout();
        let p = &self.params;
        let hms: Vec<&Heightmap> = batch.iter().map(|(o, _)| o.heightmap.as_ref()).collect();
        let feat = self.features(&hms, cache.as_deref_mut().map(|c| &mut c.conv));
        let mut rows = Vec::new();
        let mut groups = Vec::with_capacity(batch.len());
        let mut null_rows = Vec::new();
        for (b, (obs, a)) in batch.iter().enumerate() {
            let (mut x, null) = token_rows(p, self.variant, obs, feat.row(b));
            let enc = encode_action(*a).unit_encoding();
            for mut row in x.rows_mut() {
                for (i, v) in enc.iter().enumerate() {
                    row[ACTION_COLS.start + i] = *v;
                }
            }
            groups.push((rows.len(), x.nrows()));
            null_rows.extend(std::iter::repeat(null).take(x.nrows()));
            rows.extend(x.rows().into_iter().map(|r| r.to_owned()));
        }
        let mut xin = Array2::zeros((rows.len(), TOKEN_DIM));
        for (mut dst, src) in xin.rows_mut().into_iter().zip(&rows) {
            dst.assign(src);
        }
        let e = linear(&xin, p, l.embed_w, l.embed_b, D_MODEL, TOKEN_DIM);
        if let Some(c) = cache.as_deref_mut() {
            c.xin = xin;
            c.null_rows = null_rows;
        }
        (self.encode(e, &groups, cache), groups)
    }

    pub fn forward(&self, obs: &ObservationBundle, action: ActionIndex) -> f64 {
        self.forward_batch(&[(obs, action)], None).0[0]
    }

    /// Q-values of all 729 actions, batched: the action only shifts every
    /// token embedding by the same vector, so the observation part is
    /// embedded once.
    pub fn forward_all(&self, obs: &ObservationBundle) -> Vec<f64> {
        let l = layout();
        let p = &self.params;
        let feat = self.features(&[obs.heightmap.as_ref()], None);
        let (x, _) = token_rows(p, self.variant, obs, feat.row(0));
        let base = linear(&x, p, l.embed_w, l.embed_b, D_MODEL, TOKEN_DIM);
        let we = mat(p, l.embed_w, D_MODEL, TOKEN_DIM);
        let wa = we.slice(s![.., ACTION_COLS]);
        let mut acts = Array2::zeros((NUM_ACTIONS, ACTION_DIM));
        for a in ActionIndex::all() {
            let enc = encode_action(a).unit_encoding();
            acts.row_mut(a.get()).assign(&ArrayView1::from(&enc));
        }
        let shift = acts.dot(&wa.t());
        let o = base.nrows();
        let mut tokens = Array2::zeros((NUM_ACTIONS * o, D_MODEL));
        for a in 0..NUM_ACTIONS {
            for i in 0..o {
                let mut row = tokens.row_mut(a * o + i);
                row.assign(&base.row(i));
                row += &shift.row(a);
            }
        }
        let groups: Vec<Group> = (0..NUM_ACTIONS).map(|a| (a * o, o)).collect();
        self.encode(tokens, &groups, None)
    }

    /// Mean L1 loss of `(obs, action, target)` samples and its gradient with
    /// respect to every parameter (subgradient 0 at zero residual).
    pub fn loss_and_grad(&self, batch: &[(&ObservationBundle, ActionIndex, f64)]) -> Result<(f64, Vec<f64>), QnetError> {
        if batch.is_empty() {
            return Err(QnetError::EmptyBatch);
        }
        let l = layout();
        let p = &self.params;
        let mut cache = BatchCache {
            conv: Vec::new(),
            xin: Array2::zeros((0, 0)),
            null_rows: Vec::new(),
            layers: Vec::new(),
            lnf: LnCache { xhat: Array2::zeros((0, 0)), inv: Vec::new() },
            pooled: Array2::zeros((0, 0)),
        };
        let pairs: Vec<_> = batch.iter().map(|(o, a, _)| (*o, *a)).collect();
        let (q, groups) = self.forward_batch(&pairs, Some(&mut cache));
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut dq = Vec::with_capacity(batch.len());
        for (qi, (_, _, t)) in q.iter().zip(batch) {
            let r = qi - t;
            loss += r.abs() / n;
            dq.push(if r > 0.0 { 1.0 / n } else if r < 0.0 { -1.0 / n } else { 0.0 });
        }
        if !loss.is_finite() {
            return Err(QnetError::NonFinite(format!("loss {loss}")));
        }
        let mut g = vec![0.0; p.len()];
        // head and pooling
        let hw = vec1(p, l.head_w, D_MODEL).to_owned();
        let mut dz = Array2::zeros((cache.lnf.xhat.nrows(), D_MODEL));
        for (gi, &(start, len)) in groups.iter().enumerate() {
            let d = dq[gi];
            if d == 0.0 {
                continue;
            }
            for j in 0..D_MODEL {
                g[l.head_w + j] += d * cache.pooled[[gi, j]];
            }
            g[l.head_b] += d;
            let row = &hw * (d / len as f64);
            for t in start..start + len {
                dz.row_mut(t).assign(&row);
            }
        }
        let mut dx = layer_norm_back(&dz, &cache.lnf, p, &mut g, l.lnf_g, l.lnf_b);
        for (li, lo) in l.layers.iter().enumerate().rev() {
            dx = transformer_layer_back(&dx, &cache.layers[li], p, &mut g, lo, &groups);
        }
        let dxin = linear_back(&dx, &cache.xin, p, &mut g, l.embed_w, l.embed_b, D_MODEL, TOKEN_DIM, true).unwrap();
        for (t, &null) in cache.null_rows.iter().enumerate() {
            if null {
                for j in 0..OBJ_DIM {
                    g[l.null_obj + j] += dxin[[t, j]];
                }
            }
        }
        if self.variant.uses_heightmap() {
            let mut dfeat = Array2::zeros((batch.len(), HFEAT));
            for (gi, &(start, len)) in groups.iter().enumerate() {
                let s = dxin.slice(s![start..start + len, H_COLS]).sum_axis(Axis(0));
                dfeat.row_mut(gi).assign(&s);
            }
            conv_back(&dfeat, &cache.conv, p, &mut g);
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(QnetError::NonFinite("gradient".into()));
        }
        Ok((loss, g))
    }

    pub fn mean_l1(&self, batch: &[(&ObservationBundle, ActionIndex, f64)]) -> f64 {
        let pairs: Vec<_> = batch.iter().map(|(o, a, _)| (*o, *a)).collect();
        let (q, _) = self.forward_batch(&pairs, None);
        q.iter().zip(batch).map(|(q, (_, _, t))| (q - t).abs()).sum::<f64>() / batch.len() as f64
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn greedy_action(q: &[f64]) -> ActionIndex {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    ActionIndex::new(best).expect("q has one entry per action")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Pose, UnitQuat, Vec3};
    use crate::obs::{ObjectToken, PoseObservation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_obs(seed: u64, n_obj: usize) -> ObservationBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec3> = (0..300)
            .map(|_| Vec3::new(rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25), rng.random_range(0.0..0.2)))
            .collect();
        let hm = Heightmap::from_points(&pts, &Pose::IDENTITY);
        let objects = (0..n_obj)
            .map(|i| ObjectToken {
                target: i == 0,
                category: rng.random_range(0..8),
                pose: Pose::new(
                    Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(0.0..0.2)),
                    UnitQuat::from_euler(rng.random_range(-1.0..1.0), 0.3, rng.random_range(-2.0..2.0)),
                ),
            })
            .collect();
        let past: Vec<Pose> = (0..rng.random_range(0..7))
            .map(|k| Pose::from_position(Vec3::new(0.0, 0.0, 0.05 * k as f64)))
            .collect();
        ObservationBundle::new(hm, PoseObservation { objects }, &past, Pose::IDENTITY)
    }

    fn act(i: usize) -> ActionIndex {
        ActionIndex::new(i).unwrap()
    }

    #[test]
    fn zero_head_gives_zero_everywhere() {
        for v in Variant::ALL {
            let mut net = QNetwork::new(v, 1);
            net.zero_head();
            assert!(net.forward_all(&sample_obs(2, 3)).iter().all(|&q| q == 0.0));
        }
    }

    #[test]
    fn forward_all_matches_single_forward() {
        for v in Variant::ALL {
            let net = QNetwork::new(v, 4);
            let obs = sample_obs(5, 3);
            let all = net.forward_all(&obs);
            assert_eq!(all.len(), NUM_ACTIONS);
            for a in [0, 17, 364, 500, 728] {
                let q = net.forward(&obs, act(a));
                assert!((q - all[a]).abs() < 1e-9, "{v:?} {a}: {q} vs {}", all[a]);
            }
        }
    }

    #[test]
    fn object_order_and_duplication_do_not_matter() {
        let net = QNetwork::new(Variant::PoseRaw, 6);
        let obs = sample_obs(7, 4);
        let q = net.forward(&obs, act(100));
        let mut shuffled = obs.clone();
        shuffled.pose_obs.objects.reverse();
        shuffled.pose_obs.objects.swap(0, 2);
        assert!((net.forward(&shuffled, act(100)) - q).abs() < 1e-9);
        let mut doubled = obs.clone();
        doubled.pose_obs.objects.extend(obs.pose_obs.objects.clone());
        assert!((net.forward(&doubled, act(100)) - q).abs() < 1e-9);
    }

    #[test]
    fn variants_ignore_their_masked_inputs() {
        let obs = sample_obs(8, 3);
        let mut flat = obs.clone();
        flat.heightmap = Default::default();
        let pose_only = QNetwork::new(Variant::PoseOnly, 2);
        assert_eq!(pose_only.forward(&obs, act(3)), pose_only.forward(&flat, act(3)));
        let raw_only = QNetwork::new(Variant::RawOnly, 2);
        let mut no_objects = obs.clone();
        no_objects.pose_obs.objects.clear();
        assert_eq!(raw_only.forward(&obs, act(3)), raw_only.forward(&no_objects, act(3)));
        assert_ne!(raw_only.forward(&obs, act(3)), raw_only.forward(&flat, act(3)));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for v in Variant::ALL {
            let mut net = QNetwork::new(v, 11);
            // make the head large enough that every path carries signal
            let l = layout();
            for j in 0..D_MODEL {
                net.params[l.head_w + j] *= 30.0;
            }
            let obs = [sample_obs(1, 2), sample_obs(2, 0), sample_obs(3, 3)];
            let batch: Vec<_> = obs.iter().enumerate().map(|(i, o)| (o, act(100 * i + 7), 5.0 * (i as f64 - 1.0))).collect();
            let (_, g) = net.loss_and_grad(&batch).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            let mut probes: Vec<usize> = l.tensors.iter().map(|t| t.offset).collect();
            probes.extend((0..60).map(|_| rng.random_range(0..l.total)));
            let h = 1e-6;
            for i in probes {
                let mut plus = net.clone();
                plus.params[i] += h;
                let mut minus = net.clone();
                minus.params[i] -= h;
                let fd = (plus.mean_l1(&batch) - minus.mean_l1(&batch)) / (2.0 * h);
                let tol = 1e-5 + 1e-4 * fd.abs().max(g[i].abs());
                assert!((fd - g[i]).abs() < tol, "{v:?} param {i}: fd {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn gradient_steps_reduce_loss() {
        let mut net = QNetwork::new(Variant::PoseRaw, 3);
        let obs: Vec<_> = (0..4).map(|i| sample_obs(20 + i, i as usize)).collect();
        let batch: Vec<_> = obs.iter().enumerate().map(|(i, o)| (o, act(i * 50), i as f64 * 0.5 - 1.0)).collect();
        let start = net.mean_l1(&batch);
        for _ in 0..50 {
            let (_, g) = net.loss_and_grad(&batch).unwrap();
            for (p, g) in net.params.iter_mut().zip(&g) {
                *p -= 0.01 * g;
            }
        }
        assert!(net.mean_l1(&batch) < 0.5 * start);
        assert_eq!(net.loss_and_grad(&[]).unwrap_err(), QnetError::EmptyBatch);
    }

    #[test]
    fn greedy_breaks_ties_low() {
        let mut q = vec![0.0; NUM_ACTIONS];
        assert_eq!(greedy_action(&q).get(), 0);
        q[400] = 1.0;
        q[600] = 1.0;
        assert_eq!(greedy_action(&q).get(), 400);
    }
}
