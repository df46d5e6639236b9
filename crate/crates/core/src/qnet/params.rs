use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::obs::PAST_EE_SLOTS;
use crate::sim::NUM_CATEGORIES;

pub const CONV_CHANNELS: [usize; 5] = [1, 4, 8, 16, 32];
pub const HFEAT: usize = 32;
pub const D_MODEL: usize = 64;
pub const N_HEADS: usize = 4;
pub const D_HEAD: usize = D_MODEL / N_HEADS;
pub const D_FF: usize = 128;
pub const N_LAYERS: usize = 2;
/// flag + one-hot + pose
pub const OBJ_DIM: usize = 1 + NUM_CATEGORIES + 7;
pub const ACTION_DIM: usize = 6;
pub const PAST_DIM: usize = PAST_EE_SLOTS * 8;
pub const TOKEN_DIM: usize = OBJ_DIM + HFEAT + ACTION_DIM + PAST_DIM;
/// Column ranges of the token input.
pub const OBJ_COLS: std::ops::Range<usize> = 0..OBJ_DIM;
pub const H_COLS: std::ops::Range<usize> = OBJ_DIM..OBJ_DIM + HFEAT;
pub const ACTION_COLS: std::ops::Range<usize> = OBJ_DIM + HFEAT..OBJ_DIM + HFEAT + ACTION_DIM;
pub const PAST_COLS: std::ops::Range<usize> = OBJ_DIM + HFEAT + ACTION_DIM..TOKEN_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// A named tensor in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

/// Offsets of every tensor in the flat parameter vector. Matrices are
/// row-major `(out, in)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub conv_w: [usize; 4],
    pub conv_b: [usize; 4],
    pub null_obj: usize,
    pub embed_w: usize,
    pub embed_b: usize,
    pub layers: [LayerOffsets; N_LAYERS],
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub head_w: usize,
    pub head_b: usize,
    pub total: usize,
    pub tensors: Vec<TensorSpec>,
}

struct Builder {
    next: usize,
    tensors: Vec<TensorSpec>,
}

impl Builder {
    fn take(&mut self, name: String, shape: &[usize]) -> usize {
        let off = self.next;
        self.next += shape.iter().product::<usize>();
        self.tensors.push(TensorSpec { name, shape: shape.to_vec(), offset: off });
        off
    }
}

impl Layout {
    pub fn new() -> Self {
        let mut b = Builder { next: 0, tensors: Vec::new() };
        let mut conv_w = [0; 4];
        let mut conv_b = [0; 4];
        for l in 0..4 {
            let (ci, co) = (CONV_CHANNELS[l], CONV_CHANNELS[l + 1]);
            conv_w[l] = b.take(format!("conv{l}.w"), &[co, ci, 3, 3]);
            conv_b[l] = b.take(format!("conv{l}.b"), &[co]);
        }
        let null_obj = b.take("null_obj".into(), &[OBJ_DIM]);
        let embed_w = b.take("embed.w".into(), &[D_MODEL, TOKEN_DIM]);
        let embed_b = b.take("embed.b".into(), &[D_MODEL]);
        let layers = std::array::from_fn(|l| {
            let mut t = |n: &str, s: &[usize]| b.take(format!("layer{l}.{n}"), s);
            LayerOffsets {
                ln1_g: t("ln1.g", &[D_MODEL]),
                ln1_b: t("ln1.b", &[D_MODEL]),
                wq: t("attn.wq", &[D_MODEL, D_MODEL]),
                bq: t("attn.bq", &[D_MODEL]),
                wk: t("attn.wk", &[D_MODEL, D_MODEL]),
                bk: t("attn.bk", &[D_MODEL]),
                wv: t("attn.wv", &[D_MODEL, D_MODEL]),
                bv: t("attn.bv", &[D_MODEL]),
                wo: t("attn.wo", &[D_MODEL, D_MODEL]),
                bo: t("attn.bo", &[D_MODEL]),
                ln2_g: t("ln2.g", &[D_MODEL]),
                ln2_b: t("ln2.b", &[D_MODEL]),
                w1: t("ff.w1", &[D_FF, D_MODEL]),
                b1: t("ff.b1", &[D_FF]),
                w2: t("ff.w2", &[D_MODEL, D_FF]),
                b2: t("ff.b2", &[D_MODEL]),
            }
        });
        let lnf_g = b.take("lnf.g".into(), &[D_MODEL]);
        let lnf_b = b.take("lnf.b".into(), &[D_MODEL]);
        let head_w = b.take("head.w".into(), &[D_MODEL]);
        let head_b = b.take("head.b".into(), &[1]);
        Self {
            conv_w,
            conv_b,
            null_obj,
            embed_w,
            embed_b,
            layers,
            lnf_g,
            lnf_b,
            head_w,
            head_b,
            total: b.next,
            tensors: b.tensors,
        }
    }

    /// Random initialization: He-normal for conv and feed-forward input
    /// weights, 1/sqrt(fan_in) normal for the rest, unit LayerNorm gains, a
    /// small positive conv bias and a small head.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; self.total];
        let mut fill = |p: &mut [f64], off: usize, n: usize, std: f64| {
            let dist = Normal::new(0.0, std).expect("positive std");
            for v in &mut p[off..off + n] {
                *v = dist.sample(&mut rng);
            }
        };
        for l in 0..4 {
            let (ci, co) = (CONV_CHANNELS[l], CONV_CHANNELS[l + 1]);
            fill(&mut p, self.conv_w[l], co * ci * 9, (2.0 / (ci * 9) as f64).sqrt());
            p[self.conv_b[l]..self.conv_b[l] + co].fill(0.01);
        }
        fill(&mut p, self.null_obj, OBJ_DIM, 0.5);
        fill(&mut p, self.embed_w, D_MODEL * TOKEN_DIM, (1.0 / TOKEN_DIM as f64).sqrt());
        let dm = (1.0 / D_MODEL as f64).sqrt();
        for lo in &self.layers {
            p[lo.ln1_g..lo.ln1_g + D_MODEL].fill(1.0);
            p[lo.ln2_g..lo.ln2_g + D_MODEL].fill(1.0);
            for off in [lo.wq, lo.wk, lo.wv, lo.wo] {
                fill(&mut p, off, D_MODEL * D_MODEL, dm);
            }
            fill(&mut p, lo.w1, D_FF * D_MODEL, (2.0 / D_MODEL as f64).sqrt());
            fill(&mut p, lo.w2, D_MODEL * D_FF, (1.0 / D_FF as f64).sqrt());
        }
        p[self.lnf_g..self.lnf_g + D_MODEL].fill(1.0);
        fill(&mut p, self.head_w, D_MODEL, 0.01);
        p
    }
}

impl Default for Layout {
    fn default() -> Self {
        Self::new()
    }
}
