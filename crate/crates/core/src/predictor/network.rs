//! Mixture-head classifier over patch tokens.
//!
//! Per user `k` and attribute `i`, the normalized patches are projected to
//! tokens `P·EM^(i) + m^(i)`. All tokens and the standardized RevIN
//! statistics of every user are concatenated into `z`, passed through one
//! `tanh` layer, and read out by one head per user:
//!
//! ```text
//! logits_k = a0·base_k(h) + c·Σ_e a_{k,e}·gate_{k,e}(h)·expert_{k,e}(h)
//! ```
//!
//! with `c = rank / η_MoE`, `gate_k = softmax(G_k h + g_k)` and linear base
//! and expert maps. Every trainable value lives in one flat vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tokens::{TokenDims, ATTRIBUTES};

/// Statistics appended to each user's patch values (means then stds).
pub const STATS_PER_USER: usize = 2 * ATTRIBUTES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub users: usize,
    pub classes: usize,
    pub dims: TokenDims,
    pub hidden: usize,
    pub experts: usize,
    /// Fixed weight of the base head.
    pub a0: f64,
    /// `rank / η_MoE`.
    pub mixture_scale: f64,
}

impl NetworkShape {
    /// Raw per-user feature length.
    pub fn user_input_len(&self) -> usize {
        self.dims.feature_len()
    }

    fn user_token_len(&self) -> usize {
        ATTRIBUTES * self.dims.num_patches() * self.dims.s_patch
    }

    /// Length of the concatenated backbone input `z`.
    pub fn backbone_len(&self) -> usize {
        self.users * (self.user_token_len() + STATS_PER_USER)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct HeadBlocks {
    wb: usize,
    bb: usize,
    we: Vec<usize>,
    be: Vec<usize>,
    wg: usize,
    bg: usize,
    a: usize,
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
struct Blocks {
    em: [usize; ATTRIBUTES],
    m: [usize; ATTRIBUTES],
    w1: usize,
    b1: usize,
    heads: Vec<HeadBlocks>,
    total: usize,
}

impl Blocks {
    fn new(s: &NetworkShape) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let em = std::array::from_fn(|_| take(s.dims.l_patch * s.dims.s_patch));
        let m = std::array::from_fn(|_| take(s.dims.s_patch));
        let w1 = take(s.hidden * s.backbone_len());
        let b1 = take(s.hidden);
        let heads = (0..s.users)
            .map(|_| {
                let wb = take(s.classes * s.hidden);
                let bb = take(s.classes);
                let (we, be) = (0..s.experts).map(|_| (take(s.classes * s.hidden), take(s.classes))).unzip();
                HeadBlocks {
                    wb,
                    bb,
                    we,
                    be,
                    wg: take(s.experts * s.hidden),
                    bg: take(s.experts),
                    a: take(s.experts),
                }
            })
            .collect();
        Self {
            em,
            m,
            w1,
            b1,
            heads,
            total: at,
        }
    }
}

/// One named tensor of the parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

/// Trainable weights plus the fixed input standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub shape: NetworkShape,
    pub params: Vec<f64>,
    /// Shift and scale applied to the RevIN statistics before the backbone.
    pub stat_shift: Vec<f64>,
    pub stat_scale: Vec<f64>,
    blocks: Blocks,
}

struct HeadCache {
    gate: Vec<f64>,
    experts: Vec<Vec<f64>>,
    probs: Vec<f64>,
    log_norm: f64,
    logits: Vec<f64>,
}

struct Cache {
    patches: Vec<Vec<f64>>,
    z: Vec<f64>,
    h: Vec<f64>,
    heads: Vec<HeadCache>,
}

/// `out = W x + b` with `W` row-major `rows x cols`.
fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    b.iter()
        .enumerate()
        .map(|(r, &bias)| bias + w[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
        .collect()
}

/// `gw += d xᵀ`, `gb += d`, `dx += Wᵀ d`.
fn affine_backward(w: &[f64], x: &[f64], d: &[f64], gw: &mut [f64], gb: &mut [f64], dx: Option<&mut [f64]>) {
    let cols = x.len();
    for (r, &dr) in d.iter().enumerate() {
        if dr == 0.0 {
            continue;
        }
        gb[r] += dr;
        for (g, v) in gw[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *g += dr * v;
        }
    }
    if let Some(dx) = dx {
        for (r, &dr) in d.iter().enumerate() {
            if dr == 0.0 {
                continue;
            }
            for (o, a) in dx.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *o += dr * a;
            }
        }
    }
}

/// Softmax and log of its normalizer.
pub fn softmax(logits: &[f64]) -> (Vec<f64>, f64) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (exps.iter().map(|e| e / sum).collect(), max + sum.ln())
}

impl Network {
    /// All-zero parameters (uniform output, zero gradients into the gates).
    pub fn zeros(shape: NetworkShape) -> Self {
        let blocks = Blocks::new(&shape);
        Self {
            params: vec![0.0; blocks.total],
            stat_shift: vec![0.0; STATS_PER_USER],
            stat_scale: vec![1.0; STATS_PER_USER],
            shape,
            blocks,
        }
    }

    /// Glorot-uniform weights, zero biases, unit expert weights.
    pub fn init<R: Rng>(shape: NetworkShape, rng: &mut R) -> Self {
        let mut net = Self::zeros(shape);
        let tensors = net.tensors();
        for t in tensors {
            let is_bias = t.name.starts_with('m') || t.name == "b1" || t.name.contains(".b");
            let slice = &mut net.params[t.offset..t.offset + t.rows * t.cols];
            if t.name.ends_with(".a") {
                slice.fill(1.0);
            } else if !is_bias {
                let limit = (6.0 / (t.rows + t.cols) as f64).sqrt();
                for v in slice.iter_mut() {
                    *v = rng.random_range(-limit..limit);
                }
            }
        }
        net
    }

    /// Rebuilds a network from a stored parameter vector.
    pub fn from_parts(shape: NetworkShape, params: Vec<f64>, stat_shift: Vec<f64>, stat_scale: Vec<f64>) -> Option<Self> {
        let blocks = Blocks::new(&shape);
        if params.len() != blocks.total || stat_shift.len() != STATS_PER_USER || stat_scale.len() != STATS_PER_USER {
            return None;
        }
        Some(Self {
            shape,
            params,
            stat_shift,
            stat_scale,
            blocks,
        })
    }

    pub fn num_params(&self) -> usize {
        self.blocks.total
    }

    /// Names, shapes and offsets of every tensor, in storage order.
    pub fn tensors(&self) -> Vec<TensorInfo> {
        let s = &self.shape;
        let b = &self.blocks;
        let mut out = Vec::new();
        let mut push = |name: String, rows, cols, offset| out.push(TensorInfo { name, rows, cols, offset });
        for i in 0..ATTRIBUTES {
            push(format!("em{i}"), s.dims.l_patch, s.dims.s_patch, b.em[i]);
        }
        for i in 0..ATTRIBUTES {
            push(format!("m{i}"), 1, s.dims.s_patch, b.m[i]);
        }
        push("w1".into(), s.hidden, s.backbone_len(), b.w1);
        push("b1".into(), 1, s.hidden, b.b1);
        for (k, h) in b.heads.iter().enumerate() {
            push(format!("head{k}.wb"), s.classes, s.hidden, h.wb);
            push(format!("head{k}.bb"), 1, s.classes, h.bb);
            for e in 0..s.experts {
                push(format!("head{k}.we{e}"), s.classes, s.hidden, h.we[e]);
                push(format!("head{k}.be{e}"), 1, s.classes, h.be[e]);
            }
            if s.experts > 0 {
                push(format!("head{k}.wg"), s.experts, s.hidden, h.wg);
                push(format!("head{k}.bg"), 1, s.experts, h.bg);
                push(format!("head{k}.a"), 1, s.experts, h.a);
            }
        }
        out
    }

    fn p(&self, offset: usize, len: usize) -> &[f64] {
        &self.params[offset..offset + len]
    }

    fn forward(&self, users: &[Vec<f64>]) -> Cache {
        let s = &self.shape;
        let n_p = s.dims.num_patches();
        let lp = s.dims.l_patch;
        let sp = s.dims.s_patch;
        let patch_len = n_p * lp;
        let mut z = Vec::with_capacity(s.backbone_len());
        let mut patches = Vec::with_capacity(s.users);
        for x in users {
            for i in 0..ATTRIBUTES {
                let em = self.p(self.blocks.em[i], lp * sp);
                let m = self.p(self.blocks.m[i], sp);
                let rows = &x[i * patch_len..(i + 1) * patch_len];
                for p in 0..n_p {
                    let patch = &rows[p * lp..(p + 1) * lp];
                    for c in 0..sp {
                        z.push(m[c] + (0..lp).map(|j| patch[j] * em[j * sp + c]).sum::<f64>());
                    }
                }
            }
            let stats = &x[ATTRIBUTES * patch_len..];
            for (j, v) in stats.iter().enumerate() {
                z.push((v - self.stat_shift[j]) / self.stat_scale[j]);
            }
            patches.push(x[..ATTRIBUTES * patch_len].to_vec());
        }
        let pre = affine(self.p(self.blocks.w1, s.hidden * z.len()), self.p(self.blocks.b1, s.hidden), &z);
        let h: Vec<f64> = pre.iter().map(|v| v.tanh()).collect();
        let heads = self
            .blocks
            .heads
            .iter()
            .map(|hb| {
                let f = s.classes;
                let base = affine(self.p(hb.wb, f * s.hidden), self.p(hb.bb, f), &h);
                let mut logits: Vec<f64> = base.iter().map(|v| s.a0 * v).collect();
                let (gate, experts) = if s.experts > 0 {
                    let (gate, _) = softmax(&affine(self.p(hb.wg, s.experts * s.hidden), self.p(hb.bg, s.experts), &h));
                    let a = self.p(hb.a, s.experts);
                    let experts: Vec<Vec<f64>> = (0..s.experts)
                        .map(|e| affine(self.p(hb.we[e], f * s.hidden), self.p(hb.be[e], f), &h))
                        .collect();
                    for e in 0..s.experts {
                        let w = s.mixture_scale * a[e] * gate[e];
                        for (l, v) in logits.iter_mut().zip(&experts[e]) {
                            *l += w * v;
                        }
                    }
                    (gate, experts)
                } else {
                    (Vec::new(), Vec::new())
                };
                let (probs, log_norm) = softmax(&logits);
                HeadCache {
                    gate,
                    experts,
                    probs,
                    log_norm,
                    logits,
                }
            })
            .collect();
        Cache { patches, z, h, heads }
    }

    /// Logits of every head.
    pub fn logits(&self, users: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.forward(users).heads.into_iter().map(|h| h.logits).collect()
    }

    /// Class probabilities of every head.
    pub fn probabilities(&self, users: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.forward(users).heads.into_iter().map(|h| h.probs).collect()
    }

    /// Per-user cross-entropy without gradients.
    pub fn losses(&self, users: &[Vec<f64>], labels: &[usize]) -> Vec<f64> {
        self.forward(users)
            .heads
            .iter()
            .zip(labels)
            .map(|(h, &y)| h.log_norm - h.logits[y])
            .collect()
    }

    /// Per-user cross-entropy; adds `scale·∂(Σ θ_k CE_k)/∂params` to `grad`.
    pub fn loss_and_grad(&self, users: &[Vec<f64>], labels: &[usize], theta: &[f64], scale: f64, grad: &mut [f64]) -> Vec<f64> {
        let s = &self.shape;
        let cache = self.forward(users);
        let f = s.classes;
        let mut dh = vec![0.0; s.hidden];
        let mut losses = Vec::with_capacity(s.users);
        for (k, (hb, hc)) in self.blocks.heads.iter().zip(&cache.heads).enumerate() {
            let y = labels[k];
            losses.push(hc.log_norm - hc.logits[y]);
            let mut dlogits: Vec<f64> = hc.probs.iter().map(|p| scale * theta[k] * p).collect();
            dlogits[y] -= scale * theta[k];

            let dbase: Vec<f64> = dlogits.iter().map(|d| s.a0 * d).collect();
            {
                let (head, tail) = grad.split_at_mut(hb.bb);
                affine_backward(self.p(hb.wb, f * s.hidden), &cache.h, &dbase, &mut head[hb.wb..], &mut tail[..f], Some(&mut dh));
            }
            if s.experts > 0 {
                let a = self.p(hb.a, s.experts);
                let mut dgate = vec![0.0; s.experts];
                for e in 0..s.experts {
                    let proj: f64 = dlogits.iter().zip(&hc.experts[e]).map(|(d, v)| d * v).sum();
                    grad[hb.a + e] += s.mixture_scale * hc.gate[e] * proj;
                    dgate[e] = s.mixture_scale * a[e] * proj;
                    let w = s.mixture_scale * a[e] * hc.gate[e];
                    let dexp: Vec<f64> = dlogits.iter().map(|d| w * d).collect();
                    let (head, tail) = grad.split_at_mut(hb.be[e]);
                    affine_backward(self.p(hb.we[e], f * s.hidden), &cache.h, &dexp, &mut head[hb.we[e]..], &mut tail[..f], Some(&mut dh));
                }
                let dot: f64 = hc.gate.iter().zip(&dgate).map(|(g, d)| g * d).sum();
                let dpre: Vec<f64> = hc.gate.iter().zip(&dgate).map(|(g, d)| g * (d - dot)).collect();
                let (head, tail) = grad.split_at_mut(hb.bg);
                affine_backward(self.p(hb.wg, s.experts * s.hidden), &cache.h, &dpre, &mut head[hb.wg..], &mut tail[..s.experts], Some(&mut dh));
            }
        }

        let dpre: Vec<f64> = dh.iter().zip(&cache.h).map(|(d, h)| d * (1.0 - h * h)).collect();
        let mut dz = vec![0.0; cache.z.len()];
        {
            let (head, tail) = grad.split_at_mut(self.blocks.b1);
            affine_backward(self.p(self.blocks.w1, s.hidden * cache.z.len()), &cache.z, &dpre, &mut head[self.blocks.w1..], &mut tail[..s.hidden], Some(&mut dz));
        }

        let n_p = s.dims.num_patches();
        let lp = s.dims.l_patch;
        let sp = s.dims.s_patch;
        let user_z = ATTRIBUTES * n_p * sp + STATS_PER_USER;
        for (u, patches) in cache.patches.iter().enumerate() {
            for i in 0..ATTRIBUTES {
                for p in 0..n_p {
                    let patch = &patches[(i * n_p + p) * lp..(i * n_p + p + 1) * lp];
                    let dtok = &dz[u * user_z + (i * n_p + p) * sp..u * user_z + (i * n_p + p + 1) * sp];
                    for c in 0..sp {
                        let d = dtok[c];
                        grad[self.blocks.m[i] + c] += d;
                        for j in 0..lp {
                            grad[self.blocks.em[i] + j * sp + c] += d * patch[j];
                        }
                    }
                }
            }
        }
        losses
    }
}

/// Maximum relative error between the analytic gradient of `Σ θ_k CE_k`
/// and central differences with step `1e-5`.
pub fn finite_difference_check(net: &Network, users: &[Vec<f64>], labels: &[usize], theta: &[f64]) -> f64 {
    const STEP: f64 = 1e-5;
    let mut grad = vec![0.0; net.num_params()];
    net.loss_and_grad(users, labels, theta, 1.0, &mut grad);
    let objective = |n: &Network| -> f64 { n.losses(users, labels).iter().zip(theta).map(|(l, t)| l * t).sum() };
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in 0..net.num_params() {
        let orig = probe.params[i];
        probe.params[i] = orig + STEP;
        let up = objective(&probe);
        probe.params[i] = orig - STEP;
        let down = objective(&probe);
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let err = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}
