//! Child-Sum Tree-LSTM encoder and the two feed-forward heads, with
//! hand-written reverse mode.
//!
//! All parameters live in one flat vector. Weight matrices are stored
//! input-major (`w[k * out + m]` maps input `k` to output `m`) so both the
//! forward pass and the weight gradient are row-wise `axpy`s.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scenario::GenConfig;
use crate::schedule::{EmbeddingLayout, Node, ScheduleDag, SparseEmbedding, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub layout: EmbeddingLayout,
    pub hidden: usize,
}

impl NetConfig {
    pub fn d_in(&self) -> usize {
        self.layout.len()
    }

    /// Shape matching instances drawn from `gen`: the distributed layout
    /// when more than one site is configured, with `E_max` the longest
    /// exposure.
    pub fn for_generator(gen: &GenConfig, hidden: usize) -> Self {
        let e_max = gen.long_exposure[1].max(gen.short_exposure[1]);
        let layout = if gen.sites.len() > 1 {
            EmbeddingLayout::distributed(gen.sites.len(), gen.num_filters, e_max)
        } else {
            EmbeddingLayout::intra_site(gen.num_filters, e_max)
        };
        Self { layout, hidden }
    }

    /// Whether instances with this many sites and filters fit the layout.
    pub fn accepts(&self, num_sites: usize, num_filters: usize) -> bool {
        self.layout.num_filters == num_filters && self.layout.sites.unwrap_or(1) == num_sites
    }
}

/// Named slices of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Offsets {
    pub wx: usize,
    pub wh: usize,
    pub b: usize,
    pub r1w: usize,
    pub r1b: usize,
    pub r2w: usize,
    pub r2b: usize,
    pub r3w: usize,
    pub r3b: usize,
    pub u1w: usize,
    pub u1b: usize,
    pub u2w: usize,
    pub u2b: usize,
    pub u3w: usize,
    pub u3b: usize,
    pub total: usize,
}

impl Offsets {
    pub fn new(cfg: &NetConfig) -> Self {
        let (d, h) = (cfg.d_in(), cfg.hidden);
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let wx = take(d * 4 * h);
        let wh = take(h * 4 * h);
        let b = take(4 * h);
        let r1w = take(h * h);
        let r1b = take(h);
        let r2w = take(h * h);
        let r2b = take(h);
        let r3w = take(h);
        let r3b = take(1);
        let u1w = take(2 * h * h);
        let u1b = take(h);
        let u2w = take(h * h);
        let u2b = take(h);
        let u3w = take(h);
        let u3b = take(1);
        Self {
            wx,
            wh,
            b,
            r1w,
            r1b,
            r2w,
            r2b,
            r3w,
            r3b,
            u1w,
            u1b,
            u2w,
            u2b,
            u3w,
            u3b,
            total: at,
        }
    }

    /// `(name, offset, shape)` of every tensor in storage order.
    pub fn tensors(&self, cfg: &NetConfig) -> Vec<(&'static str, usize, Vec<usize>)> {
        let (d, h) = (cfg.d_in(), cfg.hidden);
        vec![
            ("lstm.wx", self.wx, vec![d, 4 * h]),
            ("lstm.wh", self.wh, vec![h, 4 * h]),
            ("lstm.b", self.b, vec![4 * h]),
            ("region.l1.w", self.r1w, vec![h, h]),
            ("region.l1.b", self.r1b, vec![h]),
            ("region.l2.w", self.r2w, vec![h, h]),
            ("region.l2.b", self.r2b, vec![h]),
            ("region.out.w", self.r3w, vec![h, 1]),
            ("region.out.b", self.r3b, vec![1]),
            ("rule.l1.w", self.u1w, vec![2 * h, h]),
            ("rule.l1.b", self.u1b, vec![h]),
            ("rule.l2.w", self.u2w, vec![h, h]),
            ("rule.l2.b", self.u2b, vec![h]),
            ("rule.out.w", self.u3w, vec![h, 1]),
            ("rule.out.b", self.u3b, vec![1]),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub config: NetConfig,
    pub offsets: Offsets,
    pub params: Vec<f64>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `tanh` through one `exp`; agrees with `f64::tanh` to round-off and is
/// several times cheaper.
#[inline]
fn tanh(x: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * x).exp() + 1.0)
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// `y = b + xᵀW` for input-major `w` of shape `[x.len(), y.len()]`.
pub(crate) fn dense(w: &[f64], b: &[f64], x: &[f64], y: &mut [f64]) {
    let m = y.len();
    y.copy_from_slice(b);
    for (k, &xk) in x.iter().enumerate() {
        if xk != 0.0 {
            axpy(xk, &w[k * m..(k + 1) * m], y);
        }
    }
}

/// Accumulates the gradient of `dense` into `gw`/`gb` and, if asked, into
/// `dx`.
pub(crate) fn dense_backward(w: &[f64], x: &[f64], dy: &[f64], gw: &mut [f64], gb: &mut [f64], dx: Option<&mut [f64]>) {
    let m = dy.len();
    axpy(1.0, dy, gb);
    for (k, &xk) in x.iter().enumerate() {
        if xk != 0.0 {
            axpy(xk, dy, &mut gw[k * m..(k + 1) * m]);
        }
    }
    if let Some(dx) = dx {
        for (k, d) in dx.iter_mut().enumerate() {
            *d += dot(&w[k * m..(k + 1) * m], dy);
        }
    }
}

/// Forward state of every node of one schedule.
///
/// Slot 0 is the root: all site roots compute the same state (zero input,
/// no parents), so they share it. Task `t` lives at slot `index[t]`.
#[derive(Debug, Clone)]
pub struct Encoding {
    hidden: usize,
    index: Vec<u32>,
    order: Vec<TaskId>,
    parents: Vec<Vec<u32>>,
    /// input-cache row of each slot, `ABSENT` for the root
    xid: Vec<u32>,
    /// activations `i, f, o, u` per slot, `4H` each
    gates: Vec<f64>,
    h: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    hsum: Vec<f64>,
    csum: Vec<f64>,
}

pub const ABSENT: u32 = u32::MAX;

/// Input projections `Wx·e` of distinct embeddings, and the gradient
/// flowing into each, for one fixed parameter vector.
///
/// Between rewriting steps most tasks keep their embedding, so an episode
/// computes each projection once and applies each weight gradient once.
#[derive(Debug, Clone, Default)]
pub struct InputCache {
    index: HashMap<Vec<(u32, u64)>, u32>,
    rows: Vec<SparseEmbedding>,
    proj: Vec<f64>,
    dproj: Vec<f64>,
}

impl InputCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn lookup(&mut self, net: &PolicyNet, emb: SparseEmbedding) -> u32 {
        let key: Vec<(u32, u64)> = emb.iter().map(|&(i, v)| (i, v.to_bits())).collect();
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let g4 = 4 * net.config.hidden;
        let wx = net.offsets.wx;
        let id = self.rows.len() as u32;
        let start = self.proj.len();
        self.proj.resize(start + g4, 0.0);
        self.dproj.resize(start + g4, 0.0);
        for &(i, v) in &emb {
            let i = i as usize;
            axpy(v, &net.params[wx + i * g4..wx + (i + 1) * g4], &mut self.proj[start..]);
        }
        self.rows.push(emb);
        self.index.insert(key, id);
        id
    }

    /// Moves the accumulated projection gradients into `grad` and clears
    /// them.
    pub fn flush(&mut self, net: &PolicyNet, grad: &mut [f64]) {
        let g4 = 4 * net.config.hidden;
        let wx = net.offsets.wx;
        for (id, emb) in self.rows.iter().enumerate() {
            let d = &mut self.dproj[id * g4..(id + 1) * g4];
            if d.iter().all(|&x| x == 0.0) {
                continue;
            }
            for &(i, v) in emb {
                let i = i as usize;
                axpy(v, d, &mut grad[wx + i * g4..wx + (i + 1) * g4]);
            }
            d.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

impl Encoding {
    pub fn slot(&self, node: Node) -> usize {
        match node {
            Node::Root(_) => 0,
            Node::Task(t) => {
                let s = self.index[t as usize];
                assert!(s != ABSENT, "task {t} is not in the encoded schedule");
                s as usize
            }
        }
    }

    pub fn num_slots(&self) -> usize {
        self.parents.len()
    }

    pub fn h(&self, slot: usize) -> &[f64] {
        &self.h[slot * self.hidden..(slot + 1) * self.hidden]
    }

    pub fn c(&self, slot: usize) -> &[f64] {
        &self.c[slot * self.hidden..(slot + 1) * self.hidden]
    }

    pub fn order(&self) -> &[TaskId] {
        &self.order
    }
}

/// Activations of one head evaluation, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct HeadCache {
    pub x: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub out: f64,
}

impl PolicyNet {
    /// Parameters drawn uniformly from `[-0.1, 0.1]`.
    pub fn new<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Self {
        let offsets = Offsets::new(&config);
        let params = (0..offsets.total).map(|_| rng.gen_range(-0.1..=0.1)).collect();
        Self {
            config,
            offsets,
            params,
        }
    }

    pub fn from_params(config: NetConfig, params: Vec<f64>) -> Self {
        let offsets = Offsets::new(&config);
        assert_eq!(params.len(), offsets.total);
        Self {
            config,
            offsets,
            params,
        }
    }

    pub fn num_params(&self) -> usize {
        self.offsets.total
    }

    fn p(&self, at: usize, len: usize) -> &[f64] {
        &self.params[at..at + len]
    }

    /// Runs the encoder over every placed task of `dag` in topological
    /// order. Each node's incoming state is the sum of its parents' `(h, c)`.
    /// `cache` must only ever have seen the current parameters.
    pub fn encode(&self, dag: &ScheduleDag, cache: &mut InputCache) -> Encoding {
        self.encode_with(dag, cache, |_| {})
    }

    /// `encode`, letting the caller reorder each node's parent list first.
    pub(crate) fn encode_with(
        &self,
        dag: &ScheduleDag,
        cache: &mut InputCache,
        mut reorder: impl FnMut(&mut Vec<u32>),
    ) -> Encoding {
        let hd = self.config.hidden;
        let g4 = 4 * hd;
        let order = dag.topological_order();
        let n = order.len() + 1;
        let mut index = vec![ABSENT; dag.instance().num_tasks()];
        for (k, &t) in order.iter().enumerate() {
            index[t as usize] = (k + 1) as u32;
        }
        let mut enc = Encoding {
            hidden: hd,
            index,
            parents: Vec::with_capacity(n),
            xid: Vec::with_capacity(n),
            gates: vec![0.0; n * g4],
            h: vec![0.0; n * hd],
            c: vec![0.0; n * hd],
            tanh_c: vec![0.0; n * hd],
            hsum: vec![0.0; n * hd],
            csum: vec![0.0; n * hd],
            order,
        };
        enc.parents.push(Vec::new());
        enc.xid.push(ABSENT);
        for &t in &enc.order {
            let mut ps: Vec<u32> = dag
                .parents(t)
                .iter()
                .map(|&p| match p {
                    Node::Root(_) => 0,
                    Node::Task(q) => enc.index[q as usize],
                })
                .collect();
            reorder(&mut ps);
            enc.parents.push(ps);
            enc.xid.push(cache.lookup(self, self.config.layout.embed_sparse(dag, t)));
        }

        let o = &self.offsets;
        let wh = self.p(o.wh, hd * g4);
        let b = self.p(o.b, g4);
        let mut z = vec![0.0; g4];
        for slot in 0..n {
            // parent sums
            for pi in 0..enc.parents[slot].len() {
                let p = enc.parents[slot][pi] as usize;
                debug_assert!(p < slot);
                let (src_h, src_c) = (p * hd, p * hd);
                for k in 0..hd {
                    enc.hsum[slot * hd + k] += enc.h[src_h + k];
                    enc.csum[slot * hd + k] += enc.c[src_c + k];
                }
            }
            z.copy_from_slice(b);
            if enc.xid[slot] != ABSENT {
                let x = enc.xid[slot] as usize;
                axpy(1.0, &cache.proj[x * g4..(x + 1) * g4], &mut z);
            }
            for k in 0..hd {
                let hk = enc.hsum[slot * hd + k];
                if hk != 0.0 {
                    axpy(hk, &wh[k * g4..(k + 1) * g4], &mut z);
                }
            }
            let gates = &mut enc.gates[slot * g4..(slot + 1) * g4];
            for m in 0..3 * hd {
                gates[m] = sigmoid(z[m]);
            }
            for m in 3 * hd..g4 {
                gates[m] = tanh(z[m]);
            }
            for k in 0..hd {
                let (i, f, og, u) = (gates[k], gates[hd + k], gates[2 * hd + k], gates[3 * hd + k]);
                let c = i * u + f * enc.csum[slot * hd + k];
                let tc = tanh(c);
                enc.c[slot * hd + k] = c;
                enc.tanh_c[slot * hd + k] = tc;
                enc.h[slot * hd + k] = og * tc;
            }
        }
        enc
    }

    /// Backpropagates `dh` (gradient w.r.t. every slot's `h`, `H` per slot)
    /// through the encoder, accumulating into `grad`. The input-weight part
    /// is parked in `cache` until [`InputCache::flush`].
    pub fn encode_backward(&self, enc: &Encoding, mut dh: Vec<f64>, grad: &mut [f64], cache: &mut InputCache) {
        let hd = self.config.hidden;
        let g4 = 4 * hd;
        let n = enc.num_slots();
        let o = self.offsets;
        let mut dc = vec![0.0; n * hd];
        let mut dz = vec![0.0; g4];
        let mut dhsum = vec![0.0; hd];
        let wh = &self.params[o.wh..o.wh + hd * g4];
        for slot in (0..n).rev() {
            let dhs = &dh[slot * hd..(slot + 1) * hd];
            if dhs.iter().all(|&x| x == 0.0) && dc[slot * hd..(slot + 1) * hd].iter().all(|&x| x == 0.0) {
                continue;
            }
            let gates = &enc.gates[slot * g4..(slot + 1) * g4];
            let mut dcsum_nonzero = false;
            for k in 0..hd {
                let (i, f, og, u) = (gates[k], gates[hd + k], gates[2 * hd + k], gates[3 * hd + k]);
                let tc = enc.tanh_c[slot * hd + k];
                let dhk = dhs[k];
                let dck = dc[slot * hd + k] + dhk * og * (1.0 - tc * tc);
                let d_o = dhk * tc;
                let di = dck * u;
                let du = dck * i;
                let df = dck * enc.csum[slot * hd + k];
                dz[k] = di * i * (1.0 - i);
                dz[hd + k] = df * f * (1.0 - f);
                dz[2 * hd + k] = d_o * og * (1.0 - og);
                dz[3 * hd + k] = du * (1.0 - u * u);
                // gradient flowing to the parents' summed cell
                dc[slot * hd + k] = dck * f;
                dcsum_nonzero |= dck * f != 0.0;
            }
            axpy(1.0, &dz, &mut grad[o.b..o.b + g4]);
            if enc.xid[slot] != ABSENT {
                let x = enc.xid[slot] as usize;
                axpy(1.0, &dz, &mut cache.dproj[x * g4..(x + 1) * g4]);
            }
            if enc.parents[slot].is_empty() {
                continue;
            }
            for k in 0..hd {
                let hk = enc.hsum[slot * hd + k];
                if hk != 0.0 {
                    axpy(hk, &dz, &mut grad[o.wh + k * g4..o.wh + (k + 1) * g4]);
                }
                dhsum[k] = dot(&wh[k * g4..(k + 1) * g4], &dz);
            }
            for &p in &enc.parents[slot] {
                let p = p as usize;
                axpy(1.0, &dhsum, &mut dh[p * hd..(p + 1) * hd]);
                if dcsum_nonzero {
                    for k in 0..hd {
                        dc[p * hd + k] += dc[slot * hd + k];
                    }
                }
            }
        }
    }

    fn head_forward(&self, w1: usize, b1: usize, w2: usize, b2: usize, w3: usize, b3: usize, x: Vec<f64>) -> HeadCache {
        let hd = self.config.hidden;
        let mut a1 = vec![0.0; hd];
        dense(self.p(w1, x.len() * hd), self.p(b1, hd), &x, &mut a1);
        a1.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut a2 = vec![0.0; hd];
        dense(self.p(w2, hd * hd), self.p(b2, hd), &a1, &mut a2);
        a2.iter_mut().for_each(|v| *v = v.max(0.0));
        let out = self.params[b3] + dot(self.p(w3, hd), &a2);
        HeadCache { x, a1, a2, out }
    }

    fn head_backward(
        &self,
        (w1, b1, w2, b2, w3, b3): (usize, usize, usize, usize, usize, usize),
        cache: &HeadCache,
        dout: f64,
        grad: &mut [f64],
    ) -> Vec<f64> {
        let hd = self.config.hidden;
        grad[b3] += dout;
        axpy(dout, &cache.a2, &mut grad[w3..w3 + hd]);
        let mut da2: Vec<f64> = self.p(w3, hd).iter().map(|w| w * dout).collect();
        for (d, a) in da2.iter_mut().zip(&cache.a2) {
            if *a <= 0.0 {
                *d = 0.0;
            }
        }
        let mut da1 = vec![0.0; hd];
        {
            let (gw, rest) = grad.split_at_mut(b2);
            dense_backward(self.p(w2, hd * hd), &cache.a1, &da2, &mut gw[w2..w2 + hd * hd], &mut rest[..hd], Some(&mut da1));
        }
        for (d, a) in da1.iter_mut().zip(&cache.a1) {
            if *a <= 0.0 {
                *d = 0.0;
            }
        }
        let nx = cache.x.len();
        let mut dx = vec![0.0; nx];
        {
            let (gw, rest) = grad.split_at_mut(b1);
            dense_backward(self.p(w1, nx * hd), &cache.x, &da1, &mut gw[w1..w1 + nx * hd], &mut rest[..hd], Some(&mut dx));
        }
        dx
    }

    fn region_ids(&self) -> (usize, usize, usize, usize, usize, usize) {
        let o = &self.offsets;
        (o.r1w, o.r1b, o.r2w, o.r2b, o.r3w, o.r3b)
    }

    /// `Q(s, ω)` for the task at `slot`.
    pub fn region_score(&self, enc: &Encoding, slot: usize) -> HeadCache {
        let (w1, b1, w2, b2, w3, b3) = self.region_ids();
        self.head_forward(w1, b1, w2, b2, w3, b3, enc.h(slot).to_vec())
    }

    /// Rule logit for moving the region at `region` under `cand`.
    pub fn rule_logit(&self, enc: &Encoding, region: usize, cand: usize) -> HeadCache {
        self.rule_logit_from(enc, &self.rule_prefix(enc, region), region, cand)
    }

    /// Region half of the rule head's first layer, `b₁ + W₁[..H]ᵀ h_ω`,
    /// shared by every candidate of a step.
    pub fn rule_prefix(&self, enc: &Encoding, region: usize) -> Vec<f64> {
        let hd = self.config.hidden;
        let o = &self.offsets;
        let mut pre = vec![0.0; hd];
        dense(self.p(o.u1w, hd * hd), self.p(o.u1b, hd), enc.h(region), &mut pre);
        pre
    }

    pub fn rule_logit_from(&self, enc: &Encoding, prefix: &[f64], region: usize, cand: usize) -> HeadCache {
        let hd = self.config.hidden;
        let o = &self.offsets;
        let hu = enc.h(cand);
        let mut a1 = prefix.to_vec();
        for (k, &x) in hu.iter().enumerate() {
            if x != 0.0 {
                axpy(x, self.p(o.u1w + (hd + k) * hd, hd), &mut a1);
            }
        }
        a1.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut a2 = vec![0.0; hd];
        dense(self.p(o.u2w, hd * hd), self.p(o.u2b, hd), &a1, &mut a2);
        a2.iter_mut().for_each(|v| *v = v.max(0.0));
        let out = self.params[o.u3b] + dot(self.p(o.u3w, hd), &a2);
        let mut x = Vec::with_capacity(2 * hd);
        x.extend_from_slice(enc.h(region));
        x.extend_from_slice(hu);
        HeadCache { x, a1, a2, out }
    }

    /// Adds `dq · ∂Q/∂θ` to `grad` and `dq · ∂Q/∂h` to `dh[slot]`.
    pub fn region_backward(&self, cache: &HeadCache, slot: usize, dq: f64, grad: &mut [f64], dh: &mut [f64]) {
        if dq == 0.0 {
            return;
        }
        let hd = self.config.hidden;
        let dx = self.head_backward(self.region_ids(), cache, dq, grad);
        axpy(1.0, &dx, &mut dh[slot * hd..(slot + 1) * hd]);
    }

    pub fn rule_backward(&self, cache: &HeadCache, region: usize, cand: usize, dl: f64, grad: &mut [f64], dh: &mut [f64]) {
        self.rules_backward(std::slice::from_ref(cache), region, &[cand], &[dl], grad, dh);
    }

    /// Backward pass of every rule logit of one step. The region half of the
    /// first layer is handled once for the summed gradient.
    pub fn rules_backward(
        &self,
        caches: &[HeadCache],
        region: usize,
        cands: &[usize],
        dls: &[f64],
        grad: &mut [f64],
        dh: &mut [f64],
    ) {
        let hd = self.config.hidden;
        let o = self.offsets;
        let mut sum = vec![0.0; hd];
        let mut da1 = vec![0.0; hd];
        let mut da2 = vec![0.0; hd];
        let mut any = false;
        for ((cache, &cand), &dl) in caches.iter().zip(cands).zip(dls) {
            if dl == 0.0 {
                continue;
            }
            any = true;
            grad[o.u3b] += dl;
            axpy(dl, &cache.a2, &mut grad[o.u3w..o.u3w + hd]);
            for k in 0..hd {
                da2[k] = if cache.a2[k] > 0.0 { self.params[o.u3w + k] * dl } else { 0.0 };
            }
            da1.iter_mut().for_each(|v| *v = 0.0);
            {
                let (gw, rest) = grad.split_at_mut(o.u2b);
                dense_backward(self.p(o.u2w, hd * hd), &cache.a1, &da2, &mut gw[o.u2w..o.u2w + hd * hd], &mut rest[..hd], Some(&mut da1));
            }
            for k in 0..hd {
                if cache.a1[k] <= 0.0 {
                    da1[k] = 0.0;
                }
            }
            let hu = &cache.x[hd..];
            for k in 0..hd {
                let row = o.u1w + (hd + k) * hd;
                if hu[k] != 0.0 {
                    axpy(hu[k], &da1, &mut grad[row..row + hd]);
                }
                dh[cand * hd + k] += dot(self.p(row, hd), &da1);
            }
            axpy(1.0, &da1, &mut sum);
        }
        if !any {
            return;
        }
        let hw = &caches[0].x[..hd];
        axpy(1.0, &sum, &mut grad[o.u1b..o.u1b + hd]);
        for k in 0..hd {
            let row = o.u1w + k * hd;
            if hw[k] != 0.0 {
                axpy(hw[k], &sum, &mut grad[row..row + hd]);
            }
            dh[region * hd + k] += dot(self.p(row, hd), &sum);
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Samples an index from a probability vector.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// First index of the largest value.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
