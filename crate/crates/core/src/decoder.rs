//! Union-find decoder on the detector graph.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream_rng;
use crate::sampler::ShotSampler;
use crate::spacetime::DetectorModel;

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("mechanism {mechanism} touches {detectors} detectors; the decoder needs at most 2")]
    NotGraphlike { mechanism: usize, detectors: usize },
    #[error("detector pattern is not in the image of the incidence matrix")]
    Infeasible,
    #[error("pattern has {got} bits, model has {expected} detectors")]
    Shape { got: usize, expected: usize },
    #[error("model has {0} logical bits, at most 64 supported")]
    TooManyLogicals(usize),
}

#[derive(Debug, Error, PartialEq)]
pub enum ThresholdError {
    #[error("need at least {need} {what}, got {got}")]
    TooFew { what: &'static str, need: usize, got: usize },
    #[error("no crossing bracketed between L={0} and L={1}")]
    NoCrossing(usize, usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeResult {
    /// Mechanism indices of the correction.
    pub correction: Vec<usize>,
    /// Logical bits flipped by the correction.
    pub logical: u64,
}

const NIL: u32 = u32::MAX;

#[derive(Clone, Copy, Debug)]
struct Edge {
    u: u32,
    v: u32,
    mechanism: u32,
    logical: u64,
}

/// Detector graph with an optional boundary node at index `n_detectors`.
#[derive(Clone, Debug)]
pub struct UnionFindDecoder {
    n_nodes: usize,
    boundary: u32,
    edges: Vec<Edge>,
    adj_start: Vec<u32>,
    adj: Vec<u32>,
    mech_logical: Vec<u64>,
    mech_detectors: Vec<Vec<u32>>,
}

#[derive(Clone, Debug)]
pub struct Workspace {
    parent: Vec<u32>,
    size: Vec<u32>,
    odd: Vec<bool>,
    boundary: Vec<bool>,
    head: Vec<u32>,
    tail: Vec<u32>,
    next: Vec<u32>,
    growth: Vec<u8>,
    mark: Vec<bool>,
    seen: Vec<bool>,
    tree_edge: Vec<u32>,
    touched_nodes: Vec<u32>,
    touched_edges: Vec<u32>,
    active: Vec<u32>,
    fused: Vec<u32>,
    order: Vec<u32>,
    check: Vec<bool>,
}

impl UnionFindDecoder {
    pub fn new(model: &DetectorModel) -> Result<Self, DecodeError> {
        if model.n_logicals() > 64 {
            return Err(DecodeError::TooManyLogicals(model.n_logicals()));
        }
        let nd = model.n_detectors();
        let boundary = nd as u32;
        let mut edges: Vec<Edge> = Vec::new();
        let mut seen = std::collections::HashMap::new();
        let mut mech_logical = Vec::with_capacity(model.n_mechanisms());
        let mut mech_detectors = Vec::with_capacity(model.n_mechanisms());
        for (k, m) in model.mechanisms.iter().enumerate() {
            let logical = m.logicals.iter().fold(0u64, |acc, &l| acc | 1 << l);
            mech_logical.push(logical);
            mech_detectors.push(m.detectors.iter().map(|&d| d as u32).collect());
            if m.probability <= 0.0 || m.detectors.is_empty() {
                continue;
            }
            let (u, v) = match m.detectors.as_slice() {
                &[a] => (a as u32, boundary),
                &[a, b] => (a as u32, b as u32),
                other => {
                    return Err(DecodeError::NotGraphlike { mechanism: k, detectors: other.len() })
                }
            };
            // parallel edges keep the lowest-index mechanism
            seen.entry((u, v)).or_insert_with(|| {
                edges.push(Edge { u, v, mechanism: k as u32, logical });
            });
        }
        let n_nodes = nd + 1;
        let mut deg = vec![0u32; n_nodes + 1];
        for e in &edges {
            deg[e.u as usize + 1] += 1;
            deg[e.v as usize + 1] += 1;
        }
        for i in 0..n_nodes {
            deg[i + 1] += deg[i];
        }
        let mut fill = deg.clone();
        let mut adj = vec![0u32; 2 * edges.len()];
        for (i, e) in edges.iter().enumerate() {
            for w in [e.u, e.v] {
                adj[fill[w as usize] as usize] = i as u32;
                fill[w as usize] += 1;
            }
        }
        Ok(Self { n_nodes, boundary, edges, adj_start: deg, adj, mech_logical, mech_detectors })
    }

    pub fn n_detectors(&self) -> usize {
        self.n_nodes - 1
    }

    pub fn workspace(&self) -> Workspace {
        let n = self.n_nodes;
        Workspace {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
            odd: vec![false; n],
            boundary: (0..n).map(|i| i as u32 == self.boundary).collect(),
            head: vec![NIL; n],
            tail: vec![NIL; n],
            next: vec![NIL; n],
            growth: vec![0; self.edges.len()],
            mark: vec![false; n],
            seen: vec![false; n],
            tree_edge: vec![u32::MAX; n],
            touched_nodes: Vec::new(),
            touched_edges: Vec::new(),
            active: Vec::new(),
            fused: Vec::new(),
            order: Vec::new(),
            check: vec![false; n],
        }
    }

    #[inline]
    fn find(ws: &mut Workspace, mut x: u32) -> u32 {
        while ws.parent[x as usize] != x {
            let p = ws.parent[x as usize];
            ws.parent[x as usize] = ws.parent[p as usize];
            x = p;
        }
        x
    }

    #[inline]
    fn union(ws: &mut Workspace, a: u32, b: u32) {
        let (mut ra, mut rb) = (Self::find(ws, a), Self::find(ws, b));
        if ra == rb {
            return;
        }
        if ws.size[ra as usize] < ws.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        ws.parent[rb as usize] = ra;
        ws.size[ra as usize] += ws.size[rb as usize];
        ws.odd[ra as usize] ^= ws.odd[rb as usize];
        ws.boundary[ra as usize] |= ws.boundary[rb as usize];
        // splice rb's frontier list onto ra's
        let (hb, tb) = (ws.head[rb as usize], ws.tail[rb as usize]);
        if hb != NIL {
            if ws.head[ra as usize] == NIL {
                ws.head[ra as usize] = hb;
            } else {
                ws.next[ws.tail[ra as usize] as usize] = hb;
            }
            ws.tail[ra as usize] = tb;
            ws.head[rb as usize] = NIL;
            ws.tail[rb as usize] = NIL;
        }
    }

    #[inline]
    fn touch(ws: &mut Workspace, v: u32) {
        if !ws.seen[v as usize] {
            ws.seen[v as usize] = true;
            ws.touched_nodes.push(v);
            ws.head[v as usize] = v;
            ws.tail[v as usize] = v;
            ws.next[v as usize] = NIL;
        }
    }

    fn reset(&self, ws: &mut Workspace) {
        for &v in &ws.touched_nodes {
            let i = v as usize;
            ws.parent[i] = v;
            ws.size[i] = 1;
            ws.odd[i] = false;
            ws.boundary[i] = v == self.boundary;
            ws.head[i] = NIL;
            ws.tail[i] = NIL;
            ws.next[i] = NIL;
            ws.mark[i] = false;
            ws.seen[i] = false;
            ws.tree_edge[i] = u32::MAX;
        }
        for &e in &ws.touched_edges {
            ws.growth[e as usize] = 0;
        }
        ws.touched_nodes.clear();
        ws.touched_edges.clear();
    }

    /// Decodes the fired detectors `syndrome` (sorted or not, no repeats).
    pub fn decode_sparse(&self, ws: &mut Workspace, syndrome: &[u32], correction: &mut Vec<u32>) -> Result<u64, DecodeError> {
        correction.clear();
        ws.active.clear();
        for &d in syndrome {
            Self::touch(ws, d);
            ws.odd[d as usize] = true;
            ws.mark[d as usize] = true;
            ws.active.push(d);
        }
        while !ws.active.is_empty() {
            ws.fused.clear();
            let mut grew = false;
            for ai in 0..ws.active.len() {
                let root = ws.active[ai];
                let mut v = ws.head[root as usize];
                let mut prev = NIL;
                while v != NIL {
                    let nv = ws.next[v as usize];
                    let (s, e) = (self.adj_start[v as usize], self.adj_start[v as usize + 1]);
                    let mut open = false;
                    for &ei in &self.adj[s as usize..e as usize] {
                        let g = &mut ws.growth[ei as usize];
                        if *g < 2 {
                            if *g == 0 {
                                ws.touched_edges.push(ei);
                            }
                            *g += 1;
                            grew = true;
                            if *g == 2 {
                                ws.fused.push(ei);
                            } else {
                                open = true;
                            }
                        }
                    }
                    if open {
                        prev = v;
                    } else if prev == NIL {
                        ws.head[root as usize] = nv;
                    } else {
                        ws.next[prev as usize] = nv;
                    }
                    v = nv;
                }
                ws.tail[root as usize] = prev;
            }
            if !grew {
                self.reset(ws);
                return Err(DecodeError::Infeasible);
            }
            for fi in 0..ws.fused.len() {
                let e = self.edges[ws.fused[fi] as usize];
                Self::touch(ws, e.u);
                Self::touch(ws, e.v);
                Self::union(ws, e.u, e.v);
            }
            let mut next_active = std::mem::take(&mut ws.active);
            for r in next_active.iter_mut() {
                *r = Self::find(ws, *r);
            }
            next_active.sort_unstable();
            next_active.dedup();
            next_active.retain(|&r| ws.odd[r as usize] && !ws.boundary[r as usize]);
            ws.active = next_active;
        }
        // peel a spanning forest of each cluster
        let mut logical = 0u64;
        for ti in 0..ws.touched_nodes.len() {
            let v = ws.touched_nodes[ti];
            let root = Self::find(ws, v);
            if root != v {
                continue;
            }
            let start = if ws.boundary[root as usize] { self.boundary } else { root };
            ws.order.clear();
            ws.order.push(start);
            ws.check[start as usize] = true;
            let mut head = 0;
            while head < ws.order.len() {
                let x = ws.order[head];
                head += 1;
                let (s, e) = (self.adj_start[x as usize], self.adj_start[x as usize + 1]);
                for k in s..e {
                    let ei = self.adj[k as usize];
                    if ws.growth[ei as usize] < 2 {
                        continue;
                    }
                    let ed = self.edges[ei as usize];
                    let y = if ed.u == x { ed.v } else { ed.u };
                    if !ws.check[y as usize] {
                        ws.check[y as usize] = true;
                        ws.tree_edge[y as usize] = ei;
                        ws.order.push(y);
                    }
                }
            }
            for oi in (1..ws.order.len()).rev() {
                let y = ws.order[oi];
                if ws.mark[y as usize] {
                    let ei = ws.tree_edge[y as usize];
                    let ed = self.edges[ei as usize];
                    let x = if ed.u == y { ed.v } else { ed.u };
                    ws.mark[y as usize] = false;
                    ws.mark[x as usize] ^= true;
                    correction.push(ed.mechanism);
                    logical ^= ed.logical;
                }
            }
            let root_marked = ws.mark[start as usize] && start != self.boundary;
            for &x in &ws.order {
                ws.check[x as usize] = false;
            }
            if root_marked {
                self.reset(ws);
                return Err(DecodeError::Infeasible);
            }
        }
        self.reset(ws);
        // validity: the correction reproduces the syndrome
        for &m in correction.iter() {
            for &d in &self.mech_detectors[m as usize] {
                ws.check[d as usize] ^= true;
            }
        }
        let mut ok = true;
        for &d in syndrome {
            ok &= ws.check[d as usize];
            ws.check[d as usize] = false;
        }
        for &m in correction.iter() {
            for &d in &self.mech_detectors[m as usize] {
                ok &= !ws.check[d as usize];
                ws.check[d as usize] = false;
            }
        }
        if !ok {
            return Err(DecodeError::Infeasible);
        }
        Ok(logical)
    }

    pub fn logical_of(&self, mechanisms: &[u32]) -> u64 {
        mechanisms.iter().fold(0, |acc, &m| acc ^ self.mech_logical[m as usize])
    }
}

/// Decodes a dense detector pattern.
pub fn decode(model: &DetectorModel, detectors: &[bool]) -> Result<DecodeResult, DecodeError> {
    if detectors.len() != model.n_detectors() {
        return Err(DecodeError::Shape { got: detectors.len(), expected: model.n_detectors() });
    }
    let dec = UnionFindDecoder::new(model)?;
    let mut ws = dec.workspace();
    let syn: Vec<u32> = (0..detectors.len()).filter(|&i| detectors[i]).map(|i| i as u32).collect();
    let mut corr = Vec::new();
    let logical = dec.decode_sparse(&mut ws, &syn, &mut corr)?;
    let mut correction: Vec<usize> = corr.into_iter().map(|m| m as usize).collect();
    correction.sort_unstable();
    Ok(DecodeResult { correction, logical })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogicalErrorRate {
    pub shots: u64,
    pub errors: u64,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// 95% Wilson score interval.
pub fn wilson_interval(k: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let nf = n as f64;
    let p = k as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let centre = (p + z * z / (2.0 * nf)) / denom;
    let half = z * ((p * (1.0 - p) + z * z / (4.0 * nf)) / nf).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

pub const SHOT_BLOCK: u64 = 1 << 14;

pub fn logical_error_rate(model: &DetectorModel, shots: u64, seed: u64) -> Result<LogicalErrorRate, DecodeError> {
    let dec = UnionFindDecoder::new(model)?;
    let sampler = ShotSampler::new(model);
    let blocks = shots.div_ceil(SHOT_BLOCK);
    let counts: Result<Vec<u64>, DecodeError> = (0..blocks)
        .into_par_iter()
        .map_init(
            || (dec.workspace(), Vec::new(), Vec::new(), Vec::new(), vec![false; dec.n_detectors()]),
            |(ws, errs, syn, corr, dense), b| {
                let mut rng = stream_rng(seed, "decoder", b);
                let n = SHOT_BLOCK.min(shots - b * SHOT_BLOCK);
                let mut fails = 0u64;
                for _ in 0..n {
                    sampler.sample_into(&mut rng, errs);
                    syn.clear();
                    for &m in errs.iter() {
                        for &d in &dec.mech_detectors[m as usize] {
                            dense[d as usize] ^= true;
                        }
                    }
                    for &m in errs.iter() {
                        for &d in &dec.mech_detectors[m as usize] {
                            if dense[d as usize] {
                                dense[d as usize] = false;
                                syn.push(d);
                            }
                        }
                    }
                    let guess = dec.decode_sparse(ws, syn, corr)?;
                    fails += (guess != dec.logical_of(errs)) as u64;
                }
                Ok(fails)
            },
        )
        .collect();
    let errors: u64 = counts?.iter().sum();
    let (ci_low, ci_high) = wilson_interval(errors, shots);
    Ok(LogicalErrorRate { shots, errors, rate: errors as f64 / shots.max(1) as f64, ci_low, ci_high })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateCurve {
    pub l: usize,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub estimate: f64,
    /// Half the range of the pairwise crossings.
    pub spread: f64,
    pub pairwise: Vec<(usize, usize, f64)>,
}

/// Pairwise crossings of logical-error-rate curves by linear interpolation of their difference.
pub fn threshold_estimate(curves: &[RateCurve]) -> Result<Crossing, ThresholdError> {
    if curves.len() < 2 {
        return Err(ThresholdError::TooFew { what: "sizes", need: 2, got: curves.len() });
    }
    let mut pairwise = Vec::new();
    for i in 0..curves.len() {
        for j in i + 1..curves.len() {
            let (small, large) = if curves[i].l <= curves[j].l { (&curves[i], &curves[j]) } else { (&curves[j], &curves[i]) };
            let pts: Vec<(f64, f64)> = small
                .points
                .iter()
                .filter_map(|&(p, r)| {
                    large.points.iter().find(|q| q.0 == p).map(|q| (p, q.1 - r))
                })
                .collect();
            if pts.len() < 4 {
                return Err(ThresholdError::TooFew { what: "shared p-points", need: 4, got: pts.len() });
            }
            let cross = pts.windows(2).find_map(|w| {
                let ((p0, d0), (p1, d1)) = (w[0], w[1]);
                (d0 < 0.0 && d1 >= 0.0).then(|| p0 + (p1 - p0) * (-d0) / (d1 - d0))
            });
            match cross {
                Some(c) => pairwise.push((small.l, large.l, c)),
                None => return Err(ThresholdError::NoCrossing(small.l, large.l)),
            }
        }
    }
    let xs: Vec<f64> = pairwise.iter().map(|c| c.2).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(Crossing { estimate: mean, spread: (hi - lo) / 2.0, pairwise })
}
