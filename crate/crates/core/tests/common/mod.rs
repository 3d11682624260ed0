//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rehab_assess::data::{synthesize_with, ExerciseKind, LabeledSample, SynthOptions};
use rehab_assess::rng::Rng;
use rehab_assess::{JointGraph, Tensor};

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Random spanning tree plus a few extra edges.
pub fn random_connected_graph(n: usize, rng: &mut Rng) -> JointGraph {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for i in 1..n {
        let parent = order[rng.gen_range(0..i)];
        edges.push((order[i], parent));
    }
    let extra = if n > 2 { rng.gen_range(0..n) } else { 0 };
    for _ in 0..extra {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b {
            edges.push((a, b));
        }
    }
    JointGraph::new("random", n, &edges).unwrap()
}

/// All-pairs hop distances by Floyd-Warshall; `usize::MAX` when unreachable.
pub fn floyd_warshall(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let inf = usize::MAX / 4;
    let mut d = vec![inf; n * n];
    for i in 0..n {
        d[i * n + i] = 0;
    }
    for &(a, b) in edges {
        d[a * n + b] = 1;
        d[b * n + a] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i * n + k] + d[k * n + j];
                if via < d[i * n + j] {
                    d[i * n + j] = via;
                }
            }
        }
    }
    d.into_iter().map(|v| if v >= inf { usize::MAX } else { v }).collect()
}

/// Exactly-`k`-hop indicator plus the diagonal, by explicit breadth-first
/// search from every source.
pub fn bfs_hop_matrix(n: usize, edges: &[(usize, usize)], k: usize) -> Vec<f64> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut out = vec![0.0; n * n];
    for s in 0..n {
        let mut dist = vec![usize::MAX; n];
        dist[s] = 0;
        let mut frontier = vec![s];
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &u in &frontier {
                for &v in &adj[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        next.push(v);
                    }
                }
            }
            frontier = next;
        }
        for t in 0..n {
            if dist[t] == k || s == t {
                out[s * n + t] = 1.0;
            }
        }
    }
    out
}

pub struct GruParams {
    pub f: usize,
    /// Each `[F, F]` row-major, input index first.
    pub w_zx: Vec<f64>,
    pub w_zh: Vec<f64>,
    pub w_rx: Vec<f64>,
    pub w_rh: Vec<f64>,
    pub w_ox: Vec<f64>,
    pub w_oh: Vec<f64>,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_o: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn lin(x: &[f64], w: &[f64], f: usize, c: usize) -> f64 {
    (0..f).map(|k| x[k] * w[k * f + c]).sum()
}

/// Per-element gated recurrence over `[B, T, N, F]`, one joint at a time,
/// starting from a zero state.
pub fn naive_gru(x: &[f64], dims: [usize; 4], p: &GruParams, standard: bool) -> Vec<f64> {
    let [b, t, n, f] = dims;
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        for j in 0..n {
            let mut h = vec![0.0; f];
            for ti in 0..t {
                let at = ((bi * t + ti) * n + j) * f;
                let xt = &x[at..at + f];
                let z: Vec<f64> = (0..f)
                    .map(|c| sigmoid(p.b_z[c] + lin(xt, &p.w_zx, f, c) + lin(&h, &p.w_zh, f, c)))
                    .collect();
                let r: Vec<f64> = (0..f)
                    .map(|c| sigmoid(p.b_r[c] + lin(xt, &p.w_rx, f, c) + lin(&h, &p.w_rh, f, c)))
                    .collect();
                let rh: Vec<f64> = r.iter().zip(&h).map(|(a, b)| a * b).collect();
                let o: Vec<f64> = (0..f)
                    .map(|c| (p.b_o[c] + lin(xt, &p.w_ox, f, c) + lin(&rh, &p.w_oh, f, c)).tanh())
                    .collect();
                let next: Vec<f64> = (0..f)
                    .map(|c| {
                        let carried = if standard { h[c] } else { xt[c] };
                        z[c] * carried + (1.0 - z[c]) * o[c]
                    })
                    .collect();
                out[at..at + f].copy_from_slice(&next);
                h = next;
            }
        }
    }
    out
}

/// Multi-head self-attention by explicit loops. `z` is `[B, T, W]`; each
/// head is `(wq, wk, wv)` of shape `[W, D]`; `wo` is `[H*D, O]`; `valid`
/// is `[B, T]`.
pub fn naive_mha(
    z: &[f64],
    dims: [usize; 3],
    heads: &[(Vec<f64>, Vec<f64>, Vec<f64>)],
    d: usize,
    wo: &[f64],
    out_w: usize,
    valid: &[bool],
) -> Vec<f64> {
    let [b, t, w] = dims;
    let proj = |m: &[f64], bi: usize, ti: usize, c: usize| -> f64 {
        (0..w).map(|k| z[(bi * t + ti) * w + k] * m[k * d + c]).sum()
    };
    let hd = heads.len() * d;
    let mut out = vec![0.0; b * t * out_w];
    for bi in 0..b {
        for i in 0..t {
            let mut cat = vec![0.0; hd];
            for (h, (wq, wk, wv)) in heads.iter().enumerate() {
                let q: Vec<f64> = (0..d).map(|c| proj(wq, bi, i, c)).collect();
                let mut scores = vec![f64::NEG_INFINITY; t];
                for j in 0..t {
                    if valid[bi * t + j] {
                        let kj: f64 = (0..d).map(|c| q[c] * proj(wk, bi, j, c)).sum();
                        scores[j] = kj / (d as f64).sqrt();
                    }
                }
                let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores
                    .iter()
                    .map(|s| if s.is_finite() { (s - m).exp() } else { 0.0 })
                    .collect();
                let total: f64 = e.iter().sum();
                for c in 0..d {
                    cat[h * d + c] = (0..t).map(|j| e[j] / total * proj(wv, bi, j, c)).sum();
                }
            }
            for o in 0..out_w {
                out[(bi * t + i) * out_w + o] = (0..hd).map(|k| cat[k] * wo[k * out_w + o]).sum();
            }
        }
    }
    out
}

/// Arm-lift samples whose score is set by movement direction: forward
/// playback scores high, time reversal low. The profile peaks early so the
/// two directions differ.
pub fn direction_dataset(count: usize, frames: usize, seed: u64) -> Vec<LabeledSample> {
    (0..count)
        .map(|i| {
            let q = 0.5 + 0.5 * ((i * 7919 % 97) as f64 / 96.0);
            let reversed = i % 2 == 1;
            let mut o = SynthOptions::new(ExerciseKind::ArmLift, q, frames, seed * 1000 + i as u64);
            o.peak = 0.25;
            o.reversed = reversed;
            o.score_range = (0.0, 1.0);
            o.score = Some(if reversed { 0.5 * q } else { 0.5 + 0.5 * q });
            synthesize_with(&o).unwrap()
        })
        .collect()
}

/// Arm-lift samples with elbow flexion lagging the shoulder; the score
/// falls linearly with the lag.
pub fn phase_dataset(count: usize, frames: usize, seed: u64) -> Vec<LabeledSample> {
    (0..count)
        .map(|i| {
            let lag = 0.4 * ((i * 7919 % 97) as f64 / 96.0);
            let mut o = SynthOptions::new(ExerciseKind::ArmLift, 1.0, frames, seed * 1000 + i as u64);
            o.forearm_flex = 1.2;
            o.forearm_lag = lag;
            o.score_range = (0.0, 1.0);
            o.score = Some(1.0 - 1.5 * lag);
            synthesize_with(&o).unwrap()
        })
        .collect()
}
