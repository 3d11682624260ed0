//! Skeleton graphs and their hop-distance operators.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance reported for joint pairs with no connecting path.
pub const UNREACHABLE: usize = usize::MAX;

/// Joint indices of the built-in 25-joint Kinect v2 skeleton.
pub mod kimore {
    pub const NUM_JOINTS: usize = 25;

    pub const SPINE_BASE: usize = 0;
    pub const SPINE_MID: usize = 1;
    pub const NECK: usize = 2;
    pub const HEAD: usize = 3;
    pub const SHOULDER_LEFT: usize = 4;
    pub const ELBOW_LEFT: usize = 5;
    pub const WRIST_LEFT: usize = 6;
    pub const HAND_LEFT: usize = 7;
    pub const SHOULDER_RIGHT: usize = 8;
    pub const ELBOW_RIGHT: usize = 9;
    pub const WRIST_RIGHT: usize = 10;
    pub const HAND_RIGHT: usize = 11;
    pub const HIP_LEFT: usize = 12;
    pub const KNEE_LEFT: usize = 13;
    pub const ANKLE_LEFT: usize = 14;
    pub const FOOT_LEFT: usize = 15;
    pub const HIP_RIGHT: usize = 16;
    pub const KNEE_RIGHT: usize = 17;
    pub const ANKLE_RIGHT: usize = 18;
    pub const FOOT_RIGHT: usize = 19;
    pub const SPINE_SHOULDER: usize = 20;
    pub const HAND_TIP_LEFT: usize = 21;
    pub const THUMB_LEFT: usize = 22;
    pub const HAND_TIP_RIGHT: usize = 23;
    pub const THUMB_RIGHT: usize = 24;

    pub const NAMES: [&str; NUM_JOINTS] = [
        "spine_base",
        "spine_mid",
        "neck",
        "head",
        "shoulder_left",
        "elbow_left",
        "wrist_left",
        "hand_left",
        "shoulder_right",
        "elbow_right",
        "wrist_right",
        "hand_right",
        "hip_left",
        "knee_left",
        "ankle_left",
        "foot_left",
        "hip_right",
        "knee_right",
        "ankle_right",
        "foot_right",
        "spine_shoulder",
        "hand_tip_left",
        "thumb_left",
        "hand_tip_right",
        "thumb_right",
    ];

    pub const EDGES: [(usize, usize); 24] = [
        (SPINE_BASE, SPINE_MID),
        (SPINE_MID, SPINE_SHOULDER),
        (SPINE_SHOULDER, NECK),
        (NECK, HEAD),
        (SPINE_SHOULDER, SHOULDER_LEFT),
        (SHOULDER_LEFT, ELBOW_LEFT),
        (ELBOW_LEFT, WRIST_LEFT),
        (WRIST_LEFT, HAND_LEFT),
        (HAND_LEFT, HAND_TIP_LEFT),
        (HAND_LEFT, THUMB_LEFT),
        (SPINE_SHOULDER, SHOULDER_RIGHT),
        (SHOULDER_RIGHT, ELBOW_RIGHT),
        (ELBOW_RIGHT, WRIST_RIGHT),
        (WRIST_RIGHT, HAND_RIGHT),
        (HAND_RIGHT, HAND_TIP_RIGHT),
        (HAND_RIGHT, THUMB_RIGHT),
        (SPINE_BASE, HIP_LEFT),
        (HIP_LEFT, KNEE_LEFT),
        (KNEE_LEFT, ANKLE_LEFT),
        (ANKLE_LEFT, FOOT_LEFT),
        (SPINE_BASE, HIP_RIGHT),
        (HIP_RIGHT, KNEE_RIGHT),
        (KNEE_RIGHT, ANKLE_RIGHT),
        (ANKLE_RIGHT, FOOT_RIGHT),
    ];

    pub const ARM_CHAIN: [usize; 12] = [
        SHOULDER_LEFT,
        ELBOW_LEFT,
        WRIST_LEFT,
        HAND_LEFT,
        HAND_TIP_LEFT,
        THUMB_LEFT,
        SHOULDER_RIGHT,
        ELBOW_RIGHT,
        WRIST_RIGHT,
        HAND_RIGHT,
        HAND_TIP_RIGHT,
        THUMB_RIGHT,
    ];

    pub const LEGS: [usize; 8] = [
        HIP_LEFT,
        KNEE_LEFT,
        ANKLE_LEFT,
        FOOT_LEFT,
        HIP_RIGHT,
        KNEE_RIGHT,
        ANKLE_RIGHT,
        FOOT_RIGHT,
    ];

    /// Front view, y up, subject's left on +x, roughly in meters.
    pub const LAYOUT: [[f64; 2]; NUM_JOINTS] = [
        [0.0, 0.0],
        [0.0, 0.25],
        [0.0, 0.58],
        [0.0, 0.72],
        [0.18, 0.48],
        [0.22, 0.22],
        [0.24, -0.02],
        [0.25, -0.09],
        [-0.18, 0.48],
        [-0.22, 0.22],
        [-0.24, -0.02],
        [-0.25, -0.09],
        [0.09, -0.02],
        [0.10, -0.45],
        [0.10, -0.85],
        [0.12, -0.92],
        [-0.09, -0.02],
        [-0.10, -0.45],
        [-0.10, -0.85],
        [-0.12, -0.92],
        [0.0, 0.5],
        [0.26, -0.16],
        [0.20, -0.11],
        [-0.26, -0.16],
        [-0.20, -0.11],
    ];
}

/// An undirected skeleton graph. Edges are stored once as `(lo, hi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointGraph {
    name: String,
    num_joints: usize,
    edges: Vec<(usize, usize)>,
    layout: Option<Vec<[f64; 2]>>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    #[serde(default)]
    name: Option<String>,
    num_joints: usize,
    edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layout: Option<Vec<[f64; 2]>>,
}

impl JointGraph {
    /// Validates and canonicalizes an edge list; duplicate and reversed
    /// edges collapse to one.
    pub fn new(name: impl Into<String>, num_joints: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= num_joints || b >= num_joints {
                return Err(Error::Config(format!(
                    "edge ({a}, {b}) out of range for {num_joints} joints"
                )));
            }
            if a == b {
                return Err(Error::Config(format!("self-loop edge ({a}, {a}) is not allowed")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(JointGraph {
            name: name.into(),
            num_joints,
            edges: set.into_iter().collect(),
            layout: None,
        })
    }

    /// The 25-joint Kinect v2 skeleton, with its front-view layout.
    pub fn kimore() -> Self {
        let mut g = Self::new("kimore", kimore::NUM_JOINTS, &kimore::EDGES).expect("built-in graph is valid");
        g.layout = Some(kimore::LAYOUT.to_vec());
        g
    }

    /// Resolves a built-in name or a path to a JSON graph file.
    pub fn from_name_or_path(spec: &str) -> Result<Self> {
        match spec {
            "kimore" => Ok(Self::kimore()),
            path => Self::load(path),
        }
    }

    pub fn with_layout(mut self, layout: Vec<[f64; 2]>) -> Result<Self> {
        if layout.len() != self.num_joints {
            return Err(Error::Config(format!(
                "layout has {} points for {} joints",
                layout.len(),
                self.num_joints
            )));
        }
        self.layout = Some(layout);
        Ok(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text)?;
        let edges: Vec<(usize, usize)> = file.edges.iter().map(|e| (e[0], e[1])).collect();
        let g = Self::new(file.name.unwrap_or_else(|| "custom".into()), file.num_joints, &edges)?;
        match file.layout {
            Some(l) => g.with_layout(l),
            None => Ok(g),
        }
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile {
            name: Some(self.name.clone()),
            num_joints: self.num_joints,
            edges: self.edges.iter().map(|&(a, b)| [a, b]).collect(),
            layout: self.layout.clone(),
        };
        serde_json::to_string_pretty(&file).expect("graph serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Shipped 2D layout, or joints evenly spaced on a circle otherwise.
    pub fn layout(&self) -> Vec<[f64; 2]> {
        match &self.layout {
            Some(l) => l.clone(),
            None => {
                let n = self.num_joints.max(1) as f64;
                (0..self.num_joints)
                    .map(|i| {
                        let a = std::f64::consts::TAU * i as f64 / n;
                        [a.cos(), a.sin()]
                    })
                    .collect()
            }
        }
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_joints];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Relabels joints: old joint `i` becomes joint `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.num_joints)?;
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let mut g = Self::new(format!("{}-permuted", self.name), self.num_joints, &edges)?;
        if let Some(l) = &self.layout {
            let mut out = vec![[0.0; 2]; l.len()];
            for (i, &p) in perm.iter().enumerate() {
                out[p] = l[i];
            }
            g.layout = Some(out);
        }
        Ok(g)
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::Config(format!("not a permutation of 0..{n}: {perm:?}")));
    }
    Ok(())
}

/// All-pairs hop distances by breadth-first search, row-major `N x N`.
/// Disconnected pairs hold [`UNREACHABLE`].
pub fn shortest_hop_distances(graph: &JointGraph) -> Vec<usize> {
    let n = graph.num_joints();
    let adj = graph.neighbors();
    let mut dist = vec![UNREACHABLE; n * n];
    let mut queue = VecDeque::new();
    for s in 0..n {
        let row = &mut dist[s * n..(s + 1) * n];
        row[s] = 0;
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if row[v] == UNREACHABLE {
                    row[v] = row[u] + 1;
                    queue.push_back(v);
                }
            }
        }
    }
    dist
}

/// Binary matrix marking joint pairs exactly `k` hops apart, plus the
/// diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct HopAdjacency {
    pub k: usize,
    pub n: usize,
    /// Row-major `n x n`, entries in {0, 1}.
    pub matrix: Vec<f64>,
}

pub fn k_hop_adjacency(graph: &JointGraph, k: usize) -> HopAdjacency {
    let n = graph.num_joints();
    let dist = shortest_hop_distances(graph);
    let matrix = dist
        .iter()
        .enumerate()
        .map(|(idx, &d)| if d == k || idx / n == idx % n { 1.0 } else { 0.0 })
        .collect();
    HopAdjacency { k, n, matrix }
}

/// Symmetric degree normalization `D^-1/2 (A + I) D^-1/2`.
///
/// The self-loop is set rather than added, so an existing diagonal entry
/// stays 1. Returns a row-major `n x n` matrix.
pub fn normalize_adjacency(hop: &HopAdjacency) -> Vec<f64> {
    let n = hop.n;
    let mut a = hop.matrix.clone();
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / a[i * n..(i + 1) * n].iter().sum::<f64>().sqrt())
        .collect();
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> JointGraph {
        JointGraph::new("path", 3, &[(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn path_distances() {
        let d = shortest_hop_distances(&path3());
        assert_eq!(d, vec![0, 1, 2, 1, 0, 1, 2, 1, 0]);
    }

    #[test]
    fn disconnected_pair_is_unreachable() {
        let g = JointGraph::new("pair", 2, &[]).unwrap();
        let d = shortest_hop_distances(&g);
        assert_eq!(d[1], UNREACHABLE);
        assert_eq!(d[0], 0);
        let h = k_hop_adjacency(&g, 1);
        assert_eq!(h.matrix, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn empty_graph() {
        let g = JointGraph::new("empty", 0, &[]).unwrap();
        assert!(shortest_hop_distances(&g).is_empty());
    }

    #[test]
    fn hop_two_on_path() {
        let h = k_hop_adjacency(&path3(), 2);
        assert_eq!(h.matrix, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn hop_zero_is_identity_and_normalizes_to_identity() {
        let g = JointGraph::kimore();
        let h = k_hop_adjacency(&g, 0);
        let a = normalize_adjacency(&h);
        for i in 0..25 {
            for j in 0..25 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert_eq!(h.matrix[i * 25 + j], e);
                assert_eq!(a[i * 25 + j], e);
            }
        }
    }

    #[test]
    fn single_edge_normalizes_to_halves() {
        let g = JointGraph::new("edge", 2, &[(0, 1)]).unwrap();
        let a = normalize_adjacency(&k_hop_adjacency(&g, 1));
        for v in a {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn kimore_shape() {
        let g = JointGraph::kimore();
        assert_eq!(g.num_joints(), 25);
        assert_eq!(g.edges().len(), 24);
        let d = shortest_hop_distances(&g);
        assert!(d.iter().all(|&x| x != UNREACHABLE));
        let h = k_hop_adjacency(&g, 1);
        let diag: f64 = (0..25).map(|i| h.matrix[i * 26]).sum();
        assert_eq!(diag, 25.0);
        assert_eq!(d[kimore::SHOULDER_LEFT * 25 + kimore::WRIST_LEFT], 2);
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(JointGraph::new("x", 2, &[(0, 2)]).is_err());
        assert!(JointGraph::new("x", 2, &[(1, 1)]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let g = JointGraph::kimore();
        let back = JointGraph::from_json(&g.to_json()).unwrap();
        assert_eq!(back, g);
        let plain = JointGraph::from_json(r#"{"num_joints": 3, "edges": [[1, 0], [2, 1]]}"#).unwrap();
        assert_eq!(plain.edges(), path3().edges());
    }

    #[test]
    fn permutation_relabels_edges() {
        let g = path3().permuted(&[2, 0, 1]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2)]);
        assert!(path3().permuted(&[0, 0, 1]).is_err());
    }
}
