mod common;

use proptest::prelude::*;
use rehab_assess::graph::{k_hop_adjacency, normalize_adjacency, shortest_hop_distances, UNREACHABLE};
use rehab_assess::JointGraph;

use common::{floyd_warshall, random_connected_graph};

fn graph_strategy() -> impl Strategy<Value = JointGraph> {
    (1usize..=25, any::<u64>()).prop_map(|(n, seed)| random_connected_graph(n, &mut common::rng(seed)))
}

/// Arbitrary edge sets, possibly disconnected.
fn loose_graph_strategy() -> impl Strategy<Value = JointGraph> {
    (1usize..=12).prop_flat_map(|n| {
        proptest::collection::vec((0..n, 0..n), 0..20).prop_map(move |pairs| {
            let edges: Vec<_> = pairs.into_iter().filter(|(a, b)| a != b).collect();
            JointGraph::new("loose", n, &edges).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn distances_match_floyd_warshall(g in loose_graph_strategy()) {
        let fw = floyd_warshall(g.num_joints(), g.edges());
        let bfs = shortest_hop_distances(&g);
        for (a, b) in bfs.iter().zip(&fw) {
            prop_assert_eq!(*a == UNREACHABLE, *b == usize::MAX);
            if *a != UNREACHABLE {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn hop_matrix_from_distances(g in loose_graph_strategy(), k in 0usize..4) {
        let n = g.num_joints();
        let fw = floyd_warshall(n, g.edges());
        let hop = k_hop_adjacency(&g, k);
        for i in 0..n {
            for j in 0..n {
                let expect = fw[i * n + j] == k || i == j;
                prop_assert_eq!(hop.matrix[i * n + j], if expect { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn hop_matrix_is_symmetric_binary_with_unit_diagonal(g in graph_strategy(), k in 0usize..3) {
        let n = g.num_joints();
        let m = k_hop_adjacency(&g, k).matrix;
        for i in 0..n {
            prop_assert_eq!(m[i * n + i], 1.0);
            for j in 0..n {
                prop_assert!(m[i * n + j] == 0.0 || m[i * n + j] == 1.0);
                prop_assert_eq!(m[i * n + j], m[j * n + i]);
            }
        }
    }

    #[test]
    fn relabeling_commutes_with_hops(g in graph_strategy(), k in 0usize..3, seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let n = g.num_joints();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut common::rng(seed));
        let a = k_hop_adjacency(&g, k).matrix;
        let b = k_hop_adjacency(&g.permuted(&perm).unwrap(), k).matrix;
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(a[i * n + j], b[perm[i] * n + perm[j]]);
            }
        }
    }

    #[test]
    fn normalized_entries_follow_degrees(g in graph_strategy(), k in 0usize..3) {
        let n = g.num_joints();
        let hop = k_hop_adjacency(&g, k);
        let norm = normalize_adjacency(&hop);
        let deg: Vec<f64> = (0..n).map(|i| hop.matrix[i * n..(i + 1) * n].iter().sum()).collect();
        for i in 0..n {
            for j in 0..n {
                let expect = hop.matrix[i * n + j] / (deg[i] * deg[j]).sqrt();
                prop_assert!((norm[i * n + j] - expect).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn graph_file_round_trip() {
    let g = JointGraph::kimore();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.json");
    std::fs::write(&path, g.to_json()).unwrap();
    let back = JointGraph::load(&path).unwrap();
    assert_eq!(back, g);
    assert_eq!(JointGraph::from_name_or_path(path.to_str().unwrap()).unwrap(), g);
}

#[test]
fn malformed_graph_file() {
    assert!(JointGraph::from_json(r#"{"num_joints": 2, "edges": [[0, 5]]}"#).is_err());
    assert!(JointGraph::from_json("not json").is_err());
    assert!(JointGraph::from_name_or_path("/nonexistent/graph.json").is_err());
}
