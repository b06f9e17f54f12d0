mod support;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tti_audit::ann::{brute_force_knn, build_index, colorfulness_neighbors, query, BuildParams, KnnGraph, Probe};
use tti_audit::visual_words::SparseVector;

fn ids_of(v: Vec<(String, f64)>) -> Vec<String> {
    v.into_iter().map(|p| p.0).collect()
}

#[test]
fn complete_graph_when_n_is_k_plus_one() {
    let (ids, vs) = support::clustered_sparse_vectors(11, 256, 3, 5);
    let g = build_index(ids.clone(), &vs, &BuildParams { k: 10, seed: 1, ..Default::default() }).unwrap();
    for v in 0..11 {
        let mut others: Vec<u32> = g.neighbors(v).iter().map(|e| e.0).collect();
        others.sort();
        let expected: Vec<u32> = (0..11).filter(|&u| u != v as u32).collect();
        assert_eq!(others, expected);
    }
    for id in &ids {
        for k in [1, 4, 10] {
            let a = query(&g, &vs, Probe::Id(id), k).unwrap();
            let b = brute_force_knn(&ids, &vs, Probe::Id(id), k).unwrap();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn too_few_vectors() {
    let (ids, vs) = support::clustered_sparse_vectors(5, 64, 2, 1);
    assert!(build_index(ids, &vs, &BuildParams { k: 5, ..Default::default() }).is_err());
}

#[test]
fn duplicate_vector_comes_first() {
    let (mut ids, mut vs) = support::clustered_sparse_vectors(200, 512, 8, 2);
    ids.push("copy".into());
    vs.push(vs[17].clone());
    let g = build_index(ids.clone(), &vs, &BuildParams { k: 10, seed: 3, ..Default::default() }).unwrap();
    let got = query(&g, &vs, Probe::Id(&ids[17]), 5).unwrap();
    assert_eq!(got[0].0, "copy");
    assert!((got[0].1 - 1.0).abs() < 1e-12);
}

#[test]
fn indexed_probe_k1_is_top_neighbor() {
    let (ids, vs) = support::clustered_sparse_vectors(300, 512, 10, 4);
    let g = build_index(ids.clone(), &vs, &BuildParams { k: 10, seed: 3, ..Default::default() }).unwrap();
    for (i, id) in ids.iter().enumerate().take(40) {
        let got = query(&g, &vs, Probe::Id(id), 1).unwrap();
        let top = g.neighbors(i)[0];
        let exact = brute_force_knn(&ids, &vs, Probe::Id(id), 1).unwrap();
        // the search can only improve on the stored list
        assert!(got[0].1 >= f64::from(top.1) - 1e-6);
        if exact[0].0 == ids[top.0 as usize] {
            assert_eq!(got[0].0, ids[top.0 as usize]);
        }
    }
}

#[test]
fn query_errors() {
    let (ids, vs) = support::clustered_sparse_vectors(30, 128, 3, 4);
    let g = build_index(ids.clone(), &vs, &BuildParams { k: 5, ..Default::default() }).unwrap();
    assert!(query(&g, &vs, Probe::Id("nope"), 3).is_err());
    assert!(query(&g, &vs, Probe::Id(&ids[0]), 30).is_err());
    let wrong_dim = SparseVector::from_weights(7, [(1, 1.0)]);
    assert!(query(&g, &vs, Probe::Vector(&wrong_dim), 3).is_err());
}

#[test]
fn results_are_sorted_and_exclude_probe() {
    let (ids, vs) = support::clustered_sparse_vectors(400, 512, 12, 8);
    let g = build_index(ids.clone(), &vs, &BuildParams { k: 12, seed: 2, ..Default::default() }).unwrap();
    for id in ids.iter().step_by(37) {
        let got = query(&g, &vs, Probe::Id(id), 12).unwrap();
        assert_eq!(got.len(), 12);
        assert!(got.iter().all(|(x, _)| x != id));
        assert!(got.windows(2).all(|w| w[0].1 >= w[1].1));
    }
}

#[test]
fn graph_invariants_and_file_round_trip() {
    let (ids, vs) = support::clustered_sparse_vectors(500, 512, 10, 6);
    let g = build_index(ids, &vs, &BuildParams { k: 8, seed: 9, ..Default::default() }).unwrap();
    for v in 0..g.len() {
        let list = g.neighbors(v);
        assert_eq!(list.len(), 8);
        assert!(list.iter().all(|&(u, s)| u as usize != v && (0.0..=1.0).contains(&s)));
        assert!(list.windows(2).all(|w| w[0].1 >= w[1].1));
    }
    let back = KnnGraph::from_bytes(&g.to_bytes()).unwrap();
    assert_eq!(back, g);
    let mut bytes = g.to_bytes();
    bytes.truncate(bytes.len() - 3);
    assert!(KnnGraph::from_bytes(&bytes).is_err());
}

#[test]
fn parallel_join_matches_single_worker() {
    let (ids, vs) = support::clustered_sparse_vectors(1500, 1024, 30, 12);
    let single = build_index(ids.clone(), &vs, &BuildParams { k: 10, seed: 4, workers: 1, ..Default::default() }).unwrap();
    let parallel = build_index(ids, &vs, &BuildParams { k: 10, seed: 4, workers: 0, ..Default::default() }).unwrap();
    assert_eq!(single.to_bytes(), parallel.to_bytes());
}

#[test]
fn colorfulness_matches_full_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let scores: Vec<(String, f64)> = (0..100).map(|i| (format!("c{i:03}"), rng.random_range(0.0..120.0))).collect();
    for probe in ["c000", "c050", "c099"] {
        let p = scores.iter().find(|s| s.0 == probe).unwrap().1;
        let mut oracle: Vec<&(String, f64)> = scores.iter().filter(|s| s.0 != probe).collect();
        oracle.sort_by(|a, b| (a.1 - p).abs().total_cmp(&(b.1 - p).abs()).then(a.0.cmp(&b.0)));
        let expected: Vec<String> = oracle.iter().take(9).map(|s| s.0.clone()).collect();
        assert_eq!(ids_of(colorfulness_neighbors(&scores, probe, 9).unwrap()), expected);
    }
}

#[test]
fn recall_on_clustered_fixture() {
    let r = support::ann_recall();
    eprintln!("graph {:.4}, id probes {:.4}, vector probes {:.4}", r.graph, r.id_probes, r.vector_probes);
    assert!(r.graph >= 0.90, "graph recall {}", r.graph);
    assert!(r.id_probes >= 0.85, "query recall {}", r.id_probes);
}
