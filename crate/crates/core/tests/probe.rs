use std::collections::VecDeque;

use cascadecite::encoding::{encode, schema_from_corpus};
use cascadecite::ingest::{generate_synthetic, SynthConfig};
use cascadecite::probe::{flatten_sequence, probe, structural_features, ProbeConfig};
use cascadecite::tree::to_tree;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Features recounted from a bare parent list.
fn recount(parents: &[usize]) -> [f64; 5] {
    let n = parents.len() + 1;
    let mut children = vec![Vec::new(); n];
    for (i, &p) in parents.iter().enumerate() {
        children[p].push(i + 1);
    }
    let mut depth = vec![0usize; n];
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for &c in &children[u] {
            depth[c] = depth[u] + 1;
            queue.push_back(c);
        }
    }
    let edges = parents.len() as f64;
    let max_path = *depth.iter().max().unwrap() as f64;
    let ave_path = depth[1..].iter().sum::<usize>() as f64 / edges;
    let leaves = (1..n).filter(|&i| children[i].is_empty()).count() as f64;
    [edges, max_path, ave_path, leaves, 2.0 * edges / n as f64]
}

#[test]
fn features_match_brute_force_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..500 {
        let n = rng.gen_range(2..40);
        let parents: Vec<usize> = (1..n).map(|i| rng.gen_range(0..i)).collect();
        let cascade = support::cascade(&parents);
        let tree = to_tree(&cascade).unwrap();
        let f = structural_features(&tree).unwrap().to_array();
        let expected = recount(&parents);
        for j in 0..5 {
            assert!((f[j] - expected[j]).abs() < 1e-12, "{parents:?}: {f:?} vs {expected:?}");
        }
    }
}

#[test]
fn probe_recovers_edges_and_leaves() {
    let cascades = generate_synthetic(&SynthConfig {
        n_cascades: 600,
        window: 3650,
        ..SynthConfig::default()
    })
    .unwrap();
    let trees: Vec<_> = cascades
        .iter()
        .map(|c| to_tree(&c.cascade).unwrap())
        .filter(|t| t.len() >= 2)
        .take(500)
        .collect();
    assert_eq!(trees.len(), 500);
    let schema = schema_from_corpus(&trees, 6, 3650).unwrap();
    let vectors: Vec<Vec<f64>> = trees
        .iter()
        .map(|t| flatten_sequence(&encode(t, &schema).unwrap(), None).unwrap())
        .collect();
    let features: Vec<_> = trees.iter().map(|t| structural_features(t).unwrap()).collect();

    let cfg = ProbeConfig { seed: 1, ..ProbeConfig::default() };
    let real = probe(&vectors, &features, &cfg).unwrap();
    let shuffled = probe(&vectors, &features, &ProbeConfig { shuffle_labels: true, ..cfg.clone() }).unwrap();
    for f in ["edges", "leaves"] {
        let (a, b) = (real.mse(f).unwrap(), shuffled.mse(f).unwrap());
        assert!(a < 0.05, "{f}: {a}");
        assert!(b >= 10.0 * a, "{f}: {b} vs {a}");
    }
    assert_eq!(real, probe(&vectors, &features, &cfg).unwrap());
}

mod support {
    use cascadecite::ingest::{Cascade, CascadeNode, PaperId};

    /// Node `i + 1` cites only `parents[i]` (and the root) on day `i + 1`.
    pub fn cascade(parents: &[usize]) -> Cascade {
        let id = |i: usize| PaperId::new(format!("n{i:04}")).unwrap();
        Cascade {
            root: id(0),
            root_time: 0,
            window_t: parents.len() as i64 + 1,
            nodes: parents
                .iter()
                .enumerate()
                .map(|(i, &p)| {
                    let mut ps = vec![id(p)];
                    if p != 0 {
                        ps.insert(0, id(0));
                    }
                    CascadeNode { id: id(i + 1), t: i as i64 + 1, parents: ps }
                })
                .collect(),
        }
    }
}
