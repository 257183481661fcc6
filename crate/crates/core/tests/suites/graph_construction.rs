use std::collections::BTreeSet;

use depgraph::corpus::SliceFeatureMatrix;
use depgraph::encoders::{aggregate_sph, aggregate_spv, build_seg, build_spg, Edge};
use depgraph::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_feats(s: usize, m: usize, rng: &mut ChaCha8Rng) -> SliceFeatureMatrix {
    let data = (0..s * m).map(|_| rng.random_range(-1.0..1.0)).collect();
    SliceFeatureMatrix::new("v", Tensor::new(vec![s, m], data).unwrap()).unwrap()
}

pub fn brute_force_edges(s: usize, windows: &[usize]) -> BTreeSet<Edge> {
    let mut out = BTreeSet::new();
    for src in 0..s {
        for dst in 0..s {
            for &w in windows {
                if dst == src + w {
                    out.insert(Edge { src, dst, kind: w });
                }
            }
        }
    }
    out
}

pub fn sequential_edges_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for s in 1..=50 {
        let feats = random_feats(s, 2, &mut rng);
        for subset in 1u32..(1 << 10) {
            let windows: Vec<usize> = (1..=10).filter(|w| subset & (1 << (w - 1)) != 0).collect();
            let g = build_seg(&feats, &windows).unwrap();
            let got: BTreeSet<Edge> = g.edges.iter().copied().collect();
            assert_eq!(got.len(), g.edges.len(), "duplicate edges");
            assert_eq!(got, brute_force_edges(s, &windows), "S={s} W={windows:?}");
            let count: usize = windows.iter().map(|&w| s.saturating_sub(w)).sum();
            assert_eq!(g.edges.len(), count);
            assert_eq!(g.vertex_features, *feats.values());
        }
    }
}

pub fn sequential_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = build_seg(&random_feats(4, 3, &mut rng), &[1, 2]).unwrap();
    let want: BTreeSet<Edge> = [(0, 1, 1), (1, 2, 1), (2, 3, 1), (0, 2, 2), (1, 3, 2)]
        .into_iter()
        .map(|(src, dst, kind)| Edge { src, dst, kind })
        .collect();
    assert_eq!(g.edges.iter().copied().collect::<BTreeSet<_>>(), want);
    assert!(build_seg(&random_feats(1, 3, &mut rng), &[1, 2]).unwrap().edges.is_empty());
    assert!(build_seg(&random_feats(3, 3, &mut rng), &[5]).unwrap().edges.is_empty());
    assert_eq!(build_seg(&random_feats(3, 3, &mut rng), &[]).unwrap_err().exit_code(), 2);
}

pub fn spectral_graph_shape_is_length_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for s in [2, 31, 270, 1000] {
        let g = build_spg(&random_feats(s, 32, &mut rng), 128, 24).unwrap();
        assert_eq!(g.vertex_features.shape(), &[32, 24]);
        assert_eq!(g.num_vertices(), 32);
        assert_eq!(g.edges().len(), 32 * 31);
    }
}

pub fn spectral_graph_is_invariant_to_circular_shifts() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for s in [2, 5, 31, 64, 270] {
        let feats = random_feats(s, 6, &mut rng);
        let base = build_spg(&feats, 128, 24).unwrap();
        for _ in 0..5 {
            let shift = rng.random_range(0..s);
            let rows: Vec<Vec<f64>> = (0..s).map(|i| feats.row((i + shift) % s).to_vec()).collect();
            let shifted = build_spg(&SliceFeatureMatrix::from_rows("v", &rows).unwrap(), 128, 24).unwrap();
            for (a, b) in base.vertex_features.data().iter().zip(shifted.vertex_features.data()) {
                assert!((a - b).abs() < 1e-9, "S={s} shift={shift}");
            }
        }
    }
}

pub fn constant_column_is_dc_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut rows: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random_range(-1.0..1.0), 0.75]).collect();
    rows[3][0] = 4.0;
    let g = build_spg(&SliceFeatureMatrix::from_rows("v", &rows).unwrap(), 128, 24).unwrap();
    let v = g.vertex_features.row(1);
    assert!((v[0] - 0.75).abs() < 1e-12);
    assert!(v[1..].iter().all(|x| x.abs() < 1e-12));
}

pub fn flat_spectral_baselines_agree_with_the_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let feats = random_feats(45, 32, &mut rng);
    let g = build_spg(&feats, 128, 24).unwrap();
    let spv = aggregate_spv(&feats, 128, 24).unwrap();
    let sph = aggregate_sph(&feats, 128, 24).unwrap();
    assert_eq!(spv.len(), 768);
    assert_eq!(spv, g.vertex_features.data());
    assert_eq!(spv, sph.values.data());
}
