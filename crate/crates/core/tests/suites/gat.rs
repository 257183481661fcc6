use depgraph::encoders::{Edge, SequentialGraph, SpectralGraph, VideoGraph};
use depgraph::params::Params;
use depgraph::regressor::{
    gat_gradients, gat_layer, gat_predict, init_gat, readout_mean, relations, train_graph_head, GatConfig,
    HeadConfig, Relation,
};
use depgraph::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn spg(x: Tensor) -> VideoGraph {
    let n = x.shape()[0];
    VideoGraph::Spectral(SpectralGraph {
        vertex_features: x,
        channel_ids: (0..n).collect(),
    })
}

pub fn seg(x: Tensor, edges: Vec<Edge>, windows: Vec<usize>) -> VideoGraph {
    VideoGraph::Sequential(SequentialGraph {
        vertex_features: x,
        edges,
        window_set: windows,
    })
}

pub fn chain_seg(x: Tensor, windows: &[usize]) -> VideoGraph {
    let n = x.shape()[0];
    let mut edges = Vec::new();
    for &w in windows {
        for src in 0..n.saturating_sub(w) {
            edges.push(Edge { src, dst: src + w, kind: w });
        }
    }
    seg(x, edges, windows.to_vec())
}

pub fn keys(g: &VideoGraph) -> Vec<usize> {
    match g {
        VideoGraph::Spectral(_) => vec![0],
        VideoGraph::Sequential(s) => s.window_set.clone(),
    }
}

pub fn small_cfg() -> GatConfig {
    GatConfig {
        heads: 2,
        hidden_dim: 5,
        fc_widths: vec![6, 4, 1],
        leaky_slope: 0.2,
    }
}

/// Randomises every parameter, biases included.
pub fn random_params(cfg: &GatConfig, in_dim: usize, keys: &[usize], rng: &mut ChaCha8Rng) -> Params {
    let mut p = init_gat(cfg, in_dim, keys, rng).unwrap();
    for (_, t) in p.iter_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(-0.8..0.8);
        }
    }
    p
}

pub fn get(p: &Params, name: &str) -> Tensor {
    p.get(name).unwrap().clone()
}

/// Independent loop-based evaluation of attention, readout and FC stack.
pub fn oracle_predict(graph: &VideoGraph, p: &Params, cfg: &GatConfig) -> f64 {
    let x = graph.vertex_features();
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let h = cfg.hidden_dim;
    let mut neighbours: Vec<(usize, Vec<Vec<usize>>)> = Vec::new();
    match graph {
        VideoGraph::Spectral(_) => neighbours.push((0, (0..n).map(|_| (0..n).collect()).collect())),
        VideoGraph::Sequential(g) => {
            for &w in &g.window_set {
                let mut nb: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
                for e in g.edges.iter().filter(|e| e.kind == w) {
                    nb[e.dst].push(e.src);
                }
                neighbours.push((w, nb));
            }
        }
    }
    let mut out = vec![vec![0.0; h]; n];
    for head in 0..cfg.heads {
        for (key, nb) in &neighbours {
            let prefix = format!("gat.r{key}.h{head}");
            let (w, ad, asrc) = (get(p, &format!("{prefix}.w")), get(p, &format!("{prefix}.a_dst")), get(p, &format!("{prefix}.a_src")));
            let z: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..h).map(|r| (0..d).map(|c| w.get2(r, c) * x.get2(i, c)).sum()).collect())
                .collect();
            let sd: Vec<f64> = z.iter().map(|zi| (0..h).map(|r| ad.data()[r] * zi[r]).sum()).collect();
            let ss: Vec<f64> = z.iter().map(|zi| (0..h).map(|r| asrc.data()[r] * zi[r]).sum()).collect();
            for i in 0..n {
                let logits: Vec<f64> = nb[i]
                    .iter()
                    .map(|&j| {
                        let e = sd[i] + ss[j];
                        if e > 0.0 {
                            e
                        } else {
                            cfg.leaky_slope * e
                        }
                    })
                    .collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = logits.iter().map(|l| (l - m).exp()).sum();
                for (k, &j) in nb[i].iter().enumerate() {
                    let a = (logits[k] - m).exp() / total;
                    for r in 0..h {
                        out[i][r] += a * z[j][r] / cfg.heads as f64;
                    }
                }
            }
        }
    }
    let b = get(p, "gat.b");
    let mut pooled = vec![0.0; h];
    for row in &out {
        for r in 0..h {
            pooled[r] += (row[r] + b.data()[r]).max(0.0) / n as f64;
        }
    }
    let mut v = pooled;
    for layer in 0..cfg.fc_widths.len() {
        let (w, bias) = (get(p, &format!("fc{layer}.w")), get(p, &format!("fc{layer}.b")));
        let mut next: Vec<f64> = (0..w.shape()[0])
            .map(|r| bias.data()[r] + (0..v.len()).map(|c| w.get2(r, c) * v[c]).sum::<f64>())
            .collect();
        if layer + 1 < cfg.fc_widths.len() {
            next.iter_mut().for_each(|x| *x = x.max(0.0));
        }
        v = next;
    }
    v[0]
}

pub fn prediction_matches_the_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = small_cfg();
    for _ in 0..20 {
        let n = rng.random_range(1..7);
        let x = random_matrix(n, 3, &mut rng);
        for g in [spg(x.clone()), chain_seg(x, &[1, 2])] {
            let p = random_params(&cfg, 3, &keys(&g), &mut rng);
            let got = gat_predict(&g, &p, &cfg).unwrap();
            let want = oracle_predict(&g, &p, &cfg);
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }
}

pub fn two_vertex_hand_example() {
    // x0 = (1, 0), x1 = (0, 2), W = I, a_dst = (0.5, 0), a_src = (0, −1).
    // Destination scores (0.5, 0), source scores (0, −2); logits after the
    // leaky rectifier: row 0 (0.5, −0.3), row 1 (0, −0.4).
    let cfg = GatConfig {
        heads: 1,
        hidden_dim: 2,
        fc_widths: vec![1, 1, 1],
        leaky_slope: 0.2,
    };
    let mut p = init_gat(&cfg, 2, &[0], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    p.insert("gat.r0.h0.w", Tensor::identity(2));
    p.insert("gat.r0.h0.a_dst", Tensor::matrix(2, 1, vec![0.5, 0.0]).unwrap());
    p.insert("gat.r0.h0.a_src", Tensor::matrix(2, 1, vec![0.0, -1.0]).unwrap());
    let x = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap();
    let g = spg(x.clone());
    let out = gat_layer(&x, &relations(&g), &p, &cfg).unwrap();

    let a00 = 1.0 / (1.0 + (-0.8f64).exp());
    let a01 = 1.0 - a00;
    let a10 = 1.0 / (1.0 + (-0.4f64).exp());
    let a11 = 1.0 - a10;
    let att = out.attention[0].data();
    for (got, want) in att.iter().zip([a00, a01, a10, a11]) {
        assert!((got - want).abs() < 1e-9);
    }
    let want = [a00, 2.0 * a01, a10, 2.0 * a11];
    for (got, want) in out.features.data().iter().zip(want) {
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

pub fn attention_rows_are_normalised_over_neighbourhoods() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = small_cfg();
    for _ in 0..20 {
        let n = rng.random_range(1..12);
        let x = random_matrix(n, 4, &mut rng);
        for g in [spg(x.clone()), chain_seg(x.clone(), &[1, 3])] {
            let p = random_params(&cfg, 4, &keys(&g), &mut rng);
            let rels = relations(&g);
            let out = gat_layer(&x, &rels, &p, &cfg).unwrap();
            for (k, att) in out.attention.iter().enumerate() {
                let mask = &rels[k % rels.len()].mask;
                for i in 0..n {
                    let row = &att.data()[i * n..(i + 1) * n];
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    for j in 0..n {
                        if !mask[i * n + j] {
                            assert_eq!(row[j], 0.0);
                        }
                    }
                }
            }
        }
    }
}

pub fn prediction_is_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = GatConfig::default();
    let x = random_matrix(32, 24, &mut rng);
    let p = random_params(&cfg, 24, &[0], &mut rng);
    let base = gat_predict(&spg(x.clone()), &p, &cfg).unwrap();
    for _ in 0..100 {
        let mut perm: Vec<usize> = (0..32).collect();
        perm.shuffle(&mut rng);
        let rows: Vec<f64> = perm.iter().flat_map(|&i| x.row(i).to_vec()).collect();
        let got = gat_predict(&spg(Tensor::new(vec![32, 24], rows).unwrap()), &p, &cfg).unwrap();
        assert!((got - base).abs() < 1e-6);
    }

    // Sequential graphs: relabel vertices and edges consistently.
    let g = chain_seg(random_matrix(9, 4, &mut rng), &[1, 2, 4]);
    let p = random_params(&small_cfg(), 4, &[1, 2, 4], &mut rng);
    let base = gat_predict(&g, &p, &small_cfg()).unwrap();
    let VideoGraph::Sequential(s) = &g else { unreachable!() };
    for _ in 0..100 {
        let mut perm: Vec<usize> = (0..9).collect();
        perm.shuffle(&mut rng);
        let mut inv = [0; 9];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let rows: Vec<f64> = perm.iter().flat_map(|&i| s.vertex_features.row(i).to_vec()).collect();
        let edges = s
            .edges
            .iter()
            .map(|e| Edge {
                src: inv[e.src],
                dst: inv[e.dst],
                kind: e.kind,
            })
            .collect();
        let permuted = seg(Tensor::new(vec![9, 4], rows).unwrap(), edges, s.window_set.clone());
        assert!((gat_predict(&permuted, &p, &small_cfg()).unwrap() - base).abs() < 1e-6);
    }
}

pub fn zeroed_window_parameters_equal_a_graph_without_that_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = small_cfg();
    for _ in 0..10 {
        let x = random_matrix(10, 3, &mut rng);
        let full = chain_seg(x.clone(), &[1, 2, 4]);
        let mut p = random_params(&cfg, 3, &[1, 2, 4], &mut rng);
        for head in 0..cfg.heads {
            for part in ["w", "a_dst", "a_src"] {
                let name = format!("gat.r2.h{head}.{part}");
                let shape = p.get(&name).unwrap().shape().to_vec();
                p.insert(name, Tensor::zeros(&shape));
            }
        }
        let ablated = chain_seg(x, &[1, 4]);
        let a = gat_predict(&full, &p, &cfg).unwrap();
        let b = gat_predict(&ablated, &p, &cfg).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

pub fn zero_cases_and_readout() {
    let cfg = small_cfg();
    let mut p = init_gat(&cfg, 3, &[0], &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    p.zero_all();
    let x = Tensor::matrix(1, 3, vec![0.3, -1.0, 2.0]).unwrap();
    let out = gat_layer(&x, &[Relation { key: 0, mask: vec![true] }], &p, &cfg).unwrap();
    assert!(out.features.data().iter().all(|&v| v == 0.0));
    p.get_mut("fc2.b").unwrap().data_mut()[0] = -4.5;
    assert_eq!(gat_predict(&spg(random_matrix(5, 3, &mut ChaCha8Rng::seed_from_u64(6))), &p, &cfg).unwrap(), -4.5);

    assert_eq!(readout_mean(&Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap()).unwrap(), vec![3.0, 4.0]);
    assert_eq!(readout_mean(&Tensor::matrix(2, 2, vec![0.0, 0.0, 2.0, 4.0]).unwrap()).unwrap(), vec![1.0, 2.0]);
    assert_eq!(readout_mean(&Tensor::zeros(&[0, 2])).unwrap_err().exit_code(), 3);
}

pub fn feature_width_mismatch_is_a_config_error() {
    let cfg = small_cfg();
    let p = init_gat(&cfg, 3, &[0], &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let g = spg(random_matrix(4, 5, &mut ChaCha8Rng::seed_from_u64(8)));
    assert_eq!(gat_predict(&g, &p, &cfg).unwrap_err().exit_code(), 2);
}

pub fn head_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = small_cfg();
    for case in 0..6 {
        let n = rng.random_range(2..=6);
        let x = random_matrix(n, 3, &mut rng);
        let g = if case % 2 == 0 { spg(x) } else { chain_seg(x, &[1, 2]) };
        let p = random_params(&cfg, 3, &keys(&g), &mut rng);
        let (_, grads) = gat_gradients(&g, &p, &cfg).unwrap();
        let h = 1e-5;
        for (name, t) in p.iter() {
            let (mut diff, mut scale) = (0.0, 0.0);
            for i in 0..t.len() {
                let mut q = p.clone();
                q.get_mut(name).unwrap().data_mut()[i] += h;
                let up = gat_predict(&g, &q, &cfg).unwrap();
                q.get_mut(name).unwrap().data_mut()[i] -= 2.0 * h;
                let down = gat_predict(&g, &q, &cfg).unwrap();
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads[name].data()[i];
                diff += (numeric - analytic).powi(2);
                scale += numeric.powi(2).max(analytic.powi(2));
            }
            let (diff, scale) = (diff.sqrt(), scale.sqrt());
            if scale < 1e-7 {
                assert!(diff < 1e-7, "`{name}`: {diff}");
            } else {
                assert!(diff / scale < 1e-4, "case {case} `{name}`: relative error {}", diff / scale);
            }
        }
    }
}

pub fn synthetic_spgs(count: usize, rng: &mut ChaCha8Rng) -> Vec<(VideoGraph, f64)> {
    (0..count)
        .map(|_| {
            let y: f64 = rng.random_range(0.0..63.0);
            let data = (0..8 * 6)
                .map(|i| if i % 6 == 1 { y / 63.0 } else { 0.0 } + rng.random_range(-0.1..0.1))
                .collect();
            (spg(Tensor::new(vec![8, 6], data).unwrap()), y)
        })
        .collect()
}

pub fn head_training_reduces_the_loss_and_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let train = synthetic_spgs(30, &mut rng);
    let cfg = HeadConfig {
        gat: small_cfg(),
        epochs: 10,
        ..HeadConfig::default()
    };
    let (head, log) = train_graph_head(&train, &[], &cfg, 3).unwrap();
    assert_eq!(log.step_losses.len(), 300);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    assert!(mean(&log.step_losses[250..]) < mean(&log.step_losses[..50]));

    let (again, _) = train_graph_head(&train, &[], &cfg, 3).unwrap();
    assert_eq!(head.params, again.params);
}

pub fn zero_learning_rate_leaves_the_head_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let train = synthetic_spgs(5, &mut rng);
    let mut cfg = HeadConfig {
        gat: small_cfg(),
        epochs: 0,
        ..HeadConfig::default()
    };
    let (initial, _) = train_graph_head(&train, &[], &cfg, 4).unwrap();
    cfg.epochs = 2;
    cfg.optimizer.learning_rate = 0.0;
    let (trained, _) = train_graph_head(&train, &[], &cfg, 4).unwrap();
    assert_eq!(initial.params, trained.params);
}

pub fn mixed_graph_kinds_are_refused() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut items = synthetic_spgs(2, &mut rng);
    items.push((chain_seg(random_matrix(3, 6, &mut rng), &[1]), 5.0));
    let err = train_graph_head(&items, &[], &HeadConfig::default(), 0).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
