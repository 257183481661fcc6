use depgraph::corpus::SeverityCategory;
use depgraph::dfe::{compute_losses, BatchMember, LossWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn member(label: f64, p_ns: f64, p_mta: f64, f: Vec<f64>, dep: Vec<f64>, non: Vec<f64>, dec: Vec<f64>) -> BatchMember {
    BatchMember {
        category: SeverityCategory::Mild,
        label,
        p_ns,
        p_mta,
        f,
        f_dep: dep,
        f_non: non,
        f_dec: dec,
    }
}

pub struct Expected {
    ns: f64,
    mta: f64,
    sim: f64,
    dsim: f64,
    rec: f64,
}

pub fn oracle(batch: &[BatchMember]) -> Expected {
    let n = batch.len() as f64;
    let j = batch[0].f.len() as f64;
    let mut e = Expected {
        ns: 0.0,
        mta: 0.0,
        sim: 0.0,
        dsim: 0.0,
        rec: 0.0,
    };
    for (a, m) in batch.iter().enumerate() {
        e.ns += (m.p_ns - m.label).powi(2) / n;
        e.mta += (m.p_mta - m.label).powi(2) / n;
        let mut dot = 0.0;
        for k in 0..m.f_dep.len() {
            dot += m.f_dep[k] * m.f_non[k];
        }
        e.dsim += dot * dot / (n * n);
        for k in 0..m.f.len() {
            e.rec += (m.f_dec[k] - m.f[k]).powi(2) / (n * j);
        }
        for other in &batch[a + 1..] {
            for k in 0..m.f_dep.len() {
                e.sim += (m.f_dep[k] - other.f_dep[k]).powi(2) / (n * n);
            }
        }
    }
    e
}

pub fn check(batch: &[BatchMember], weights: LossWeights) {
    let got = compute_losses(batch, weights).unwrap();
    let e = oracle(batch);
    for (name, a, b) in [
        ("l_ns", got.l_ns, e.ns),
        ("l_mta", got.l_mta, e.mta),
        ("l_sim", got.l_sim, e.sim),
        ("l_dsim", got.l_dsim, e.dsim),
        ("l_rec", got.l_rec, e.rec),
    ] {
        assert!((a - b).abs() < 1e-9, "{name}: {a} vs {b}");
    }
    let total = e.ns + weights.w1 * e.mta + weights.w2 * e.sim + weights.w3 * e.dsim + weights.w4 * e.rec;
    assert!((got.l_short - total).abs() < 1e-9);
}

pub fn every_term_is_zero_in_its_zero_case() {
    let f = vec![0.5, -1.0, 2.0];
    let batch = vec![
        member(10.0, 10.0, 10.0, f.clone(), vec![1.0, 0.0], vec![0.0, 3.0], f.clone()),
        member(12.0, 12.0, 12.0, f.clone(), vec![1.0, 0.0], vec![0.0, -2.0], f.clone()),
    ];
    let l = compute_losses(&batch, LossWeights::default()).unwrap();
    assert_eq!((l.l_ns, l.l_mta, l.l_sim, l.l_dsim, l.l_rec, l.l_short), (0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
}

pub fn similarity_hand_value() {
    let z = vec![0.0];
    let batch = vec![
        member(0.0, 0.0, 0.0, z.clone(), vec![0.0, 0.0], vec![0.0, 0.0], z.clone()),
        member(0.0, 0.0, 0.0, z.clone(), vec![2.0, 2.0], vec![0.0, 0.0], z.clone()),
    ];
    let l = compute_losses(&batch, LossWeights::default()).unwrap();
    assert!((l.l_sim - 2.0).abs() < 1e-12);
}

pub fn difference_hand_value() {
    let z = vec![0.0];
    let batch = vec![member(0.0, 0.0, 0.0, z.clone(), vec![1.0, 1.0], vec![1.0, 1.0], z.clone())];
    let l = compute_losses(&batch, LossWeights::default()).unwrap();
    assert!((l.l_dsim - 4.0).abs() < 1e-12);
}

pub fn fixed_batches_match_straight_line_formulas() {
    let batch = vec![
        member(3.0, 4.0, 1.0, vec![1.0, 2.0, 3.0], vec![1.0, -1.0], vec![2.0, 0.5], vec![1.5, 2.0, 2.0]),
        member(5.0, 5.5, 6.0, vec![0.0, -1.0, 1.0], vec![0.0, 2.0], vec![-1.0, 1.0], vec![0.0, 0.0, 0.0]),
        member(7.0, 2.0, 7.0, vec![2.0, 2.0, 2.0], vec![3.0, 1.0], vec![0.0, 0.0], vec![2.0, 2.5, 1.0]),
    ];
    check(&batch, LossWeights::default());
    check(
        &batch,
        LossWeights {
            w1: 0.5,
            w2: 2.0,
            w3: 0.0,
            w4: 3.0,
        },
    );
    check(&batch[..1], LossWeights::default());
}

pub fn random_batches_match_straight_line_formulas() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let n = rng.random_range(1..6);
        let (j, d) = (rng.random_range(1..8), rng.random_range(1..5));
        let mut v = |k: usize| (0..k).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>();
        let batch: Vec<BatchMember> = (0..n)
            .map(|_| {
                let s = v(3);
                member(s[0] * 10.0, s[1] * 10.0, s[2] * 10.0, v(j), v(d), v(d), v(j))
            })
            .collect();
        check(&batch, LossWeights::default());
    }
}

pub fn permutation_and_scaling_properties() {
    let batch = vec![
        member(1.0, 2.0, 0.0, vec![1.0], vec![1.0, 2.0], vec![0.5, 0.5], vec![0.0]),
        member(1.0, 1.0, 3.0, vec![2.0], vec![-1.0, 0.0], vec![2.0, 1.0], vec![1.0]),
        member(1.0, 0.0, 1.0, vec![0.0], vec![0.5, 3.0], vec![1.0, -1.0], vec![2.0]),
    ];
    let base = compute_losses(&batch, LossWeights::default()).unwrap();
    let mut rev = batch.clone();
    rev.reverse();
    let perm = compute_losses(&rev, LossWeights::default()).unwrap();
    assert!((base.l_short - perm.l_short).abs() < 1e-12);
    assert!((base.l_sim - perm.l_sim).abs() < 1e-12);

    let c = 3.0;
    let scaled: Vec<BatchMember> = batch
        .iter()
        .map(|m| BatchMember {
            f_dep: m.f_dep.iter().map(|x| c * x).collect(),
            ..m.clone()
        })
        .collect();
    let s = compute_losses(&scaled, LossWeights::default()).unwrap();
    assert!((s.l_dsim - c * c * base.l_dsim).abs() < 1e-9);
}

pub fn mixed_categories_and_empty_batches_are_refused() {
    let z = vec![0.0];
    let mut other = member(0.0, 0.0, 0.0, z.clone(), z.clone(), z.clone(), z.clone());
    other.category = SeverityCategory::Severe;
    let batch = vec![member(0.0, 0.0, 0.0, z.clone(), z.clone(), z.clone(), z.clone()), other];
    assert_eq!(compute_losses(&batch, LossWeights::default()).unwrap_err().exit_code(), 3);
    assert_eq!(compute_losses(&[], LossWeights::default()).unwrap_err().exit_code(), 3);
}
