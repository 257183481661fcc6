use depgraph::metrics::compute_metrics;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight-line evaluation with population moments, written without any
/// shared helpers.
pub fn oracle(p: &[f64], g: &[f64]) -> (f64, f64, Option<f64>, Option<f64>) {
    let n = p.len() as f64;
    let mut se = 0.0;
    let mut ae = 0.0;
    for i in 0..p.len() {
        se += (p[i] - g[i]) * (p[i] - g[i]);
        ae += (p[i] - g[i]).abs();
    }
    let mp = p.iter().sum::<f64>() / n;
    let mg = g.iter().sum::<f64>() / n;
    let mut vp = 0.0;
    let mut vg = 0.0;
    let mut c = 0.0;
    for i in 0..p.len() {
        vp += (p[i] - mp).powi(2) / n;
        vg += (g[i] - mg).powi(2) / n;
        c += (p[i] - mp) * (g[i] - mg) / n;
    }
    if vg == 0.0 {
        return ((se / n).sqrt(), ae / n, None, None);
    }
    let pcc = if vp == 0.0 { 0.0 } else { c / (vp.sqrt() * vg.sqrt()) };
    let ccc = 2.0 * c / (vp + vg + (mp - mg) * (mp - mg));
    ((se / n).sqrt(), ae / n, Some(pcc), Some(ccc))
}

pub fn fixed_cases() -> Vec<(Vec<f64>, Vec<f64>)> {
    vec![
        (vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 2.0]),
        (vec![2.0, 3.0, 4.0], vec![0.0, 1.0, 2.0]),
        (vec![1.0, -1.0], vec![-1.0, 1.0]),
        (vec![-3.0, 0.0, 3.0], vec![3.0, 0.0, -3.0]),
        (vec![5.0, 5.0, 5.0], vec![1.0, 2.0, 3.0]),
        (vec![1.0, 2.0, 3.0], vec![4.0, 4.0, 4.0]),
        (vec![10.0, 20.0, 30.0, 40.0], vec![12.0, 18.0, 33.0, 39.0]),
        (vec![0.0, 63.0], vec![63.0, 0.0]),
        (vec![7.5, 8.5, 9.5, 30.0], vec![7.0, 9.0, 10.0, 29.0]),
        (vec![1.0, 4.0, 9.0, 16.0, 25.0], vec![1.0, 2.0, 3.0, 4.0, 5.0]),
        (vec![0.1, 0.2], vec![0.3, 0.1]),
        (vec![14.0, 19.0, 20.0, 28.0, 29.0, 63.0], vec![13.0, 14.0, 19.0, 20.0, 28.0, 29.0]),
        (vec![2.0, 0.0, 2.0, 0.0], vec![1.0, 1.0, 0.0, 0.0]),
        (vec![-1.0, -2.0, -3.0], vec![-2.0, -4.0, -6.0]),
        (vec![3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0], vec![2.0, 7.0, 1.0, 8.0, 2.0, 8.0, 1.0, 8.0]),
        (vec![100.0, 0.0, 50.0], vec![50.0, 50.0, 51.0]),
        (vec![1e-3, 2e-3, 4e-3], vec![1e-3, 3e-3, 2e-3]),
        (vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]),
        (vec![6.0, 6.0], vec![6.0, 6.0]),
        (vec![42.0, 17.0, 8.0, 33.0, 25.0], vec![40.0, 20.0, 5.0, 35.0, 24.0]),
        (vec![0.5; 7], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
        (vec![-10.0, 10.0, -10.0, 10.0], vec![1.0, 2.0, 3.0, 4.0]),
    ]
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

pub fn fixed_vectors_match_the_oracle() {
    let cases = fixed_cases();
    assert!(cases.len() >= 20);
    for (p, g) in cases {
        let m = compute_metrics(&p, &g).unwrap();
        let (rmse, mae, pcc, ccc) = oracle(&p, &g);
        assert!(close(m.rmse, rmse, 1e-9), "{p:?} {g:?}");
        assert!(close(m.mae, mae, 1e-9), "{p:?} {g:?}");
        assert_eq!(m.pcc.is_some(), pcc.is_some());
        if let (Some(a), Some(b)) = (m.pcc, pcc) {
            assert!(close(a, b, 1e-9), "{p:?} {g:?}: pcc {a} vs {b}");
        }
        if let (Some(a), Some(b)) = (m.ccc, ccc) {
            assert!(close(a, b, 1e-9), "{p:?} {g:?}: ccc {a} vs {b}");
        }
        assert_eq!(m.n, p.len());
    }
}

pub fn hand_evaluated_examples() {
    let m = compute_metrics(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap();
    assert_eq!((m.rmse, m.mae, m.pcc, m.ccc), (0.0, 0.0, Some(1.0), Some(1.0)));

    // Shift by 2 on (0,1,2): covariance 2/3, both variances 2/3, squared
    // mean gap 4, so ccc = (4/3) / (4/3 + 4) = 1/4.
    let m = compute_metrics(&[2.0, 3.0, 4.0], &[0.0, 1.0, 2.0]).unwrap();
    assert!(close(m.rmse, 2.0, 1e-12) && close(m.mae, 2.0, 1e-12));
    assert!(close(m.pcc.unwrap(), 1.0, 1e-12));
    assert!(close(m.ccc.unwrap(), 0.25, 1e-12));

    let m = compute_metrics(&[1.0, 0.0, -1.0], &[-1.0, 0.0, 1.0]).unwrap();
    assert!(close(m.pcc.unwrap(), -1.0, 1e-12));
}

pub fn constant_ground_truth_is_undefined() {
    let m = compute_metrics(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]).unwrap();
    assert_eq!((m.pcc, m.ccc), (None, None));
    assert!(close(m.mae, 2.0, 1e-12));
}

pub fn invalid_inputs_are_domain_errors() {
    assert_eq!(compute_metrics(&[1.0, 2.0], &[1.0]).unwrap_err().exit_code(), 3);
    assert_eq!(compute_metrics(&[1.0], &[1.0]).unwrap_err().exit_code(), 3);
    assert_eq!(compute_metrics(&[f64::NAN, 1.0], &[1.0, 2.0]).unwrap_err().exit_code(), 3);
}

pub fn identities_hold_on_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let n = rng.random_range(2..40);
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..63.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..70.0)).collect();
        let m = compute_metrics(&p, &g).unwrap();
        assert!(m.rmse >= m.mae - 1e-12 && m.mae >= 0.0);
        let (pcc, ccc) = (m.pcc.unwrap(), m.ccc.unwrap());
        assert!((-1.0..=1.0).contains(&pcc));
        assert!(ccc.abs() <= pcc.abs() + 1e-12);

        let a = rng.random_range(0.01..10.0);
        let b = rng.random_range(-50.0..50.0);
        let q: Vec<f64> = p.iter().map(|x| a * x + b).collect();
        let m2 = compute_metrics(&q, &g).unwrap();
        assert!((m2.pcc.unwrap() - pcc).abs() < 1e-9);

        // Equal absolute errors give rmse == mae.
        let d = rng.random_range(0.0..5.0);
        let e: Vec<f64> = g.iter().enumerate().map(|(i, x)| if i % 2 == 0 { x + d } else { x - d }).collect();
        let m3 = compute_metrics(&e, &g).unwrap();
        assert!((m3.rmse - m3.mae).abs() < 1e-9);
    }
}

pub fn ccc_equals_pcc_when_moments_coincide() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let n = rng.random_range(3..30);
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..63.0)).collect();
        // A permutation of the labels has the same mean and variance.
        let mut p = g.clone();
        for i in (1..n).rev() {
            p.swap(i, rng.random_range(0..=i));
        }
        let m = compute_metrics(&p, &g).unwrap();
        assert!((m.ccc.unwrap() - m.pcc.unwrap()).abs() < 1e-9);
    }
}
