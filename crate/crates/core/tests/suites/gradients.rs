use depgraph::corpus::{Frames, SeverityCategory, ThinSlice};
use depgraph::dfe::{init_params, loss_and_gradients, LossWeights, NsConfig, ShortTermConfig, TrainingSlice};
use depgraph::mtb::{MtbConfig, Ratio};
use depgraph::params::Params;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_config(rng: &mut ChaCha8Rng) -> ShortTermConfig {
    let three = rng.random_bool(0.5);
    let (scales, factors, slice_length) = if three {
        (vec![Ratio::ONE, Ratio::new(1, 2).unwrap(), Ratio::new(3, 4).unwrap()], vec![1, 2, 3], 6)
    } else {
        (vec![Ratio::ONE, Ratio::new(1, 2).unwrap()], vec![1, 4], 8)
    };
    let k = factors.len();
    let mtb = MtbConfig {
        slice_length,
        height: 8,
        width: rng.random_range(6..=8),
        channels: rng.random_range(1..=2),
        spatial_scales: scales,
        temporal_factors: factors,
        branch_widths: (0..k).map(|_| rng.random_range(2..=3)).collect(),
        conv_depth: rng.random_range(1..=2),
        aligned_channels: 2,
        pooled_size: 2,
        output_dim: rng.random_range(3..=4),
    };
    ShortTermConfig {
        mtb,
        ns: NsConfig {
            encoder_widths: vec![rng.random_range(4..=6), 3],
            decoder_widths: vec![5],
        },
        weights: LossWeights {
            w1: rng.random_range(0.5..1.5),
            w2: rng.random_range(0.5..1.5),
            w3: rng.random_range(0.5..1.5),
            w4: rng.random_range(0.5..1.5),
        },
        batch_size: 3,
        target_scale: 63.0,
        ..ShortTermConfig::default()
    }
}

pub fn random_batch(cfg: &ShortTermConfig, rng: &mut ChaCha8Rng) -> Vec<TrainingSlice> {
    let m = &cfg.mtb;
    let n = rng.random_range(1..=3);
    (0..n)
        .map(|i| {
            let shape = [m.slice_length, m.height, m.width, m.channels];
            let data = (0..shape.iter().product()).map(|_| rng.random::<f32>()).collect();
            TrainingSlice {
                slice: ThinSlice {
                    frames: Frames::new(shape, data).unwrap(),
                    parent_id: format!("v{i}"),
                    index: 0,
                },
                bdi: rng.random_range(20.0..=28.0),
                category: SeverityCategory::Moderate,
            }
        })
        .collect()
}

/// Moves every bias off zero so no rectifier input sits on its kink.
pub fn jitter_biases(params: &mut Params, rng: &mut ChaCha8Rng) {
    for (name, t) in params.iter_mut() {
        if name.ends_with(".b") {
            for v in t.data_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
    }
}

pub fn loss(params: &Params, cfg: &ShortTermConfig, batch: &[TrainingSlice]) -> f64 {
    loss_and_gradients(params, cfg, batch).unwrap().0.l_short
}

pub fn short_term_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for config_index in 0..5 {
        let cfg = random_config(&mut rng);
        let mut params = init_params(&cfg, rng.random_range(10.0..40.0), &mut rng).unwrap();
        jitter_biases(&mut params, &mut rng);
        let batch = random_batch(&cfg, &mut rng);
        let (_, grads) = loss_and_gradients(&params, &cfg, &batch).unwrap();
        assert_eq!(grads.len(), params.len(), "every parameter receives a gradient");

        let h = 1e-5;
        for name in params.names().cloned().collect::<Vec<_>>() {
            let len = params.get(&name).unwrap().len();
            let picks: Vec<usize> = if len <= 4 {
                (0..len).collect()
            } else {
                (0..4).map(|_| rng.random_range(0..len)).collect()
            };
            let (mut diff, mut scale) = (0.0, 0.0);
            for &i in &picks {
                let mut p = params.clone();
                let orig = p.get(&name).unwrap().data()[i];
                p.get_mut(&name).unwrap().data_mut()[i] = orig + h;
                let up = loss(&p, &cfg, &batch);
                p.get_mut(&name).unwrap().data_mut()[i] = orig - h;
                let down = loss(&p, &cfg, &batch);
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads[&name].data()[i];
                diff += (numeric - analytic).powi(2);
                scale += numeric.powi(2).max(analytic.powi(2));
            }
            let (diff, scale) = (diff.sqrt(), scale.sqrt());
            if scale < 1e-7 {
                assert!(diff < 1e-7, "config {config_index} `{name}`: {diff}");
                continue;
            }
            assert!(
                diff / scale < 1e-4,
                "config {config_index} `{name}`: relative error {} (diff {diff:e}, scale {scale:e})",
                diff / scale
            );
        }
    }
}
