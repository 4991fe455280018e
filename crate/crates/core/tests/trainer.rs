use glyphmix::corpus::GlyphImage;
use glyphmix::editor::EditorParams;
use glyphmix::encoder::EncoderParams;
use glyphmix::mixture::{
    batch_objective, component_elbo, LambdaTable, MixtureState, ModelConfig, OcularGrid,
    SeededNoise, Variant,
};
use glyphmix::synth::{builtin_casts, generate_corpus, PerturbConfig};
use glyphmix::trainer::{icm_step, lambda_gradient, train, TrainConfig};
use glyphmix::warp::{SpatialParams, N_SPATIAL};
use glyphmix::{Error, Raster};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_corpus(per_cast: usize, seed: u64) -> Vec<GlyphImage> {
    let cfg = PerturbConfig {
        examples_per_cast: per_cast,
        ..PerturbConfig::default()
    };
    generate_corpus(&builtin_casts('F', 32).unwrap(), &cfg, seed).unwrap().0
}

#[test]
fn template_converges_to_a_repeated_image() {
    let img = builtin_casts('T', 32).unwrap().remove(1);
    let dataset = vec![img.clone(); 64];
    let cfg = TrainConfig {
        variant: Variant::Ocular,
        k: 1,
        epochs: 200,
        ocular: OcularGrid {
            max_offset: 0,
            exponents: vec![1.0],
        },
        ..TrainConfig::default()
    };
    let out = train::<f64>(&dataset, &cfg).unwrap();
    let err = out.state.template_probs(0).max_abs_diff(&img.pixels);
    assert!(err <= 0.05, "max abs error {err}");
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let data = small_corpus(6, 1);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 5,
        seed: 9,
        ..TrainConfig::default()
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train::<f64>(&data, &cfg).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a.state, b.state);
    assert_eq!(a.lambdas, b.lambdas);
    assert_eq!(
        serde_json::to_string(&a.trace).unwrap(),
        serde_json::to_string(&b.trace).unwrap()
    );
    let other = train::<f64>(&data, &TrainConfig { seed: 10, ..cfg.clone() }).unwrap();
    assert_ne!(a.state, other.state);
}

#[test]
fn every_variant_trains_to_finite_parameters() {
    let data = small_corpus(4, 2);
    for variant in Variant::ALL {
        let cfg = TrainConfig {
            variant,
            epochs: 2,
            batch_size: 4,
            kl_warmup_epochs: 1,
            ..TrainConfig::default()
        };
        let out = train::<f64>(&data, &cfg).unwrap();
        assert_eq!(out.trace.len(), 2);
        assert!(out.trace.iter().all(|l| l.objective.is_finite()));
        assert_eq!(out.state.components(), 3);
        if !variant.uses_warp() {
            assert!(out.lambdas.row(0).iter().all(|l| *l == SpatialParams::zero()));
        }
    }
}

#[test]
fn single_precision_training_runs() {
    let data = small_corpus(3, 3);
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let out = train::<f32>(&data, &cfg).unwrap();
    assert!(out.trace[0].objective.is_finite());
}

#[test]
fn invalid_inputs_are_rejected() {
    let data = small_corpus(2, 4);
    assert!(matches!(
        train::<f64>(&[], &TrainConfig::default()),
        Err(Error::Argument(_))
    ));
    let mut mixed = data.clone();
    mixed[0].char_class = "Q".into();
    assert!(train::<f64>(&mixed, &TrainConfig::default()).is_err());
    for bad in [
        TrainConfig { epochs: 0, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { k: 0, ..TrainConfig::default() },
        TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
        TrainConfig { lambda_learning_rate: -1.0, ..TrainConfig::default() },
    ] {
        assert!(train::<f64>(&data, &bad).is_err());
    }
}

#[test]
fn kl_weight_ramps_linearly_per_step() {
    let cfg = TrainConfig {
        kl_warmup_epochs: 4,
        ..TrainConfig::default()
    };
    assert_eq!(cfg.kl_weight(0, 10), 0.0);
    assert!((cfg.kl_weight(20, 10) - 0.5).abs() < 1e-15);
    assert_eq!(cfg.kl_weight(40, 10), 1.0);
    assert_eq!(cfg.kl_weight(400, 10), 1.0);
    let none = TrainConfig {
        kl_warmup_epochs: 0,
        ..TrainConfig::default()
    };
    assert_eq!(none.kl_weight(0, 10), 1.0);
}

fn random_state(variant: Variant, rng: &mut ChaCha8Rng) -> (MixtureState<f64>, Vec<Raster<f64>>) {
    let config = ModelConfig::new(variant, 2, 16);
    let templates = (0..2)
        .map(|_| Raster::from_fn(16, 16, |_, _| rng.random_range(-3.0..3.0)))
        .collect();
    let state = MixtureState::init(config, templates, rng).unwrap();
    let images = (0..2)
        .map(|_| Raster::from_fn(16, 16, |_, _| if rng.random_bool(0.3) { 1.0 } else { 0.0 }))
        .collect();
    (state, images)
}

#[test]
fn backtracking_icm_never_decreases_the_component_elbo() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for variant in [Variant::Full, Variant::LambdaOnly] {
        let (state, images) = random_state(variant, &mut rng);
        let noise: Vec<f64> = (0..state.config.editor.z_dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        for x in &images {
            for k in 0..2 {
                let mut gamma = SpatialParams::zero();
                for _ in 0..5 {
                    let before = component_elbo(x, k, &gamma, &state, &noise).unwrap();
                    gamma = icm_step(x, k, &gamma, &state, 0.5, true, &noise).unwrap();
                    let after = component_elbo(x, k, &gamma, &state, &noise).unwrap();
                    assert!(after >= before, "{variant}: {after} < {before}");
                }
            }
        }
    }
}

#[test]
fn icm_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (state, images) = random_state(Variant::Full, &mut rng);
    let noise = vec![0.2; state.config.editor.z_dim];
    let gamma = SpatialParams {
        r: 0.02,
        o_h: 0.4,
        o_v: -0.7,
        s_h: 0.01,
        s_v: 0.03,
        a: -0.02,
    };
    let g = lambda_gradient(&images[0], 1, &gamma, &state, &noise).unwrap();
    let base = gamma.to_array();
    for c in 0..N_SPATIAL {
        let f = |v: f64| {
            let mut a = base;
            a[c] = v;
            component_elbo(&images[0], 1, &SpatialParams::from_array(a), &state, &noise).unwrap()
        };
        let num = (f(base[c] + 1e-4) - f(base[c] - 1e-4)) / 2e-4;
        let rel = (g[c] - num).abs() / g[c].abs().max(num.abs()).max(1e-4);
        assert!(rel <= 1e-3, "coordinate {c}: {} vs {num}", g[c]);
    }
}

#[test]
fn flat_likelihood_leaves_gamma_at_the_prior_mode() {
    let config = ModelConfig::new(Variant::LambdaOnly, 1, 12);
    let mut state = MixtureState::<f64>::zeros(config).unwrap();
    state.templates[0] = Raster::filled(12, 12, -20.0);
    let x = Raster::zeros(12, 12);
    let gamma = icm_step(&x, 0, &SpatialParams::zero(), &state, 0.5, false, &[]).unwrap();
    for v in gamma.to_array() {
        assert!(v.abs() < 1e-12, "{gamma:?}");
    }
}

#[test]
fn full_variant_without_editor_matches_lambda_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut full, images) = random_state(Variant::Full, &mut rng);
    full.editor = EditorParams::identity(full.config.editor);
    full.encoder = EncoderParams::zeros(full.config.encoder_dims());
    let mut lambda_only = full.clone();
    lambda_only.config.variant = Variant::LambdaOnly;

    let mut table = LambdaTable::zeros(images.len(), 2);
    for d in 0..images.len() {
        for k in 0..2 {
            *table.get_mut(d, k) = SpatialParams::offset(rng.random_range(-1.0..1.0), 0.3);
        }
    }
    let noise = SeededNoise { seed: 1, step: 0 };
    let batch = [0, 1];
    let a = batch_objective(&images, &batch, &full, &table, &noise, 1.0).unwrap();
    let b = batch_objective(&images, &batch, &lambda_only, &table, &noise, 1.0).unwrap();
    assert!((a - b).abs() <= 1e-9 * b.abs(), "{a} vs {b}");
}

#[test]
fn moving_average_loss_does_not_rise_over_long_windows() {
    // one epoch is ten steps here: 50 steps = 5 epochs, 500 steps = 50 epochs
    let data = generate_corpus(&builtin_casts('F', 32).unwrap(), &PerturbConfig::default(), 0)
        .unwrap()
        .0;
    let cfg = TrainConfig {
        variant: Variant::LambdaOnly,
        epochs: 60,
        ..TrainConfig::default()
    };
    assert_eq!(data.len().div_ceil(cfg.batch_size), 10);
    let out = train::<f64>(&data, &cfg).unwrap();
    let loss: Vec<f64> = out.trace.iter().map(|l| -l.objective).collect();
    let avg: Vec<f64> = loss.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    for t in 0..avg.len() - 50 {
        assert!(avg[t + 50] <= avg[t], "epoch {t}: {} -> {}", avg[t], avg[t + 50]);
    }
}
