//! Analytic reverse passes against central finite differences.

use glyphmix::editor::{filter_apply, filter_backward, EditorDims, EditorParams, EditorPosterior};
use glyphmix::encoder::{encode_residual, encoder_backward, EncoderDims, EncoderParams};
use glyphmix::mixture::{
    batch_objective, batch_objective_grad, LambdaTable, MixtureState, ModelConfig, SeededNoise,
    Variant,
};
use glyphmix::warp::{build_attention, SpatialParams, N_SPATIAL};
use glyphmix::{ParamSet, Raster};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-4;
const TOL: f64 = 1e-3;

/// Relative error with a small floor so that vanishing gradients compare absolutely.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

fn central(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + STEP) - f(x - STEP)) / (2.0 * STEP)
}

fn random_raster(rng: &mut ChaCha8Rng, h: usize, w: usize, lo: f64, hi: f64) -> Raster<f64> {
    Raster::from_fn(h, w, |_, _| rng.random_range(lo..hi))
}

fn random_lambda(rng: &mut ChaCha8Rng) -> SpatialParams<f64> {
    SpatialParams {
        r: rng.random_range(-0.1..0.1),
        o_h: rng.random_range(-2.0..2.0),
        o_v: rng.random_range(-2.0..2.0),
        s_h: rng.random_range(-0.1..0.1),
        s_v: rng.random_range(-0.1..0.1),
        a: rng.random_range(-0.1..0.1),
    }
}

fn binary_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Raster<f64> {
    Raster::from_fn(h, w, |i, j| {
        let blob = (i as f64 - h as f64 / 2.0).abs() < 4.0 || (j as f64 - 4.0).abs() < 2.0;
        let flip = rng.random_bool(0.05);
        if blob != flip {
            1.0
        } else {
            0.0
        }
    })
}

#[test]
fn warp_gradients_wrt_lambda_and_template() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (h, w) = (12, 10);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let lambda = random_lambda(&mut rng);
        let t = random_raster(&mut rng, h, w, 0.0, 1.0);
        let g: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |l: &SpatialParams<f64>, t: &Raster<f64>| {
            let out = build_attention(l, (h, w), 0.3).unwrap().apply(t).unwrap();
            out.as_slice().iter().zip(&g).map(|(a, b)| a * b).sum::<f64>()
        };
        let att = build_attention(&lambda, (h, w), 0.3).unwrap();
        let mut gsrc = vec![0.0; h * w];
        let gl = att.backward(&t, &g, Some(&mut gsrc));
        let base = lambda.to_array();
        for c in 0..N_SPATIAL {
            let num = central(
                |v| {
                    let mut a = base;
                    a[c] = v;
                    loss(&SpatialParams::from_array(a), &t)
                },
                base[c],
            );
            worst = worst.max(rel_err(gl[c], num));
        }
        let p = rng.random_range(0..h * w);
        let num = central(
            |v| {
                let mut tt = t.clone();
                tt.as_mut_slice()[p] = v;
                loss(&lambda, &tt)
            },
            t.as_slice()[p],
        );
        worst = worst.max(rel_err(gsrc[p], num));
    }
    assert!(worst <= TOL, "worst relative error {worst:e}");
}

#[test]
fn filter_gradients_wrt_theta_z_and_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let dims = EditorDims::default();
    let (h, w) = (10, 10);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let theta = EditorParams::<f64>::init(dims, &mut rng);
        let t = random_raster(&mut rng, h, w, 0.05, 0.95);
        let z: Vec<f64> = (0..dims.z_dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        let g: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |th: &EditorParams<f64>, t: &Raster<f64>, z: &[f64]| {
            let (out, _) = filter_apply(t, z, th).unwrap();
            out.as_slice().iter().zip(&g).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, trace) = filter_apply(&t, &z, &theta).unwrap();
        let mut gtheta = EditorParams::zeros(dims);
        let grads = filter_backward(&t, &trace, &theta, &g, 1.0, Some(&mut gtheta));

        let flat = theta.flatten();
        let gflat = gtheta.flatten();
        for _ in 0..3 {
            let i = rng.random_range(0..flat.len());
            let num = central(
                |v| {
                    let mut f = flat.clone();
                    f[i] = v;
                    let mut th = theta.clone();
                    th.assign_flat(&f);
                    loss(&th, &t, &z)
                },
                flat[i],
            );
            worst = worst.max(rel_err(gflat[i], num));
        }
        let zi = rng.random_range(0..z.len());
        let num = central(
            |v| {
                let mut zz = z.clone();
                zz[zi] = v;
                loss(&theta, &t, &zz)
            },
            z[zi],
        );
        worst = worst.max(rel_err(grads.z[zi], num));
        let p = rng.random_range(0..h * w);
        let num = central(
            |v| {
                let mut tt = t.clone();
                tt.as_mut_slice()[p] = v;
                loss(&theta, &tt, &z)
            },
            t.as_slice()[p],
        );
        worst = worst.max(rel_err(grads.t_tilde[p], num));
    }
    assert!(worst <= TOL, "worst relative error {worst:e}");
}

#[test]
fn encoder_gradients_wrt_phi_and_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (h, w, z_dim, kk) = (11, 9, 6, 3);
    let dims = EncoderDims::new(h, w, z_dim, kk);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let phi = EncoderParams::<f64>::init(dims, &mut rng);
        let x = random_raster(&mut rng, h, w, -1.0, 1.0);
        let k = rng.random_range(0..kk);
        let gm: Vec<f64> = (0..z_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gv: Vec<f64> = (0..z_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |p: &EncoderParams<f64>, x: &Raster<f64>| {
            let (EditorPosterior { mu, log_var }, _) = encode_residual(x, k, p).unwrap();
            mu.iter().zip(&gm).map(|(a, b)| a * b).sum::<f64>()
                + log_var.iter().zip(&gv).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, trace) = encode_residual(&x, k, &phi).unwrap();
        let mut gphi = EncoderParams::zeros(dims);
        let gx = encoder_backward(&trace, &phi, &gm, &gv, 1.0, Some(&mut gphi));

        let flat = phi.flatten();
        let gflat = gphi.flatten();
        for _ in 0..3 {
            let i = rng.random_range(0..flat.len());
            let num = central(
                |v| {
                    let mut f = flat.clone();
                    f[i] = v;
                    let mut p = phi.clone();
                    p.assign_flat(&f);
                    loss(&p, &x)
                },
                flat[i],
            );
            worst = worst.max(rel_err(gflat[i], num));
        }
        let p = rng.random_range(0..h * w);
        let num = central(
            |v| {
                let mut xx = x.clone();
                xx.as_mut_slice()[p] = v;
                loss(&phi, &xx)
            },
            x.as_slice()[p],
        );
        worst = worst.max(rel_err(gx[p], num));
    }
    assert!(worst <= TOL, "worst relative error {worst:e}");
}

fn objective_check(variant: Variant, points: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, kk) = (12, 2);
    let mut config = ModelConfig::new(variant, kk, n);
    config.editor.z_dim = 4;
    config.editor.hidden = 8;
    let images: Vec<Raster<f64>> = (0..3).map(|_| binary_image(&mut rng, n, n)).collect();
    let batch = [0usize, 2];
    let noise = SeededNoise { seed: 5, step: 1 };
    let kl = 0.7;
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let templates = (0..kk)
            .map(|_| random_raster(&mut rng, n, n, -3.0, 3.0))
            .collect();
        let mut state = MixtureState::<f64>::init(config.clone(), templates, &mut rng).unwrap();
        state.pi_logits = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let mut table = LambdaTable::zeros(images.len(), kk);
        for d in 0..images.len() {
            for k in 0..kk {
                *table.get_mut(d, k) = random_lambda(&mut rng);
            }
        }
        let g = batch_objective_grad(&images, &batch, &state, &table, &noise, kl).unwrap();
        let value = batch_objective(&images, &batch, &state, &table, &noise, kl).unwrap();
        assert!((value - g.value).abs() < 1e-9 * value.abs().max(1.0));

        let flat = state.flatten();
        let gflat = g.params.flatten();
        for _ in 0..4 {
            let i = rng.random_range(0..flat.len());
            let num = central(
                |v| {
                    let mut f = flat.clone();
                    f[i] = v;
                    let mut s = state.clone();
                    s.assign_flat(&f);
                    batch_objective(&images, &batch, &s, &table, &noise, kl).unwrap()
                },
                flat[i],
            );
            worst = worst.max(rel_err(gflat[i], num));
        }
        if variant.uses_warp() {
            let pos = rng.random_range(0..batch.len());
            let (d, k) = (batch[pos], rng.random_range(0..kk));
            let c = rng.random_range(0..N_SPATIAL);
            let base = table.get(d, k).to_array();
            let num = central(
                |v| {
                    let mut a = base;
                    a[c] = v;
                    let mut t = table.clone();
                    *t.get_mut(d, k) = SpatialParams::from_array(a);
                    batch_objective(&images, &batch, &state, &t, &noise, kl).unwrap()
                },
                base[c],
            );
            let analytic = g.responsibilities[pos][k] * g.lambda_grads[pos][k][c];
            worst = worst.max(rel_err(analytic, num));
        }
    }
    worst
}

#[test]
fn objective_gradients_full() {
    let worst = objective_check(Variant::Full, 100, 21);
    assert!(worst <= TOL, "worst relative error {worst:e}");
}

#[test]
fn objective_gradients_ablations() {
    for (i, variant) in [
        Variant::NoResidual,
        Variant::VaeOnly,
        Variant::LambdaOnly,
        Variant::Ocular,
    ]
    .into_iter()
    .enumerate()
    {
        let worst = objective_check(variant, 25, 30 + i as u64);
        assert!(worst <= TOL, "{variant}: worst relative error {worst:e}");
    }
}
