use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::raster::Raster;
use crate::scalar::{log_sum_exp, Scalar};
use crate::warp::{SpatialParams, N_SPATIAL};

use super::component::EvalContext;
use super::ocular;
use super::{LambdaTable, MixtureState, Variant};

/// Examples per parallel work unit. Fixed so that the reduction order, and
/// hence every floating point result, is independent of the thread count.
const CHUNK: usize = 4;

/// Supplies the standard normal draw used for example `d`, component `k`.
pub trait NoiseSource<S>: Sync {
    fn fill(&self, example: usize, component: usize, out: &mut [S]);
}

impl<S, F> NoiseSource<S> for F
where
    F: Fn(usize, usize, &mut [S]) + Sync,
{
    fn fill(&self, example: usize, component: usize, out: &mut [S]) {
        self(example, component, out)
    }
}

/// `ε = 0`: the posterior mean is used as `z`.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroNoise;

impl<S: Scalar> NoiseSource<S> for ZeroNoise {
    fn fill(&self, _: usize, _: usize, out: &mut [S]) {
        out.iter_mut().for_each(|v| *v = S::zero());
    }
}

/// Counter-based noise: the draw depends only on `(seed, step, d, k)`.
#[derive(Clone, Copy, Debug)]
pub struct SeededNoise {
    pub seed: u64,
    pub step: u64,
}

impl<S: Scalar> NoiseSource<S> for SeededNoise {
    fn fill(&self, example: usize, component: usize, out: &mut [S]) {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
            self.seed,
            self.step,
            example as u64,
            component as u64,
        ]));
        for v in out.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v = S::lit(e);
        }
    }
}

/// SplitMix64-style combination of several integers into one seed.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15_u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

fn check_batch<S: Scalar>(
    images: &[Raster<S>],
    batch: &[usize],
    state: &MixtureState<S>,
    lambdas: &LambdaTable<S>,
) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    if lambdas.components() != state.components() {
        return Err(Error::arg("lambda table has the wrong number of components"));
    }
    for &d in batch {
        if d >= images.len() {
            return Err(Error::arg(format!("example {d} out of range")));
        }
        if state.variant() != Variant::Ocular && d >= lambdas.examples() {
            return Err(Error::arg(format!("lambda table has no row for example {d}")));
        }
    }
    Ok(())
}

/// `log π_k + ELBO_k` for every component.
pub fn component_scores<S: Scalar>(
    x: &Raster<S>,
    state: &MixtureState<S>,
    lambda_row: &[SpatialParams<S>],
    noise: &dyn Fn(usize, &mut [S]),
) -> Result<Vec<S>> {
    if state.variant() == Variant::Ocular {
        let ll = ocular::ocular_component_logliks(x, state)?;
        let ctx = EvalContext::new(state);
        return Ok(ll.iter().zip(&ctx.log_pi).map(|(&a, &b)| a + b).collect());
    }
    let ctx = EvalContext::new(state);
    let mut eps = vec![S::zero(); state.config.editor.z_dim];
    (0..state.components())
        .map(|k| {
            noise(k, &mut eps);
            Ok(ctx.log_pi[k] + ctx.forward(x, k, &lambda_row[k], &eps, S::one())?.elbo())
        })
        .collect()
}

/// `argmax_k log π_k + ELBO_k` with `z` at the posterior mean; ties go to the smaller `k`.
pub fn assign_cluster<S: Scalar>(
    x: &Raster<S>,
    state: &MixtureState<S>,
    lambda_row: &[SpatialParams<S>],
) -> Result<usize> {
    let scores = component_scores(x, state, lambda_row, &|_, e: &mut [S]| {
        e.iter_mut().for_each(|v| *v = S::zero())
    })?;
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = k;
        }
    }
    Ok(best)
}

/// `Σ_d log Σ_k exp(log π_k + ELBO_k(x_d, γ_{k,d}))`.
pub fn batch_objective<S: Scalar>(
    images: &[Raster<S>],
    batch: &[usize],
    state: &MixtureState<S>,
    lambdas: &LambdaTable<S>,
    noise: &dyn NoiseSource<S>,
    kl_weight: S,
) -> Result<S> {
    check_batch(images, batch, state, lambdas)?;
    if state.variant() == Variant::Ocular {
        return batch
            .iter()
            .map(|&d| ocular::ocular_loglik(&images[d], state))
            .sum();
    }
    let ctx = EvalContext::new(state);
    let mut eps = vec![S::zero(); state.config.editor.z_dim];
    let mut total = S::zero();
    for &d in batch {
        let mut terms = Vec::with_capacity(state.components());
        for k in 0..state.components() {
            noise.fill(d, k, &mut eps);
            let f = ctx.forward(&images[d], k, lambdas.get(d, k), &eps, kl_weight)?;
            terms.push(ctx.log_pi[k] + f.elbo());
        }
        total += log_sum_exp(&terms);
    }
    Ok(total)
}

/// Objective value and its gradients for one batch.
#[derive(Clone, Debug)]
pub struct BatchGrad<S> {
    pub value: S,
    /// Per batch position.
    pub per_example: Vec<S>,
    /// `∂objective/∂(templates, π logits, θ, φ)`.
    pub params: MixtureState<S>,
    /// Posterior component responsibilities per batch position.
    pub responsibilities: Vec<Vec<S>>,
    /// Unweighted `∂ELBO_k/∂γ_{k,d}` per batch position and component.
    /// The objective's own gradient wrt `γ_{k,d}` is this times the responsibility.
    pub lambda_grads: Vec<Vec<[S; N_SPATIAL]>>,
}

struct ChunkResult<S> {
    grad: MixtureState<S>,
    values: Vec<S>,
    resp: Vec<Vec<S>>,
    lambda_grads: Vec<Vec<[S; N_SPATIAL]>>,
}

pub fn batch_objective_grad<S: Scalar>(
    images: &[Raster<S>],
    batch: &[usize],
    state: &MixtureState<S>,
    lambdas: &LambdaTable<S>,
    noise: &dyn NoiseSource<S>,
    kl_weight: S,
) -> Result<BatchGrad<S>> {
    check_batch(images, batch, state, lambdas)?;
    if state.variant() == Variant::Ocular {
        return ocular::ocular_batch_grad(images, batch, state);
    }
    let ctx = EvalContext::new(state);
    let kk = state.components();
    let pi = state.mixing_weights();
    let z_dim = state.config.editor.z_dim;

    let chunks: Vec<Result<ChunkResult<S>>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = state.zeros_like();
            let mut values = Vec::with_capacity(chunk.len());
            let mut resp = Vec::with_capacity(chunk.len());
            let mut lgrads = Vec::with_capacity(chunk.len());
            let mut eps = vec![S::zero(); z_dim];
            for &d in chunk {
                let x = &images[d];
                let mut fwds = Vec::with_capacity(kk);
                let mut terms = Vec::with_capacity(kk);
                for k in 0..kk {
                    noise.fill(d, k, &mut eps);
                    let f = ctx.forward(x, k, lambdas.get(d, k), &eps, kl_weight)?;
                    terms.push(ctx.log_pi[k] + f.elbo());
                    fwds.push(f);
                }
                let lse = log_sum_exp(&terms);
                let r: Vec<S> = terms.iter().map(|&t| (t - lse).exp()).collect();
                let mut lg = Vec::with_capacity(kk);
                for (k, f) in fwds.iter().enumerate() {
                    lg.push(ctx.backward(x, f, r[k], Some(&mut grad)));
                    grad.pi_logits[k] += r[k] - pi[k];
                }
                values.push(lse);
                resp.push(r);
                lgrads.push(lg);
            }
            Ok(ChunkResult {
                grad,
                values,
                resp,
                lambda_grads: lgrads,
            })
        })
        .collect();

    let mut params = state.zeros_like();
    let mut per_example = Vec::with_capacity(batch.len());
    let mut responsibilities = Vec::with_capacity(batch.len());
    let mut lambda_grads = Vec::with_capacity(batch.len());
    for chunk in chunks {
        let c = chunk?;
        params.add_scaled(S::one(), &c.grad);
        per_example.extend(c.values);
        responsibilities.extend(c.resp);
        lambda_grads.extend(c.lambda_grads);
    }
    Ok(BatchGrad {
        value: per_example.iter().copied().sum(),
        per_example,
        params,
        responsibilities,
        lambda_grads,
    })
}

/// Per-example objective with the expectation over `q(z)` estimated from
/// `samples` seeded draws and the full KL weight. The negative is the
/// reported NLL bound.
pub fn objective_estimate<S: Scalar>(
    images: &[Raster<S>],
    state: &MixtureState<S>,
    lambdas: &LambdaTable<S>,
    samples: usize,
    seed: u64,
) -> Result<Vec<S>> {
    if state.variant() == Variant::Ocular {
        return images
            .par_iter()
            .map(|x| ocular::ocular_loglik(x, state))
            .collect();
    }
    if lambdas.examples() < images.len() {
        return Err(Error::arg("lambda table smaller than dataset"));
    }
    let samples = if state.variant().uses_editor() {
        samples.max(1)
    } else {
        1
    };
    let ctx = EvalContext::new(state);
    let z_dim = state.config.editor.z_dim;
    let inv = S::one() / S::from_usize_lossy(samples);
    (0..images.len())
        .into_par_iter()
        .map(|d| {
            let mut eps = vec![S::zero(); z_dim];
            let mut terms = Vec::with_capacity(state.components());
            for k in 0..state.components() {
                let mut ll = S::zero();
                let mut rest = S::zero();
                for s in 0..samples {
                    SeededNoise {
                        seed,
                        step: s as u64,
                    }
                    .fill(d, k, &mut eps);
                    let f = ctx.forward(&images[d], k, lambdas.get(d, k), &eps, S::one())?;
                    ll += f.loglik;
                    rest = f.log_prior - f.kl;
                }
                terms.push(ctx.log_pi[k] + ll * inv + rest);
            }
            Ok(log_sum_exp(&terms))
        })
        .collect()
}
