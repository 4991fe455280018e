//! Stochastic gradient ascent on the mixture objective, with per-example
//! spatial latents refined by ICM-style gradient steps.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{binarize_raster, GlyphImage, DEFAULT_THRESHOLD};
use crate::editor::EditorDims;
use crate::error::{Error, Result};
use crate::mixture::{
    batch_objective_grad, component_elbo, mix_seed, LambdaTable, MixtureState, ModelConfig,
    OcularGrid, SeededNoise, Variant, ZeroNoise,
};
use crate::mixture::{EvalContext, NoiseSource};
use crate::params::{Adam, ParamSet};
use crate::raster::Raster;
use crate::scalar::{logit, Scalar};
use crate::warp::{SpatialParams, SpatialPrior, DEFAULT_BANDWIDTH, N_SPATIAL};

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: Variant,
    #[serde(rename = "K")]
    pub k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda_learning_rate: f64,
    pub kl_warmup_epochs: usize,
    pub seed: u64,
    pub bandwidth: f64,
    pub prior: SpatialPrior,
    pub editor: EditorDims,
    pub ocular: OcularGrid,
    /// Images averaged for the initial templates.
    pub init_images: usize,
    /// Half-width of the uniform logit noise added to each initial template.
    pub init_noise: f64,
    /// The initial mean image is clamped to `[init_clamp, 1 - init_clamp]`.
    pub init_clamp: f64,
    /// Binarization threshold applied to the training images.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            k: 3,
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            lambda_learning_rate: 1e-2,
            kl_warmup_epochs: 20,
            seed: 0,
            bandwidth: DEFAULT_BANDWIDTH,
            prior: SpatialPrior::default(),
            editor: EditorDims::default(),
            ocular: OcularGrid::default(),
            init_images: 20,
            init_noise: 0.05,
            init_clamp: 0.05,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.k == 0 || self.init_images == 0 {
            return Err(Error::arg("epochs, batch_size, K and init_images must be at least 1"));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("lambda_learning_rate", self.lambda_learning_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::arg(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.init_noise >= 0.0) || !(self.init_clamp > 0.0 && self.init_clamp < 0.5) {
            return Err(Error::arg("init_noise must be >= 0 and init_clamp in (0, 0.5)"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::arg("threshold must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn model_config(&self, height: usize, width: usize) -> Result<ModelConfig> {
        let config = ModelConfig {
            variant: self.variant,
            components: self.k,
            height,
            width,
            editor: self.editor,
            bandwidth: self.bandwidth,
            prior: self.prior,
            ocular: self.ocular.clone(),
        };
        config.validate()?;
        Ok(config)
    }

    /// KL weight after `steps_done` of `steps_per_epoch`-step epochs.
    pub fn kl_weight(&self, steps_done: usize, steps_per_epoch: usize) -> f64 {
        if self.kl_warmup_epochs == 0 {
            return 1.0;
        }
        let ramp = (self.kl_warmup_epochs * steps_per_epoch) as f64;
        (steps_done as f64 / ramp).min(1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean per-example objective over the epoch's batches.
    pub objective: f64,
    pub kl_weight: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<S> {
    pub state: MixtureState<S>,
    pub lambdas: LambdaTable<S>,
    pub trace: Vec<EpochLoss>,
}

/// Binarized training rasters of a single-class dataset.
pub fn prepare_images<S: Scalar>(dataset: &[GlyphImage], threshold: f64) -> Result<Vec<Raster<S>>> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::arg("dataset is empty"))?;
    dataset
        .iter()
        .map(|g| {
            if g.char_class != first.char_class {
                return Err(Error::arg(format!(
                    "dataset mixes char classes '{}' and '{}'",
                    first.char_class, g.char_class
                )));
            }
            g.pixels.ensure_same_dims(&first.pixels, "dataset image")?;
            Ok(binarize_raster(&g.pixels, threshold)?.cast())
        })
        .collect()
}

/// Each component starts from the clamped mean of its own random draw of
/// `init_images` examples, in logit space, plus uniform logit noise.
fn initial_templates<S: Scalar>(
    images: &[Raster<S>],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Raster<S>> {
    let (h, w) = images[0].dims();
    let lo = config.init_clamp;
    let mut order: Vec<usize> = (0..images.len()).collect();
    (0..config.k)
        .map(|_| {
            order.shuffle(rng);
            let picked = &order[..config.init_images.min(images.len())];
            let inv = 1.0 / picked.len() as f64;
            let data = (0..h * w)
                .map(|p| {
                    let m = picked.iter().map(|&d| images[d].as_slice()[p].as_f64()).sum::<f64>() * inv;
                    let u = if config.init_noise > 0.0 {
                        rng.random_range(-config.init_noise..=config.init_noise)
                    } else {
                        0.0
                    };
                    S::lit(logit(m.clamp(lo, 1.0 - lo)) + u)
                })
                .collect();
            Raster::from_vec(h, w, data).expect("template dims")
        })
        .collect()
}

/// Independent Adam moments for every `(d, k)` row of a lambda table.
pub struct LambdaOptimizer<S> {
    rows: Vec<Adam<S>>,
    components: usize,
}

impl<S: Scalar> LambdaOptimizer<S> {
    pub fn new(learning_rate: S, examples: usize, components: usize) -> Self {
        Self {
            rows: (0..examples * components)
                .map(|_| Adam::new(learning_rate, N_SPATIAL))
                .collect(),
            components,
        }
    }

    pub fn ascend(&mut self, d: usize, k: usize, lambda: &mut SpatialParams<S>, grad: &[S; N_SPATIAL]) {
        let mut p = lambda.to_array().to_vec();
        self.rows[d * self.components + k].ascend(&mut p, &grad.to_vec());
        let mut a = [S::zero(); N_SPATIAL];
        a.copy_from_slice(&p);
        *lambda = SpatialParams::from_array(a);
    }
}

/// Fits a mixture to a single-class dataset.
pub fn train<S: Scalar>(dataset: &[GlyphImage], config: &TrainConfig) -> Result<TrainOutcome<S>> {
    train_with(dataset, config, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with<S: Scalar>(
    dataset: &[GlyphImage],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<TrainOutcome<S>> {
    config.validate()?;
    let images = prepare_images::<S>(dataset, config.threshold)?;
    let (h, w) = images[0].dims();
    let model = config.model_config(h, w)?;
    let n = images.len();

    let mut init_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, INIT_STREAM]));
    let templates = initial_templates(&images, config, &mut init_rng);
    let mut state = MixtureState::init(model, templates, &mut init_rng)?;
    let mut lambdas = LambdaTable::zeros(n, config.k);

    let mut opt = Adam::new(S::lit(config.learning_rate), state.num_params());
    let mut lambda_opt = LambdaOptimizer::new(S::lit(config.lambda_learning_rate), n, config.k);
    let learn_lambda = config.variant.uses_warp();
    let noise_seed = mix_seed(&[config.seed, NOISE_STREAM]);
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, SHUFFLE_STREAM, epoch as u64]));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut kl_weight = 0.0;
        for batch in order.chunks(config.batch_size) {
            kl_weight = config.kl_weight(step, steps_per_epoch);
            let noise = SeededNoise {
                seed: noise_seed,
                step: step as u64,
            };
            let g = batch_objective_grad(&images, batch, &state, &lambdas, &noise, S::lit(kl_weight))?;
            if !g.value.is_finite() || !g.params.all_finite() {
                return Err(Error::Diverged {
                    step,
                    message: format!("objective {} at epoch {epoch}", g.value),
                });
            }
            total += g.value.as_f64();
            opt.ascend(&mut state, &g.params);
            if learn_lambda {
                for (pos, &d) in batch.iter().enumerate() {
                    for k in 0..config.k {
                        lambda_opt.ascend(d, k, lambdas.get_mut(d, k), &g.lambda_grads[pos][k]);
                    }
                }
            }
            step += 1;
        }
        if !state.all_finite() || !lambdas.all_finite() {
            return Err(Error::Diverged {
                step,
                message: format!("non-finite parameters after epoch {epoch}"),
            });
        }
        let loss = EpochLoss {
            epoch,
            objective: total / n as f64,
            kl_weight,
        };
        on_epoch(&loss);
        trace.push(loss);
    }
    Ok(TrainOutcome {
        state,
        lambdas,
        trace,
    })
}

/// `∂ELBO_k/∂λ` at `lambda` with the given standard normal draw.
pub fn lambda_gradient<S: Scalar>(
    x: &Raster<S>,
    k: usize,
    lambda: &SpatialParams<S>,
    state: &MixtureState<S>,
    noise: &[S],
) -> Result<[S; N_SPATIAL]> {
    let ctx = EvalContext::new(state);
    let fwd = ctx.forward(x, k, lambda, noise, S::one())?;
    Ok(ctx.backward(x, &fwd, S::one(), None))
}

/// One gradient-ascent step on the component ELBO wrt `λ` with fixed noise.
///
/// With `backtracking`, the step is halved until the ELBO does not decrease;
/// after 20 halvings without success `gamma` is returned unchanged.
pub fn icm_step<S: Scalar>(
    x: &Raster<S>,
    k: usize,
    gamma: &SpatialParams<S>,
    state: &MixtureState<S>,
    step_size: S,
    backtracking: bool,
    noise: &[S],
) -> Result<SpatialParams<S>> {
    let grad = lambda_gradient(x, k, gamma, state, noise)?;
    let moved = |eta: S| {
        let mut a = gamma.to_array();
        for (v, g) in a.iter_mut().zip(&grad) {
            *v += eta * *g;
        }
        SpatialParams::from_array(a)
    };
    if !backtracking {
        return Ok(moved(step_size));
    }
    let before = component_elbo(x, k, gamma, state, noise)?;
    let mut eta = step_size;
    for _ in 0..=20 {
        let cand = moved(eta);
        if let Ok(after) = component_elbo(x, k, &cand, state, noise) {
            if after >= before {
                return Ok(cand);
            }
        }
        eta *= S::lit(0.5);
    }
    Ok(*gamma)
}

/// Refines every `γ_{k,d}` for a fixed model by `steps` Adam steps on the
/// component ELBO with `z` at its posterior mean.
pub fn fit_lambdas<S: Scalar>(
    images: &[Raster<S>],
    state: &MixtureState<S>,
    start: Option<&LambdaTable<S>>,
    steps: usize,
    learning_rate: f64,
) -> Result<LambdaTable<S>> {
    let kk = state.components();
    let mut table = match start {
        Some(t) if t.examples() == images.len() && t.components() == kk => t.clone(),
        Some(_) => return Err(Error::arg("lambda table does not match the dataset")),
        None => LambdaTable::zeros(images.len(), kk),
    };
    if !state.variant().uses_warp() || steps == 0 {
        return Ok(table);
    }
    let ctx = EvalContext::new(state);
    let z_dim = state.config.editor.z_dim;
    let rows: Vec<Vec<SpatialParams<S>>> = images
        .par_iter()
        .enumerate()
        .map(|(d, x)| {
            let mut eps = vec![S::zero(); z_dim];
            let mut row = table.row(d).to_vec();
            for (k, lambda) in row.iter_mut().enumerate() {
                ZeroNoise.fill(d, k, &mut eps);
                let mut adam = Adam::new(S::lit(learning_rate), N_SPATIAL);
                let mut p = lambda.to_array().to_vec();
                for _ in 0..steps {
                    let mut a = [S::zero(); N_SPATIAL];
                    a.copy_from_slice(&p);
                    let fwd = ctx.forward(x, k, &SpatialParams::from_array(a), &eps, S::one())?;
                    let g = ctx.backward(x, &fwd, S::one(), None);
                    adam.ascend(&mut p, &g.to_vec());
                }
                let mut a = [S::zero(); N_SPATIAL];
                a.copy_from_slice(&p);
                *lambda = SpatialParams::from_array(a);
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    for (d, row) in rows.into_iter().enumerate() {
        for (k, l) in row.into_iter().enumerate() {
            *table.get_mut(d, k) = l;
        }
    }
    Ok(table)
}
