//! The mixture over warped and edited templates: model state, the Bernoulli
//! pixel likelihood, per-component ELBOs, the marginalized objective, cluster
//! assignment and the baseline variants.

mod component;
mod objective;
mod ocular;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::editor::{EditorDims, EditorParams};
use crate::encoder::{EncoderDims, EncoderParams};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::raster::Raster;
use crate::scalar::{softmax_into, Scalar};
use crate::warp::{SpatialParams, SpatialPrior, DEFAULT_BANDWIDTH};

pub use component::{component_elbo, ComponentForward, EvalContext};
pub use objective::{
    assign_cluster, batch_objective, batch_objective_grad, component_scores, mix_seed,
    objective_estimate, BatchGrad, NoiseSource, SeededNoise, ZeroNoise,
};
pub use ocular::{ocular_component_logliks, ocular_loglik, OcularGrid};

/// Model family. `Full` is the residual-conditioned editor with warps; the
/// rest are the ablations it is compared against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoResidual,
    VaeOnly,
    LambdaOnly,
    Ocular,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoResidual,
        Variant::VaeOnly,
        Variant::LambdaOnly,
        Variant::Ocular,
    ];

    /// Continuous spatial latents with a Gaussian prior.
    pub fn uses_warp(self) -> bool {
        matches!(self, Variant::Full | Variant::NoResidual | Variant::LambdaOnly)
    }

    /// The `z` pathway (encoder, editor, KL).
    pub fn uses_editor(self) -> bool {
        matches!(self, Variant::Full | Variant::NoResidual | Variant::VaeOnly)
    }

    /// Encoder sees `X − T̃` rather than `X`.
    pub fn encodes_residual(self) -> bool {
        self == Variant::Full
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoResidual => "no_residual",
            Variant::VaeOnly => "vae_only",
            Variant::LambdaOnly => "lambda_only",
            Variant::Ocular => "ocular",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown variant {s:?}")))
    }
}

/// Static shape and hyper-parameters of a mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub components: usize,
    pub height: usize,
    pub width: usize,
    pub editor: EditorDims,
    pub bandwidth: f64,
    pub prior: SpatialPrior,
    #[serde(default)]
    pub ocular: OcularGrid,
}

impl ModelConfig {
    pub fn new(variant: Variant, components: usize, canvas: usize) -> Self {
        Self {
            variant,
            components,
            height: canvas,
            width: canvas,
            editor: EditorDims::default(),
            bandwidth: DEFAULT_BANDWIDTH,
            prior: SpatialPrior::default(),
            ocular: OcularGrid::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(Error::arg("mixture needs at least one component"));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::arg("canvas must be non-empty"));
        }
        if !(self.bandwidth > 0.0) {
            return Err(Error::arg("attention bandwidth must be positive"));
        }
        self.editor.validate()?;
        self.prior.validate()?;
        self.ocular.validate()
    }

    pub fn encoder_dims(&self) -> EncoderDims {
        EncoderDims::new(self.height, self.width, self.editor.z_dim, self.components)
    }
}

/// Every learnable quantity of one mixture (templates in logit space).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureState<S> {
    pub config: ModelConfig,
    pub templates: Vec<Raster<S>>,
    pub pi_logits: Vec<S>,
    pub editor: EditorParams<S>,
    pub encoder: EncoderParams<S>,
}

impl<S: Scalar> MixtureState<S> {
    /// All-zero state of the right shape (also used as a gradient buffer).
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (h, w) = (config.height, config.width);
        Ok(Self {
            templates: (0..config.components).map(|_| Raster::zeros(h, w)).collect(),
            pi_logits: vec![S::zero(); config.components],
            editor: EditorParams::zeros(config.editor),
            encoder: EncoderParams::zeros(config.encoder_dims()),
            config,
        })
    }

    /// Given template logits, uniform mixing weights and randomly initialized networks.
    pub fn init<R: Rng + ?Sized>(
        config: ModelConfig,
        templates: Vec<Raster<S>>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut state = Self::zeros(config)?;
        if templates.len() != state.config.components {
            return Err(Error::arg(format!(
                "{} templates for {} components",
                templates.len(),
                state.config.components
            )));
        }
        for t in &templates {
            t.ensure_same_dims(&state.templates[0], "template")?;
        }
        state.templates = templates;
        state.editor = EditorParams::init(state.config.editor, rng);
        state.encoder = EncoderParams::init(state.config.encoder_dims(), rng);
        Ok(state)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(S::zero());
        z
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn components(&self) -> usize {
        self.config.components
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.config.height, self.config.width)
    }

    /// Mixing weights `π = softmax(pi_logits)`.
    pub fn mixing_weights(&self) -> Vec<S> {
        let mut out = vec![S::zero(); self.pi_logits.len()];
        softmax_into(&self.pi_logits, &mut out);
        out
    }

    /// Template probabilities `σ(T_k)`.
    pub fn template_probs(&self, k: usize) -> Raster<S> {
        self.templates[k].map(crate::scalar::sigmoid)
    }

    pub fn cast<T: Scalar>(&self) -> MixtureState<T> {
        let flat: Vec<T> = self.flatten().iter().map(|v| T::lit(v.as_f64())).collect();
        let mut out = MixtureState::<T>::zeros(self.config.clone()).expect("valid config");
        out.assign_flat(&flat);
        out
    }
}

impl<S: Scalar> ParamSet<S> for MixtureState<S> {
    fn visit(&self, f: &mut dyn FnMut(&[S])) {
        for t in &self.templates {
            f(t.as_slice());
        }
        f(&self.pi_logits);
        self.editor.visit(f);
        self.encoder.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [S])) {
        for t in &mut self.templates {
            f(t.as_mut_slice());
        }
        f(&mut self.pi_logits);
        self.editor.visit_mut(f);
        self.encoder.visit_mut(f);
    }
}

/// Per-(example, component) spatial latents `γ_{k,d}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaTable<S> {
    components: usize,
    entries: Vec<SpatialParams<S>>,
}

impl<S: Scalar> LambdaTable<S> {
    pub fn zeros(examples: usize, components: usize) -> Self {
        Self {
            components,
            entries: vec![SpatialParams::zero(); examples * components],
        }
    }

    pub fn examples(&self) -> usize {
        if self.components == 0 {
            0
        } else {
            self.entries.len() / self.components
        }
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn get(&self, d: usize, k: usize) -> &SpatialParams<S> {
        &self.entries[d * self.components + k]
    }

    pub fn get_mut(&mut self, d: usize, k: usize) -> &mut SpatialParams<S> {
        &mut self.entries[d * self.components + k]
    }

    pub fn row(&self, d: usize) -> &[SpatialParams<S>] {
        &self.entries[d * self.components..(d + 1) * self.components]
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(SpatialParams::is_finite)
    }

    pub fn cast<T: Scalar>(&self) -> LambdaTable<T> {
        LambdaTable {
            components: self.components,
            entries: self.entries.iter().map(SpatialParams::cast).collect(),
        }
    }
}

/// `Σ_pixels x·ln t̂ + (1 − x)·ln(1 − t̂)`.
pub fn bernoulli_loglik<S: Scalar>(x: &Raster<S>, t_hat: &Raster<S>) -> Result<S> {
    x.ensure_same_dims(t_hat, "bernoulli likelihood")?;
    Ok(x.as_slice()
        .iter()
        .zip(t_hat.as_slice())
        .map(|(&xv, &t)| xv * t.ln() + (S::one() - xv) * (S::one() - t).ln())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_closed_forms() {
        let x = Raster::from_fn(32, 32, |i, j| ((i + j) % 2) as f64);
        let half = Raster::filled(32, 32, 0.5);
        let v = bernoulli_loglik(&x, &half).unwrap();
        assert!((v - 1024.0 * 0.5_f64.ln()).abs() < 1e-9);
        assert!((v + 709.783).abs() < 1e-3);

        let eps = 1e-4;
        let t = x.map(|v| if v == 1.0 { 1.0 - eps } else { eps });
        let matched = bernoulli_loglik(&x, &t).unwrap();
        assert!((matched - 1024.0 * (1.0 - eps).ln()).abs() < 1e-9);
        assert!((matched + 0.1024).abs() < 1e-4);

        let mut flipped = x.clone();
        flipped[(0, 0)] = 1.0 - flipped[(0, 0)];
        let one_off = bernoulli_loglik(&flipped, &t).unwrap();
        let expected = 1023.0 * (1.0 - eps).ln() + eps.ln();
        assert!((one_off - expected).abs() < 1e-9);
        assert!((one_off + 9.3127).abs() < 1e-3);
    }

    #[test]
    fn bernoulli_rejects_mismatched_shapes() {
        let x = Raster::<f64>::zeros(4, 4);
        let t = Raster::filled(4, 5, 0.5);
        assert!(bernoulli_loglik(&x, &t).is_err());
    }

    #[test]
    fn variant_round_trips_through_names() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.name()));
        }
        assert!("frobnicate".parse::<Variant>().is_err());
    }

    #[test]
    fn mixing_weights_are_a_distribution() {
        let mut s = MixtureState::<f64>::zeros(ModelConfig::new(Variant::Full, 4, 8)).unwrap();
        s.pi_logits = vec![3.0, -20.0, 0.5, 700.0];
        let pi = s.mixing_weights();
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
