use crate::editor::{
    clamp_prob, filter_apply, filter_backward, kl_to_prior, sample_latent, EditorPosterior,
    FilterTrace, PROB_EPS,
};
use crate::encoder::{encode_residual, encoder_backward, EncoderTrace};
use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::scalar::{log_softmax, Scalar};
use crate::warp::{
    build_attention, lambda_log_prior, lambda_log_prior_grad, AttentionMap, SpatialParams,
    N_SPATIAL,
};

use super::{bernoulli_loglik, MixtureState, Variant};

/// A state together with quantities shared by every component evaluation.
pub struct EvalContext<'a, S> {
    pub state: &'a MixtureState<S>,
    pub template_probs: Vec<Raster<S>>,
    pub log_pi: Vec<S>,
}

impl<'a, S: Scalar> EvalContext<'a, S> {
    pub fn new(state: &'a MixtureState<S>) -> Self {
        Self {
            template_probs: (0..state.components())
                .map(|k| state.template_probs(k))
                .collect(),
            log_pi: log_softmax(&state.pi_logits),
            state,
        }
    }
}

struct EditorPass<S> {
    posterior: EditorPosterior<S>,
    noise: Vec<S>,
    encoder: EncoderTrace<S>,
    filter: FilterTrace<S>,
}

/// Everything one component evaluation produced, retained for its reverse pass.
pub struct ComponentForward<S> {
    pub k: usize,
    pub lambda: SpatialParams<S>,
    pub t_tilde: Raster<S>,
    pub t_hat: Raster<S>,
    pub loglik: S,
    pub log_prior: S,
    pub kl: S,
    pub kl_weight: S,
    attention: Option<AttentionMap<S>>,
    editor: Option<EditorPass<S>>,
}

impl<S: Scalar> ComponentForward<S> {
    /// `log p(x | T̂) + log p(λ) − β·KL`.
    pub fn elbo(&self) -> S {
        self.loglik + self.log_prior - self.kl_weight * self.kl
    }

    pub fn posterior(&self) -> Option<&EditorPosterior<S>> {
        self.editor.as_ref().map(|e| &e.posterior)
    }
}

impl<S: Scalar> EvalContext<'_, S> {
    /// Forward pass of one component for a binary observation.
    pub fn forward(
        &self,
        x: &Raster<S>,
        k: usize,
        lambda: &SpatialParams<S>,
        noise: &[S],
        kl_weight: S,
    ) -> Result<ComponentForward<S>> {
        let state = self.state;
        let variant = state.variant();
        if variant == Variant::Ocular {
            return Err(Error::arg(
                "ocular variant has no continuous component ELBO; use ocular_loglik",
            ));
        }
        if k >= state.components() {
            return Err(Error::arg(format!(
                "component {k} out of range for {} components",
                state.components()
            )));
        }
        let template = &self.template_probs[k];
        x.ensure_same_dims(template, "observation vs template")?;

        let (attention, t_tilde, log_prior) = if variant.uses_warp() {
            let att = build_attention(lambda, template.dims(), S::lit(state.config.bandwidth))?;
            let t_tilde = att.apply(template)?;
            let lp = lambda_log_prior(lambda, &state.config.prior);
            (Some(att), t_tilde, lp)
        } else {
            (None, template.clone(), S::zero())
        };

        let (t_hat, editor, kl) = if variant.uses_editor() {
            let enc_input = if variant.encodes_residual() {
                Raster::from_vec(
                    x.height(),
                    x.width(),
                    x.as_slice()
                        .iter()
                        .zip(t_tilde.as_slice())
                        .map(|(&a, &b)| a - b)
                        .collect(),
                )?
            } else {
                x.clone()
            };
            let (posterior, enc_trace) = encode_residual(&enc_input, k, &state.encoder)?;
            let z = sample_latent(&posterior, noise)?;
            let (t_hat, filter) = filter_apply(&t_tilde, &z, &state.editor)?;
            let kl = kl_to_prior(&posterior);
            (
                t_hat,
                Some(EditorPass {
                    posterior,
                    noise: noise.to_vec(),
                    encoder: enc_trace,
                    filter,
                }),
                kl,
            )
        } else {
            (t_tilde.map(clamp_prob), None, S::zero())
        };

        let loglik = bernoulli_loglik(x, &t_hat)?;
        Ok(ComponentForward {
            k,
            lambda: *lambda,
            t_tilde,
            t_hat,
            loglik,
            log_prior,
            kl,
            kl_weight,
            attention,
            editor,
        })
    }

    /// Reverse pass of [`EvalContext::forward`] for upstream gradient `scale`.
    ///
    /// Parameter gradients (templates, θ, φ) are accumulated into `grad`
    /// multiplied by `scale`. The returned `∂ELBO/∂λ` is *not* scaled.
    pub fn backward(
        &self,
        x: &Raster<S>,
        fwd: &ComponentForward<S>,
        scale: S,
        mut grad: Option<&mut MixtureState<S>>,
    ) -> [S; N_SPATIAL] {
        let state = self.state;
        let variant = state.variant();
        let n = x.len();
        let xs = x.as_slice();
        let that = fwd.t_hat.as_slice();
        let grad_that: Vec<S> = xs
            .iter()
            .zip(that)
            .map(|(&xv, &t)| xv / t - (S::one() - xv) / (S::one() - t))
            .collect();

        let mut grad_ttilde = match &fwd.editor {
            Some(pass) => {
                let fg = filter_backward(
                    &fwd.t_tilde,
                    &pass.filter,
                    &state.editor,
                    &grad_that,
                    scale,
                    grad.as_deref_mut().map(|g| &mut g.editor),
                );
                let half = S::lit(0.5);
                let beta = fwd.kl_weight;
                let post = &pass.posterior;
                let grad_mu: Vec<S> = fg
                    .z
                    .iter()
                    .zip(&post.mu)
                    .map(|(&gz, &m)| gz - beta * m)
                    .collect();
                let grad_lv: Vec<S> = fg
                    .z
                    .iter()
                    .zip(&post.log_var)
                    .zip(&pass.noise)
                    .map(|((&gz, &lv), &e)| {
                        gz * half * (half * lv).exp() * e - beta * half * (lv.exp() - S::one())
                    })
                    .collect();
                let grad_input = encoder_backward(
                    &pass.encoder,
                    &state.encoder,
                    &grad_mu,
                    &grad_lv,
                    scale,
                    grad.as_deref_mut().map(|g| &mut g.encoder),
                );
                let mut gt = fg.t_tilde;
                if variant.encodes_residual() {
                    for (g, gi) in gt.iter_mut().zip(&grad_input) {
                        *g -= *gi;
                    }
                }
                gt
            }
            None => {
                let eps = S::lit(PROB_EPS);
                fwd.t_tilde
                    .as_slice()
                    .iter()
                    .zip(&grad_that)
                    .map(|(&t, &g)| if t > eps && t < S::one() - eps { g } else { S::zero() })
                    .collect()
            }
        };

        let template = &self.template_probs[fwd.k];
        let (grad_template, grad_lambda) = match &fwd.attention {
            Some(att) => {
                let mut gsrc = vec![S::zero(); n];
                let mut gl = att.backward(template, &grad_ttilde, Some(&mut gsrc));
                let gp = lambda_log_prior_grad(&fwd.lambda, &state.config.prior);
                for c in 0..N_SPATIAL {
                    gl[c] += gp[c];
                }
                (gsrc, gl)
            }
            None => (std::mem::take(&mut grad_ttilde), [S::zero(); N_SPATIAL]),
        };

        if let Some(g) = grad {
            let dst = g.templates[fwd.k].as_mut_slice();
            for ((d, &gt), &t) in dst.iter_mut().zip(&grad_template).zip(template.as_slice()) {
                *d += scale * gt * t * (S::one() - t);
            }
        }
        grad_lambda
    }
}

/// Single-sample ELBO of component `k` at spatial latents `lambda`:
/// `log p(x | T̂_k) + log p(λ) − KL(q(z | ·, k) ‖ p(z))`.
pub fn component_elbo<S: Scalar>(
    x: &Raster<S>,
    k: usize,
    lambda: &SpatialParams<S>,
    state: &MixtureState<S>,
    noise: &[S],
) -> Result<S> {
    let ctx = EvalContext::new(state);
    Ok(ctx.forward(x, k, lambda, noise, S::one())?.elbo())
}
