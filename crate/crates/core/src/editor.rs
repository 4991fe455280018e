//! The residual pathway: a convolution over the warped template whose
//! kernels are generated from the latent `z`, plus the Gaussian posterior
//! utilities (reparameterized sampling, KL to the standard normal prior).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::raster::Raster;
use crate::scalar::{axpy, dot, logit, sigmoid, tanh, Scalar};

/// Probability floor/ceiling applied to every Bernoulli parameter image.
pub const PROB_EPS: f64 = 1e-4;

#[inline]
pub(crate) fn clamp_prob<S: Scalar>(p: S) -> S {
    let eps = S::lit(PROB_EPS);
    p.max(eps).min(S::one() - eps)
}

#[inline]
fn strictly_inside<S: Scalar>(p: S) -> bool {
    let eps = S::lit(PROB_EPS);
    p > eps && p < S::one() - eps
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditorDims {
    pub z_dim: usize,
    pub hidden: usize,
    pub channels: usize,
    pub kernel: usize,
}

impl Default for EditorDims {
    fn default() -> Self {
        Self {
            z_dim: 32,
            hidden: 64,
            channels: 8,
            kernel: 5,
        }
    }
}

impl EditorDims {
    pub fn validate(&self) -> Result<()> {
        if self.z_dim == 0 || self.hidden == 0 || self.channels == 0 {
            return Err(Error::arg("editor dimensions must be positive"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::arg("editor kernel size must be odd"));
        }
        Ok(())
    }

    fn kernel_area(&self) -> usize {
        self.kernel * self.kernel
    }

    /// Length of the generator output: all kernels followed by one bias per channel.
    fn generated_len(&self) -> usize {
        self.channels * self.kernel_area() + self.channels
    }
}

/// Parameters `θ` of `filter(T̃, z; θ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditorParams<S> {
    pub dims: EditorDims,
    /// `hidden x z_dim`
    pub gen_w1: Vec<S>,
    pub gen_b1: Vec<S>,
    /// `(channels·kernel² + channels) x hidden`
    pub gen_w2: Vec<S>,
    pub gen_b2: Vec<S>,
    pub mix: Vec<S>,
    pub skip_gain: S,
}

impl<S: Scalar> EditorParams<S> {
    pub fn zeros(dims: EditorDims) -> Self {
        let out = dims.generated_len();
        Self {
            dims,
            gen_w1: vec![S::zero(); dims.hidden * dims.z_dim],
            gen_b1: vec![S::zero(); dims.hidden],
            gen_w2: vec![S::zero(); out * dims.hidden],
            gen_b2: vec![S::zero(); out],
            mix: vec![S::zero(); dims.channels],
            skip_gain: S::zero(),
        }
    }

    /// Random initialization near the identity edit.
    pub fn init<R: Rng + ?Sized>(dims: EditorDims, rng: &mut R) -> Self {
        let mut p = Self::zeros(dims);
        let out = dims.generated_len();
        let lim1 = (6.0 / (dims.z_dim + dims.hidden) as f64).sqrt();
        let lim2 = 0.5 * (6.0 / (dims.hidden + out) as f64).sqrt();
        p.gen_w1
            .iter_mut()
            .for_each(|w| *w = S::lit(rng.random_range(-lim1..lim1)));
        p.gen_w2
            .iter_mut()
            .for_each(|w| *w = S::lit(rng.random_range(-lim2..lim2)));
        p.mix
            .iter_mut()
            .for_each(|w| *w = S::lit(rng.random_range(-0.5..0.5)));
        p.skip_gain = S::one();
        p
    }

    /// The identity configuration: generator output forced to zero, unit skip.
    pub fn identity(dims: EditorDims) -> Self {
        let mut p = Self::zeros(dims);
        p.skip_gain = S::one();
        p.mix.iter_mut().for_each(|m| *m = S::one());
        p
    }
}

impl<S: Scalar> ParamSet<S> for EditorParams<S> {
    fn visit(&self, f: &mut dyn FnMut(&[S])) {
        f(&self.gen_w1);
        f(&self.gen_b1);
        f(&self.gen_w2);
        f(&self.gen_b2);
        f(&self.mix);
        f(std::slice::from_ref(&self.skip_gain));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [S])) {
        f(&mut self.gen_w1);
        f(&mut self.gen_b1);
        f(&mut self.gen_w2);
        f(&mut self.gen_b2);
        f(&mut self.mix);
        f(std::slice::from_mut(&mut self.skip_gain));
    }
}

/// Intermediate values of one filter evaluation, kept for the reverse pass.
#[derive(Clone, Debug)]
pub struct FilterTrace<S> {
    z: Vec<S>,
    hidden: Vec<S>,
    generated: Vec<S>,
    /// `tanh` of each channel's convolution, `channels x H x W`.
    activations: Vec<S>,
    skip_logit: Vec<S>,
    skip_active: Vec<bool>,
    output: Raster<S>,
    output_active: Vec<bool>,
}

impl<S: Scalar> FilterTrace<S> {
    pub fn output(&self) -> &Raster<S> {
        &self.output
    }
}

/// Same-size 2-D correlation with zero padding: `out[i][j] += Σ k[u][v]·src[i+u-r][j+v-r]`.
fn correlate_accumulate<S: Scalar>(
    src: &[S],
    kernel: &[S],
    ksize: usize,
    h: usize,
    w: usize,
    out: &mut [S],
) {
    let r = ksize / 2;
    for u in 0..ksize {
        for v in 0..ksize {
            let k = kernel[u * ksize + v];
            let j_lo = r.saturating_sub(v);
            let j_hi = (w + r).saturating_sub(v).min(w);
            if j_lo >= j_hi {
                continue;
            }
            for i in 0..h {
                let si = i + u;
                if si < r || si - r >= h {
                    continue;
                }
                let src_row = &src[(si - r) * w..(si - r + 1) * w];
                let out_row = &mut out[i * w..(i + 1) * w];
                let shift = v as isize - r as isize;
                for j in j_lo..j_hi {
                    out_row[j] += k * src_row[(j as isize + shift) as usize];
                }
            }
        }
    }
}

/// `T̂ = clamp(σ(g·logit(clamp(T̃)) + Σ_c m_c·tanh(conv(T̃, K_c(z)) + b_c(z))))`.
pub fn filter_apply<S: Scalar>(
    t_tilde: &Raster<S>,
    z: &[S],
    theta: &EditorParams<S>,
) -> Result<(Raster<S>, FilterTrace<S>)> {
    let dims = theta.dims;
    if z.len() != dims.z_dim {
        return Err(Error::shape(format!(
            "latent has {} entries, editor expects {}",
            z.len(),
            dims.z_dim
        )));
    }
    let (h, w) = t_tilde.dims();
    let n = h * w;

    let hidden: Vec<S> = (0..dims.hidden)
        .map(|o| {
            let row = &theta.gen_w1[o * dims.z_dim..(o + 1) * dims.z_dim];
            let pre = theta.gen_b1[o] + dot(row, z);
            tanh(pre)
        })
        .collect();
    let generated: Vec<S> = (0..dims.generated_len())
        .map(|o| {
            let row = &theta.gen_w2[o * dims.hidden..(o + 1) * dims.hidden];
            theta.gen_b2[o] + dot(row, &hidden)
        })
        .collect();

    let area = dims.kernel_area();
    let src = t_tilde.as_slice();
    let mut activations = vec![S::zero(); dims.channels * n];
    for c in 0..dims.channels {
        let bias = generated[dims.channels * area + c];
        let chan = &mut activations[c * n..(c + 1) * n];
        chan.iter_mut().for_each(|v| *v = bias);
        correlate_accumulate(
            src,
            &generated[c * area..(c + 1) * area],
            dims.kernel,
            h,
            w,
            chan,
        );
        chan.iter_mut().for_each(|v| *v = tanh(*v));
    }

    let mut skip_logit = Vec::with_capacity(n);
    let mut skip_active = Vec::with_capacity(n);
    for &t in src {
        skip_active.push(strictly_inside(t));
        skip_logit.push(logit(clamp_prob(t)));
    }
    let mut out = Vec::with_capacity(n);
    let mut output_active = Vec::with_capacity(n);
    for p in 0..n {
        let mut l = theta.skip_gain * skip_logit[p];
        for c in 0..dims.channels {
            l += theta.mix[c] * activations[c * n + p];
        }
        let s = sigmoid(l);
        output_active.push(strictly_inside(s));
        out.push(clamp_prob(s));
    }
    let output = Raster::from_vec(h, w, out)?;
    Ok((
        output.clone(),
        FilterTrace {
            z: z.to_vec(),
            hidden,
            generated,
            activations,
            skip_logit,
            skip_active,
            output,
            output_active,
        },
    ))
}

/// Gradients of a filter evaluation wrt its image and latent inputs.
pub struct FilterGrads<S> {
    pub t_tilde: Vec<S>,
    pub z: Vec<S>,
}

/// Reverse pass of [`filter_apply`].
///
/// `grad_out` is `∂L/∂T̂`. Parameter gradients are multiplied by `scale`
/// before being added into `grad_theta`; input gradients are unscaled.
pub fn filter_backward<S: Scalar>(
    t_tilde: &Raster<S>,
    trace: &FilterTrace<S>,
    theta: &EditorParams<S>,
    grad_out: &[S],
    scale: S,
    grad_theta: Option<&mut EditorParams<S>>,
) -> FilterGrads<S> {
    let dims = theta.dims;
    let (h, w) = t_tilde.dims();
    let n = h * w;
    let area = dims.kernel_area();
    let src = t_tilde.as_slice();

    // ∂L/∂logit
    let grad_logit: Vec<S> = (0..n)
        .map(|p| {
            if trace.output_active[p] {
                let t = trace.output.as_slice()[p];
                grad_out[p] * t * (S::one() - t)
            } else {
                S::zero()
            }
        })
        .collect();

    let mut grad_t = vec![S::zero(); n];
    let mut grad_skip = S::zero();
    for p in 0..n {
        grad_skip += grad_logit[p] * trace.skip_logit[p];
        if trace.skip_active[p] {
            let t = src[p];
            grad_t[p] += grad_logit[p] * theta.skip_gain / (t * (S::one() - t));
        }
    }

    let mut grad_mix = vec![S::zero(); dims.channels];
    let mut grad_generated = vec![S::zero(); dims.generated_len()];
    let mut grad_pre = vec![S::zero(); n];
    let r = dims.kernel / 2;
    for c in 0..dims.channels {
        let act = &trace.activations[c * n..(c + 1) * n];
        let m = theta.mix[c];
        let mut gm = S::zero();
        let mut gb = S::zero();
        for p in 0..n {
            gm += grad_logit[p] * act[p];
            let g = grad_logit[p] * m * (S::one() - act[p] * act[p]);
            grad_pre[p] = g;
            gb += g;
        }
        grad_mix[c] = gm;
        grad_generated[dims.channels * area + c] = gb;
        let kernel = &trace.generated[c * area..(c + 1) * area];
        let gk = &mut grad_generated[c * area..(c + 1) * area];
        for u in 0..dims.kernel {
            for v in 0..dims.kernel {
                let k = kernel[u * dims.kernel + v];
                let j_lo = r.saturating_sub(v);
                let j_hi = (w + r).saturating_sub(v).min(w);
                if j_lo >= j_hi {
                    continue;
                }
                let (sj_lo, sj_hi) = (j_lo + v - r, j_hi + v - r);
                let mut acc = S::zero();
                for i in 0..h {
                    let si = i + u;
                    if si < r || si - r >= h {
                        continue;
                    }
                    let row = (si - r) * w;
                    let gp_row = &grad_pre[i * w + j_lo..i * w + j_hi];
                    acc += dot(gp_row, &src[row + sj_lo..row + sj_hi]);
                    axpy(k, gp_row, &mut grad_t[row + sj_lo..row + sj_hi]);
                }
                gk[u * dims.kernel + v] = acc;
            }
        }
    }

    // Back through the kernel generator.
    let mut grad_hidden = vec![S::zero(); dims.hidden];
    for (o, &g) in grad_generated.iter().enumerate() {
        if g == S::zero() {
            continue;
        }
        let row = &theta.gen_w2[o * dims.hidden..(o + 1) * dims.hidden];
        for (gh, &wv) in grad_hidden.iter_mut().zip(row) {
            *gh += g * wv;
        }
    }
    let grad_hpre: Vec<S> = grad_hidden
        .iter()
        .zip(&trace.hidden)
        .map(|(&g, &a)| g * (S::one() - a * a))
        .collect();
    let mut grad_z = vec![S::zero(); dims.z_dim];
    for (o, &g) in grad_hpre.iter().enumerate() {
        let row = &theta.gen_w1[o * dims.z_dim..(o + 1) * dims.z_dim];
        for (gz, &wv) in grad_z.iter_mut().zip(row) {
            *gz += g * wv;
        }
    }

    if let Some(gt) = grad_theta {
        gt.skip_gain += scale * grad_skip;
        for (a, &b) in gt.mix.iter_mut().zip(&grad_mix) {
            *a += scale * b;
        }
        for (o, &g) in grad_generated.iter().enumerate() {
            let gs = scale * g;
            gt.gen_b2[o] += gs;
            let row = &mut gt.gen_w2[o * dims.hidden..(o + 1) * dims.hidden];
            for (wv, &hv) in row.iter_mut().zip(&trace.hidden) {
                *wv += gs * hv;
            }
        }
        for (o, &g) in grad_hpre.iter().enumerate() {
            let gs = scale * g;
            gt.gen_b1[o] += gs;
            let row = &mut gt.gen_w1[o * dims.z_dim..(o + 1) * dims.z_dim];
            for (wv, &zv) in row.iter_mut().zip(&trace.z) {
                *wv += gs * zv;
            }
        }
    }

    FilterGrads { t_tilde: grad_t, z: grad_z }
}

/// Mean and log-variance of the isotropic Gaussian proposal over `z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditorPosterior<S> {
    pub mu: Vec<S>,
    pub log_var: Vec<S>,
}

impl<S: Scalar> EditorPosterior<S> {
    pub fn standard(z_dim: usize) -> Self {
        Self {
            mu: vec![S::zero(); z_dim],
            log_var: vec![S::zero(); z_dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Reparameterized draw `z = μ + exp(½·log σ²) ⊙ ε`.
pub fn sample_latent<S: Scalar>(post: &EditorPosterior<S>, noise: &[S]) -> Result<Vec<S>> {
    if noise.len() != post.dim() {
        return Err(Error::shape(format!(
            "noise has {} entries, posterior has {}",
            noise.len(),
            post.dim()
        )));
    }
    let half = S::lit(0.5);
    Ok(post
        .mu
        .iter()
        .zip(&post.log_var)
        .zip(noise)
        .map(|((&m, &lv), &e)| m + (half * lv).exp() * e)
        .collect())
}

/// `KL(N(μ, σ²) ‖ N(0, I)) = Σ ½(μ² + σ² − 1 − ln σ²)`.
pub fn kl_to_prior<S: Scalar>(post: &EditorPosterior<S>) -> S {
    let half = S::lit(0.5);
    post.mu
        .iter()
        .zip(&post.log_var)
        .map(|(&m, &lv)| half * (m * m + lv.exp() - S::one() - lv))
        .sum()
}
