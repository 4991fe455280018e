//! Rigid emission baseline: integer offsets and a handful of inking
//! exponents, marginalized exactly over the discrete grid.

use serde::{Deserialize, Serialize};

use crate::editor::PROB_EPS;
use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::scalar::{log_softmax, log_sum_exp, sigmoid, Scalar};
use crate::warp::N_SPATIAL;

use super::objective::BatchGrad;
use super::{MixtureState, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcularGrid {
    /// Offsets range over `{-max_offset..=max_offset}²`.
    pub max_offset: usize,
    /// Inking exponents applied elementwise to template probabilities.
    pub exponents: Vec<f64>,
}

impl Default for OcularGrid {
    fn default() -> Self {
        Self {
            max_offset: 2,
            exponents: vec![0.5, 0.75, 1.0, 1.25, 1.5],
        }
    }
}

impl OcularGrid {
    pub fn validate(&self) -> Result<()> {
        if self.exponents.is_empty() || self.exponents.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::arg("inking exponents must be positive and non-empty"));
        }
        Ok(())
    }

    /// `(o_h, o_v)` pairs, vertical-major.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let m = self.max_offset as isize;
        (-m..=m)
            .flat_map(|ov| (-m..=m).map(move |oh| (oh, ov)))
            .collect()
    }

    pub fn len(&self) -> usize {
        let side = 2 * self.max_offset + 1;
        side * side * self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Precomputed emission tables of one (component, offset, exponent) term.
struct Term<S> {
    k: usize,
    offset: (isize, isize),
    exponent: S,
    /// Shifted template probability before inking, `0` off-grid.
    shifted: Vec<S>,
    prob: Vec<S>,
    /// `ln p − ln(1 − p)`
    log_odds: Vec<S>,
    /// `Σ ln(1 − p)`
    base: S,
}

fn build_terms<S: Scalar>(state: &MixtureState<S>) -> Vec<Term<S>> {
    let grid = &state.config.ocular;
    let (h, w) = state.dims();
    let eps = S::lit(PROB_EPS);
    let mut terms = Vec::with_capacity(state.components() * grid.len());
    for k in 0..state.components() {
        let t = state.templates[k].map(sigmoid);
        for &(oh, ov) in &grid.offsets() {
            let shifted: Vec<S> = (0..h * w)
                .map(|p| {
                    let (i, j) = ((p / w) as isize, (p % w) as isize);
                    t.get_signed(i - ov, j - oh).unwrap_or(S::zero())
                })
                .collect();
            for &g in &grid.exponents {
                let exponent = S::lit(g);
                let prob: Vec<S> = shifted
                    .iter()
                    .map(|&s| s.powf(exponent).max(eps).min(S::one() - eps))
                    .collect();
                let mut base = S::zero();
                let log_odds = prob
                    .iter()
                    .map(|&p| {
                        let l1 = (S::one() - p).ln();
                        base += l1;
                        p.ln() - l1
                    })
                    .collect();
                terms.push(Term {
                    k,
                    offset: (oh, ov),
                    exponent,
                    shifted: shifted.clone(),
                    prob,
                    log_odds,
                    base,
                });
            }
        }
    }
    terms
}

fn term_logliks<S: Scalar>(x: &Raster<S>, terms: &[Term<S>]) -> Vec<S> {
    let xs = x.as_slice();
    let active: Vec<(usize, S)> = xs
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != S::zero())
        .map(|(i, &v)| (i, v))
        .collect();
    terms
        .iter()
        .map(|t| t.base + active.iter().map(|&(i, v)| v * t.log_odds[i]).sum::<S>())
        .collect()
}

fn check_state<S: Scalar>(x: &Raster<S>, state: &MixtureState<S>) -> Result<()> {
    if state.variant() != Variant::Ocular {
        return Err(Error::arg("ocular likelihood requires the ocular variant"));
    }
    x.ensure_same_dims(&state.templates[0], "observation vs template")
}

/// `log Σ_{o,g} (1/|O|)(1/|G|)·p(x | clamp(shift(T_k, o)^g))` for each `k`.
pub fn ocular_component_logliks<S: Scalar>(
    x: &Raster<S>,
    state: &MixtureState<S>,
) -> Result<Vec<S>> {
    check_state(x, state)?;
    let terms = build_terms(state);
    let ll = term_logliks(x, &terms);
    let per = state.config.ocular.len();
    let log_w = -S::from_usize_lossy(per).ln();
    Ok(ll
        .chunks(per)
        .map(|c| log_w + log_sum_exp(c))
        .collect())
}

/// Exact log marginal of the ocular emission mixture.
pub fn ocular_loglik<S: Scalar>(x: &Raster<S>, state: &MixtureState<S>) -> Result<S> {
    let comp = ocular_component_logliks(x, state)?;
    let log_pi = log_softmax(&state.pi_logits);
    let terms: Vec<S> = comp.iter().zip(&log_pi).map(|(&a, &b)| a + b).collect();
    Ok(log_sum_exp(&terms))
}

pub(super) fn ocular_batch_grad<S: Scalar>(
    images: &[Raster<S>],
    batch: &[usize],
    state: &MixtureState<S>,
) -> Result<BatchGrad<S>> {
    check_state(&images[batch[0]], state)?;
    let terms = build_terms(state);
    let per = state.config.ocular.len();
    let kk = state.components();
    let n = images[batch[0]].len();
    let log_w = -S::from_usize_lossy(per).ln();
    let log_pi = log_softmax(&state.pi_logits);
    let pi = state.mixing_weights();

    let mut grad = state.zeros_like();
    let mut x_sum = vec![vec![S::zero(); n]; terms.len()];
    let mut r_sum = vec![S::zero(); terms.len()];
    let mut per_example = Vec::with_capacity(batch.len());
    let mut responsibilities = Vec::with_capacity(batch.len());
    for &d in batch {
        let x = &images[d];
        check_state(x, state)?;
        let mut joint = term_logliks(x, &terms);
        for (t, v) in terms.iter().zip(joint.iter_mut()) {
            *v += log_pi[t.k] + log_w;
        }
        let lse = log_sum_exp(&joint);
        let mut resp = vec![S::zero(); kk];
        for (ti, &v) in joint.iter().enumerate() {
            let r = (v - lse).exp();
            if r == S::zero() {
                continue;
            }
            resp[terms[ti].k] += r;
            r_sum[ti] += r;
            for (acc, &xv) in x_sum[ti].iter_mut().zip(x.as_slice()) {
                *acc += r * xv;
            }
        }
        for k in 0..kk {
            grad.pi_logits[k] += resp[k] - pi[k];
        }
        per_example.push(lse);
        responsibilities.push(resp);
    }

    let (h, w) = state.dims();
    let eps = S::lit(PROB_EPS);
    let mut grad_prob = vec![vec![S::zero(); n]; kk];
    for (ti, t) in terms.iter().enumerate() {
        if r_sum[ti] == S::zero() {
            continue;
        }
        let (oh, ov) = t.offset;
        for p in 0..n {
            let s = t.shifted[p];
            let raw = if s > S::zero() { s.powf(t.exponent) } else { S::zero() };
            if !(raw > eps && raw < S::one() - eps) {
                continue;
            }
            let prob = t.prob[p];
            let xs = x_sum[ti][p];
            let gp = xs / prob - (r_sum[ti] - xs) / (S::one() - prob);
            let gs = gp * t.exponent * raw / s;
            let (i, j) = ((p / w) as isize - ov, (p % w) as isize - oh);
            if i >= 0 && j >= 0 && (i as usize) < h && (j as usize) < w {
                grad_prob[t.k][i as usize * w + j as usize] += gs;
            }
        }
    }
    for k in 0..kk {
        let tp = state.template_probs(k);
        for ((g, &gp), &t) in grad.templates[k]
            .as_mut_slice()
            .iter_mut()
            .zip(&grad_prob[k])
            .zip(tp.as_slice())
        {
            *g = gp * t * (S::one() - t);
        }
    }
    Ok(BatchGrad {
        value: per_example.iter().copied().sum(),
        lambda_grads: vec![vec![[S::zero(); N_SPATIAL]; kk]; batch.len()],
        per_example,
        params: grad,
        responsibilities,
    })
}
