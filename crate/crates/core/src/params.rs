//! Uniform traversal of parameter containers.
//!
//! Every learnable container exposes its buffers in a fixed order so that
//! optimizers, gradient accumulators and finite-difference checks can treat
//! it as one flat vector.

use crate::scalar::Scalar;

pub trait ParamSet<S: Scalar> {
    fn visit(&self, f: &mut dyn FnMut(&[S]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [S]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |s| n += s.len());
        n
    }

    fn flatten(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |s| out.extend_from_slice(s));
        out
    }

    /// Overwrite all parameters from a flat vector produced by [`ParamSet::flatten`].
    fn assign_flat(&mut self, flat: &[S]) {
        let mut pos = 0;
        self.visit_mut(&mut |s| {
            s.copy_from_slice(&flat[pos..pos + s.len()]);
            pos += s.len();
        });
        assert_eq!(pos, flat.len(), "flat parameter length mismatch");
    }

    fn fill(&mut self, value: S) {
        self.visit_mut(&mut |s| s.iter_mut().for_each(|v| *v = value));
    }

    /// `self += alpha * other` for containers of identical layout.
    fn add_scaled(&mut self, alpha: S, other: &Self)
    where
        Self: Sized,
    {
        let flat = other.flatten();
        let mut pos = 0;
        self.visit_mut(&mut |s| {
            let n = s.len();
            for (v, &o) in s.iter_mut().zip(&flat[pos..pos + n]) {
                *v += alpha * o;
            }
            pos += n;
        });
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |s| ok &= s.iter().all(|v| v.is_finite()));
        ok
    }
}

/// Adaptive-moment gradient ascent over a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub learning_rate: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    step: i32,
    m: Vec<S>,
    v: Vec<S>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(learning_rate: S, size: usize) -> Self {
        Self {
            learning_rate,
            beta1: S::lit(0.9),
            beta2: S::lit(0.999),
            eps: S::lit(1e-8),
            step: 0,
            m: vec![S::zero(); size],
            v: vec![S::zero(); size],
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One ascent step on `params` along `grad` (both flattened in visit order).
    pub fn ascend<P: ParamSet<S>>(&mut self, params: &mut P, grad: &P) {
        let g = grad.flatten();
        assert_eq!(g.len(), self.m.len(), "optimizer state size mismatch");
        self.step += 1;
        let bc1 = S::one() - self.beta1.powi(self.step);
        let bc2 = S::one() - self.beta2.powi(self.step);
        let (b1, b2) = (self.beta1, self.beta2);
        let (m, v) = (&mut self.m, &mut self.v);
        let lr = self.learning_rate;
        let eps = self.eps;
        let mut pos = 0;
        params.visit_mut(&mut |s| {
            for p in s.iter_mut() {
                let gi = g[pos];
                m[pos] = b1 * m[pos] + (S::one() - b1) * gi;
                v[pos] = b2 * v[pos] + (S::one() - b2) * gi * gi;
                let mhat = m[pos] / bc1;
                let vhat = v[pos] / bc2;
                *p += lr * mhat / (vhat.sqrt() + eps);
                pos += 1;
            }
        });
    }
}

impl<S: Scalar> ParamSet<S> for Vec<S> {
    fn visit(&self, f: &mut dyn FnMut(&[S])) {
        f(self)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [S])) {
        f(self)
    }
}
