//! Differentiable affine warping through per-pixel Gaussian attention.
//!
//! Every output pixel attends to a Gaussian bump over the source grid whose
//! mode is the inverse-affine image of that pixel. The forward transform of a
//! template point `p` is
//!
//! ```text
//! q = R(r) · Sh(s_h, s_v) · (1 + a) · (p - c) + c + (o_h, o_v)
//! ```
//!
//! (scale, then shear, then rotation about the canvas center `c`, then
//! translation), so output pixel `q` reads from
//! `p = c + (1 + a)^-1 · Sh^-1 · R(-r) · (q - c - o)`. Coordinates are
//! `(x, y) = (column, row)`.
//!
//! The Gaussian is isotropic, so a pixel's weights factor into a row profile
//! and a column profile, each normalized over its axis; the product is then
//! normalized over the whole grid. Profiles are truncated to a window wide
//! enough that the discarded mass is below double precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::scalar::Scalar;

/// Number of interpretable spatial latents.
pub const N_SPATIAL: usize = 6;

/// Attention bandwidth (in source pixels) used unless configured otherwise.
pub const DEFAULT_BANDWIDTH: f64 = 0.3;

/// Rotation, offsets, shears and scale offset of one glyph placement.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpatialParams<S> {
    pub r: S,
    pub o_h: S,
    pub o_v: S,
    pub s_h: S,
    pub s_v: S,
    pub a: S,
}

impl<S: Scalar> SpatialParams<S> {
    pub fn zero() -> Self {
        Self::from_array([S::zero(); N_SPATIAL])
    }

    /// Components in the fixed order `[r, o_h, o_v, s_h, s_v, a]`.
    pub fn to_array(&self) -> [S; N_SPATIAL] {
        [self.r, self.o_h, self.o_v, self.s_h, self.s_v, self.a]
    }

    pub fn from_array(v: [S; N_SPATIAL]) -> Self {
        Self {
            r: v[0],
            o_h: v[1],
            o_v: v[2],
            s_h: v[3],
            s_v: v[4],
            a: v[5],
        }
    }

    pub fn offset(o_h: S, o_v: S) -> Self {
        Self {
            o_h,
            o_v,
            ..Self::zero()
        }
    }

    /// Effective scale `1 + a`.
    pub fn scale(&self) -> S {
        S::one() + self.a
    }

    /// Component-wise inverse: negated rotation, offsets and shears and
    /// reciprocal scale. Exact only when a single component is non-zero.
    pub fn inverse(&self) -> Self {
        Self {
            r: -self.r,
            o_h: -self.o_h,
            o_v: -self.o_v,
            s_h: -self.s_h,
            s_v: -self.s_v,
            a: S::one() / self.scale() - S::one(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn cast<T: Scalar>(&self) -> SpatialParams<T> {
        SpatialParams::from_array(self.to_array().map(|v| T::lit(v.as_f64())))
    }
}

/// Standard deviations of the zero-mean Gaussian prior on each latent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialPrior {
    pub sigma_r: f64,
    pub sigma_o: f64,
    pub sigma_s: f64,
    pub sigma_a: f64,
}

impl Default for SpatialPrior {
    fn default() -> Self {
        Self {
            sigma_r: 0.03,
            sigma_o: 1.5,
            sigma_s: 0.03,
            sigma_a: 0.05,
        }
    }
}

impl SpatialPrior {
    pub fn validate(&self) -> Result<()> {
        let all = [self.sigma_r, self.sigma_o, self.sigma_s, self.sigma_a];
        if all.iter().all(|s| s.is_finite() && *s > 0.0) {
            Ok(())
        } else {
            Err(Error::arg(format!("prior deviations must be positive: {self:?}")))
        }
    }

    /// Per-component deviations in `[r, o_h, o_v, s_h, s_v, a]` order.
    pub fn sigmas(&self) -> [f64; N_SPATIAL] {
        [
            self.sigma_r,
            self.sigma_o,
            self.sigma_o,
            self.sigma_s,
            self.sigma_s,
            self.sigma_a,
        ]
    }
}

/// Sum of independent Gaussian log densities of the six latents.
pub fn lambda_log_prior<S: Scalar>(lambda: &SpatialParams<S>, prior: &SpatialPrior) -> S {
    let half_ln_2pi = S::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
    lambda
        .to_array()
        .iter()
        .zip(prior.sigmas())
        .map(|(&x, sigma)| {
            let sigma = S::lit(sigma);
            let u = x / sigma;
            -half_ln_2pi - sigma.ln() - S::lit(0.5) * u * u
        })
        .sum()
}

pub fn lambda_log_prior_grad<S: Scalar>(
    lambda: &SpatialParams<S>,
    prior: &SpatialPrior,
) -> [S; N_SPATIAL] {
    let sig = prior.sigmas();
    let v = lambda.to_array();
    std::array::from_fn(|c| -v[c] / S::lit(sig[c] * sig[c]))
}

type Mat2<S> = [[S; 2]; 2];

fn mat_mul<S: Scalar>(a: &Mat2<S>, b: &Mat2<S>) -> Mat2<S> {
    std::array::from_fn(|i| std::array::from_fn(|j| a[i][0] * b[0][j] + a[i][1] * b[1][j]))
}

fn mat_scale<S: Scalar>(a: &Mat2<S>, s: S) -> Mat2<S> {
    a.map(|row| row.map(|v| v * s))
}

fn mat_add<S: Scalar>(a: &Mat2<S>, b: &Mat2<S>) -> Mat2<S> {
    std::array::from_fn(|i| std::array::from_fn(|j| a[i][j] + b[i][j]))
}

/// The source-sampling matrix and its partial derivatives.
#[derive(Clone, Debug)]
struct SamplingMap<S> {
    center: [S; 2],
    offset: [S; 2],
    m: Mat2<S>,
    dm_r: Mat2<S>,
    dm_sh: Mat2<S>,
    dm_sv: Mat2<S>,
    dm_a: Mat2<S>,
}

impl<S: Scalar> SamplingMap<S> {
    fn new(lambda: &SpatialParams<S>, height: usize, width: usize) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::arg("spatial parameters must be finite"));
        }
        let scale = lambda.scale();
        if scale <= S::zero() {
            return Err(Error::arg("effective scale 1 + a must be positive"));
        }
        let det = S::one() - lambda.s_h * lambda.s_v;
        if det <= S::zero() {
            return Err(Error::arg("shear matrix must be orientation preserving"));
        }
        let (sin, cos) = lambda.r.sin_cos();
        // R(-r) and d/dr R(-r) in (x, y) coordinates.
        let rot_inv = [[cos, sin], [-sin, cos]];
        let drot_inv = [[-sin, cos], [-cos, -sin]];
        let adj = [[S::one(), -lambda.s_h], [-lambda.s_v, S::one()]];
        let shear_inv = mat_scale(&adj, S::one() / det);
        let inv_scale = S::one() / scale;
        let base = mat_mul(&shear_inv, &rot_inv);
        let m = mat_scale(&base, inv_scale);
        let dm_r = mat_scale(&mat_mul(&shear_inv, &drot_inv), inv_scale);
        let det2 = det * det;
        let dshear_h = mat_add(
            &[[S::zero(), -S::one() / det], [S::zero(), S::zero()]],
            &mat_scale(&adj, lambda.s_v / det2),
        );
        let dshear_v = mat_add(
            &[[S::zero(), S::zero()], [-S::one() / det, S::zero()]],
            &mat_scale(&adj, lambda.s_h / det2),
        );
        let dm_sh = mat_scale(&mat_mul(&dshear_h, &rot_inv), inv_scale);
        let dm_sv = mat_scale(&mat_mul(&dshear_v, &rot_inv), inv_scale);
        let dm_a = mat_scale(&m, -inv_scale);
        let two = S::lit(2.0);
        Ok(Self {
            center: [
                S::from_usize_lossy(width - 1) / two,
                S::from_usize_lossy(height - 1) / two,
            ],
            offset: [lambda.o_h, lambda.o_v],
            m,
            dm_r,
            dm_sh,
            dm_sv,
            dm_a,
        })
    }

    #[inline]
    fn displacement(&self, i: usize, j: usize) -> [S; 2] {
        [
            S::from_usize_lossy(j) - self.center[0] - self.offset[0],
            S::from_usize_lossy(i) - self.center[1] - self.offset[1],
        ]
    }

    /// Source point `(x, y)` read by output pixel `(i, j)`.
    #[inline]
    fn source(&self, i: usize, j: usize) -> [S; 2] {
        let d = self.displacement(i, j);
        [
            self.center[0] + self.m[0][0] * d[0] + self.m[0][1] * d[1],
            self.center[1] + self.m[1][0] * d[0] + self.m[1][1] * d[1],
        ]
    }

    /// `∂(x, y) / ∂λ` for output pixel `(i, j)`, rows are x then y.
    fn jacobian(&self, i: usize, j: usize) -> [[S; N_SPATIAL]; 2] {
        let d = self.displacement(i, j);
        let apply = |mat: &Mat2<S>, row: usize| mat[row][0] * d[0] + mat[row][1] * d[1];
        std::array::from_fn(|row| {
            [
                apply(&self.dm_r, row),
                -self.m[row][0],
                -self.m[row][1],
                apply(&self.dm_sh, row),
                apply(&self.dm_sv, row),
                apply(&self.dm_a, row),
            ]
        })
    }
}

/// Truncation half-width, in pixels, for a given bandwidth.
fn window_radius(bandwidth: f64) -> usize {
    ((8.0 * bandwidth).ceil() as usize).max(1)
}

/// One normalized 1-D Gaussian profile along an axis of length `n`.
///
/// Writes weights and their derivatives wrt the mode into the slices and
/// returns the first covered index and the number of taps.
fn axis_profile<S: Scalar>(
    mode: S,
    n: usize,
    radius: usize,
    inv_two_var: S,
    inv_var: S,
    q: S,
    w: &mut [S],
    dw: &mut [S],
) -> (usize, usize) {
    let last = S::from_usize_lossy(n - 1);
    let c = mode.max(S::zero()).min(last).round().to_usize().unwrap_or(0);
    let lo = c.saturating_sub(radius);
    let hi = (c + radius).min(n - 1);
    let taps = hi - lo + 1;
    // Unnormalized weights relative to the nearest tap, built by the ratio
    // recurrence of consecutive Gaussian samples instead of one exp per tap.
    let delta = S::from_usize_lossy(c) - mode;
    let two = S::lit(2.0);
    let ci = c - lo;
    let (need_r, need_l) = (ci + 1 < taps, ci > 0);
    // With taps on both sides the mode lies within half a pixel of `c`, so
    // the right ratio is bounded away from zero and the left one follows
    // from `ratio_l · ratio_r = q`.
    let ratio_r = if need_r {
        (-(two * delta + S::one()) * inv_two_var).exp()
    } else {
        S::zero()
    };
    let ratio_l = match (need_l, need_r) {
        (false, _) => S::zero(),
        (true, true) => q / ratio_r,
        (true, false) => (-(S::one() - two * delta) * inv_two_var).exp(),
    };
    w[ci] = S::one();
    let mut ratio = ratio_r;
    for t in ci + 1..taps {
        w[t] = w[t - 1] * ratio;
        ratio *= q;
    }
    let mut ratio = ratio_l;
    for t in (0..ci).rev() {
        w[t] = w[t + 1] * ratio;
        ratio *= q;
    }
    let total: S = w[..taps].iter().copied().sum();
    let mut mean = S::zero();
    for t in 0..taps {
        w[t] /= total;
        mean += w[t] * S::from_usize_lossy(lo + t);
    }
    for t in 0..taps {
        dw[t] = w[t] * (S::from_usize_lossy(lo + t) - mean) * inv_var;
    }
    (lo, taps)
}

/// Per-output-pixel attention over the source grid.
#[derive(Clone, Debug)]
pub struct AttentionMap<S> {
    height: usize,
    width: usize,
    stride: usize,
    map: SamplingMap<S>,
    row0: Vec<u32>,
    col0: Vec<u32>,
    nrows: Vec<u8>,
    ncols: Vec<u8>,
    wy: Vec<S>,
    wx: Vec<S>,
    dwy: Vec<S>,
    dwx: Vec<S>,
}

/// Build the attention map of `lambda` on a `height x width` grid.
pub fn build_attention<S: Scalar>(
    lambda: &SpatialParams<S>,
    (height, width): (usize, usize),
    bandwidth: S,
) -> Result<AttentionMap<S>> {
    if !(bandwidth > S::zero() && bandwidth.is_finite()) {
        return Err(Error::arg(format!(
            "attention bandwidth must be positive, got {bandwidth}"
        )));
    }
    if height == 0 || width == 0 {
        return Err(Error::shape("attention grid must be non-empty"));
    }
    let map = SamplingMap::new(lambda, height, width)?;
    let radius = window_radius(bandwidth.as_f64());
    let stride = 2 * radius + 1;
    let n = height * width;
    let var = bandwidth * bandwidth;
    let inv_two_var = S::one() / (var + var);
    let inv_var = S::one() / var;
    let q = (-(inv_two_var + inv_two_var)).exp();
    let mut att = AttentionMap {
        height,
        width,
        stride,
        map,
        row0: vec![0; n],
        col0: vec![0; n],
        nrows: vec![0; n],
        ncols: vec![0; n],
        wy: vec![S::zero(); n * stride],
        wx: vec![S::zero(); n * stride],
        dwy: vec![S::zero(); n * stride],
        dwx: vec![S::zero(); n * stride],
    };
    for i in 0..height {
        for j in 0..width {
            let px = i * width + j;
            let [sx, sy] = att.map.source(i, j);
            let span = px * stride..(px + 1) * stride;
            let (r0, nr) = axis_profile(
                sy,
                height,
                radius,
                inv_two_var,
                inv_var,
                q,
                &mut att.wy[span.clone()],
                &mut att.dwy[span.clone()],
            );
            let (c0, nc) = axis_profile(
                sx,
                width,
                radius,
                inv_two_var,
                inv_var,
                q,
                &mut att.wx[span.clone()],
                &mut att.dwx[span],
            );
            att.row0[px] = r0 as u32;
            att.nrows[px] = nr as u8;
            att.col0[px] = c0 as u32;
            att.ncols[px] = nc as u8;
        }
    }
    Ok(att)
}

impl<S: Scalar> AttentionMap<S> {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Continuous source location `(row, col)` attended by output `(i, j)`.
    pub fn source(&self, i: usize, j: usize) -> (S, S) {
        let [x, y] = self.map.source(i, j);
        (y, x)
    }

    /// Weight output `(i, j)` places on source `(m, n)`.
    pub fn weight(&self, i: usize, j: usize, m: usize, n: usize) -> S {
        let px = i * self.width + j;
        let base = px * self.stride;
        let (r0, c0) = (self.row0[px] as usize, self.col0[px] as usize);
        if m < r0 || n < c0 || m >= r0 + self.nrows[px] as usize || n >= c0 + self.ncols[px] as usize
        {
            return S::zero();
        }
        self.wy[base + m - r0] * self.wx[base + n - c0]
    }

    /// Dense weight vector of output pixel `(i, j)` over the source grid.
    pub fn dense_row(&self, i: usize, j: usize) -> Raster<S> {
        Raster::from_fn(self.height, self.width, |m, n| self.weight(i, j, m, n))
    }

    /// Source pixel carrying the largest weight for output `(i, j)`.
    pub fn mode(&self, i: usize, j: usize) -> (usize, usize) {
        let px = i * self.width + j;
        let base = px * self.stride;
        let argmax = |w: &[S], n: usize| {
            (0..n)
                .max_by(|&a, &b| w[base + a].partial_cmp(&w[base + b]).unwrap())
                .unwrap()
        };
        (
            self.row0[px] as usize + argmax(&self.wy, self.nrows[px] as usize),
            self.col0[px] as usize + argmax(&self.wx, self.ncols[px] as usize),
        )
    }

    pub fn row_total(&self, i: usize, j: usize) -> S {
        let px = i * self.width + j;
        let base = px * self.stride;
        let sy: S = self.wy[base..base + self.nrows[px] as usize].iter().copied().sum();
        let sx: S = self.wx[base..base + self.ncols[px] as usize].iter().copied().sum();
        sy * sx
    }

    /// `out(i, j) = Σ_{m,n} H_ij(m, n) · src(m, n)`.
    pub fn apply(&self, src: &Raster<S>) -> Result<Raster<S>> {
        if src.dims() != self.dims() {
            return Err(Error::shape(format!(
                "warp source is {:?}, attention grid is {:?}",
                src.dims(),
                self.dims()
            )));
        }
        let data = src.as_slice();
        let mut out = Vec::with_capacity(self.height * self.width);
        for px in 0..self.height * self.width {
            let base = px * self.stride;
            let (r0, c0) = (self.row0[px] as usize, self.col0[px] as usize);
            let nc = self.ncols[px] as usize;
            let wx = &self.wx[base..base + nc];
            let mut acc = S::zero();
            for (a, &wy) in self.wy[base..base + self.nrows[px] as usize].iter().enumerate() {
                let row = &data[(r0 + a) * self.width + c0..(r0 + a) * self.width + c0 + nc];
                let inner: S = row.iter().zip(wx).map(|(&t, &w)| t * w).sum();
                acc += wy * inner;
            }
            out.push(acc);
        }
        Raster::from_vec(self.height, self.width, out)
    }

    /// Reverse pass of [`AttentionMap::apply`].
    ///
    /// Accumulates `∂L/∂src` into `grad_src` when given and returns `∂L/∂λ`.
    pub fn backward(
        &self,
        src: &Raster<S>,
        grad_out: &[S],
        mut grad_src: Option<&mut [S]>,
    ) -> [S; N_SPATIAL] {
        let data = src.as_slice();
        let mut grad_lambda = [S::zero(); N_SPATIAL];
        for i in 0..self.height {
            for j in 0..self.width {
                let px = i * self.width + j;
                let g = grad_out[px];
                if g == S::zero() {
                    continue;
                }
                let base = px * self.stride;
                let (r0, c0) = (self.row0[px] as usize, self.col0[px] as usize);
                let (nr, nc) = (self.nrows[px] as usize, self.ncols[px] as usize);
                let wx = &self.wx[base..base + nc];
                let dwx = &self.dwx[base..base + nc];
                let mut gy = S::zero();
                let mut gx = S::zero();
                for a in 0..nr {
                    let off = (r0 + a) * self.width + c0;
                    let row = &data[off..off + nc];
                    let mut inner = S::zero();
                    let mut dinner = S::zero();
                    for b in 0..nc {
                        inner += wx[b] * row[b];
                        dinner += dwx[b] * row[b];
                    }
                    let wy = self.wy[base + a];
                    gy += self.dwy[base + a] * inner;
                    gx += wy * dinner;
                    if let Some(gs) = grad_src.as_deref_mut() {
                        let scaled = g * wy;
                        for (b, &w) in wx.iter().enumerate() {
                            gs[off + b] += scaled * w;
                        }
                    }
                }
                let jac = self.map.jacobian(i, j);
                for c in 0..N_SPATIAL {
                    grad_lambda[c] += g * (gx * jac[0][c] + gy * jac[1][c]);
                }
            }
        }
        grad_lambda
    }
}

/// `T̃ = warp(T, λ)` on the template grid.
pub fn warp<S: Scalar>(
    template: &Raster<S>,
    lambda: &SpatialParams<S>,
    bandwidth: S,
) -> Result<Raster<S>> {
    build_attention(lambda, template.dims(), bandwidth)?.apply(template)
}

/// Undo a placement: warp the observed image with the inverse parameters.
pub fn inverse_align<S: Scalar>(
    image: &Raster<S>,
    lambda: &SpatialParams<S>,
    bandwidth: S,
) -> Result<Raster<S>> {
    warp(image, &lambda.inverse(), bandwidth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Raster<f64> {
        Raster::from_fn(h, w, |i, j| ((i * 7 + j * 3) % 11) as f64 / 10.0)
    }

    #[test]
    fn identity_self_weight_exceeds_098() {
        let att = build_attention(&SpatialParams::<f64>::zero(), (32, 32), 0.3).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                assert!(att.weight(i, j, i, j) >= 0.98);
            }
        }
        // Interior share matches the normalized grid Gaussian exactly.
        let e = (-1.0_f64 / 0.18).exp();
        let e4 = (-4.0_f64 / 0.18).exp();
        let axis = 1.0 / (1.0 + 2.0 * e + 2.0 * e4);
        assert!((att.weight(16, 16, 16, 16) - axis * axis).abs() < 1e-9);
    }

    #[test]
    fn offset_moves_mode_left() {
        let att = build_attention(&SpatialParams::offset(2.0, 0.0), (32, 32), 0.3).unwrap();
        assert_eq!(att.mode(10, 12), (10, 10));
        let att = build_attention(&SpatialParams::offset(0.0, 3.0), (32, 32), 0.3).unwrap();
        assert_eq!(att.mode(10, 12), (7, 12));
    }

    #[test]
    fn center_is_fixed_point_of_scale() {
        let lambda = SpatialParams {
            a: 1.0_f64,
            ..SpatialParams::zero()
        };
        let att = build_attention(&lambda, (33, 33), 0.3).unwrap();
        assert_eq!(att.mode(16, 16), (16, 16));
        let (y, x) = att.source(16, 16);
        assert!((y - 16.0).abs() < 1e-12 && (x - 16.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_bandwidth_and_scale() {
        let z = SpatialParams::<f64>::zero();
        assert!(build_attention(&z, (8, 8), 0.0).is_err());
        assert!(build_attention(&z, (8, 8), -1.0).is_err());
        let bad = SpatialParams {
            a: -1.0,
            ..SpatialParams::zero()
        };
        assert!(build_attention(&bad, (8, 8), 0.3).is_err());
    }

    #[test]
    fn identity_warp_is_close() {
        let t = ramp(16, 16);
        let out = warp(&t, &SpatialParams::zero(), 0.3).unwrap();
        assert!(out.max_abs_diff(&t) <= 0.02);
    }

    #[test]
    fn far_offsets_stay_normalized() {
        let lambda = SpatialParams::offset(-40.0_f64, 55.0);
        let att = build_attention(&lambda, (12, 12), 0.3).unwrap();
        for i in 0..12 {
            for j in 0..12 {
                assert!((att.row_total(i, j) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prior_at_mode_and_one_sigma() {
        let prior = SpatialPrior::default();
        let mode: f64 = prior
            .sigmas()
            .iter()
            .map(|s| -0.5 * (2.0 * std::f64::consts::PI * s * s).ln())
            .sum();
        assert!((lambda_log_prior(&SpatialParams::<f64>::zero(), &prior) - mode).abs() < 1e-12);
        let one_sigma = SpatialParams::<f64>::from_array(prior.sigmas());
        assert!((lambda_log_prior(&one_sigma, &prior) - (mode - 3.0)).abs() < 1e-12);
    }

    #[test]
    fn inverse_of_scale_is_reciprocal() {
        let l = SpatialParams {
            a: 0.25,
            ..SpatialParams::<f64>::zero()
        };
        assert!((l.inverse().scale() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn weights_match_direct_gaussian_evaluation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let two_var = 2.0 * 0.3 * 0.3;
        let profile = |mode: f64, n: usize| {
            let c = mode.clamp(0.0, (n - 1) as f64).round() as usize;
            let (lo, hi) = (c.saturating_sub(3), (c + 3).min(n - 1));
            let w: Vec<f64> = (lo..=hi).map(|t| (-(t as f64 - mode).powi(2) / two_var).exp()).collect();
            let total: f64 = w.iter().sum();
            (lo, w.into_iter().map(|v| v / total).collect::<Vec<_>>())
        };
        for _ in 0..50 {
            let mut u = |r: f64| rng.random_range(-r..r);
            let l = SpatialParams {
                r: u(0.3),
                o_h: u(5.0),
                o_v: u(5.0),
                s_h: u(0.3),
                s_v: u(0.3),
                a: u(0.3),
            };
            let att = build_attention(&l, (12, 14), 0.3).unwrap();
            for i in 0..12 {
                for j in 0..14 {
                    let [sx, sy] = att.map.source(i, j);
                    let (r0, wy) = profile(sy, 12);
                    let (c0, wx) = profile(sx, 14);
                    for m in 0..12usize {
                        for n in 0..14usize {
                            let want = match (m.checked_sub(r0), n.checked_sub(c0)) {
                                (Some(a), Some(b)) if a < wy.len() && b < wx.len() => wy[a] * wx[b],
                                _ => 0.0,
                            };
                            assert!((att.weight(i, j, m, n) - want).abs() <= 1e-12);
                        }
                    }
                }
            }
        }
    }

    /// Reading through the inverse map and then the forward map lands within
    /// `|E·o| + O(ε²·ρ)` of the start, where `E` is the small linear part.
    /// At the synthetic ranges (angles, shears, scale ≤ 0.05, offsets ≤ 2)
    /// the first-order term is at most 0.15 · 2√2 ≈ 0.42 px.
    #[test]
    fn componentwise_inverse_round_trip_error_is_bounded() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let mut u = |r: f64| rng.random_range(-r..r);
            let l = SpatialParams {
                r: u(0.05),
                o_h: u(2.0),
                o_v: u(2.0),
                s_h: u(0.05),
                s_v: u(0.05),
                a: u(0.05),
            };
            let fwd = SamplingMap::new(&l, 32, 32).unwrap();
            let inv = SamplingMap::new(&l.inverse(), 32, 32).unwrap();
            for i in 0..32 {
                for j in 0..32 {
                    let p = inv.source(i, j);
                    let d = [p[0] - fwd.center[0] - fwd.offset[0], p[1] - fwd.center[1] - fwd.offset[1]];
                    let q = [
                        fwd.center[0] + fwd.m[0][0] * d[0] + fwd.m[0][1] * d[1],
                        fwd.center[1] + fwd.m[1][0] * d[0] + fwd.m[1][1] * d[1],
                    ];
                    worst = worst.max((q[0] - j as f64).hypot(q[1] - i as f64));
                }
            }
        }
        assert!(worst < 0.5, "round trip moved a point by {worst} px");
    }

    #[test]
    fn works_in_single_precision() {
        let t = ramp(8, 8).cast::<f32>();
        let out = warp(&t, &SpatialParams::<f32>::zero(), 0.3).unwrap();
        assert!(out.max_abs_diff(&t) <= 0.02);
    }
}
