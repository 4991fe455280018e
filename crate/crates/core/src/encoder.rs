//! Convolutional inference network `q(z | R, k; φ)`.
//!
//! Two stride-2 3x3 convolutions (8 then 16 channels, `tanh`), flattened and
//! concatenated with a one-hot component id, then one linear layer emitting
//! `[μ; log σ²]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::editor::EditorPosterior;
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::raster::Raster;
use crate::scalar::{axpy, dot, tanh, Scalar};

const KSIZE: usize = 3;
const KAREA: usize = KSIZE * KSIZE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderDims {
    pub height: usize,
    pub width: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub z_dim: usize,
    pub components: usize,
}

impl EncoderDims {
    pub fn new(height: usize, width: usize, z_dim: usize, components: usize) -> Self {
        Self {
            height,
            width,
            conv1: 8,
            conv2: 16,
            z_dim,
            components,
        }
    }

    fn half(n: usize) -> usize {
        n.div_ceil(2)
    }

    fn layer1(&self) -> (usize, usize) {
        (Self::half(self.height), Self::half(self.width))
    }

    fn layer2(&self) -> (usize, usize) {
        let (h, w) = self.layer1();
        (Self::half(h), Self::half(w))
    }

    pub fn features(&self) -> usize {
        let (h, w) = self.layer2();
        self.conv2 * h * w
    }

    fn fc_in(&self) -> usize {
        self.features() + self.components
    }

    fn fc_out(&self) -> usize {
        2 * self.z_dim
    }
}

/// Parameters `φ` of the inference network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams<S> {
    pub dims: EncoderDims,
    /// `conv1 x 1 x 3 x 3`
    pub conv1_w: Vec<S>,
    pub conv1_b: Vec<S>,
    /// `conv2 x conv1 x 3 x 3`
    pub conv2_w: Vec<S>,
    pub conv2_b: Vec<S>,
    /// `2·z_dim x (features + components)`
    pub fc_w: Vec<S>,
    pub fc_b: Vec<S>,
}

impl<S: Scalar> EncoderParams<S> {
    pub fn zeros(dims: EncoderDims) -> Self {
        Self {
            dims,
            conv1_w: vec![S::zero(); dims.conv1 * KAREA],
            conv1_b: vec![S::zero(); dims.conv1],
            conv2_w: vec![S::zero(); dims.conv2 * dims.conv1 * KAREA],
            conv2_b: vec![S::zero(); dims.conv2],
            fc_w: vec![S::zero(); dims.fc_out() * dims.fc_in()],
            fc_b: vec![S::zero(); dims.fc_out()],
        }
    }

    pub fn init<R: Rng + ?Sized>(dims: EncoderDims, rng: &mut R) -> Self {
        let mut p = Self::zeros(dims);
        let mut fill = |v: &mut [S], fan_in: usize, fan_out: usize, gain: f64| {
            let lim = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
            v.iter_mut()
                .for_each(|w| *w = S::lit(rng.random_range(-lim..lim)));
        };
        fill(&mut p.conv1_w, KAREA, dims.conv1 * KAREA, 1.0);
        fill(&mut p.conv2_w, dims.conv1 * KAREA, dims.conv2 * KAREA, 1.0);
        fill(&mut p.fc_w, dims.fc_in(), dims.fc_out(), 0.5);
        p
    }
}

impl<S: Scalar> ParamSet<S> for EncoderParams<S> {
    fn visit(&self, f: &mut dyn FnMut(&[S])) {
        f(&self.conv1_w);
        f(&self.conv1_b);
        f(&self.conv2_w);
        f(&self.conv2_b);
        f(&self.fc_w);
        f(&self.fc_b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [S])) {
        f(&mut self.conv1_w);
        f(&mut self.conv1_b);
        f(&mut self.conv2_w);
        f(&mut self.conv2_b);
        f(&mut self.fc_w);
        f(&mut self.fc_b);
    }
}

/// Gathers the zero-padded 3x3 neighbourhood of every stride-2 output site:
/// row `p` holds `cin·9` values in the same order as a weight row.
fn im2col<S: Scalar>(input: &[S], cin: usize, h: usize, w: usize) -> Vec<S> {
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let row_len = cin * KAREA;
    let mut cols = vec![S::zero(); ho * wo * row_len];
    for i in 0..ho {
        for j in 0..wo {
            let row = &mut cols[(i * wo + j) * row_len..(i * wo + j + 1) * row_len];
            for ci in 0..cin {
                let plane = &input[ci * h * w..(ci + 1) * h * w];
                for u in 0..KSIZE {
                    let y = 2 * i + u;
                    if y == 0 || y > h {
                        continue;
                    }
                    for v in 0..KSIZE {
                        let x = 2 * j + v;
                        if x == 0 || x > w {
                            continue;
                        }
                        row[ci * KAREA + u * KSIZE + v] = plane[(y - 1) * w + x - 1];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add of patch gradients back onto the input grid; inverse of [`im2col`].
fn col2im_add<S: Scalar>(cols: &[S], cin: usize, h: usize, w: usize, out: &mut [S]) {
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let row_len = cin * KAREA;
    for i in 0..ho {
        for j in 0..wo {
            let row = &cols[(i * wo + j) * row_len..(i * wo + j + 1) * row_len];
            for ci in 0..cin {
                for u in 0..KSIZE {
                    let y = 2 * i + u;
                    if y == 0 || y > h {
                        continue;
                    }
                    for v in 0..KSIZE {
                        let x = 2 * j + v;
                        if x == 0 || x > w {
                            continue;
                        }
                        out[ci * h * w + (y - 1) * w + x - 1] += row[ci * KAREA + u * KSIZE + v];
                    }
                }
            }
        }
    }
}

/// Stride-2, pad-1, 3x3 convolution followed by `tanh`.
#[allow(clippy::too_many_arguments)]
fn conv_s2_forward<S: Scalar>(
    input: &[S],
    cin: usize,
    h: usize,
    w: usize,
    weights: &[S],
    bias: &[S],
    cout: usize,
    out: &mut [S],
) {
    let sites = h.div_ceil(2) * w.div_ceil(2);
    let row_len = cin * KAREA;
    let cols = im2col(input, cin, h, w);
    for co in 0..cout {
        let kw = &weights[co * row_len..(co + 1) * row_len];
        for p in 0..sites {
            let acc = bias[co] + dot(kw, &cols[p * row_len..(p + 1) * row_len]);
            out[co * sites + p] = tanh(acc);
        }
    }
}

/// Reverse of [`conv_s2_forward`] given `∂L/∂out` *after* the `tanh`.
#[allow(clippy::too_many_arguments)]
fn conv_s2_backward<S: Scalar>(
    input: &[S],
    cin: usize,
    h: usize,
    w: usize,
    weights: &[S],
    activations: &[S],
    grad_act: &[S],
    cout: usize,
    scale: S,
    grad_w: Option<(&mut [S], &mut [S])>,
    grad_input: &mut [S],
) {
    let sites = h.div_ceil(2) * w.div_ceil(2);
    let row_len = cin * KAREA;
    let cols = im2col(input, cin, h, w);
    let grad_pre: Vec<S> = grad_act
        .iter()
        .zip(activations)
        .map(|(&g, &a)| g * (S::one() - a * a))
        .collect();
    let mut grad_cols = vec![S::zero(); cols.len()];
    for co in 0..cout {
        let kw = &weights[co * row_len..(co + 1) * row_len];
        for p in 0..sites {
            let g = grad_pre[co * sites + p];
            if g != S::zero() {
                axpy(g, kw, &mut grad_cols[p * row_len..(p + 1) * row_len]);
            }
        }
    }
    if let Some((gw, gb)) = grad_w {
        for co in 0..cout {
            let gpre = &grad_pre[co * sites..(co + 1) * sites];
            gb[co] += scale * gpre.iter().copied().sum::<S>();
            let gw_row = &mut gw[co * row_len..(co + 1) * row_len];
            for (p, &g) in gpre.iter().enumerate() {
                if g != S::zero() {
                    axpy(scale * g, &cols[p * row_len..(p + 1) * row_len], gw_row);
                }
            }
        }
    }
    col2im_add(&grad_cols, cin, h, w, grad_input);
}

/// Activations of one encoder evaluation.
#[derive(Clone, Debug)]
pub struct EncoderTrace<S> {
    input: Vec<S>,
    act1: Vec<S>,
    act2: Vec<S>,
    component: usize,
}

/// Map a residual image and component id to the Gaussian proposal over `z`.
pub fn encode_residual<S: Scalar>(
    residual: &Raster<S>,
    k: usize,
    phi: &EncoderParams<S>,
) -> Result<(EditorPosterior<S>, EncoderTrace<S>)> {
    let d = phi.dims;
    if k >= d.components {
        return Err(Error::arg(format!(
            "component {k} out of range for {} components",
            d.components
        )));
    }
    if residual.dims() != (d.height, d.width) {
        return Err(Error::shape(format!(
            "encoder expects {}x{}, got {:?}",
            d.height,
            d.width,
            residual.dims()
        )));
    }
    let (h1, w1) = d.layer1();
    let (h2, w2) = d.layer2();
    let input = residual.as_slice().to_vec();
    let mut act1 = vec![S::zero(); d.conv1 * h1 * w1];
    conv_s2_forward(
        &input,
        1,
        d.height,
        d.width,
        &phi.conv1_w,
        &phi.conv1_b,
        d.conv1,
        &mut act1,
    );
    let mut act2 = vec![S::zero(); d.conv2 * h2 * w2];
    conv_s2_forward(&act1, d.conv1, h1, w1, &phi.conv2_w, &phi.conv2_b, d.conv2, &mut act2);

    let fin = d.fc_in();
    let feat = d.features();
    let out: Vec<S> = (0..d.fc_out())
        .map(|o| {
            let row = &phi.fc_w[o * fin..(o + 1) * fin];
            phi.fc_b[o]
                + row[feat + k]
                + dot(&row[..feat], &act2)
        })
        .collect();
    let post = EditorPosterior {
        mu: out[..d.z_dim].to_vec(),
        log_var: out[d.z_dim..].to_vec(),
    };
    Ok((
        post,
        EncoderTrace {
            input,
            act1,
            act2,
            component: k,
        },
    ))
}

/// Reverse pass of [`encode_residual`]; returns `∂L/∂residual`.
pub fn encoder_backward<S: Scalar>(
    trace: &EncoderTrace<S>,
    phi: &EncoderParams<S>,
    grad_mu: &[S],
    grad_log_var: &[S],
    scale: S,
    mut grad_phi: Option<&mut EncoderParams<S>>,
) -> Vec<S> {
    let d = phi.dims;
    let (h1, w1) = d.layer1();
    let fin = d.fc_in();
    let feat = d.features();
    let grad_out: Vec<S> = grad_mu.iter().chain(grad_log_var).copied().collect();

    let mut grad_act2 = vec![S::zero(); feat];
    for (o, &g) in grad_out.iter().enumerate() {
        if g == S::zero() {
            continue;
        }
        let row = &phi.fc_w[o * fin..o * fin + feat];
        for (ga, &wv) in grad_act2.iter_mut().zip(row) {
            *ga += g * wv;
        }
    }
    if let Some(gp) = grad_phi.as_deref_mut() {
        for (o, &g) in grad_out.iter().enumerate() {
            let gs = scale * g;
            gp.fc_b[o] += gs;
            let row = &mut gp.fc_w[o * fin..(o + 1) * fin];
            for (wv, &a) in row[..feat].iter_mut().zip(&trace.act2) {
                *wv += gs * a;
            }
            row[feat + trace.component] += gs;
        }
    }

    let mut grad_act1 = vec![S::zero(); trace.act1.len()];
    conv_s2_backward(
        &trace.act1,
        d.conv1,
        h1,
        w1,
        &phi.conv2_w,
        &trace.act2,
        &grad_act2,
        d.conv2,
        scale,
        grad_phi
            .as_deref_mut()
            .map(|p| (&mut p.conv2_w[..], &mut p.conv2_b[..])),
        &mut grad_act1,
    );
    let mut grad_input = vec![S::zero(); trace.input.len()];
    conv_s2_backward(
        &trace.input,
        1,
        d.height,
        d.width,
        &phi.conv1_w,
        &trace.act1,
        &grad_act1,
        d.conv1,
        scale,
        grad_phi
            .as_deref_mut()
            .map(|p| (&mut p.conv1_w[..], &mut p.conv1_b[..])),
        &mut grad_input,
    );
    grad_input
}
