//! Undoing inferred placements so that a cluster's glyphs can be stacked.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mixture::{LambdaTable, MixtureState};
use crate::raster::Raster;
use crate::warp::{inverse_align, warp, SpatialParams};

/// Every image warped by the inverse of the `γ` of its assigned component.
///
/// Variants without spatial latents return the identity-warped images so
/// that both stacks see the same attention blur.
pub fn aligned_stack(
    images: &[Raster<f64>],
    state: &MixtureState<f64>,
    lambdas: &LambdaTable<f64>,
    assignments: &[usize],
) -> Result<Vec<Raster<f64>>> {
    if assignments.len() != images.len() || lambdas.examples() < images.len() {
        return Err(Error::arg("assignments and lambda table must cover every image"));
    }
    let bw = state.config.bandwidth;
    images
        .par_iter()
        .enumerate()
        .map(|(d, x)| {
            if state.variant().uses_warp() {
                inverse_align(x, lambdas.get(d, assignments[d]), bw)
            } else {
                warp(x, &SpatialParams::zero(), bw)
            }
        })
        .collect()
}

/// The same images through the identity warp, for a like-for-like comparison.
pub fn unaligned_stack(images: &[Raster<f64>], bandwidth: f64) -> Result<Vec<Raster<f64>>> {
    images
        .par_iter()
        .map(|x| warp(x, &SpatialParams::zero(), bandwidth))
        .collect()
}

pub fn pixel_mean(stack: &[Raster<f64>]) -> Result<Raster<f64>> {
    let first = stack.first().ok_or_else(|| Error::arg("empty stack"))?;
    let mut acc = Raster::<f64>::zeros(first.height(), first.width());
    for r in stack {
        r.ensure_same_dims(first, "stack image")?;
        for (a, &v) in acc.as_mut_slice().iter_mut().zip(r.as_slice()) {
            *a += v;
        }
    }
    let inv = 1.0 / stack.len() as f64;
    Ok(acc.map(|v| v * inv))
}

/// Per-pixel variance across the stack, averaged over pixels.
pub fn mean_pixel_variance(stack: &[Raster<f64>]) -> Result<f64> {
    let mean = pixel_mean(stack)?;
    let n = stack.len() as f64;
    let total: f64 = stack
        .iter()
        .map(|r| {
            r.as_slice()
                .iter()
                .zip(mean.as_slice())
                .map(|(&v, &m)| (v - m) * (v - m))
                .sum::<f64>()
        })
        .sum();
    Ok(total / (n * mean.len() as f64))
}
