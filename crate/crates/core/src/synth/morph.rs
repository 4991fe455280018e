use serde::{Deserialize, Serialize};

use crate::corpus::GlyphImage;
use crate::error::{Error, Result};
use crate::raster::Raster;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphKind {
    Erode,
    Dilate,
}

/// Running min (erode) or max (dilate) along one axis, zero outside the grid.
fn pass(src: &[f64], h: usize, w: usize, radius: usize, horizontal: bool, take_min: bool) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let (pos, len) = if horizontal { (j, w) } else { (i, h) };
            let lo = pos as isize - radius as isize;
            let hi = pos + radius;
            let mut acc = if take_min { f64::INFINITY } else { f64::NEG_INFINITY };
            if lo < 0 || hi >= len {
                acc = if take_min { acc.min(0.0) } else { acc.max(0.0) };
            }
            for t in lo.max(0) as usize..=hi.min(len - 1) {
                let v = if horizontal { src[i * w + t] } else { src[t * w + j] };
                acc = if take_min { acc.min(v) } else { acc.max(v) };
            }
            out[i * w + j] = acc;
        }
    }
    out
}

/// Square all-ones structuring element of odd side `kernel_size`.
pub fn morph_raster(img: &Raster<f64>, kind: MorphKind, kernel_size: usize) -> Result<Raster<f64>> {
    if kernel_size % 2 == 0 {
        return Err(Error::arg(format!(
            "morphology kernel size must be odd, got {kernel_size}"
        )));
    }
    let radius = kernel_size / 2;
    if radius == 0 {
        return Ok(img.clone());
    }
    let (h, w) = img.dims();
    let take_min = kind == MorphKind::Erode;
    let rows = pass(img.as_slice(), h, w, radius, true, take_min);
    let both = pass(&rows, h, w, radius, false, take_min);
    Raster::from_vec(h, w, both)
}

/// Erode (window min) or dilate (window max) with zero padding.
pub fn morph(img: &GlyphImage, kind: MorphKind, kernel_size: usize) -> Result<GlyphImage> {
    Ok(GlyphImage {
        pixels: morph_raster(&img.pixels, kind, kernel_size)?,
        ..img.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(n: usize, at: (usize, usize)) -> Raster<f64> {
        let mut r = Raster::zeros(n, n);
        r[at] = 1.0;
        r
    }

    #[test]
    fn dilate_single_pixel_gives_block() {
        let out = morph_raster(&dot(7, (3, 3)), MorphKind::Dilate, 3).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                let inside = (2..=4).contains(&i) && (2..=4).contains(&j);
                assert_eq!(out[(i, j)], if inside { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn erode_single_pixel_clears() {
        let out = morph_raster(&dot(7, (3, 3)), MorphKind::Erode, 3).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(morph_raster(&dot(5, (2, 2)), MorphKind::Erode, 2).is_err());
        assert!(morph_raster(&dot(5, (2, 2)), MorphKind::Erode, 0).is_err());
    }

    #[test]
    fn border_pixels_erode_against_zero_padding() {
        let full = Raster::filled(5, 5, 1.0);
        let out = morph_raster(&full, MorphKind::Erode, 3).unwrap();
        assert_eq!(out[(0, 2)], 0.0);
        assert_eq!(out[(2, 2)], 1.0);
    }
}
