//! Procedurally drawn base casts: a few letters, each in three subtly
//! different stroke layouts, standing in for the reference type images.

use crate::corpus::GlyphImage;
use crate::error::{Error, Result};
use crate::raster::Raster;

/// A polyline in glyph-box units: x to the right, y down, both in `[0, 1]`.
type Stroke = &'static [(f64, f64)];

const STROKE_WIDTH: f64 = 0.14;
const SUPERSAMPLE: usize = 4;

/// Letters with built-in casts.
pub const BUILTIN_CLASSES: &[char] = &['E', 'F', 'H', 'R', 'T'];

const BOWL: Stroke = &[
    (0.25, 0.0),
    (0.6, 0.0),
    (0.72, 0.05),
    (0.78, 0.15),
    (0.78, 0.33),
    (0.72, 0.43),
    (0.6, 0.48),
    (0.25, 0.48),
];

fn strokes(class: char, cast: usize) -> Option<Vec<Stroke>> {
    let s: Vec<Stroke> = match (class, cast) {
        ('F', 0) => vec![
            &[(0.25, 0.0), (0.25, 1.0)],
            &[(0.25, 0.0), (0.85, 0.0)],
            &[(0.25, 0.48), (0.55, 0.48)],
        ],
        ('F', 1) => vec![
            &[(0.25, 0.0), (0.25, 1.0)],
            &[(0.25, 0.0), (0.75, 0.0)],
            &[(0.25, 0.48), (0.8, 0.48)],
        ],
        ('F', 2) => vec![
            &[(0.25, 0.0), (0.25, 1.0)],
            &[(0.25, 0.0), (0.85, 0.0)],
            &[(0.25, 0.38), (0.65, 0.38)],
            &[(0.08, 1.0), (0.45, 1.0)],
        ],
        ('E', 0) => vec![
            &[(0.25, 0.0), (0.25, 1.0)],
            &[(0.25, 0.0), (0.85, 0.0)],
            &[(0.25, 0.5), (0.6, 0.5)],
            &[(0.25, 1.0), (0.85, 1.0)],
        ],
        ('E', 1) => vec![
            &[(0.25, 0.0), (0.25, 1.0)],
            &[(0.25, 0.0), (0.75, 0.0)],
            &[(0.25, 0.5), (0.8, 0.5)],
            &[(0.25, 1.0), (0.92, 1.0)],
        ],
        ('E', 2) => vec![
            &[(0.25, 0.0), (0.25, 1.0)],
            &[(0.25, 0.0), (0.85, 0.0), (0.85, 0.18)],
            &[(0.25, 0.45), (0.5, 0.45)],
            &[(0.25, 1.0), (0.85, 1.0)],
        ],
        ('H', 0) => vec![
            &[(0.15, 0.0), (0.15, 1.0)],
            &[(0.85, 0.0), (0.85, 1.0)],
            &[(0.15, 0.5), (0.85, 0.5)],
        ],
        ('H', 1) => vec![
            &[(0.15, 0.0), (0.15, 1.0)],
            &[(0.85, 0.0), (0.85, 1.0)],
            &[(0.15, 0.32), (0.85, 0.32)],
        ],
        ('H', 2) => vec![
            &[(0.25, 0.0), (0.25, 1.0)],
            &[(0.75, 0.0), (0.75, 1.0)],
            &[(0.25, 0.55), (0.75, 0.55)],
            &[(0.08, 0.0), (0.42, 0.0)],
            &[(0.58, 0.0), (0.92, 0.0)],
        ],
        ('R', 0) => vec![
            &[(0.25, 0.0), (0.25, 1.0)],
            BOWL,
            &[(0.45, 0.48), (0.85, 1.0)],
        ],
        ('R', 1) => vec![
            &[(0.25, 0.0), (0.25, 1.0)],
            BOWL,
            &[(0.55, 0.48), (0.7, 0.72), (0.72, 1.0)],
        ],
        ('R', 2) => vec![
            &[(0.25, 0.0), (0.25, 1.0)],
            BOWL,
            &[(0.45, 0.48), (0.65, 0.85), (0.98, 1.0)],
        ],
        ('T', 0) => vec![&[(0.1, 0.0), (0.9, 0.0)], &[(0.5, 0.0), (0.5, 1.0)]],
        ('T', 1) => vec![&[(0.22, 0.0), (0.78, 0.0)], &[(0.5, 0.0), (0.5, 1.0)]],
        ('T', 2) => vec![
            &[(0.1, 0.0), (0.9, 0.0)],
            &[(0.5, 0.0), (0.5, 1.0)],
            &[(0.3, 1.0), (0.7, 1.0)],
            &[(0.1, 0.0), (0.1, 0.15)],
            &[(0.9, 0.0), (0.9, 0.15)],
        ],
        _ => return None,
    };
    Some(s)
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Rasterizes round-capped polylines onto a `size × size` binary canvas.
fn render(strokes: &[Stroke], size: usize) -> Raster<f64> {
    let n = size as f64;
    let (x0, y0, bw, bh) = (0.2 * n, 0.19 * n, 0.6 * n, 0.62 * n);
    let half = 0.5 * STROKE_WIDTH * bh;
    let segs: Vec<((f64, f64), (f64, f64))> = strokes
        .iter()
        .flat_map(|s| {
            s.windows(2)
                .map(|w| ((x0 + w[0].0 * bw, y0 + w[0].1 * bh), (x0 + w[1].0 * bw, y0 + w[1].1 * bh)))
                .collect::<Vec<_>>()
        })
        .collect();
    let sub = SUPERSAMPLE as f64;
    Raster::from_fn(size, size, |i, j| {
        let mut hits = 0;
        for si in 0..SUPERSAMPLE {
            for sj in 0..SUPERSAMPLE {
                let p = (j as f64 + (sj as f64 + 0.5) / sub, i as f64 + (si as f64 + 0.5) / sub);
                if segs.iter().any(|&(a, b)| segment_distance(p, a, b) <= half) {
                    hits += 1;
                }
            }
        }
        if 2 * hits >= SUPERSAMPLE * SUPERSAMPLE {
            1.0
        } else {
            0.0
        }
    })
}

/// The three built-in casts of `class` on a `size × size` canvas, with
/// `true_font` set to the cast index.
pub fn builtin_casts(class: char, size: usize) -> Result<Vec<GlyphImage>> {
    if size < 8 {
        return Err(Error::arg(format!("canvas size {size} too small for built-in casts")));
    }
    (0..3)
        .map(|cast| {
            let s = strokes(class, cast).ok_or_else(|| {
                Error::arg(format!(
                    "no built-in casts for '{class}'; available: {}",
                    BUILTIN_CLASSES.iter().collect::<String>()
                ))
            })?;
            Ok(GlyphImage {
                pixels: render(&s, size),
                char_class: class.to_string(),
                true_font: Some(cast),
                source_id: format!("builtin:{class}:{cast}"),
            })
        })
        .collect()
}
