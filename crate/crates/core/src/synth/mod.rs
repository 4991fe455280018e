//! Labeled synthetic corpora: base casts perturbed by a random affine
//! placement, an inking distortion (erosion and/or dilation) and pixel noise.

mod casts;
mod morph;

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::GlyphImage;
use crate::error::{Error, Result};
use crate::mixture::mix_seed;
use crate::raster::Raster;
use crate::warp::{warp, SpatialParams, DEFAULT_BANDWIDTH};

pub use casts::{builtin_casts, BUILTIN_CLASSES};
pub use morph::{morph, morph_raster, MorphKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbConfig {
    /// Offsets are uniform in `[-offset_range, offset_range]` pixels per axis.
    pub offset_range: f64,
    pub rotation_range: f64,
    pub shear_range: f64,
    pub scale_range: f64,
    /// Candidate structuring element sizes; empty disables morphology.
    pub morph_kernel_sizes: Vec<usize>,
    pub noise_sigma: f64,
    pub examples_per_cast: usize,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            offset_range: 2.0,
            rotation_range: 0.05,
            shear_range: 0.05,
            scale_range: 0.05,
            morph_kernel_sizes: vec![1, 3],
            noise_sigma: 0.05,
            examples_per_cast: 100,
        }
    }
}

impl PerturbConfig {
    /// No perturbation at all: every example reproduces its base cast.
    pub fn identity(examples_per_cast: usize) -> Self {
        Self {
            offset_range: 0.0,
            rotation_range: 0.0,
            shear_range: 0.0,
            scale_range: 0.0,
            morph_kernel_sizes: Vec::new(),
            noise_sigma: 0.0,
            examples_per_cast,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("offset_range", self.offset_range),
            ("rotation_range", self.rotation_range),
            ("shear_range", self.shear_range),
            ("scale_range", self.scale_range),
            ("noise_sigma", self.noise_sigma),
        ];
        for (name, v) in ranges {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::arg(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if self.scale_range >= 1.0 {
            return Err(Error::arg("scale_range must be below 1"));
        }
        if let Some(&k) = self.morph_kernel_sizes.iter().find(|&&k| k % 2 == 0) {
            return Err(Error::arg(format!("morph kernel sizes must be odd and >= 1, got {k}")));
        }
        if self.examples_per_cast == 0 {
            return Err(Error::arg("examples_per_cast must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MorphStep {
    pub kind: MorphKind,
    pub kernel: usize,
}

/// Everything sampled for one synthetic example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthRecord {
    pub index: usize,
    pub char_class: String,
    pub true_font: usize,
    pub lambda: SpatialParams<f64>,
    pub morph: Vec<MorphStep>,
    pub noise_seed: u64,
}

fn class_key(class: &str) -> u64 {
    let parts: Vec<u64> = class.bytes().map(u64::from).collect();
    mix_seed(&parts)
}

fn symmetric(rng: &mut ChaCha8Rng, range: f64) -> f64 {
    if range == 0.0 {
        0.0
    } else {
        rng.random_range(-range..=range)
    }
}

fn sample_record(
    config: &PerturbConfig,
    seed: u64,
    char_class: &str,
    true_font: usize,
    index: usize,
) -> TruthRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, class_key(char_class), index as u64]));
    let lambda = SpatialParams {
        r: symmetric(&mut rng, config.rotation_range),
        o_h: symmetric(&mut rng, config.offset_range),
        o_v: symmetric(&mut rng, config.offset_range),
        s_h: symmetric(&mut rng, config.shear_range),
        s_v: symmetric(&mut rng, config.shear_range),
        a: symmetric(&mut rng, config.scale_range),
    };
    let sizes = &config.morph_kernel_sizes;
    let mut morph = Vec::new();
    if !sizes.is_empty() {
        let choice = rng.random_range(0..3u8);
        let mut step = |kind| MorphStep {
            kind,
            kernel: sizes[rng.random_range(0..sizes.len())],
        };
        match choice {
            0 => morph.push(step(MorphKind::Erode)),
            1 => morph.push(step(MorphKind::Dilate)),
            _ => {
                morph.push(step(MorphKind::Erode));
                morph.push(step(MorphKind::Dilate));
                if rng.random_bool(0.5) {
                    morph.swap(0, 1);
                }
            }
        }
    }
    TruthRecord {
        index,
        char_class: char_class.to_string(),
        true_font,
        lambda,
        morph,
        noise_seed: rng.random(),
    }
}

/// Applies a recorded perturbation to `base`; bit-exact for a given record.
pub fn render_record(base: &Raster<f64>, record: &TruthRecord, noise_sigma: f64) -> Result<Raster<f64>> {
    let mut img = if record.lambda == SpatialParams::zero() {
        base.clone()
    } else {
        warp(base, &record.lambda, DEFAULT_BANDWIDTH)?
    };
    for step in &record.morph {
        img = morph_raster(&img, step.kind, step.kernel)?;
    }
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma)
            .map_err(|e| Error::arg(format!("noise_sigma: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(record.noise_seed);
        for v in img.as_mut_slice() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(img.map(|v| v.clamp(0.0, 1.0)))
}

/// `examples_per_cast` perturbed copies of every base cast, grouped by cast.
///
/// Cast `c` gets `true_font = c`. Each example draws from its own stream
/// derived from `(seed, char_class, index)`, so the output does not depend on
/// scheduling.
pub fn generate_corpus(
    base_casts: &[GlyphImage],
    config: &PerturbConfig,
    seed: u64,
) -> Result<(Vec<GlyphImage>, Vec<TruthRecord>)> {
    if base_casts.len() < 2 {
        return Err(Error::arg(format!(
            "need at least 2 base casts, got {}",
            base_casts.len()
        )));
    }
    config.validate()?;
    let class = &base_casts[0].char_class;
    if base_casts.iter().any(|c| &c.char_class != class) {
        return Err(Error::arg("base casts must share one char_class"));
    }
    for c in &base_casts[1..] {
        c.pixels.ensure_same_dims(&base_casts[0].pixels, "base casts")?;
    }
    let per = config.examples_per_cast;
    let out: Vec<(GlyphImage, TruthRecord)> = (0..base_casts.len() * per)
        .into_par_iter()
        .map(|index| {
            let font = index / per;
            let record = sample_record(config, seed, class, font, index);
            let pixels = render_record(&base_casts[font].pixels, &record, config.noise_sigma)?;
            let img = GlyphImage {
                pixels,
                char_class: class.clone(),
                true_font: Some(font),
                source_id: format!("synth:{class}:{index}"),
            };
            Ok((img, record))
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().unzip())
}

/// Rebuilds one example from its truth record.
pub fn regenerate(base_casts: &[GlyphImage], record: &TruthRecord, config: &PerturbConfig) -> Result<GlyphImage> {
    let base = base_casts
        .get(record.true_font)
        .ok_or_else(|| Error::arg(format!("no base cast {}", record.true_font)))?;
    Ok(GlyphImage {
        pixels: render_record(&base.pixels, record, config.noise_sigma)?,
        char_class: record.char_class.clone(),
        true_font: Some(record.true_font),
        source_id: format!("synth:{}:{}", record.char_class, record.index),
    })
}

pub fn write_truth(path: impl AsRef<Path>, records: &[TruthRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<Vec<TruthRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
