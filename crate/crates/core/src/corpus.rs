//! Glyph image datasets: decoding, canvas normalization, binarization and
//! JSON Lines manifests.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

pub const DEFAULT_CANVAS: usize = 32;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Symbols a manifest may declare as `char_class`.
pub const ALPHABET: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789&";

/// One extracted glyph with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct GlyphImage {
    pub pixels: Raster<f64>,
    pub char_class: String,
    pub true_font: Option<usize>,
    pub source_id: String,
}

impl GlyphImage {
    pub fn new(pixels: Raster<f64>, char_class: impl Into<String>) -> Self {
        Self {
            pixels,
            char_class: char_class.into(),
            true_font: None,
            source_id: String::new(),
        }
    }

    pub fn with_font(mut self, font: usize) -> Self {
        self.true_font = Some(font);
        self
    }

    pub fn is_binary(&self) -> bool {
        self.pixels.as_slice().iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub char_class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_font: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub canvas_size: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LoadOptions {
    pub canvas_size: usize,
    /// Binarize after normalization; `None` keeps grayscale.
    pub threshold: Option<f64>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            canvas_size: DEFAULT_CANVAS,
            threshold: None,
        }
    }
}

fn check_char_class(class: &str) -> std::result::Result<(), String> {
    let mut chars = class.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if ALPHABET.contains(c) => Ok(()),
        _ => Err(format!("char_class {class:?} is not a symbol of the alphabet")),
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut entries = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry =
            serde_json::from_str(&line).map_err(|e| Error::Manifest {
                path: path.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        check_char_class(&entry.char_class).map_err(|message| Error::Manifest {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for entry in entries {
        serde_json::to_writer(&mut w, entry)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Resolve a manifest-relative image path.
pub fn resolve_entry_path(manifest_path: &Path, entry: &ManifestEntry) -> PathBuf {
    let p = Path::new(&entry.path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(p)
    }
}

/// Load every image named by the manifest, normalized to a 32x32 canvas.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Vec<GlyphImage>> {
    load_dataset_with(manifest_path, LoadOptions::default())
}

pub fn load_dataset_with(
    manifest_path: impl AsRef<Path>,
    options: LoadOptions,
) -> Result<Vec<GlyphImage>> {
    let manifest_path = manifest_path.as_ref();
    let entries = read_manifest(manifest_path)?;
    let mut out = Vec::with_capacity(entries.len());
    for entry in &entries {
        let path = resolve_entry_path(manifest_path, entry);
        let raw = read_image(&path)?;
        let mut pixels = normalize(&raw, options.canvas_size);
        if let Some(t) = options.threshold {
            pixels = binarize_raster(&pixels, t)?;
        }
        out.push(GlyphImage {
            pixels,
            char_class: entry.char_class.clone(),
            true_font: entry.true_font,
            source_id: entry
                .source_id
                .clone()
                .unwrap_or_else(|| entry.path.clone()),
        });
    }
    Ok(out)
}

/// Write each image under `dir/images/` and a manifest at `dir/manifest.jsonl`.
pub fn save_dataset(dir: impl AsRef<Path>, images: &[GlyphImage], ext: &str) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let image_dir = dir.join("images");
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    let mut entries = Vec::with_capacity(images.len());
    for (idx, img) in images.iter().enumerate() {
        let rel = format!("images/{}_{:05}.{}", img.char_class, idx, ext);
        save_image(&img.pixels, dir.join(&rel))?;
        entries.push(ManifestEntry {
            path: rel,
            char_class: img.char_class.clone(),
            true_font: img.true_font,
            source_id: if img.source_id.is_empty() {
                None
            } else {
                Some(img.source_id.clone())
            },
        });
    }
    let manifest = dir.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

/// Decode a PGM (P5) or 8-bit grayscale PNG into intensities `v / maxval`.
pub fn read_image(path: impl AsRef<Path>) -> Result<Raster<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if bytes.starts_with(b"P5") {
        decode_pgm(&bytes).map_err(|message| Error::Format {
            path: path.to_path_buf(),
            message,
        })
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(&bytes).map_err(|message| Error::Format {
            path: path.to_path_buf(),
            message,
        })
    } else {
        Err(Error::Format {
            path: path.to_path_buf(),
            message: "neither binary PGM (P5) nor PNG".into(),
        })
    }
}

fn decode_pgm(bytes: &[u8]) -> std::result::Result<Raster<f64>, String> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PGM header".into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|e| format!("bad PGM header field: {e}"))?;
    }
    // exactly one whitespace byte separates header from raster
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported PGM maxval {maxval}"));
    }
    let n = width * height;
    if bytes.len() < pos + n {
        return Err("truncated PGM raster".into());
    }
    let scale = maxval as f64;
    let data = bytes[pos..pos + n]
        .iter()
        .map(|&b| (b as f64 / scale).min(1.0))
        .collect();
    Raster::from_vec(height, width, data).map_err(|e| e.to_string())
}

fn decode_png(bytes: &[u8]) -> std::result::Result<Raster<f64>, String> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let color = reader.info().color_type;
    if color != png::ColorType::Grayscale {
        return Err(format!("expected grayscale PNG, found {color:?}"));
    }
    let mut buf = vec![0; reader.output_buffer_size().ok_or("PNG too large")?];
    let frame = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    if frame.color_type != png::ColorType::Grayscale || frame.bit_depth != png::BitDepth::Eight {
        return Err("expected 8-bit grayscale PNG".into());
    }
    let (w, h) = (frame.width as usize, frame.height as usize);
    let mut data = Vec::with_capacity(w * h);
    for row in 0..h {
        let line = &buf[row * frame.line_size..row * frame.line_size + w];
        data.extend(line.iter().map(|&b| b as f64 / 255.0));
    }
    Raster::from_vec(h, w, data).map_err(|e| e.to_string())
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write a raster as PGM or PNG depending on the extension.
pub fn save_image(img: &Raster<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img.as_slice().iter().map(|&v| quantize(v)).collect();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("pgm") => {
            let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
            out.extend_from_slice(&bytes);
            fs::write(path, out).map_err(|e| Error::io(path, e))
        }
        Some("png") => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut enc = png::Encoder::new(
                BufWriter::new(file),
                img.width() as u32,
                img.height() as u32,
            );
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let to_io = |e: png::EncodingError| {
                Error::io(path, std::io::Error::other(e.to_string()))
            };
            let mut writer = enc.write_header().map_err(to_io)?;
            writer.write_image_data(&bytes).map_err(to_io)?;
            writer.finish().map_err(to_io)
        }
        _ => Err(Error::arg(format!(
            "cannot infer image format from {}",
            path.display()
        ))),
    }
}

/// Bilinear resampling with pixel-center alignment.
pub fn resample_bilinear(img: &Raster<f64>, height: usize, width: usize) -> Raster<f64> {
    let (h, w) = img.dims();
    if (h, w) == (height, width) {
        return img.clone();
    }
    let sy = h as f64 / height as f64;
    let sx = w as f64 / width as f64;
    let coord = |dst: usize, scale: f64, n: usize| {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, src - lo as f64)
    };
    Raster::from_fn(height, width, |i, j| {
        let (y0, y1, fy) = coord(i, sy, h);
        let (x0, x1, fx) = coord(j, sx, w);
        let top = img[(y0, x0)] * (1.0 - fx) + img[(y0, x1)] * fx;
        let bottom = img[(y1, x0)] * (1.0 - fx) + img[(y1, x1)] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Resample to `canvas x canvas` and min-max stretch to `[0, 1]`.
///
/// A constant image is only clamped into `[0, 1]`.
pub fn normalize(img: &Raster<f64>, canvas: usize) -> Raster<f64> {
    let resized = resample_bilinear(img, canvas, canvas);
    let (lo, hi) = resized
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if range < 1e-12 {
        resized.map(|v| v.clamp(0.0, 1.0))
    } else {
        resized.map(|v| ((v - lo) / range).clamp(0.0, 1.0))
    }
}

pub fn binarize_raster(img: &Raster<f64>, threshold: f64) -> Result<Raster<f64>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::arg(format!(
            "binarization threshold {threshold} outside (0, 1)"
        )));
    }
    Ok(img.map(|v| if v >= threshold { 1.0 } else { 0.0 }))
}

/// Pixel becomes 1 iff it is at least `threshold`.
pub fn binarize(img: &GlyphImage, threshold: f64) -> Result<GlyphImage> {
    Ok(GlyphImage {
        pixels: binarize_raster(&img.pixels, threshold)?,
        ..img.clone()
    })
}
