use std::fs::File;
use std::io::BufWriter;

use glyphmix::corpus::{
    binarize, load_dataset, normalize, read_image, resample_bilinear, save_dataset, save_image,
    write_manifest, GlyphImage, ManifestEntry,
};
use glyphmix::{Error, Raster};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Raster<f64> {
    Raster::from_fn(h, w, |_, _| rng.random_range(0.0..=1.0))
}

#[test]
fn random_images_round_trip_within_quantization() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dir = tempfile::tempdir().unwrap();
    for i in 0..1000 {
        let img = random_image(&mut rng, 32, 32);
        let ext = if i % 2 == 0 { "png" } else { "pgm" };
        let path = dir.path().join(format!("{i}.{ext}"));
        save_image(&img, &path).unwrap();
        let back = read_image(&path).unwrap();
        assert!(back.max_abs_diff(&img) <= 1.0 / 255.0, "{}", path.display());
    }
}

#[test]
fn binary_and_single_values_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let binary = Raster::from_fn(5, 7, |i, j| ((i * 3 + j) % 2) as f64);
    let grey = Raster::filled(2, 2, 0.503);
    for ext in ["png", "pgm"] {
        let p = dir.path().join(format!("b.{ext}"));
        save_image(&binary, &p).unwrap();
        assert_eq!(read_image(&p).unwrap(), binary);
        let q = dir.path().join(format!("g.{ext}"));
        save_image(&grey, &q).unwrap();
        assert!(read_image(&q).unwrap().max_abs_diff(&grey) <= 1.0 / 255.0);
    }
}

#[test]
fn halving_matches_block_average_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = random_image(&mut rng, 64, 64);
    let oracle = Raster::from_fn(32, 32, |i, j| {
        (img[(2 * i, 2 * j)] + img[(2 * i + 1, 2 * j)] + img[(2 * i, 2 * j + 1)] + img[(2 * i + 1, 2 * j + 1)])
            / 4.0
    });
    let out = resample_bilinear(&img, 32, 32);
    assert_eq!(out.dims(), (32, 32));
    assert!(out.max_abs_diff(&oracle) < 1e-12);
    assert!((out.mean() - img.mean()).abs() <= 0.02);
}

#[test]
fn normalization_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let once = normalize(&random_image(&mut rng, 48, 40), 32);
    let twice = normalize(&once, 32);
    assert!(twice.max_abs_diff(&once) <= 1e-6);
    assert!(once.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn binarization_counts_match_a_direct_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = GlyphImage::new(random_image(&mut rng, 32, 32), "E");
    let expected = img.pixels.as_slice().iter().filter(|&&v| v >= 0.5).count();
    let bin = binarize(&img, 0.5).unwrap();
    assert!(bin.is_binary());
    assert_eq!(bin.pixels.as_slice().iter().filter(|&&v| v == 1.0).count(), expected);
    assert!(binarize(&img, 1.0).is_err());
    assert!(binarize(&img, 0.0).is_err());
}

#[test]
fn dataset_round_trip_preserves_labels_and_order() {
    let dir = tempfile::tempdir().unwrap();
    let images: Vec<GlyphImage> = (0..6)
        .map(|i| {
            let px = Raster::from_fn(32, 32, |r, c| ((r + c + i) % 3 == 0) as u8 as f64);
            GlyphImage::new(px, if i < 3 { "E" } else { "F" }).with_font(i % 3)
        })
        .collect();
    let manifest = save_dataset(dir.path(), &images, "png").unwrap();
    let loaded = load_dataset(&manifest).unwrap();
    assert_eq!(loaded.len(), images.len());
    for (a, b) in loaded.iter().zip(&images) {
        assert_eq!(a.pixels, b.pixels);
        assert_eq!(a.char_class, b.char_class);
        assert_eq!(a.true_font, b.true_font);
    }
}

#[test]
fn missing_image_error_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.jsonl");
    write_manifest(
        &manifest,
        &[ManifestEntry {
            path: "nowhere/ghost.png".into(),
            char_class: "E".into(),
            true_font: None,
            source_id: None,
        }],
    )
    .unwrap();
    let err = load_dataset(&manifest).unwrap_err();
    assert!(err.to_string().contains("ghost.png"), "{err}");
}

#[test]
fn colour_png_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rgb.png");
    let mut enc = png::Encoder::new(BufWriter::new(File::create(&path).unwrap()), 2, 2);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().unwrap();
    w.write_image_data(&[0u8; 12]).unwrap();
    w.finish().unwrap();
    assert!(matches!(read_image(&path), Err(Error::Format { .. })));
}
