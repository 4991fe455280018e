use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use glyphmix::align::{aligned_stack, mean_pixel_variance, pixel_mean, unaligned_stack};
use glyphmix::checkpoint::{write_loss_csv, Checkpoint, ClassModel};
use glyphmix::corpus::{load_dataset, save_dataset, save_image, GlyphImage};
use glyphmix::mixture::{EvalContext, ZeroNoise, NoiseSource};
use glyphmix::report::{assign_class, evaluate_class, macro_report};
use glyphmix::synth::{builtin_casts, generate_corpus, write_truth};
use glyphmix::trainer::{prepare_images, train_with};
use glyphmix::Raster;
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn single_char(class: &str) -> Result<char, CliError> {
    let mut chars = class.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(CliError::Runtime(format!("char class must be one symbol, got '{class}'"))),
    }
}

/// Manifest indices per char class, each in manifest order.
fn group_by_class(images: &[GlyphImage]) -> BTreeMap<String, Vec<usize>> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, g) in images.iter().enumerate() {
        groups.entry(g.char_class.clone()).or_default().push(i);
    }
    groups
}

fn subset(images: &[GlyphImage], idx: &[usize]) -> Vec<GlyphImage> {
    idx.iter().map(|&i| images[i].clone()).collect()
}

/// Tiles equally sized rasters row by row with a one pixel mid-gray gutter.
fn tile(rows: &[Vec<Raster<f64>>]) -> Result<Raster<f64>, CliError> {
    let cell = rows
        .iter()
        .flatten()
        .next()
        .ok_or_else(|| CliError::Runtime("nothing to tile".into()))?;
    let (h, w) = cell.dims();
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let (gh, gw) = (rows.len() * (h + 1) + 1, cols * (w + 1) + 1);
    let mut grid = Raster::filled(gh, gw, 0.5);
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            for i in 0..h {
                for j in 0..w {
                    grid.as_mut_slice()[(r * (h + 1) + 1 + i) * gw + c * (w + 1) + 1 + j] =
                        img[(i, j)];
                }
            }
        }
    }
    Ok(grid)
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    create_dir(out)?;
    let mut images = Vec::new();
    let mut truth = Vec::new();
    let cast_dir = out.join("casts");
    create_dir(&cast_dir)?;
    for class in &cfg.classes {
        let casts = builtin_casts(single_char(class)?, cfg.canvas)?;
        for (k, c) in casts.iter().enumerate() {
            save_image(&c.pixels, cast_dir.join(format!("{class}_{k}.{}", cfg.image_format)))?;
        }
        let (imgs, recs) = generate_corpus(&casts, &cfg.perturb, cfg.seed)?;
        images.extend(imgs);
        truth.extend(recs);
    }
    let manifest = save_dataset(out, &images, &cfg.image_format)?;
    write_truth(out.join("truth.jsonl"), &truth)?;
    println!("wrote {} images to {}", images.len(), manifest.display());
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    create_dir(out)?;
    let images = load_dataset(cfg.manifest_path()?)?;
    let mut models = Vec::new();
    for (class, idx) in group_by_class(&images) {
        eprintln!("training {} on '{class}' ({} images)", cfg.train.variant, idx.len());
        let outcome = train_with::<f64>(&subset(&images, &idx), &cfg.train, |l| {
            if (l.epoch + 1) % 10 == 0 {
                eprintln!("  epoch {:>4}  objective {:>10.3}  kl_weight {:.3}", l.epoch + 1, l.objective, l.kl_weight);
            }
        })?;
        write_loss_csv(out.join(format!("loss_{class}.csv")), &outcome.trace)?;
        models.push(ClassModel {
            char_class: class,
            state: outcome.state,
            lambdas: outcome.lambdas,
            trace: outcome.trace,
        });
    }
    let path = cfg
        .checkpoint
        .clone()
        .unwrap_or_else(|| out.join("checkpoint.json"));
    Checkpoint::new(cfg.train.clone(), models)?.save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    create_dir(out)?;
    let ck = Checkpoint::load(cfg.checkpoint_path()?)?;
    let images = load_dataset(cfg.manifest_path()?)?;
    let mut per_class = BTreeMap::new();
    for (class, idx) in group_by_class(&images) {
        let model = ck.model(&class)?;
        let ev = evaluate_class(&subset(&images, &idx), &model.state, Some(&model.lambdas), &cfg.eval)?;
        per_class.insert(class, ev.report);
    }
    let report = macro_report(ck.config.variant, ck.config.k, per_class);
    let path = out.join("metrics.json");
    write_json(&path, &report)?;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "{}: V {}  MI {}  F&M {}  NLL {:.2}",
        report.variant,
        fmt(report.v_measure),
        fmt(report.mutual_info),
        fmt(report.fowlkes_mallows),
        report.nll_bound
    );
    println!("wrote {}", path.display());
    Ok(())
}

struct ClassAssignment {
    idx: Vec<usize>,
    xs: Vec<Raster<f64>>,
    assignments: Vec<usize>,
    lambdas: glyphmix::Lambdas,
}

fn assign_all(
    cfg: &RunConfig,
    ck: &Checkpoint,
    images: &[GlyphImage],
) -> Result<BTreeMap<String, ClassAssignment>, CliError> {
    let mut out = BTreeMap::new();
    for (class, idx) in group_by_class(images) {
        let model = ck.model(&class)?;
        let xs = prepare_images::<f64>(&subset(images, &idx), cfg.eval.threshold)?;
        let (assignments, lambdas) = assign_class(&xs, &model.state, Some(&model.lambdas), &cfg.eval)?;
        out.insert(
            class,
            ClassAssignment {
                idx,
                xs,
                assignments,
                lambdas,
            },
        );
    }
    Ok(out)
}

pub fn assign(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    create_dir(out)?;
    let ck = Checkpoint::load(cfg.checkpoint_path()?)?;
    let images = load_dataset(cfg.manifest_path()?)?;
    let mut pred = vec![0usize; images.len()];
    for a in assign_all(cfg, &ck, &images)?.values() {
        for (&i, &p) in a.idx.iter().zip(&a.assignments) {
            pred[i] = p;
        }
    }
    let mut csv = String::from("index,char_class,pred,true\n");
    for (i, g) in images.iter().enumerate() {
        let truth = g.true_font.map_or(String::new(), |t| t.to_string());
        let _ = writeln!(csv, "{i},{},{},{truth}", g.char_class, pred[i]);
    }
    let path = out.join("assignments.csv");
    fs::write(&path, csv).map_err(|e| io_err(&path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct AlignStats {
    unaligned_variance: f64,
    aligned_variance: f64,
    reduction: f64,
}

pub fn align(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    create_dir(out)?;
    let ck = Checkpoint::load(cfg.checkpoint_path()?)?;
    let images = load_dataset(cfg.manifest_path()?)?;
    let ext = &cfg.image_format;
    let mut stats = BTreeMap::new();
    for (class, a) in assign_all(cfg, &ck, &images)? {
        let model = ck.model(&class)?;
        let aligned = aligned_stack(&a.xs, &model.state, &a.lambdas, &a.assignments)?;
        let plain = unaligned_stack(&a.xs, model.state.config.bandwidth)?;
        let dir = out.join("aligned").join(&class);
        create_dir(&dir)?;
        for (img, &i) in aligned.iter().zip(&a.idx) {
            save_image(img, dir.join(format!("{i:05}.{ext}")))?;
        }
        save_image(&pixel_mean(&plain)?, out.join(format!("average_unaligned_{class}.{ext}")))?;
        save_image(&pixel_mean(&aligned)?, out.join(format!("average_aligned_{class}.{ext}")))?;
        for k in 0..model.state.components() {
            let members: Vec<Raster<f64>> = aligned
                .iter()
                .zip(&a.assignments)
                .filter(|(_, &p)| p == k)
                .map(|(r, _)| r.clone())
                .collect();
            if !members.is_empty() {
                save_image(&pixel_mean(&members)?, out.join(format!("average_aligned_{class}_k{k}.{ext}")))?;
            }
        }
        let (u, v) = (mean_pixel_variance(&plain)?, mean_pixel_variance(&aligned)?);
        stats.insert(
            class,
            AlignStats {
                unaligned_variance: u,
                aligned_variance: v,
                reduction: if u > 0.0 { 1.0 - v / u } else { 0.0 },
            },
        );
    }
    write_json(&out.join("align_stats.json"), &stats)?;
    println!("wrote aligned images to {}", out.display());
    Ok(())
}

/// Examples per component shown in the edit grid.
const EDIT_EXAMPLES: usize = 6;

pub fn export_templates(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    create_dir(out)?;
    let ck = Checkpoint::load(cfg.checkpoint_path()?)?;
    let ext = &cfg.image_format;
    let images = match &cfg.manifest {
        Some(m) => Some(load_dataset(m)?),
        None => None,
    };
    let assigned = match &images {
        Some(imgs) => assign_all(cfg, &ck, imgs)?,
        None => BTreeMap::new(),
    };
    for model in &ck.models {
        let state = &model.state;
        let class = &model.char_class;
        let templates: Vec<Raster<f64>> = (0..state.components()).map(|k| state.template_probs(k)).collect();
        save_image(&tile(&[templates])?, out.join(format!("templates_{class}.{ext}")))?;
        let Some(a) = assigned.get(class) else { continue };
        if state.variant() == glyphmix::mixture::Variant::Ocular {
            continue;
        }
        // one row per shown example: observation, warped template, edited template
        let ctx = EvalContext::new(state);
        let mut eps = vec![0.0; state.config.editor.z_dim];
        let mut rows = Vec::new();
        for k in 0..state.components() {
            for (d, _) in a.assignments.iter().enumerate().filter(|(_, &p)| p == k).take(EDIT_EXAMPLES) {
                ZeroNoise.fill(d, k, &mut eps);
                let f = ctx.forward(&a.xs[d], k, a.lambdas.get(d, k), &eps, 1.0)?;
                rows.push(vec![a.xs[d].clone(), f.t_tilde.clone(), f.t_hat.clone()]);
            }
        }
        if !rows.is_empty() {
            save_image(&tile(&rows)?, out.join(format!("edits_{class}.{ext}")))?;
        }
    }
    println!("wrote template grids to {}", out.display());
    Ok(())
}
