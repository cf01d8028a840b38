use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;

use lowlight_core::checkpoint::{load_checkpoint, load_checkpoint_with_width};
use lowlight_core::config::{TrainConfig, KEYS};
use lowlight_core::enhance::{decompose_to_files, enhance};
use lowlight_core::imageio::{is_image_path, list_images, load_image, load_paired_dataset, save_image};
use lowlight_core::metrics::{evaluate as evaluate_dirs, fit_niqe_model, NiqeModel, METRICS_CSV, NIQE_FEATURES};
use lowlight_core::noise::{level_ladder, simulate_low_light, PhotonScale};
use lowlight_core::rng::{stream_seed, Stream};
use lowlight_core::synthetic::synthetic_scene;
use lowlight_core::trainer::{read_train_log, run_to_end, Trainer, TRAIN_LOG, VAL_LOG};

use crate::manifest::RunManifest;
use crate::report::{histogram_header, histogram_rows, loss_curve_svg, write};
use crate::{usage, EvaluateArgs, FitNiqeArgs, InferArgs, ReportArgs, SimulateArgs, SynthArgs, TrainArgs};

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist or is not a directory", path.display())))
    }
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    require_dir(&a.input_dir, "input directory")?;
    if a.levels == 0 {
        return Err(usage("--levels must be at least 1"));
    }
    let s = PhotonScale::new(a.photon_scale)?;
    let images = list_images(&a.input_dir)?;
    if images.is_empty() {
        return Err(usage(format!("no PNG or JPEG images in {}", a.input_dir.display())));
    }
    let ladder = level_ladder(a.levels);

    let mut m = RunManifest::new("simulate", Some(a.seed));
    m.set("levels", a.levels);
    m.set("photon_scale", s.get());
    m.set(
        "exposures",
        ladder.iter().map(|e| e.get().to_string()).collect::<Vec<_>>().join(","),
    );
    m.inputs.push(a.input_dir.clone());
    m.outputs.push(a.out_root.clone());
    m.write(&a.out_root)?;

    let entries: Vec<(usize, &String, &PathBuf)> =
        images.iter().enumerate().map(|(i, (id, p))| (i, id, p)).collect();
    for (k, e) in ladder.iter().enumerate() {
        let level = k + 1;
        let (low_dir, high_dir) = (
            a.out_root.join(format!("level{level}")).join("low"),
            a.out_root.join(format!("level{level}")).join("high"),
        );
        fs::create_dir_all(&low_dir).with_context(|| format!("creating {}", low_dir.display()))?;
        fs::create_dir_all(&high_dir).with_context(|| format!("creating {}", high_dir.display()))?;
        entries.par_iter().try_for_each(|&(i, id, path)| -> Result<()> {
            let clean = load_image(path)?;
            let seed = stream_seed(a.seed, Stream::Simulate, level as u64, i as u64);
            let low = simulate_low_light(&clean, *e, s, seed)?;
            save_image(&low.clipped(), low_dir.join(format!("{id}.png")))?;
            save_image(&clean, high_dir.join(format!("{id}.png")))?;
            Ok(())
        })?;
        log::info!("level{level}: exposure {} for {} images", e.get(), entries.len());
    }
    m.finish(&a.out_root)
}

fn resolve_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &a.config {
        if !path.is_file() {
            return Err(usage(format!("config file {} not found", path.display())));
        }
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_kv(&text)?;
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    let flags: [(&str, Option<String>); 8] = [
        ("lr", a.lr.map(|v| v.to_string())),
        ("epochs", a.epochs.map(|v| v.to_string())),
        ("batch_size", a.batch_size.map(|v| v.to_string())),
        ("patch", a.patch.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
        ("width", a.width.map(|v| v.to_string())),
        ("photon_scale", a.photon_scale.map(|v| v.to_string())),
        ("checkpoint_every", a.checkpoint_every.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: TrainArgs) -> Result<()> {
    require_dir(&a.data, "dataset root")?;
    require_dir(&a.data.join("low"), "low-light directory")?;
    require_dir(&a.data.join("high"), "normal-light directory")?;
    let resume = match &a.resume {
        Some(p) => {
            let mut ck = load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?;
            if let Some(e) = a.epochs {
                ck.config.epochs = e;
            }
            Some(ck)
        }
        None => None,
    };
    let config = match &resume {
        Some(ck) => ck.config.clone(),
        None => resolve_config(&a)?,
    };

    let mut m = RunManifest::new("train", Some(config.seed));
    for k in KEYS {
        m.set(k, config.get(k).unwrap_or_default());
    }
    m.inputs.push(a.data.clone());
    m.inputs.extend(a.config.iter().cloned());
    m.inputs.extend(a.resume.iter().cloned());
    m.outputs.push(a.out.clone());
    m.write(&a.out)?;

    let samples = load_paired_dataset(&a.data)?;
    log::info!("{} pairs from {}", samples.len(), a.data.display());
    let trainer = match resume {
        Some(ck) => Trainer::resume(ck, samples)?,
        None => Trainer::new(config, samples)?,
    };
    log::info!(
        "{} training pairs, {} held out, {} steps per epoch",
        trainer.train_len(),
        trainer.validation_set().len(),
        trainer.steps_per_epoch()
    );
    let out = run_to_end(trainer, Some(&a.out))?;
    let last = out.checkpoints.last().map(|p| p.display().to_string()).unwrap_or_default();
    match out.log.last() {
        Some(r) => println!("trained {} steps, final total loss {:.6}, checkpoint {last}", r.step, r.loss.total),
        None => println!("no training steps run, checkpoint {last}"),
    }
    m.finish(&a.out)
}

/// `(input file, path relative to the input root)` for every image.
fn collect_inputs(input: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    if input.is_file() {
        let name = input.file_name().map(PathBuf::from).unwrap_or_default();
        return Ok(vec![(input.to_path_buf(), name)]);
    }
    if !input.is_dir() {
        return Err(usage(format!("input {} does not exist", input.display())));
    }
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(input).sort_by_file_name() {
        let entry = entry?;
        if entry.file_type().is_file() && is_image_path(entry.path()) {
            let rel = entry.path().strip_prefix(input).unwrap_or(entry.path()).to_path_buf();
            out.push((entry.path().to_path_buf(), rel));
        }
    }
    if out.is_empty() {
        return Err(usage(format!("no PNG or JPEG images under {}", input.display())));
    }
    Ok(out)
}

pub fn infer(a: InferArgs, decompose: bool) -> Result<()> {
    if !a.ckpt.is_file() {
        return Err(usage(format!("checkpoint {} not found", a.ckpt.display())));
    }
    let inputs = collect_inputs(&a.input)?;
    let ck = match a.width {
        Some(w) => load_checkpoint_with_width(&a.ckpt, w),
        None => load_checkpoint(&a.ckpt),
    }
    .with_context(|| format!("loading {}", a.ckpt.display()))?;
    let params = ck.params;

    let command = if decompose { "decompose" } else { "enhance" };
    let mut m = RunManifest::new(command, None);
    m.set("width", params.width());
    m.set("checkpoint_epoch", ck.epoch);
    m.inputs.push(a.ckpt.clone());
    m.inputs.push(a.input.clone());
    m.outputs.push(a.out.clone());
    m.write(&a.out)?;

    inputs.par_iter().try_for_each(|(path, rel)| -> Result<()> {
        let y = load_image(path)?.to_rgb();
        let target = a.out.join(rel).with_extension("");
        if decompose {
            decompose_to_files(&params, &y, &target)?;
        } else {
            let res = enhance(&params, &y)?;
            let file = target.with_extension("png");
            if let Some(dir) = file.parent() {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            save_image(&res.enhanced, &file)?;
        }
        Ok(())
    })?;
    println!("{command}: {} image(s) written under {}", inputs.len(), a.out.display());
    m.finish(&a.out)
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    require_dir(&a.output_dir, "output directory")?;
    require_dir(&a.reference_dir, "reference directory")?;
    let model = match &a.niqe_model {
        Some(p) => Some(NiqeModel::load(p).with_context(|| format!("loading NIQE model {}", p.display()))?),
        None => {
            log::warn!("no --niqe-model given; NIQE column omitted");
            None
        }
    };
    let mut m = RunManifest::new("evaluate", None);
    m.set("niqe", a.niqe_model.is_some());
    m.inputs.push(a.output_dir.clone());
    m.inputs.push(a.reference_dir.clone());
    m.inputs.extend(a.niqe_model.iter().cloned());
    m.outputs.push(a.report.join(METRICS_CSV));
    m.write(&a.report)?;

    let report = evaluate_dirs(&a.output_dir, &a.reference_dir, model.as_ref())?;
    report.write_csv(&a.report.join(METRICS_CSV))?;
    println!("{}", report.summary_line());
    m.finish(&a.report)
}

pub fn fit_niqe(a: FitNiqeArgs) -> Result<()> {
    require_dir(&a.pristine_dir, "pristine directory")?;
    let model = fit_niqe_model(&a.pristine_dir, a.patch, a.sharpness_quantile)?;
    if let Some(dir) = a.out_model.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    model.save(&a.out_model)?;
    println!(
        "fitted {NIQE_FEATURES} features from {} patches over {} images (patch {}, sharpness quantile {}) -> {}",
        model.n_patches,
        model.n_images,
        model.patch,
        model.sharpness_quantile,
        a.out_model.display()
    );
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<()> {
    require_dir(&a.run_dir, "run directory")?;
    let log_path = a.run_dir.join(TRAIN_LOG);
    if !log_path.is_file() {
        return Err(usage(format!("{} not found", log_path.display())));
    }
    let out = a.out.clone().unwrap_or_else(|| a.run_dir.join("report"));
    let mut m = RunManifest::new("report", None);
    m.inputs.push(a.run_dir.clone());
    m.inputs.extend(a.images.iter().cloned());
    m.outputs.push(out.clone());
    m.write(&out)?;

    let log = read_train_log(&log_path)?;
    fs::copy(&log_path, out.join("loss_curve.csv")).context("copying loss log")?;
    let val = a.run_dir.join(VAL_LOG);
    if val.is_file() {
        fs::copy(&val, out.join("val_curve.csv")).context("copying validation log")?;
    }
    write(&out.join("loss_curve.svg"), &loss_curve_svg(&log))?;

    if let Some(dir) = &a.images {
        require_dir(dir, "image directory")?;
        let mut text = histogram_header();
        for (id, path) in list_images(dir)? {
            text.push_str(&histogram_rows(&id, &load_image(&path)?));
        }
        write(&out.join("histograms.csv"), &text)?;
    }
    println!("report: {} loss rows -> {}", log.len(), out.display());
    m.finish(&out)
}

pub fn synth(a: SynthArgs) -> Result<()> {
    if a.count == 0 || a.size == 0 {
        return Err(usage("--count and --size must be positive"));
    }
    let mut m = RunManifest::new("synth", Some(a.seed));
    m.set("count", a.count);
    m.set("size", a.size);
    m.outputs.push(a.out.clone());
    m.write(&a.out)?;
    (0..a.count).into_par_iter().try_for_each(|i| -> Result<()> {
        let img = synthetic_scene(a.size, a.size, stream_seed(a.seed, Stream::Synthetic, i as u64, 0))?;
        save_image(&img, a.out.join(format!("scene{i:03}.png")))?;
        Ok(())
    })?;
    println!("synth: {} scenes of {}x{} in {}", a.count, a.size, a.size, a.out.display());
    m.finish(&a.out)
}
