use std::fmt::Write as _;
use std::path::Path;

use ringfit::config::PipelineConfig;
use ringfit::dendro::{hsv_value_channel, latewood_series, score_detection, RingLabels};
use ringfit::fit::{grad_check, gradcheck_problem};
use ringfit::image::{GrayImage, RgbImage};
use ringfit::kv::KvFile;
use ringfit::model::{render_color, render_phase, ColorLookup, ColorMap, DistortionTexture, WoodModelParams};
use ringfit::pipeline::{self, Detection};
use ringfit::pnm::{self, phase_to_pgm, PnmKind, RawPnm};
use ringfit::synth::{generate, SynthSpec};
use ringfit::tracer::RingSet;
use ringfit::{Error, Result};

use crate::io::{grid_to_text, read_pose, write_pose, write_text};
use crate::{ConfigArgs, FitFlags};

/// Output images use 16-bit samples so re-reading them loses almost nothing.
const MAXVAL: u16 = 65535;

fn split_assignment(s: &str) -> Result<(&str, &str)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| Error::Param(format!("expected KEY=VALUE, got `{s}`")))
}

fn overlay(base: Option<&Path>, set: &[String]) -> Result<KvFile> {
    let mut kv = match base {
        Some(p) => KvFile::read(p)?,
        None => KvFile::new(),
    };
    for s in set {
        let (k, v) = split_assignment(s)?;
        kv.set(k, v);
    }
    Ok(kv)
}

pub fn load_config(args: &ConfigArgs, fit: Option<&FitFlags>) -> Result<PipelineConfig> {
    let mut kv = overlay(args.config.as_deref(), &args.set)?;
    if let Some(f) = fit {
        let flags: [(&str, Option<String>); 7] = [
            ("learning_rate", f.learning_rate.map(|v| v.to_string())),
            ("epochs", f.epochs.map(|v| v.to_string())),
            ("adam_beta1", f.adam_beta1.map(|v| v.to_string())),
            ("adam_beta2", f.adam_beta2.map(|v| v.to_string())),
            ("adam_eps", f.adam_eps.map(|v| v.to_string())),
            ("loss_mask_mag_min", f.loss_mask_mag_min.map(|v| v.to_string())),
            ("s_r_lr_scale", f.s_r_lr_scale.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                kv.set(k, v);
            }
        }
    }
    PipelineConfig::from_kv(&kv)
}

/// Gray input for detection: PGM as is, PPM through the HSV value channel.
/// The color image is the PPM itself, or the PGM replicated.
fn read_image(path: &Path) -> Result<(GrayImage, RgbImage)> {
    let raw = RawPnm::read(path)?;
    Ok(match raw.kind {
        PnmKind::Gray => {
            let g = raw.to_gray();
            let rgb = RgbImage::from_gray(&g);
            (g, rgb)
        }
        PnmKind::Rgb => {
            let rgb = raw.to_rgb();
            (hsv_value_channel(&rgb), rgb)
        }
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })
}

fn run_detect(gray: &GrayImage, cfg: &PipelineConfig) -> Result<Detection> {
    let det = pipeline::detect(gray, &cfg.detect, &cfg.locate)?;
    for w in &det.warnings {
        eprintln!("warning: {w}");
    }
    Ok(det)
}

fn write_detection(det: &Detection, out_dir: &Path) -> Result<()> {
    phase_to_pgm(&det.phase).write(&out_dir.join("phase.pgm"))?;
    write_text(&out_dir.join("magnitude.txt"), &grid_to_text(&det.magnitude))?;
    det.rings.write(&out_dir.join("rings.csv"))
}

pub fn detect(image: &Path, out_dir: &Path, args: &ConfigArgs) -> Result<()> {
    let cfg = load_config(args, None)?;
    let (gray, _) = read_image(image)?;
    let det = run_detect(&gray, &cfg)?;
    create_dir(out_dir)?;
    write_detection(&det, out_dir)?;
    println!("{} rings", det.rings.rings.len());
    Ok(())
}

pub fn locate(rings: &Path, height: usize, out: &Path, args: &ConfigArgs) -> Result<()> {
    let cfg = load_config(args, None)?;
    let rings = RingSet::read(rings)?;
    let (pose, rep) = pipeline::locate(&rings, height, &cfg.locate)
        .map_err(|e| with_ring_count(e, rings.rings.len()))?;
    write_pose(
        out,
        &pose,
        &[
            ("center_outside", rep.center.outside().to_string()),
            ("center_side", format!("{:?}", rep.center.side).to_lowercase()),
            ("locate_loss", rep.loss.to_string()),
        ],
    )
}

fn with_ring_count(e: Error, n: usize) -> Error {
    match e {
        Error::Insufficient(m) => Error::Insufficient(format!("{m} ({n} rings detected)")),
        other => other,
    }
}

pub fn fit(image: &Path, out_dir: &Path, args: &ConfigArgs, flags: &FitFlags, log_epochs: bool) -> Result<()> {
    let cfg = load_config(args, Some(flags))?;
    let (gray, rgb) = read_image(image)?;
    if cfg.detect.resize_width > 0 && cfg.detect.resize_width != gray.width {
        return Err(Error::Param("fit: resize_width must be 0 or the image width".into()));
    }
    let det = run_detect(&gray, &cfg)?;
    let n = det.rings.rings.len();
    let (pose, rep) = pipeline::locate(&det.rings, gray.height, &cfg.locate).map_err(|e| with_ring_count(e, n))?;
    let out = pipeline::fit(&rgb, &det, &pose, &cfg.fit)?;
    if log_epochs {
        for (e, l) in out.report.losses.iter().enumerate() {
            eprintln!("epoch {e}: loss {l}");
        }
    }
    if out.report.fold_over {
        eprintln!("warning: fitted distortion folds over");
    }

    create_dir(out_dir)?;
    write_detection(&det, out_dir)?;
    let p = &out.params;
    write_pose(
        &out_dir.join("pose.txt"),
        &p.pose,
        &[
            ("center_outside", out.center_outside.to_string()),
            ("center_side", format!("{:?}", rep.center.side).to_lowercase()),
            ("locate_loss", rep.loss.to_string()),
            ("final_rmse", out.report.final_rmse.to_string()),
        ],
    )?;
    p.distortion.write(&out_dir.join("distortion.txt"))?;
    out.initial.write(&out_dir.join("initial_distortion.txt"))?;
    p.colormap.write(&out_dir.join("colormap.csv"))?;
    out.report.write(&out_dir.join("fit_report.csv"))?;
    match latewood_series(&p.colormap, cfg.latewood_sigma) {
        Ok(series) => {
            let mut s = String::from("ring,latewood\n");
            for (k, v) in series.iter().enumerate() {
                let _ = writeln!(s, "{k},{v}");
            }
            write_text(&out_dir.join("latewood.csv"), &s)?;
        }
        Err(Error::Insufficient(m)) => eprintln!("warning: {m}"),
        Err(e) => return Err(e),
    }
    println!("{n} rings, final rmse {}", out.report.final_rmse);
    Ok(())
}

pub fn render(
    pose: &Path,
    distortion: &Path,
    colormap: &Path,
    width: usize,
    height: usize,
    mode: ColorLookup,
    out_dir: &Path,
) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Param("render size must be positive".into()));
    }
    let params = WoodModelParams::new(read_pose(pose)?, DistortionTexture::read(distortion)?, ColorMap::read(colormap)?)?;
    let rgb = render_color(&params, width, height, mode);
    let phase = render_phase(&params.pose, &params.distortion, width, height);
    create_dir(out_dir)?;
    pnm::write_rgb(&out_dir.join("render.ppm"), &rgb, MAXVAL)?;
    phase_to_pgm(&phase).write(&out_dir.join("phase.pgm"))
}

pub fn eval(rings: &Path, labels: &Path, threshold: Option<f64>, out: Option<&Path>, args: &ConfigArgs) -> Result<()> {
    let cfg = load_config(args, None)?;
    let threshold = threshold.unwrap_or(cfg.eval_threshold);
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::Param(format!("threshold must be >= 0, got {threshold}")));
    }
    let report = score_detection(&RingSet::read(rings)?, &RingLabels::read(labels)?, threshold).to_kv();
    print!("{report}");
    match out {
        Some(p) => report.write(p),
        None => Ok(()),
    }
}

pub fn synth(spec: Option<&Path>, set: &[String], out_dir: &Path) -> Result<()> {
    let spec = SynthSpec::from_kv(&overlay(spec, set)?)?;
    let out = generate(&spec)?;
    create_dir(out_dir)?;
    pnm::write_rgb(&out_dir.join("image.ppm"), &out.rgb, MAXVAL)?;
    pnm::write_gray(&out_dir.join("gray.pgm"), &out.gray, MAXVAL)?;
    phase_to_pgm(&out.phase).write(&out_dir.join("phase.pgm"))?;
    out.labels.write(&out_dir.join("labels.csv"))?;
    write_pose(&out_dir.join("pose.txt"), &out.params.pose, &[])?;
    out.params.distortion.write(&out_dir.join("distortion.txt"))?;
    out.params.colormap.write(&out_dir.join("colormap.csv"))?;
    spec.to_kv().write(&out_dir.join("spec.txt"))
}

pub fn gradcheck(seed: u64, size: usize, texels: usize, tolerance: f64) -> Result<()> {
    let (target, pose, tex) = gradcheck_problem(seed, size)?;
    let gc = grad_check(&target, &pose, &tex, texels, seed)?;
    println!("max_rel_error = {}", gc.max_rel_error);
    println!("texels = {}", gc.checked_texels.len());
    println!("pixels = {}", gc.pixels);
    if gc.max_rel_error < tolerance {
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradient check: relative error {} exceeds {tolerance}", gc.max_rel_error)))
    }
}
