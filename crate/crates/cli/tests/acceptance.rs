//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Tolerances are fixed here and nowhere else.

use std::f64::consts::{PI, TAU};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ringfit::config::PipelineConfig;
use ringfit::dendro::score_detection;
use ringfit::fit::{extract_colormap, grad_check, gradcheck_problem, phase_loss};
use ringfit::gabor::{gabor_kernel, GaborParams, PhaseImage};
use ringfit::locate::pose_loss;
use ringfit::model::{render_color, render_phase, ring_coordinate, ColorLookup, ColorMap, WoodModelParams};
use ringfit::phase::wrapped_diff;
use ringfit::pipeline::{self, ring_coordinate_rms, FitOutput};
use ringfit::pnm::RawPnm;
use ringfit::synth::{generate, SynthOutput, SynthSpec};
use ringfit::tracer::RingSet;

const KERNEL_TOL: f64 = 1e-12;
const KERNEL_BUDGET: Duration = Duration::from_secs(1);
const GRAD_TOL: f64 = 1e-4;
const GRAD_TEXELS: usize = 32;
const GRAD_BUDGET: Duration = Duration::from_secs(10);
const DETECT_MIN_SENSITIVITY: f64 = 0.95;
const DETECT_MIN_PRECISION: f64 = 0.95;
const DETECT_MATCH_PX: f64 = 3.0;
const DETECT_BUDGET: Duration = Duration::from_secs(120);
const POSE_MAX_DU: f64 = 2.0;
const POSE_MAX_REL_SCALE: f64 = 0.02;
const POSE_MAX_DX_RINGS: f64 = 0.25;
const POSE_SYMMETRY_TOL: f64 = 1e-12;
const INIT_MAX_ERR: f64 = PI / 2.0;
const INIT_MIN_GOOD: f64 = 0.90;
const FIT_MAX_RMSE: f64 = 0.1;
const FIT_MAX_MR_RMS_RINGS: f64 = 0.05;
const FIT_MAX_LOSS_RATIO: f64 = 0.05;
const FIT_BUDGET: Duration = Duration::from_secs(600);
const COLORMAP_TOL: f64 = 1.0 / 255.0;
const CYCLIC_SAMPLES: usize = 10_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn failed(e: impl std::fmt::Display) -> Outcome {
    outcome(false, format!("error: {e}"))
}

fn kernel_suite() -> Outcome {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for &(f, theta) in &[(0.125, 0.0), (0.25, 0.0), (1.0 / 12.0, 0.0), (0.07, 0.4), (0.19, -1.1)] {
        let mut p = GaborParams::for_frequency(f);
        p.theta = theta;
        let k = match gabor_kernel(&p) {
            Ok(k) => k,
            Err(e) => return failed(e),
        };
        let (re, im) = k.at(0, 0);
        worst = worst.max((re - 1.0).abs()).max(im.abs());
        let h = k.half as isize;
        for y in -h..=h {
            for x in -h..=h {
                let (r1, i1) = k.at(x, y);
                let (r2, i2) = k.at(-x, -y);
                worst = worst.max((r1 - r2).abs()).max((i1 + i2).abs());
            }
        }
        if theta == 0.0 {
            // Quarter period along the normal lands on an integer offset.
            let x = (0.25 / f).round() as isize;
            worst = worst.max(k.at(x, 0).0.abs());
        }
    }
    let dt = t0.elapsed();
    outcome(
        worst <= KERNEL_TOL && dt < KERNEL_BUDGET,
        format!("max deviation {worst:.1e} (tol {KERNEL_TOL:.0e}), {:.3} s (budget {} s)", dt.as_secs_f64(), KERNEL_BUDGET.as_secs()),
    )
}

fn gradient_check() -> Outcome {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..4 {
        let gc = gradcheck_problem(seed, 16).and_then(|(t, p, tex)| grad_check(&t, &p, &tex, GRAD_TEXELS, seed));
        match gc {
            Ok(gc) if gc.checked_texels.len() == GRAD_TEXELS => worst = worst.max(gc.max_rel_error),
            Ok(gc) => return outcome(false, format!("only {} texels checked", gc.checked_texels.len())),
            Err(e) => return failed(e),
        }
    }
    let dt = t0.elapsed();
    outcome(
        worst < GRAD_TOL && dt < GRAD_BUDGET,
        format!(
            "16x16, {GRAD_TEXELS} texels + s_r, 4 seeds: max rel error {worst:.2e} (tol {GRAD_TOL:.0e}), {:.2} s (budget {} s)",
            dt.as_secs_f64(),
            GRAD_BUDGET.as_secs()
        ),
    )
}

struct DetectRun {
    synth: SynthOutput,
    rings: RingSet,
    elapsed: Duration,
}

fn detection_benchmark() -> ringfit::Result<DetectRun> {
    let synth = generate(&SynthSpec::default())?;
    let cfg = PipelineConfig::default();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("single-thread pool");
    let t0 = Instant::now();
    let det = pool.install(|| pipeline::detect(&synth.gray, &cfg.detect, &cfg.locate))?;
    Ok(DetectRun { synth, rings: det.rings, elapsed: t0.elapsed() })
}

fn detection_round_trip(run: &DetectRun) -> Outcome {
    let s = score_detection(&run.rings, &run.synth.labels, DETECT_MATCH_PX);
    let (sen, pre) = (s.sensitivity().unwrap_or(0.0), s.precision().unwrap_or(0.0));
    outcome(
        sen >= DETECT_MIN_SENSITIVITY && pre >= DETECT_MIN_PRECISION && run.elapsed < DETECT_BUDGET,
        format!(
            "512x512, {} labels: sensitivity {sen:.3}, precision {pre:.3} (min {DETECT_MIN_SENSITIVITY}/{DETECT_MIN_PRECISION}), {:.1} s single-threaded (budget {} s)",
            run.synth.labels.points.len(),
            run.elapsed.as_secs_f64(),
            DETECT_BUDGET.as_secs()
        ),
    )
}

fn pose_round_trip(run: &DetectRun) -> Outcome {
    let h = run.synth.gray.height;
    let (pose, _) = match pipeline::locate(&run.rings, h, &PipelineConfig::default().locate) {
        Ok(p) => p,
        Err(e) => return failed(e),
    };
    let truth = run.synth.params.pose;
    let du = (pose.u_center - truth.u_center).abs();
    let ds = (pose.scale - truth.scale).abs() / truth.scale;
    // The sign of x_offset is not observable; compare magnitudes.
    let dx = (pose.x_offset.abs() - truth.x_offset.abs()).abs() / truth.s_r;
    let points: Vec<[f64; 2]> = run.rings.rings.iter().flat_map(|r| r.points.iter().copied()).collect();
    let l1 = pose_loss(&points, pose.u_center, pose.x_offset, pose.scale);
    let l2 = pose_loss(&points, pose.u_center, -pose.x_offset, pose.scale);
    let asym = (l1 - l2).abs();
    outcome(
        du < POSE_MAX_DU && ds < POSE_MAX_REL_SCALE && dx < POSE_MAX_DX_RINGS && asym <= POSE_SYMMETRY_TOL,
        format!(
            "|du| {du:.3} px (max {POSE_MAX_DU}), |ds|/s {:.2}% (max {}%), |dx| {dx:.3} s_r (max {POSE_MAX_DX_RINGS}), +-x loss gap {asym:.1e} (tol {POSE_SYMMETRY_TOL:.0e})",
            100.0 * ds,
            100.0 * POSE_MAX_REL_SCALE
        ),
    )
}

struct FitRun {
    synth: SynthOutput,
    out: FitOutput,
    initial_pose: ringfit::model::BoardPose,
    elapsed: Duration,
}

fn fit_benchmark() -> ringfit::Result<FitRun> {
    let synth = generate(&SynthSpec::fit_benchmark())?;
    let cfg = PipelineConfig::default();
    let t0 = Instant::now();
    let det = pipeline::detect(&synth.gray, &cfg.detect, &cfg.locate)?;
    let (pose, _) = pipeline::locate(&det.rings, synth.gray.height, &cfg.locate)?;
    let out = pipeline::fit(&synth.rgb, &det, &pose, &cfg.fit)?;
    Ok(FitRun { synth, out, initial_pose: pose, elapsed: t0.elapsed() })
}

fn initial_guess(run: &FitRun) -> Outcome {
    let (w, h) = (run.synth.phase.width, run.synth.phase.height);
    let rendered = render_phase(&run.initial_pose, &run.out.initial, w, h);
    let (mut good, mut total) = (0usize, 0usize);
    for k in 0..w * h {
        if run.out.mask[k] {
            total += 1;
            good += (wrapped_diff(rendered.phase[k], run.synth.phase.phase[k]).abs() < INIT_MAX_ERR) as usize;
        }
    }
    let frac = good as f64 / total.max(1) as f64;
    outcome(
        total > 0 && frac >= INIT_MIN_GOOD,
        format!("{:.1}% of {total} masked pixels within pi/2 (min {:.0}%)", 100.0 * frac, 100.0 * INIT_MIN_GOOD),
    )
}

fn fit_convergence(run: &FitRun) -> Outcome {
    let rep = &run.out.report;
    let p = &run.out.params;
    let (w, h) = (run.synth.phase.width, run.synth.phase.height);
    let truth = &run.synth.params;
    let mr = ring_coordinate_rms(&p.pose, &p.distortion, &truth.pose, &truth.distortion, w, &vec![true; w * h]) * truth.pose.s_r;
    let ratio = rep.final_rmse.powi(2) / rep.losses[0];
    outcome(
        rep.losses.len() == 500
            && rep.final_rmse < FIT_MAX_RMSE
            && mr < FIT_MAX_MR_RMS_RINGS * truth.pose.s_r
            && ratio < FIT_MAX_LOSS_RATIO
            && run.elapsed < FIT_BUDGET,
        format!(
            "256x256, {} epochs: rmse {:.4} rad (max {FIT_MAX_RMSE}), m_r rms {mr:.4} (max {FIT_MAX_MR_RMS_RINGS} s_r), final/initial loss {ratio:.4} (max {FIT_MAX_LOSS_RATIO}), {:.1} s (budget {} s)",
            rep.losses.len(),
            rep.final_rmse,
            run.elapsed.as_secs_f64(),
            FIT_BUDGET.as_secs()
        ),
    )
}

fn colormap_round_trip() -> Outcome {
    let spec = SynthSpec::fit_benchmark();
    let truth = match generate(&spec) {
        Ok(s) => s.params,
        Err(e) => return failed(e),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, spr) = (truth.colormap.n_rings, truth.colormap.samples_per_ring);
    let rgb: Vec<[f64; 3]> = (0..n * spr).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let known = match ColorMap::new(n, spr, rgb).and_then(|cm| WoodModelParams::new(truth.pose, truth.distortion.clone(), cm)) {
        Ok(p) => p,
        Err(e) => return failed(e),
    };
    // Through an 8-bit image, as a rendered file would be stored.
    let img = render_color(&known, spec.width, spec.height, ColorLookup::Nearest);
    let img = RawPnm::from_rgb(&img, 255).to_rgb();
    let back = match extract_colormap(&img, &known.pose, &known.distortion, n, spr, None) {
        Ok(c) => c,
        Err(e) => return failed(e),
    };
    // Only bins some pixel falls in can be recovered.
    let mut seen = vec![false; n * spr];
    for y in 0..spec.height {
        for x in 0..spec.width {
            let u = ring_coordinate(&known.pose, &known.distortion, x as f64, y as f64);
            let ring = u.floor();
            if ring >= 0.0 && (ring as usize) < n {
                seen[ring as usize * spr + ((u - ring) * spr as f64).floor().min(spr as f64 - 1.0) as usize] = true;
            }
        }
    }
    let mut worst = 0.0f64;
    for (k, (a, b)) in back.rgb.iter().zip(&known.colormap.rgb).enumerate() {
        if seen[k] {
            worst = (0..3).map(|c| (a[c] - b[c]).abs()).fold(worst, f64::max);
        }
    }
    let observed = seen.iter().filter(|&&v| v).count();
    outcome(
        observed > 0 && worst <= COLORMAP_TOL,
        format!("{observed} of {} bins observed, max channel error {:.3}/255 (max 1/255)", n * spr, worst * 255.0),
    )
}

fn cyclic_loss() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let grid = (1u64 << 20) as f64;
    let steps = (PI * grid).floor() as i64;
    // Lattice phases keep p + 2 pi k exact, so invariance is checked bitwise.
    let lattice = |rng: &mut ChaCha8Rng| rng.random_range(-steps + 1..=steps) as f64 / grid;
    let (mut loss_breaks, mut tie_breaks) = (0usize, 0usize);
    for _ in 0..CYCLIC_SAMPLES {
        let (j, i) = (lattice(&mut rng), lattice(&mut rng));
        let (kj, ki) = (rng.random_range(-3i32..=3) as f64, rng.random_range(-3i32..=3) as f64);
        let one = |p: f64| PhaseImage { width: 1, height: 1, phase: vec![p], valid: vec![true] };
        let base = phase_loss(&one(j), &one(i), &[true]).unwrap();
        let moved = phase_loss(&one(j + kj * TAU), &one(i + ki * TAU), &[true]).unwrap();
        loss_breaks += (base.to_bits() != moved.to_bits()) as usize;
        tie_breaks += (wrapped_diff(j + PI, j) != PI || wrapped_diff(j - PI, j) != PI) as usize;
    }
    outcome(
        loss_breaks == 0 && tie_breaks == 0,
        format!("{CYCLIC_SAMPLES} samples: {loss_breaks} loss mismatches, {tie_breaks} half-turn ties not resolved to +pi"),
    )
}

fn cli_fit(image: &Path, out: &Path, workers: &str) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_ringfit"))
        .args(["fit", image.to_str().unwrap(), "--out-dir", out.to_str().unwrap(), "--workers", workers])
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&o.stderr).into_owned())
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let image = dir.path().join("board.ppm");
    let synth = match generate(&SynthSpec::fit_benchmark()) {
        Ok(s) => s,
        Err(e) => return failed(e),
    };
    if let Err(e) = ringfit::pnm::write_rgb(&image, &synth.rgb, 65535) {
        return failed(e);
    }
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, workers) in [(&a, "1"), (&b, "4")] {
        if let Err(e) = cli_fit(&image, out, workers) {
            return failed(e);
        }
    }
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let differing: Vec<String> = names
        .iter()
        .filter(|n| std::fs::read(a.join(n)).ok() != std::fs::read(b.join(n)).ok())
        .map(|n| n.to_string_lossy().into_owned())
        .collect();
    outcome(
        differing.is_empty() && !names.is_empty(),
        format!("{} artifacts from 1 and 4 workers, differing: {differing:?}", names.len()),
    )
}

fn fold_over(run: &FitRun) -> Outcome {
    let flag = run.out.report.fold_over;
    let recheck = run.out.params.distortion.has_fold();
    outcome(!flag && !recheck, format!("report fold_over = {flag}, texture recheck = {recheck}"))
}

fn main() {
    // Accept and ignore libtest flags such as `--nocapture`.
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    results.push((1, "gabor kernel analytic suite", kernel_suite()));
    results.push((2, "gradient check", gradient_check()));
    match detection_benchmark() {
        Ok(run) => {
            results.push((3, "detection round trip", detection_round_trip(&run)));
            results.push((4, "pose round trip", pose_round_trip(&run)));
        }
        Err(e) => {
            results.push((3, "detection round trip", failed(&e)));
            results.push((4, "pose round trip", failed(&e)));
        }
    }
    let fit = fit_benchmark();
    let with_fit = |f: fn(&FitRun) -> Outcome| match &fit {
        Ok(run) => f(run),
        Err(e) => failed(e),
    };
    results.push((5, "initial guess quality", with_fit(initial_guess)));
    results.push((6, "fit convergence", with_fit(fit_convergence)));
    results.push((7, "colormap round trip", colormap_round_trip()));
    results.push((8, "cyclic loss properties", cyclic_loss()));
    results.push((9, "determinism across worker counts", determinism()));
    results.push((10, "fold-over detector", with_fit(fold_over)));

    results.sort_by_key(|r| r.0);
    let mut all = true;
    for (n, name, o) in &results {
        all &= o.pass;
        println!("acceptance {n:>2} {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let passed = results.iter().filter(|r| r.2.pass).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if !all {
        std::process::exit(1);
    }
}
