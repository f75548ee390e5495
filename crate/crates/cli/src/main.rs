//! `ringfit`: tree ring detection and procedural wood model fitting.
//!
//! Config precedence, lowest first: built-in defaults, `--config` file,
//! `--set key=value` pairs, dedicated flags such as `--epochs`.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ringfit::Error;

#[derive(Parser, Debug)]
#[command(name = "ringfit", version, about = "Tree ring detection and wood model fitting")]
struct Cli {
    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Dedicated flags for every fit parameter.
#[derive(Args, Debug, Clone, Default)]
pub struct FitFlags {
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    #[arg(long)]
    pub loss_mask_mag_min: Option<f64>,
    #[arg(long)]
    pub s_r_lr_scale: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Gabor phase, magnitude and traced rings of an image.
    Detect {
        image: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Board pose from a ring CSV.
    Locate {
        rings: PathBuf,
        /// Height of the image the rings were traced in.
        #[arg(long)]
        height: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Full pipeline: detect, locate, fit, extract the color map.
    Fit {
        image: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        fit: FitFlags,
        /// Print the loss of every epoch to stderr.
        #[arg(long)]
        log_epochs: bool,
    },
    /// Render model parameters to a color image and a phase dump.
    Render {
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        distortion: PathBuf,
        #[arg(long)]
        colormap: PathBuf,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[arg(long, value_enum, default_value_t = Lookup::Linear)]
        lookup: Lookup,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score detected rings against labels.
    Eval {
        rings: PathBuf,
        labels: PathBuf,
        /// Match distance in pixels (overrides `eval_threshold`).
        #[arg(long)]
        threshold: Option<f64>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Synthetic board with ground truth.
    Synth {
        /// Synth spec file; keys left out keep their defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Override one spec key; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compare analytic and finite-difference gradients on a random problem.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, default_value_t = 32)]
        texels: usize,
        /// Exit with status 4 above this relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Lookup {
    Linear,
    Nearest,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Insufficient(_) => 3,
        Error::Numeric(_) => 4,
        _ => 2,
    }
}

fn report(e: &Error) {
    match e {
        Error::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => {
            eprintln!("error: input not found: {}", path.display())
        }
        other => eprintln!("error: {other}"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        pool = pool.num_threads(n);
    }
    if let Err(e) = pool.build_global() {
        eprintln!("error: thread pool: {e}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Detect { image, out_dir, config } => commands::detect(&image, &out_dir, &config),
        Command::Locate { rings, height, out, config } => commands::locate(&rings, height, &out, &config),
        Command::Fit { image, out_dir, config, fit, log_epochs } => commands::fit(&image, &out_dir, &config, &fit, log_epochs),
        Command::Render { pose, distortion, colormap, width, height, lookup, out_dir } => {
            let mode = match lookup {
                Lookup::Linear => ringfit::model::ColorLookup::Linear,
                Lookup::Nearest => ringfit::model::ColorLookup::Nearest,
            };
            commands::render(&pose, &distortion, &colormap, width, height, mode, &out_dir)
        }
        Command::Eval { rings, labels, threshold, out, config } => {
            commands::eval(&rings, &labels, threshold, out.as_deref(), &config)
        }
        Command::Synth { spec, set, out_dir } => commands::synth(spec.as_deref(), &set, &out_dir),
        Command::Gradcheck { seed, size, texels, tolerance } => commands::gradcheck(seed, size, texels, tolerance),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(exit_code(&e))
        }
    }
}
