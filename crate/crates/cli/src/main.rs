//! `riann`: build reference models, stream ANN fields over image sequences,
//! apply keyframe effects and evaluate against the exact oracle.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O, 3 format, 4 dimension mismatch.

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use riann::{PatchShape, SearchParams};

mod commands;
mod frames;

#[derive(Parser, Debug)]
#[command(name = "riann", version, about = "Streaming approximate nearest-neighbor fields for video")]
struct Cli {
    /// Worker threads for intra-frame parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a reference model and write it as a RIAN file.
    BuildModel {
        #[command(subcommand)]
        source: ModelSourceArgs,
    },
    /// Stream a frame directory through a model and write an ANNF file.
    Run(RunArgs),
    /// Transfer a keyframe effect onto a frame directory.
    Effect(EffectArgs),
    /// Compare the streamed search against the exact oracle.
    Eval(EvalArgs),
}

#[derive(Subcommand, Debug)]
enum ModelSourceArgs {
    /// From the patches of one frame of the target video.
    Local {
        /// An image file, or a frame directory (see --frame-index, --random-frame).
        input: PathBuf,
        /// Frame to use when INPUT is a directory.
        #[arg(long, default_value_t = 0, conflicts_with = "random_frame")]
        frame_index: usize,
        /// Pick the frame uniformly at random (by --seed) when INPUT is a directory.
        #[arg(long)]
        random_frame: bool,
        #[command(flatten)]
        model: ModelOpts,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// From patches sampled out of a directory of external images.
    Global {
        images: PathBuf,
        /// Number of images to use (the first ones in file-name order).
        #[arg(long)]
        source_images: usize,
        /// Number of raw patches sampled before clustering.
        #[arg(long)]
        raw_patches: usize,
        #[command(flatten)]
        model: ModelOpts,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug, Clone)]
struct ModelOpts {
    /// Target number of references.
    #[arg(long, default_value_t = 900)]
    model_size: usize,
    /// Patch size, `N` or `WxH`.
    #[arg(long, default_value = "8x8", value_parser = parse_patch)]
    patch: PatchShape,
}

#[derive(Args, Debug, Clone)]
struct SearchOpts {
    /// Keep intersecting rings while the candidate set has at least L members.
    #[arg(long = "L", default_value_t = 20)]
    max_candidates: usize,
    /// Ring half-width as a fraction of the anchor distance.
    #[arg(long, default_value_t = 0.25)]
    alpha: f32,
    /// Cap on rings per query.
    #[arg(long, default_value_t = 8)]
    max_rings: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SearchOpts {
    fn params(&self) -> SearchParams {
        SearchParams {
            max_candidates: self.max_candidates,
            alpha: self.alpha,
            max_rings: self.max_rings,
            seed: self.seed,
        }
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directory of frames, processed in file-name order.
    frames: PathBuf,
    /// ANNF output file.
    #[arg(short, long)]
    out: PathBuf,
    /// Write reconstructed frames here and report per-frame error.
    #[arg(long)]
    reconstruct: Option<PathBuf>,
    /// Per-frame statistics as JSON lines.
    #[arg(long)]
    stats_out: Option<PathBuf>,
    /// Expected patch size; must agree with the model.
    #[arg(long, value_parser = parse_patch)]
    patch: Option<PatchShape>,
    #[command(flatten)]
    search: SearchOpts,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum EffectKind {
    /// Carry the keyframe's chroma onto grayscale frames.
    Colorize,
    /// Replace each patch with the transformed keyframe patch.
    Patch,
}

#[derive(Args, Debug)]
struct EffectArgs {
    #[arg(long, value_enum)]
    effect: EffectKind,
    /// Untransformed keyframe; the local model is built from it.
    #[arg(long)]
    keyframe_raw: PathBuf,
    /// The same keyframe after the transform (the colour original for colorize).
    #[arg(long)]
    keyframe_fx: PathBuf,
    frames: PathBuf,
    /// Output frame directory.
    #[arg(short, long)]
    out: PathBuf,
    /// Also write the ANNF stream.
    #[arg(long)]
    annf_out: Option<PathBuf>,
    #[arg(long)]
    stats_out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelOpts,
    #[command(flatten)]
    search: SearchOpts,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    frames: PathBuf,
    /// Report destination (JSON lines); stdout when omitted.
    #[arg(long)]
    stats_out: Option<PathBuf>,
    /// Histogram bin width for the coherency statistics.
    #[arg(long, default_value_t = 0.1)]
    bin_width: f64,
    /// Frames excluded from the efficiency summary (initial transient).
    #[arg(long, default_value_t = 3)]
    skip: usize,
    #[arg(long, value_parser = parse_patch)]
    patch: Option<PatchShape>,
    #[command(flatten)]
    search: SearchOpts,
}

fn parse_patch(s: &str) -> Result<PatchShape, String> {
    let dims: Vec<&str> = s.split(['x', 'X']).collect();
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad patch size {s:?}"));
    let (w, h) = match dims.as_slice() {
        [n] => (parse(n)?, parse(n)?),
        [w, h] => (parse(w)?, parse(h)?),
        _ => return Err(format!("patch size must be N or WxH, got {s:?}")),
    };
    if w == 0 || h == 0 {
        return Err("patch sides must be positive".into());
    }
    Ok(PatchShape::new(w, h))
}

/// A command failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    pub fn format(message: impl Into<String>) -> Self {
        Failure { code: 3, message: message.into() }
    }

    pub fn dimension(message: impl Into<String>) -> Self {
        Failure { code: 4, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<riann::Error> for Failure {
    fn from(e: riann::Error) -> Self {
        use riann::Error as E;
        let msg = e.to_string();
        match e {
            E::Io(_) => Failure::io(msg),
            E::Format(_) => Failure::format(msg),
            E::Dimension(_) => Failure::dimension(msg),
            _ => Failure::usage(msg),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::io(e.to_string())
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::BuildModel { source } => commands::build_model(source),
        Command::Run(args) => commands::run(args),
        Command::Effect(args) => commands::effect(args),
        Command::Eval(args) => commands::eval(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
