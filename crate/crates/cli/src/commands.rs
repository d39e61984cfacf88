use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use riann::eval::{coherency_stats, efficiency_report, field_exact_oracle, ReportRecord};
use riann::format::{read_model, write_model, AnnfWriter};
use riann::model::{sorted_bytes, ModelConfig};
use riann::transforms::{
    apply_effect_with_norms, build_effect_table, reconstruct_frame, reconstruction_error, EffectOutput, EffectTable,
    Transformed,
};
use riann::{build_model as build, FieldStream, Frame, FrameStats, ModelSource, PatchShape, ReferenceModel};

use crate::frames::{frame_name, list_frames, output_dir, read_luma, read_rgb, write_gray, write_rgb};
use crate::{EffectArgs, EffectKind, EvalArgs, Failure, ModelOpts, ModelSourceArgs, RunArgs};

fn config(opts: &ModelOpts, seed: u64) -> ModelConfig {
    ModelConfig { model_size: opts.model_size, shape: opts.patch, seed, ..Default::default() }
}

fn mib(bytes: u64) -> f64 {
    bytes as f64 / (1024.0 * 1024.0)
}

pub fn build_model(source: ModelSourceArgs) -> Result<(), Failure> {
    let (result, out, requested) = match source {
        ModelSourceArgs::Local { input, frame_index, random_frame, model, out, seed } => {
            let cfg = config(&model, seed);
            let result = if input.is_dir() {
                let paths = list_frames(&input)?;
                if random_frame {
                    let frames = paths.iter().map(|p| read_luma(p)).collect::<Result<Vec<_>, _>>()?;
                    build(ModelSource::RandomFrame(&frames), &cfg)?
                } else {
                    let path = paths.get(frame_index).ok_or_else(|| {
                        Failure::usage(format!("--frame-index {frame_index} but only {} frames", paths.len()))
                    })?;
                    build(ModelSource::Local(&read_luma(path)?), &cfg)?
                }
            } else {
                build(ModelSource::Local(&read_luma(&input)?), &cfg)?
            };
            (result, out, model.model_size)
        }
        ModelSourceArgs::Global { images, source_images, raw_patches, model, out, seed } => {
            if source_images == 0 || raw_patches == 0 {
                return Err(Failure::usage("--source-images and --raw-patches must be positive"));
            }
            let paths = list_frames(&images)?;
            if paths.len() < source_images {
                return Err(Failure::usage(format!(
                    "--source-images {source_images} but {} has only {} images",
                    images.display(),
                    paths.len()
                )));
            }
            let imgs = paths[..source_images].iter().map(|p| read_luma(p)).collect::<Result<Vec<_>, _>>()?;
            let result = build(ModelSource::Global { images: &imgs, raw_patches }, &config(&model, seed))?;
            (result, out, model.model_size)
        }
    };
    write_model(&out, &result.model)?;
    let m = &result.model;
    println!("references: {} (requested {requested})", m.n());
    if let Some(k) = result.source_frame {
        println!("source frame: {k}");
    }
    println!("build time: {:.3} s", result.build_time.as_secs_f64());
    println!(
        "memory: {:.2} MiB sorted lists + {:.2} MiB references",
        mib(sorted_bytes(m.n())),
        mib((m.n() * m.dim() * 4) as u64)
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::io(format!("cannot create {}: {e}", path.display())))
}

fn emit(out: &mut dyn Write, record: &ReportRecord) -> Result<(), Failure> {
    serde_json::to_writer(&mut *out, record).map_err(|e| Failure::io(e.to_string()))?;
    out.write_all(b"\n")?;
    Ok(())
}

fn frame_record(stats: &FrameStats, error: Option<f64>, oracle_error: Option<f64>) -> ReportRecord {
    ReportRecord::Frame { stats: stats.clone(), mean_distance_evals: stats.mean_distance_evals(), error, oracle_error }
}

fn load_model(path: &Path, patch: Option<PatchShape>) -> Result<ReferenceModel, Failure> {
    let model = read_model(path).map_err(|e| match e {
        riann::Error::Io(io) => Failure::io(format!("cannot read model {}: {io}", path.display())),
        other => Failure::from(other),
    })?;
    if let Some(p) = patch {
        if p != model.shape {
            return Err(Failure::dimension(format!(
                "--patch {}x{} but the model uses {}x{} patches",
                p.width, p.height, model.shape.width, model.shape.height
            )));
        }
    }
    Ok(model)
}

/// Reads frames one at a time, enforcing a single frame size.
struct Sequence {
    paths: Vec<std::path::PathBuf>,
    size: Option<(usize, usize)>,
}

impl Sequence {
    fn open(dir: &Path) -> Result<Self, Failure> {
        Ok(Sequence { paths: list_frames(dir)?, size: None })
    }

    fn read(&mut self, t: usize) -> Result<Frame, Failure> {
        let path = &self.paths[t];
        let f = read_luma(path)?;
        match self.size {
            Some((w, h)) if (w, h) != (f.width, f.height) => Err(Failure::dimension(format!(
                "{} is {}x{} but the sequence is {w}x{h}",
                path.display(),
                f.width,
                f.height
            ))),
            _ => {
                self.size = Some((f.width, f.height));
                Ok(f)
            }
        }
    }

    fn len(&self) -> usize {
        self.paths.len()
    }
}

fn apply(stream: &FieldStream<'_>, frame: &Frame, table: &EffectTable) -> Result<EffectOutput, Failure> {
    let grid = stream.grid().expect("a frame was pushed");
    Ok(apply_effect_with_norms(frame, &grid.norms, stream.field(), table)?)
}

fn luma_output(out: EffectOutput) -> Frame {
    out.into_luma().expect("luma payload table")
}

fn print_summary(stats: &[FrameStats], n: usize, elapsed: Duration) {
    let s = efficiency_report(stats, n, 0, Some(elapsed.as_secs_f64()));
    println!(
        "frames: {}, mean distance evals/query: {:.2} ({:.1}x fewer than a linear scan), mean rings/query: {:.2}, {:.1} frames/s",
        s.frames,
        s.mean_distance_evals,
        s.brute_force_ratio,
        s.mean_rings,
        s.fps.unwrap_or(0.0)
    );
}

pub fn run(args: RunArgs) -> Result<(), Failure> {
    let model = load_model(&args.model, args.patch)?;
    let mut seq = Sequence::open(&args.frames)?;
    let first = seq.read(0)?;
    let mut stream = FieldStream::new(&model, args.search.params(), first.width, first.height)?;
    let grid = (stream.field().width, stream.field().height);
    let mut annf = AnnfWriter::new(create(&args.out)?, grid.0, grid.1, model.shape)?;
    let mut stats_out = args.stats_out.as_deref().map(create).transpose()?;
    if let Some(dir) = &args.reconstruct {
        output_dir(dir)?;
    }
    let table = EffectTable::reconstruction(&model);

    let mut all = Vec::with_capacity(seq.len());
    let mut elapsed = Duration::ZERO;
    let mut pending = Some(first);
    for t in 0..seq.len() {
        let frame = match pending.take() {
            Some(f) => f,
            None => seq.read(t)?,
        };
        let start = Instant::now();
        let stats = stream.push(&frame)?;
        elapsed += start.elapsed();
        annf.write_field(stream.field())?;

        let error = match &args.reconstruct {
            Some(dir) => {
                let rec = luma_output(apply(&stream, &frame, &table)?);
                write_gray(&frame_name(dir, t), &rec)?;
                reconstruction_error(&frame, &rec).ok()
            }
            None => None,
        };
        if let Some(out) = stats_out.as_mut() {
            emit(out, &frame_record(&stats, error, None))?;
        }
        all.push(stats);
    }
    annf.finish()?;
    if let Some(mut out) = stats_out {
        out.flush()?;
    }
    print_summary(&all, model.n(), elapsed);
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn effect(args: EffectArgs) -> Result<(), Failure> {
    let raw = read_luma(&args.keyframe_raw)?;
    let cfg = ModelConfig {
        model_size: args.model.model_size,
        shape: args.model.patch,
        seed: args.search.seed,
        ..Default::default()
    };
    let mismatch = |w: usize, h: usize| {
        Failure::dimension(format!("keyframes differ in size: raw {}x{}, transformed {w}x{h}", raw.width, raw.height))
    };
    let result = build(ModelSource::Local(&raw), &cfg)?;
    let model = &result.model;
    let membership = result.membership.as_deref();
    let table = match args.effect {
        EffectKind::Colorize => {
            let fx = read_rgb(&args.keyframe_fx)?;
            if (fx.width, fx.height) != (raw.width, raw.height) {
                return Err(mismatch(fx.width, fx.height));
            }
            let ycc = fx.to_ycbcr();
            build_effect_table(model, membership, &raw, Transformed::Chroma { cb: &ycc.cb, cr: &ycc.cr })?
        }
        EffectKind::Patch => {
            let fx = read_luma(&args.keyframe_fx)?;
            if !fx.same_geometry(&raw) {
                return Err(mismatch(fx.width, fx.height));
            }
            build_effect_table(model, membership, &raw, Transformed::Luma(&fx))?
        }
    };
    println!("references: {}, model and table built in {:.3} s", model.n(), result.build_time.as_secs_f64());

    let mut seq = Sequence::open(&args.frames)?;
    output_dir(&args.out)?;
    let mut stats_out = args.stats_out.as_deref().map(create).transpose()?;
    let mut annf = None;
    let mut stream: Option<FieldStream<'_>> = None;
    let mut all = Vec::with_capacity(seq.len());
    let mut elapsed = Duration::ZERO;
    for t in 0..seq.len() {
        let frame = seq.read(t)?;
        let s = match stream.as_mut() {
            Some(s) => s,
            None => stream.insert(FieldStream::new(model, args.search.params(), frame.width, frame.height)?),
        };
        if let (None, Some(path)) = (&annf, &args.annf_out) {
            annf = Some(AnnfWriter::new(create(path)?, s.field().width, s.field().height, model.shape)?);
        }
        let start = Instant::now();
        let stats = s.push(&frame)?;
        let out = apply(s, &frame, &table)?;
        elapsed += start.elapsed();
        if let Some(w) = annf.as_mut() {
            w.write_field(s.field())?;
        }
        let path = frame_name(&args.out, t);
        match out {
            EffectOutput::Luma(f) => write_gray(&path, &f)?,
            EffectOutput::Color(c) => write_rgb(&path, &c.to_rgb())?,
        }
        if let Some(o) = stats_out.as_mut() {
            emit(o, &frame_record(&stats, None, None))?;
        }
        all.push(stats);
    }
    if let Some(w) = annf {
        w.finish()?;
    }
    if let Some(mut o) = stats_out {
        o.flush()?;
    }
    print_summary(&all, model.n(), elapsed);
    println!("wrote {} frames to {}", all.len(), args.out.display());
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<(), Failure> {
    if args.bin_width.is_nan() || args.bin_width <= 0.0 {
        return Err(Failure::usage("--bin-width must be positive"));
    }
    let model = load_model(&args.model, args.patch)?;
    let mut seq = Sequence::open(&args.frames)?;
    let frames = (0..seq.len()).map(|t| seq.read(t)).collect::<Result<Vec<_>, _>>()?;
    let mut out: Box<dyn Write> = match &args.stats_out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    };

    let mut stream = FieldStream::new(&model, args.search.params(), frames[0].width, frames[0].height)?;
    let table = EffectTable::reconstruction(&model);
    let mut all = Vec::with_capacity(frames.len());
    let mut elapsed = Duration::ZERO;
    for frame in &frames {
        let start = Instant::now();
        let stats = stream.push(frame)?;
        elapsed += start.elapsed();
        let rec = luma_output(apply(&stream, frame, &table)?);
        let oracle = field_exact_oracle(frame, &model)?;
        let oracle_rec = reconstruct_frame(frame, &oracle, &model)?;
        let error = reconstruction_error(frame, &rec).ok();
        let oracle_error = reconstruction_error(frame, &oracle_rec).ok();
        emit(&mut out, &frame_record(&stats, error, oracle_error))?;
        all.push(stats);
    }
    let summary = efficiency_report(&all, model.n(), args.skip, Some(elapsed.as_secs_f64()));
    emit(&mut out, &ReportRecord::Summary(summary))?;
    if frames.len() >= 2 {
        emit(&mut out, &ReportRecord::Coherency(coherency_stats(&frames, &model, args.bin_width)?))?;
    }
    out.flush()?;
    Ok(())
}
