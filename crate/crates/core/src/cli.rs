//! Command-line commands. Each command reads and writes only the files named
//! by its flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bench::{bench_update, default_checkpoints, to_tsv};
use crate::error::{Error, Result};
use crate::eval::{score_segments, stitch, MetricsReport};
use crate::io;
use crate::projection::{orthonormality_error, ProjectionConfig};
use crate::recognizer::{train, LabeledInstance, RecognizerConfig, TrainedModel};
use crate::skeleton::JointLayout;
use crate::synth::{SynthConfig, SyntheticClasses};

#[derive(Debug, Parser)]
#[command(
    name = "covstream",
    version,
    about = "Online skeleton action recognition"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a projection and class models from labeled skeleton streams.
    Train(TrainArgs),
    /// Label a skeleton stream frame by frame.
    Recognize(RecognizeArgs),
    /// Score recognition against annotated streams.
    Evaluate(EvaluateArgs),
    /// Time incremental updates against batch recomputation.
    Bench(BenchArgs),
    /// Write a seeded synthetic data set.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Manifest of `<label> <stream file>` lines.
    #[arg(long)]
    pub data: PathBuf,
    /// Stream file holding the neutral pose.
    #[arg(long)]
    pub neutral: PathBuf,
    /// Frame of the neutral file to use.
    #[arg(long, default_value_t = 0)]
    pub neutral_frame: usize,
    /// Projected dimension m (default min(n, 10)).
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, default_value_t = 0.95)]
    pub eta: f64,
    #[arg(long, default_value_t = 30)]
    pub init_frames: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 5)]
    pub std_window: usize,
    /// Treat every frame as equally informative.
    #[arg(long)]
    pub no_frame_weighting: bool,
    #[arg(long, default_value_t = 3)]
    pub k_within: usize,
    #[arg(long, default_value_t = 3)]
    pub k_between: usize,
    #[arg(long, default_value_t = 200)]
    pub max_iterations: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RecognizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub stream: PathBuf,
    /// Events file.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-frame class distances for plotting.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub reset_on_boundary: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Manifest of `<stream file> <annotation file>` lines.
    #[arg(long)]
    pub streams: PathBuf,
    /// Text report.
    #[arg(long)]
    pub out: PathBuf,
    /// Machine-readable key-value report.
    #[arg(long)]
    pub kv: Option<PathBuf>,
    #[arg(long)]
    pub reset_on_boundary: bool,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Feature dimension.
    #[arg(long, default_value_t = 72)]
    pub d: usize,
    #[arg(long, default_value_t = 10_000)]
    pub frames: usize,
    /// Skip batch timing beyond this frame.
    #[arg(long, default_value_t = 10_000)]
    pub batch_limit: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Feature dimension, a multiple of 3.
    #[arg(long, default_value_t = 21)]
    pub dim: usize,
    /// Training instances per class.
    #[arg(long, default_value_t = 5)]
    pub instances: usize,
    /// Frames per instance.
    #[arg(long, default_value_t = 40)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of stitched test streams.
    #[arg(long, default_value_t = 3)]
    pub test_streams: usize,
    /// Segments per test stream.
    #[arg(long, default_value_t = 10)]
    pub segments: usize,
    /// Minimum Stein divergence between class covariances.
    #[arg(long, default_value_t = 2.0)]
    pub separation: f64,
    /// Fraction of each instance spent at rest after the action.
    #[arg(long, default_value_t = 0.3)]
    pub rest_fraction: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(a).map(|summary| print!("{summary}")),
        Command::Recognize(a) => cmd_recognize(a),
        Command::Evaluate(a) => cmd_evaluate(a).map(|_| ()),
        Command::Bench(a) => cmd_bench(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn check_layout(expected: &JointLayout, found: &JointLayout, path: &Path) -> Result<()> {
    if expected.joint_count() != found.joint_count() {
        return Err(Error::DimensionMismatch {
            expected: expected.joint_count(),
            found: found.joint_count(),
        });
    }
    if (
        expected.hip_center,
        expected.shoulder_center,
        expected.spine,
    ) != (found.hip_center, found.shoulder_center, found.spine)
    {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "joint roles differ from the reference skeleton".into(),
        });
    }
    Ok(())
}

/// Trains and writes the model; returns the summary printed by the CLI.
pub fn cmd_train(args: &TrainArgs) -> Result<String> {
    let config = RecognizerConfig {
        decay: args.eta,
        init_frames: args.init_frames,
        target_dim: args.dim,
        std_window: args.std_window,
        epsilon: args.epsilon,
        reset_on_boundary: false,
        frame_weighting: !args.no_frame_weighting,
        projection: ProjectionConfig {
            k_within: args.k_within,
            k_between: args.k_between,
            max_iterations: args.max_iterations,
            ..ProjectionConfig::default()
        },
    };
    config.validate()?;
    let (layout, neutral) = io::read_neutral(&args.neutral, args.neutral_frame)?;
    let manifest = io::read_training_manifest(&args.data)?;
    let mut instances = Vec::with_capacity(manifest.len());
    for (label, path) in &manifest {
        let stream = io::read_stream(path)?;
        check_layout(&layout, &stream.layout, path)?;
        instances.push(LabeledInstance {
            label: *label,
            frames: stream.frames,
        });
    }
    let (model, report) = train(&instances, &layout, &neutral, &config)?;
    io::write_model(&args.out, &model)?;

    let mut out = String::new();
    for c in &model.classes {
        let _ = writeln!(
            out,
            "class {}: {} descriptors",
            c.label,
            c.descriptors.len()
        );
    }
    let _ = writeln!(
        out,
        "objective {} -> {} after {} iterations{}",
        report.fit.initial_objective,
        report.fit.objective,
        report.fit.iterations,
        if report.fit.converged {
            ""
        } else {
            " (not converged)"
        }
    );
    let _ = writeln!(
        out,
        "projection {}x{}, orthonormality error {:e}",
        model.source_dim(),
        model.target_dim(),
        orthonormality_error(model.projection.matrix())
    );
    if report.skipped_instances > 0 || report.dropped_frames > 0 {
        let _ = writeln!(
            out,
            "skipped {} instances, dropped {} frames",
            report.skipped_instances, report.dropped_frames
        );
    }
    Ok(out)
}

fn load_stream_for(model: &TrainedModel, path: &Path) -> Result<io::SkeletonStream> {
    let stream = io::read_stream(path)?;
    check_layout(&model.layout, &stream.layout, path)?;
    if stream.frames.len() < model.init_frames {
        log::warn!(
            "{}: {} frames is shorter than the {} needed for a first decision",
            path.display(),
            stream.frames.len(),
            model.init_frames
        );
    }
    Ok(stream)
}

pub fn cmd_recognize(args: &RecognizeArgs) -> Result<()> {
    let model = io::read_model(&args.model)?;
    let stream = load_stream_for(&model, &args.stream)?;
    let result = model.recognize(&stream.frames, args.reset_on_boundary)?;
    io::write_file(&args.out, &io::format_events(&result.events))?;
    if let Some(trace) = &args.trace {
        io::write_file(trace, &io::format_trace(&model.labels(), &result.trace))?;
    }
    Ok(())
}

/// Model settings echoed into evaluation reports.
pub fn config_echo(model: &TrainedModel, reset_on_boundary: bool) -> Vec<(String, String)> {
    vec![
        ("eta".into(), format!("{:?}", model.decay)),
        ("init_frames".into(), model.init_frames.to_string()),
        ("target_dim".into(), model.target_dim().to_string()),
        ("epsilon".into(), format!("{:?}", model.epsilon)),
        ("std_window".into(), model.std_window.to_string()),
        ("frame_weighting".into(), model.frame_weighting.to_string()),
        ("reset_on_boundary".into(), reset_on_boundary.to_string()),
    ]
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<MetricsReport> {
    let model = io::read_model(&args.model)?;
    let manifest = io::read_eval_manifest(&args.streams)?;
    if manifest.is_empty() {
        return Err(Error::NoStreams);
    }
    // Streams are independent; results are gathered back in manifest order.
    let results: Vec<Result<_>> = std::thread::scope(|scope| {
        let handles: Vec<_> = manifest
            .iter()
            .map(|(stream_path, ann_path)| {
                let model = &model;
                scope.spawn(move || {
                    let stream = load_stream_for(model, stream_path)?;
                    let ann = io::read_annotation(ann_path)?;
                    if ann.frame_count() != stream.frames.len() {
                        return Err(Error::Parse {
                            path: ann_path.clone(),
                            line: 0,
                            msg: format!(
                                "annotation covers {} frames but the stream has {}",
                                ann.frame_count(),
                                stream.frames.len()
                            ),
                        });
                    }
                    let rec = model.recognize(&stream.frames, args.reset_on_boundary)?;
                    Ok((
                        score_segments(&rec.plain_events(), &ann),
                        rec.dropped_frames,
                    ))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
            .collect()
    });
    let mut scores = Vec::new();
    let mut dropped = 0;
    for r in results {
        let (s, d) = r?;
        scores.extend(s);
        dropped += d;
    }
    let report = MetricsReport::from_scores(
        &scores,
        manifest.len(),
        dropped,
        config_echo(&model, args.reset_on_boundary),
    );
    io::write_file(&args.out, &report.to_text())?;
    if let Some(kv) = &args.kv {
        io::write_file(kv, &report.to_kv())?;
    }
    Ok(report)
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let checkpoints = default_checkpoints(args.frames);
    if checkpoints.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "need at least 100 frames, got {}",
            args.frames
        )));
    }
    let rows = bench_update(args.d, &checkpoints, args.batch_limit, args.seed)?;
    io::write_file(&args.out, &to_tsv(&rows))
}

/// Writes `neutral.txt`, `train/` with `train.txt`, and `test/` with
/// `test.txt`, all paths in manifests relative to `out_dir`.
pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    if args.frames < 2 || args.instances == 0 || args.segments == 0 {
        return Err(Error::InvalidConfig(
            "frames must be at least 2; instances and segments must be positive".into(),
        ));
    }
    let config = SynthConfig {
        classes: args.classes,
        dim: args.dim,
        frames_per_instance: args.frames,
        instances_per_class: args.instances,
        seed: args.seed,
        separation_floor: args.separation,
        rest_fraction: args.rest_fraction,
        ..SynthConfig::default()
    };
    let synth = SyntheticClasses::new(config)?;
    let layout = synth.layout();
    let dir = &args.out_dir;

    io::write_file(
        &dir.join("neutral.txt"),
        &io::format_stream(layout, &[synth.neutral_frame()]),
    )?;

    let mut manifest = String::from("# label stream\n");
    let mut counters: BTreeMap<u32, usize> = BTreeMap::new();
    for inst in synth.training_set()? {
        let n = counters.entry(inst.label).or_default();
        let name = format!("train/class{}_{:03}.txt", inst.label, n);
        *n += 1;
        io::write_file(&dir.join(&name), &io::format_stream(layout, &inst.frames))?;
        let _ = writeln!(manifest, "{} {}", inst.label, name);
    }
    io::write_file(&dir.join("train.txt"), &manifest)?;

    let mut manifest = String::from("# stream annotation\n");
    for k in 0..args.test_streams as u64 {
        let base = args.seed.wrapping_mul(1000).wrapping_add(100 + k);
        let instances = synth.sample_mixed(args.segments, args.frames, base)?;
        let (frames, ann) = stitch(&instances, base);
        let stream = format!("test/stream_{k:03}.txt");
        let annotation = format!("test/stream_{k:03}.ann");
        io::write_file(&dir.join(&stream), &io::format_stream(layout, &frames))?;
        io::write_file(&dir.join(&annotation), &io::format_annotation(&ann))?;
        let _ = writeln!(manifest, "{stream} {annotation}");
    }
    io::write_file(&dir.join("test.txt"), &manifest)?;
    Ok(())
}
