use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use actseg::embedding::train_frame_embedding;
use actseg::eval::{evaluate, GroundTruth};
use actseg::hmm::Segmentation;
use actseg::pipeline::{
    load_dataset, read_bundle, read_segments, run_pipeline, segments_csv, stage_one, synth_generate, timelines,
    write_dataset, write_features, write_labels, write_run, Dataset, FeatureFormat, RunConfig, SynthConfig,
    SEGMENTS_FILE,
};

/// Unsupervised temporal action segmentation.
#[derive(Parser)]
#[command(name = "actseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground truth.
    Synth(SynthArgs),
    /// Train the frame embedding and cluster frames (stage one only).
    Embed(TrainArgs),
    /// Run the full method and write a run directory.
    Train(TrainArgs),
    /// Segment videos with a trained model.
    Segment(SegmentArgs),
    /// Score a segments file against ground truth.
    Eval(EvalArgs),
    /// Summarise a run directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    videos: usize,
    #[arg(long, default_value_t = 5)]
    actions: usize,
    #[arg(long, default_value_t = 10)]
    dim: usize,
    /// Mean segment length per action, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [20.0, 30.0, 25.0, 20.0, 30.0])]
    lambdas: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    min_len: usize,
    #[arg(long)]
    max_len: Option<usize>,
    /// Distance between action centers in noise deviations.
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    #[arg(long, default_value_t = 0.1)]
    skip_prob: f64,
    #[arg(long, default_value_t = 1)]
    activities: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Feature storage: csv or bin.
    #[arg(long, default_value = "csv")]
    format: FeatureFormat,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// key = value settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. --set variant=fte_hmm. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct SegmentArgs {
    /// Run directory or bundle file.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    segments: PathBuf,
    /// Number of predicted labels; defaults to the largest label used plus one.
    #[arg(long)]
    labels: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run: PathBuf,
    /// Recompute metrics and show ground-truth timelines from this dataset.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

fn load_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::read(path)?,
        None => RunConfig::default(),
    };
    for assignment in &args.overrides {
        cfg.apply(assignment).with_context(|| format!("--set {assignment}"))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load(manifest: &Path) -> Result<Dataset> {
    load_dataset(manifest).with_context(|| format!("loading {}", manifest.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn synth(args: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_videos: args.videos,
        n_actions: args.actions,
        dim: args.dim,
        lambdas: args.lambdas,
        min_len: args.min_len,
        max_len: args.max_len.unwrap_or(usize::MAX),
        separation: args.separation,
        skip_prob: args.skip_prob,
        activities: args.activities,
        seed: args.seed,
    };
    let data = synth_generate(&cfg)?;
    let manifest = write_dataset(&args.out, &data.videos, Some(&data.labels), Some(&data.activities), args.format)?;
    println!("{}", manifest.display());
    Ok(())
}

fn embed(args: TrainArgs) -> Result<()> {
    let cfg = load_config(&args)?;
    let data = load(&args.manifest)?;
    let mut emb_cfg = cfg.embedding.clone();
    emb_cfg.seed = cfg.seed;
    let trained = train_frame_embedding(&data.videos, &emb_cfg)?;
    let s1 = stage_one(trained.model.trunk(), &data.videos, cfg.n_actions, cfg.seed, cfg.kmeans_restarts)?;
    let out = &args.out;
    write(&out.join("embedding.json"), &serde_json::to_string(&trained.model)?)?;
    write(&out.join("clusters.json"), &serde_json::to_string(&s1.clusters)?)?;
    let losses: String = trained.epoch_losses.iter().enumerate().map(|(i, l)| format!("{},{l}\n", i + 1)).collect();
    write(&out.join("embedding_loss.csv"), &format!("epoch,mse\n{losses}"))?;
    let lambdas: String = s1.lambdas.iter().enumerate().map(|(c, l)| format!("lambda.{c}={l}\n")).collect();
    write(&out.join("lambdas.kv"), &lambdas)?;
    fs::create_dir_all(out.join("embeddings"))?;
    fs::create_dir_all(out.join("pseudo_labels"))?;
    for ((video, emb), labels) in data.videos.iter().zip(&s1.embeddings).zip(&s1.pseudo_labels) {
        write_features(&out.join("embeddings").join(format!("{}.csv", video.video_id())), emb, FeatureFormat::Csv)?;
        write_labels(&out.join("pseudo_labels").join(format!("{}.gt", video.video_id())), labels)?;
    }
    println!("final embedding loss {:.6}", trained.epoch_losses.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let cfg = load_config(&args)?;
    let data = load(&args.manifest)?;
    log::info!("training {:?} on {} videos", cfg.variant, data.videos.len());
    let truth = data.ground_truth.as_deref();
    let out = run_pipeline(&cfg, &data.videos, truth)?;
    write_run(&args.out, &cfg, &data.videos, truth, &out)?;
    for run in &out.activities {
        println!(
            "activity {}: {} videos, {} epochs, converged {}, final Q {:.6}",
            run.activity,
            run.videos.len(),
            run.q_history.len(),
            run.converged,
            run.q_history.last().copied().unwrap_or(f64::NAN)
        );
    }
    if let Some(m) = &out.metrics {
        print!("{}", m.to_kv());
    }
    Ok(())
}

fn segment(args: SegmentArgs) -> Result<()> {
    let bundle = read_bundle(&args.model)?;
    let data = load(&args.manifest)?;
    log::info!("segmenting {} videos with {} activity models", data.videos.len(), bundle.activities.len());
    let segs: Vec<Segmentation> = data.videos.iter().map(|v| bundle.segment(v)).collect::<actseg::Result<_>>()?;
    let ids: Vec<&str> = data.videos.iter().map(|v| v.video_id()).collect();
    let frames: Vec<Vec<usize>> = segs.iter().map(Segmentation::frame_labels).collect();
    write(&args.out.join(SEGMENTS_FILE), &segments_csv(&ids, &segs))?;
    write(&args.out.join("timelines.txt"), &timelines(&ids, &frames, data.ground_truth.as_deref(), 100))?;
    if let Some(gt) = &data.ground_truth {
        let m = evaluate(&frames, &GroundTruth::new(gt.clone()), bundle.n_labels())?;
        write(&args.out.join("metrics.kv"), &m.to_kv())?;
        print!("{}", m.to_kv());
    }
    Ok(())
}

/// Frame labels of every manifest video, in manifest order.
fn aligned_predictions(data: &Dataset, segments: &Path) -> Result<Vec<Vec<usize>>> {
    let segs = read_segments(segments)?;
    data.videos
        .iter()
        .map(|v| {
            let (_, seg) = segs
                .iter()
                .find(|(id, _)| id == v.video_id())
                .with_context(|| format!("{} has no segments in {}", v.video_id(), segments.display()))?;
            if seg.total_len() != v.len() {
                bail!("{} has {} frames but its segments cover {}", v.video_id(), v.len(), seg.total_len());
            }
            Ok(seg.frame_labels())
        })
        .collect()
}

fn eval(args: EvalArgs) -> Result<()> {
    let data = load(&args.manifest)?;
    let Some(gt) = data.ground_truth.clone() else {
        bail!("{} has no ground truth", args.manifest.display());
    };
    let predictions = aligned_predictions(&data, &args.segments)?;
    let used = predictions.iter().flatten().max().map_or(1, |m| m + 1);
    let n_pred = args.labels.unwrap_or(used).max(used);
    let m = evaluate(&predictions, &GroundTruth::new(gt), n_pred)?;
    print!("{}", m.to_kv());
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let run = &args.run;
    let read = |name: &str| fs::read_to_string(run.join(name)).with_context(|| format!("reading {}", run.join(name).display()));
    let config = read("config.kv")?;
    println!("# configuration");
    print!("{config}");
    let curve = read("q_curve.csv")?;
    let rows: Vec<&str> = curve.lines().skip(1).collect();
    println!("\n# training");
    match (rows.first(), rows.last()) {
        (Some(first), Some(last)) => println!("{} epochs recorded, first {first}, last {last}", rows.len()),
        _ => println!("no epochs recorded"),
    }
    let bundle = read_bundle(run)?;
    for m in &bundle.activities {
        let lambdas: Vec<String> = m.params.lambdas().iter().map(|l| format!("{l:.2}")).collect();
        println!("activity {} mean lengths [{}]", m.activity, lambdas.join(", "));
    }
    match &args.manifest {
        Some(manifest) => {
            let data = load(manifest)?;
            let predictions = aligned_predictions(&data, &run.join(SEGMENTS_FILE))?;
            let ids: Vec<&str> = data.videos.iter().map(|v| v.video_id()).collect();
            if let Some(gt) = &data.ground_truth {
                let m = evaluate(&predictions, &GroundTruth::new(gt.clone()), bundle.n_labels())?;
                println!("\n# metrics");
                print!("{}", m.to_kv());
            }
            println!("\n# timelines");
            print!("{}", timelines(&ids, &predictions, data.ground_truth.as_deref(), 100));
        }
        None => {
            if let Ok(metrics) = read("metrics.kv") {
                println!("\n# metrics");
                print!("{metrics}");
            }
            println!("\n# timelines");
            print!("{}", read("timelines.txt")?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Embed(a) => embed(a),
        Command::Train(a) => train(a),
        Command::Segment(a) => segment(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
