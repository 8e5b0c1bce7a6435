use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use handrig::dataset_io::{
    self, build_eval_batch, read_dataset, read_versioned, write_dataset, write_json, CameraFile, DetectionFile,
    JointTriangulation, PredictionFile, TriangulationFile,
};
use handrig::objectives::evaluate;
use handrig::pose::schema;
use handrig::service::AnnotationService;
use handrig::synthrig::{
    generate_hand, generate_rig, run_sweep_plan, simulate_detections, synth_dataset, synth_predictions, Articulation,
    HandSelection, NoiseModel, RigSpec, SweepPlan, DEFAULT_SWEEP_VIEWS,
};
use handrig::triangulation::{annotate_frame, RansacConfig};
use handrig::FORMAT_VERSION;

#[derive(Parser)]
#[command(name = "handrig", version, about = "Multi-view hand annotation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Robustly triangulate every joint of one frame.
    Triangulate {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        /// Inlier threshold in pixels.
        #[arg(long, default_value_t = 10.0)]
        ransac_threshold: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions: per-joint MPJPE table, MRRPE and AP_h.
    Evaluate {
        /// Prediction file, or an annotation file (scored as a perfect model).
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// JSON report path; a text copy is written next to it as `.txt`.
        #[arg(long)]
        report: PathBuf,
    },
    /// Triangulation error against the number of views.
    Sweep {
        #[arg(long, default_value_t = 90)]
        rig_size: usize,
        /// Pixel noise; calibrated to about 2.78 mm at all views if omitted.
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SWEEP_VIEWS)]
        views: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the table as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check an annotation file; exits with status 1 on any violation.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Generate a consistent synthetic annotation file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        rig_size: usize,
        /// Also write noisy predictions for the generated records.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Also write noisy detections of one extra frame (needs --cameras).
        #[arg(long, requires = "cameras")]
        detections: Option<PathBuf>,
        #[arg(long, requires = "detections")]
        cameras: Option<PathBuf>,
    },
    /// Run the annotation HTTP service.
    Serve {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        /// Session journals; defaults to `<dataset>.sessions`.
        #[arg(long)]
        state_dir: Option<PathBuf>,
        /// Directory holding the images named by `file_name`.
        #[arg(long)]
        images: Option<PathBuf>,
    },
}

fn with_extension_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn triangulate(detections: &Path, cameras: &Path, threshold: f64, seed: u64, out: &Path) -> Result<()> {
    let det: DetectionFile = read_versioned(detections)?;
    let cams: CameraFile = read_versioned(cameras)?;
    let cfg = RansacConfig {
        inlier_threshold_px: threshold,
        seed,
        ..RansacConfig::default()
    };
    cfg.validate()?;
    let frame = annotate_frame(&det.detections, &cams.cameras, &cfg);
    let doc = TriangulationFile {
        format_version: FORMAT_VERSION.into(),
        ransac: cfg,
        triangulated: frame.valid_count(),
        joints: frame
            .joints
            .into_iter()
            .enumerate()
            .map(|(j, result)| JointTriangulation {
                joint_id: j,
                name: schema()[j].name.clone(),
                result,
            })
            .collect(),
    };
    write_json(&doc, out)?;
    println!("triangulated {} of {} joints -> {}", doc.triangulated, doc.joints.len(), out.display());
    Ok(())
}

fn load_predictions(path: &Path) -> Result<Vec<dataset_io::PredictionRecord>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let probe: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if probe.get("predictions").is_some() {
        let file: PredictionFile = read_versioned(path)?;
        Ok(file.predictions)
    } else {
        let ds = dataset_io::parse_dataset(&text)?;
        Ok(ds.records.iter().map(dataset_io::PredictionRecord::from_truth).collect())
    }
}

fn run_evaluate(pred: &Path, gt: &Path, report: &Path) -> Result<()> {
    let truth = read_dataset(gt)?;
    let preds = load_predictions(pred)?;
    let batch = build_eval_batch(&truth.records, &preds)?;
    let result = evaluate(&batch)?;
    write_json(&result, report)?;
    let text = result.to_text();
    dataset_io::write_atomic(&with_extension_suffix(report, ".txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn run_sweep(rig_size: usize, noise_sigma: Option<f64>, views: Vec<usize>, trials: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let plan = SweepPlan {
        rig: RigSpec {
            n_cameras: rig_size,
            ..RigSpec::default()
        },
        pixel_sigma: noise_sigma,
        views,
        trials,
        seed,
        ..SweepPlan::default()
    };
    let result = run_sweep_plan(&plan)?;
    if let Some(out) = out {
        write_json(&result, out)?;
    }
    print!("{}", result.to_text());
    Ok(())
}

fn run_validate(dataset: &Path, report_path: Option<&Path>) -> Result<bool> {
    let report = dataset_io::validate_dataset(dataset);
    if let Some(p) = report_path {
        write_json(&report, p)?;
    }
    print!("{}", report.to_text());
    Ok(report.is_clean())
}

#[allow(clippy::too_many_arguments)]
fn run_synth(
    out: &Path,
    frames: usize,
    seed: u64,
    rig_size: usize,
    predictions: Option<&Path>,
    detections: Option<&Path>,
    cameras: Option<&Path>,
) -> Result<()> {
    let rig = generate_rig(&RigSpec {
        n_cameras: rig_size,
        seed,
        ..RigSpec::default()
    })?;
    let ds = synth_dataset(&rig, frames, seed);
    write_dataset(&ds, out)?;
    println!("{} records over {} frames -> {}", ds.records.len(), frames, out.display());
    if let Some(p) = predictions {
        let preds = synth_predictions(&ds, 8.0, seed);
        dataset_io::write_predictions(&preds, p)?;
        println!("{} predictions -> {}", preds.len(), p.display());
    }
    if let (Some(d), Some(c)) = (detections, cameras) {
        let hands = generate_hand(seed ^ 0xdec0, HandSelection::Both, Articulation::Random);
        let noise = NoiseModel {
            pixel_sigma: 1.0,
            dropout_rate: 0.1,
            outlier_rate: 0.2,
            seed,
        };
        let sim = simulate_detections(&hands, &rig, &noise)?;
        write_json(&DetectionFile::new(sim.sets), d)?;
        write_json(&CameraFile::new(rig), c)?;
        println!("detections -> {}, cameras -> {}", d.display(), c.display());
    }
    Ok(())
}

fn run_serve(dataset: &Path, listen: &str, state_dir: Option<PathBuf>, images: Option<PathBuf>) -> Result<()> {
    tracing_subscriber::fmt().with_target(false).init();
    let state_dir = state_dir.unwrap_or_else(|| with_extension_suffix(dataset, ".sessions"));
    let svc = AnnotationService::open(dataset, &state_dir, images.as_deref())?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(handrig::server::serve(svc, listen))
        .with_context(|| format!("serving on {listen}"))
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Triangulate {
            detections,
            cameras,
            ransac_threshold,
            seed,
            out,
        } => triangulate(&detections, &cameras, ransac_threshold, seed, &out)?,
        Command::Evaluate { pred, gt, report } => run_evaluate(&pred, &gt, &report)?,
        Command::Sweep {
            rig_size,
            noise_sigma,
            views,
            trials,
            seed,
            out,
        } => {
            if views.is_empty() {
                bail!("--views needs at least one count");
            }
            run_sweep(rig_size, noise_sigma, views, trials, seed, out.as_deref())?
        }
        Command::Validate { dataset, report } => {
            if !run_validate(&dataset, report.as_deref())? {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Synth {
            out,
            frames,
            seed,
            rig_size,
            predictions,
            detections,
            cameras,
        } => run_synth(&out, frames, seed, rig_size, predictions.as_deref(), detections.as_deref(), cameras.as_deref())?,
        Command::Serve {
            dataset,
            listen,
            state_dir,
            images,
        } => run_serve(&dataset, &listen, state_dir, images)?,
    }
    Ok(ExitCode::SUCCESS)
}
