//! `fluororeg` command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fluororeg::formats::{
    read_camera, read_landmarks2, read_landmarks3, read_pose, write_camera, write_landmarks2, write_landmarks3,
    write_pose,
};
use fluororeg::geom::CameraModel;
use fluororeg::image::io::{
    read_image, read_labels, read_volume, write_image, write_labels, write_volume, ElementType,
};
use fluororeg::registration::{
    landmark_init, register_single_view, triangulate_in_volume, LandmarkInitOptions, Landmarks2, MetricKind,
    RegistrationConfig, RegistrationResult,
};
use fluororeg::simstudy::{
    generate_phantom, labels, mann_whitney_u, median, pooled_errors_from_trials_csv, project_landmarks, run_study,
    simulate_fluoro, FluoroOptions, Phantom, StudyConfig, TrialStatus,
};
use fluororeg::weights::WeightLut;
use fluororeg::Error;

/// Environment variable holding the default worker count.
const WORKERS_ENV: &str = "FLUOROREG_WORKERS";

#[derive(Parser)]
#[command(
    name = "fluororeg",
    version,
    about = "Patch-weighted 2D/3D registration of CT volumes to fluoroscopy"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic pelvis phantom (volume, labels, landmarks, weight LUT).
    Phantom(PhantomArgs),
    /// Simulate three fluoroscopic views of a volume.
    Simulate(SimulateArgs),
    /// Register a volume to one fluoroscopic view.
    Register(Box<RegisterArgs>),
    /// Triangulate landmarks from two or more registered views.
    Triangulate(TriangulateArgs),
    /// Run a simulation study from a TOML configuration.
    Study(StudyArgs),
    /// One-tailed Mann-Whitney U test on two samples.
    Stats(StatsArgs),
}

#[derive(Args)]
struct PhantomArgs {
    /// Existing directory receiving volume.mhd, labels.mhd, landmarks.csv and lut.txt.
    #[arg(long)]
    out_dir: PathBuf,
    /// Voxels per axis.
    #[arg(long, default_value_t = 128)]
    size: usize,
    /// Voxel spacing in mm.
    #[arg(long, default_value_t = 2.0)]
    spacing: f64,
    #[arg(long)]
    seed: u64,
}

#[derive(Args, Clone)]
struct DetectorArgs {
    #[arg(long, default_value_t = 512)]
    rows: usize,
    #[arg(long, default_value_t = 512)]
    cols: usize,
    /// Detector pixel spacing in mm.
    #[arg(long, default_value_t = 0.582)]
    pixel_spacing: f64,
    /// Source to detector distance in mm.
    #[arg(long, default_value_t = 1020.0)]
    sdd: f64,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    volume: PathBuf,
    /// Landmarks (name,x,y,z) whose projections are written per view.
    #[arg(long)]
    landmarks: Option<PathBuf>,
    /// Existing output directory.
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    detector: DetectorArgs,
    /// Transmitted-intensity noise; 0 writes plain DRRs.
    #[arg(long, default_value_t = FluoroOptions::default().noise_sigma)]
    noise_sigma: f64,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct RegisterArgs {
    /// Fluoroscopic image (.mhd).
    #[arg(long)]
    fluoro: PathBuf,
    /// Camera geometry (TOML).
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    volume: PathBuf,
    /// Label volume; required by the projected-weight metrics.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Label weight table; the phantom defaults when omitted.
    #[arg(long)]
    lut: Option<PathBuf>,
    /// Initial pose (4x4 row-major, volume to world).
    #[arg(long, conflicts_with_all = ["init_landmarks3d", "init_landmarks2d"])]
    init: Option<PathBuf>,
    /// 3D landmarks for a landmark-based initial pose.
    #[arg(long, requires = "init_landmarks2d")]
    init_landmarks3d: Option<PathBuf>,
    /// 2D picks paired by name with --init-landmarks3d.
    #[arg(long, requires = "init_landmarks3d")]
    init_landmarks2d: Option<PathBuf>,
    #[arg(long, value_parser = parse_metric)]
    metric: MetricKind,
    /// Registration settings (TOML); the metric defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Labels expected to disagree with the image, comma separated.
    #[arg(long, value_delimiter = ',')]
    mismatch_labels: Option<Vec<u16>>,
    /// Labels whose occluding boundaries get extra weight, comma separated.
    #[arg(long, value_delimiter = ',')]
    surface_labels: Option<Vec<u16>>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_pose: PathBuf,
    #[arg(long)]
    out_trace: PathBuf,
}

#[derive(Args)]
struct TriangulateArgs {
    /// Camera file per view.
    #[arg(long = "camera", required = true)]
    cameras: Vec<PathBuf>,
    /// Registered pose per view, in the same order.
    #[arg(long = "pose", required = true)]
    poses: Vec<PathBuf>,
    /// 2D detections per view, in the same order.
    #[arg(long = "detections", required = true)]
    detections: Vec<PathBuf>,
    /// Output landmarks (name,x,y,z) in the volume frame.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    config: PathBuf,
    /// Existing output directory.
    #[arg(long)]
    out_dir: PathBuf,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to $FLUOROREG_WORKERS, then 1.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct StatsArgs {
    /// Sample file with one number per line (tested as the smaller sample).
    #[arg(long, requires = "y", conflicts_with = "trials")]
    x: Option<PathBuf>,
    #[arg(long, requires = "x")]
    y: Option<PathBuf>,
    /// Study trials.csv; compares pooled landmark errors of two metrics.
    #[arg(long, requires_all = ["metric", "baseline"])]
    trials: Option<PathBuf>,
    #[arg(long, value_parser = parse_metric)]
    metric: Option<MetricKind>,
    #[arg(long, value_parser = parse_metric)]
    baseline: Option<MetricKind>,
}

fn parse_metric(s: &str) -> Result<MetricKind, String> {
    s.parse::<MetricKind>().map_err(|e| e.to_string())
}

/// Failure classified by exit code.
enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::DimensionMismatch(_) | Error::Parse { .. } | Error::Io { .. } => {
                Failure::Invalid(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type CliResult = Result<(), Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Invalid(msg.into())
}

fn require_dir(dir: &Path) -> CliResult {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(invalid(format!("output directory {} does not exist", dir.display())))
    }
}

fn require_file(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("input file {} does not exist", path.display())))
    }
}

fn require_parent(path: &Path) -> CliResult {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => require_dir(p),
        _ => Ok(()),
    }
}

fn cmd_phantom(a: &PhantomArgs) -> CliResult {
    require_dir(&a.out_dir)?;
    if a.size < 8 || !(a.spacing > 0.0) {
        return Err(invalid("--size must be >= 8 and --spacing positive"));
    }
    let p = generate_phantom([a.size; 3], a.spacing, a.seed)?;
    write_volume(&a.out_dir.join("volume.mhd"), &p.volume)?;
    write_labels(&a.out_dir.join("labels.mhd"), &p.labels)?;
    write_landmarks3(&a.out_dir.join("landmarks.csv"), &p.landmarks)?;
    Phantom::default_lut().save(&a.out_dir.join("lut.txt"))?;
    Ok(())
}

fn camera_from(d: &DetectorArgs) -> Result<CameraModel, Failure> {
    Ok(CameraModel::centered(d.sdd, d.rows, d.cols, d.pixel_spacing)?)
}

fn cmd_simulate(a: &SimulateArgs) -> CliResult {
    require_file(&a.volume)?;
    require_dir(&a.out_dir)?;
    let camera = camera_from(&a.detector)?;
    let opts = FluoroOptions {
        noise_sigma: a.noise_sigma,
        ..FluoroOptions::default()
    };
    opts.validate()?;
    let landmarks = a.landmarks.as_deref().map(read_landmarks3).transpose()?;
    let volume = read_volume(&a.volume)?;
    let views = simulate_fluoro(&volume, &camera, &opts, a.seed)?;
    write_camera(&a.out_dir.join("camera.toml"), &camera)?;
    for (k, v) in views.iter().enumerate() {
        write_image(&a.out_dir.join(format!("view{k}.mhd")), &v.image, ElementType::Float64)?;
        write_pose(&a.out_dir.join(format!("true_pose{k}.txt")), &v.true_pose)?;
        if let Some(l) = &landmarks {
            let det = project_landmarks(l, &v.true_pose, &v.camera);
            write_landmarks2(&a.out_dir.join(format!("detections{k}.csv")), &det)?;
        }
    }
    Ok(())
}

fn trace_csv(result: &RegistrationResult) -> String {
    let mut s = String::from("level,downsample_factor,metric,iteration,best_objective,active_patches\n");
    for l in &result.levels {
        for e in &l.entries {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                l.level, l.downsample_factor, l.metric, e.iteration, e.best_objective, e.active_patches
            ));
        }
    }
    s
}

fn cmd_register(a: &RegisterArgs) -> CliResult {
    for p in [
        Some(&a.fluoro),
        Some(&a.camera),
        Some(&a.volume),
        a.labels.as_ref(),
        a.lut.as_ref(),
        a.init.as_ref(),
    ]
    .into_iter()
    .flatten()
    .chain(a.init_landmarks3d.iter())
    .chain(a.init_landmarks2d.iter())
    .chain(a.config.iter())
    {
        require_file(p)?;
    }
    require_parent(&a.out_pose)?;
    require_parent(&a.out_trace)?;
    if a.init.is_none() && a.init_landmarks3d.is_none() {
        return Err(invalid(
            "an initial pose is required: --init or --init-landmarks3d/--init-landmarks2d",
        ));
    }
    let base = match &a.config {
        Some(p) => RegistrationConfig::load(p)?,
        None => RegistrationConfig::for_metric(a.metric),
    };
    let mut cfg = base.with_metric(a.metric);
    cfg.mismatch_labels = a.mismatch_labels.clone().unwrap_or_else(|| labels::MISMATCH.to_vec());
    cfg.surface_labels = a.surface_labels.clone().unwrap_or_else(|| labels::SURFACE.to_vec());
    cfg.validate()?;
    if a.metric.uses_projected_weights() && a.labels.is_none() {
        return Err(invalid(format!("metric {} needs --labels", a.metric)));
    }

    let camera = read_camera(&a.camera)?;
    let fluoro = read_image(&a.fluoro)?;
    if fluoro.rows != camera.detector_rows || fluoro.cols != camera.detector_cols {
        return Err(invalid(format!(
            "image is {}x{} but the camera detector is {}x{}",
            fluoro.rows, fluoro.cols, camera.detector_rows, camera.detector_cols
        )));
    }
    let volume = read_volume(&a.volume)?;
    let label_vol = a.labels.as_deref().map(read_labels).transpose()?;
    if let Some(l) = &label_vol {
        l.check_matches(&volume)?;
    }
    let lut = match &a.lut {
        Some(p) => WeightLut::load(p)?,
        None => Phantom::default_lut(),
    };
    let init = match (&a.init, &a.init_landmarks3d, &a.init_landmarks2d) {
        (Some(p), _, _) => read_pose(p)?,
        (None, Some(p3), Some(p2)) => {
            landmark_init(
                &read_landmarks3(p3)?,
                &read_landmarks2(p2)?,
                &camera,
                &LandmarkInitOptions::default(),
            )?
            .pose
        }
        _ => unreachable!("checked above"),
    };

    let result = register_single_view(
        &fluoro,
        &volume,
        label_vol.as_ref(),
        Some(&lut),
        &camera,
        &init,
        &cfg,
        a.seed,
    );
    match result {
        Ok(r) => {
            write_pose(&a.out_pose, &r.final_pose)?;
            std::fs::write(&a.out_trace, trace_csv(&r)).map_err(|e| Failure::Runtime(e.to_string()))?;
            for l in &r.levels {
                eprintln!(
                    "level {} ({}x, {}): {} iterations, {} evaluations, objective {:.6}, {:.2} s",
                    l.level,
                    l.downsample_factor,
                    l.metric,
                    l.iterations,
                    l.evaluations,
                    l.final_objective,
                    l.wall_time_s
                );
            }
            Ok(())
        }
        Err(e) => {
            // header-only trace marks the failed run
            let _ = std::fs::write(
                &a.out_trace,
                trace_csv(&RegistrationResult {
                    final_pose: init,
                    levels: vec![],
                }),
            );
            Err(Failure::Runtime(e.to_string()))
        }
    }
}

fn cmd_triangulate(a: &TriangulateArgs) -> CliResult {
    if a.cameras.len() != a.poses.len() || a.cameras.len() != a.detections.len() {
        return Err(invalid("--camera, --pose and --detections must be given once per view"));
    }
    if a.cameras.len() < 2 {
        return Err(invalid("triangulation needs at least two views"));
    }
    for p in a.cameras.iter().chain(&a.poses).chain(&a.detections) {
        require_file(p)?;
    }
    require_parent(&a.out)?;
    let mut views = Vec::new();
    let mut dets: Vec<Landmarks2> = Vec::new();
    for ((c, p), d) in a.cameras.iter().zip(&a.poses).zip(&a.detections) {
        views.push((read_camera(c)?, read_pose(p)?));
        dets.push(read_landmarks2(d)?);
    }
    let names: std::collections::BTreeSet<String> = dets.iter().flat_map(|d| d.keys().cloned()).collect();
    let inputs: Vec<_> = views.iter().zip(&dets).map(|((c, p), d)| (*c, *p, d)).collect();
    let out = triangulate_in_volume(&inputs, names)?;
    write_landmarks3(&a.out, &out)?;
    Ok(())
}

fn worker_count(flag: Option<usize>) -> Result<usize, Failure> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var(WORKERS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| invalid(format!("{WORKERS_ENV}={v} is not a positive integer")))?,
            Err(_) => 1,
        },
    };
    if n == 0 {
        return Err(invalid("worker count must be >= 1"));
    }
    Ok(n)
}

fn cmd_study(a: &StudyArgs) -> CliResult {
    require_file(&a.config)?;
    require_dir(&a.out_dir)?;
    let mut cfg = StudyConfig::load(&a.config)?;
    let seed = a
        .seed
        .or(cfg.seed)
        .ok_or_else(|| invalid("a seed is required: --seed or `seed` in the configuration"))?;
    cfg.seed = Some(seed);
    cfg.validate()?;
    let workers = worker_count(a.workers)?;
    let out = run_study(&cfg, seed, workers)?;
    out.write_all(&a.out_dir, &cfg, workers)?;
    let failures: Vec<String> = out
        .records
        .iter()
        .filter(|r| r.status == TrialStatus::Failed)
        .map(|r| {
            format!(
                "fragment {} move {} init {} {}: {}",
                r.trial.fragment, r.trial.movement, r.trial.init, r.metric, r.message
            )
        })
        .collect();
    let log = a.out_dir.join("failures.log");
    std::fs::write(&log, failures.iter().map(|l| format!("{l}\n")).collect::<String>())
        .map_err(|e| Failure::Runtime(format!("{}: {e}", log.display())))?;
    for l in &failures {
        eprintln!("failed trial: {l}");
    }
    for c in &out.comparisons {
        eprintln!(
            "{} vs {}: median {:.3} vs {:.3} mm, U = {}, p = {:.4}",
            c.metric, c.baseline, c.median_metric, c.median_baseline, c.test.u, c.test.p
        );
    }
    if !out.records.is_empty() && failures.len() == out.records.len() {
        return Err(Failure::Runtime("every trial failed; see failures.log".into()));
    }
    Ok(())
}

fn read_sample(path: &Path) -> Result<Vec<f64>, Failure> {
    require_file(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.parse::<f64>()
                .map_err(|e| invalid(format!("{}: `{l}`: {e}", path.display())))
        })
        .collect()
}

fn cmd_stats(a: &StatsArgs) -> CliResult {
    let (x, y) = match (&a.x, &a.y, &a.trials, a.metric, a.baseline) {
        (Some(x), Some(y), None, _, _) => (read_sample(x)?, read_sample(y)?),
        (None, None, Some(t), Some(m), Some(b)) => {
            require_file(t)?;
            let text = std::fs::read_to_string(t).map_err(|e| invalid(format!("{}: {e}", t.display())))?;
            (
                pooled_errors_from_trials_csv(&text, m)?,
                pooled_errors_from_trials_csv(&text, b)?,
            )
        }
        _ => {
            return Err(invalid(
                "give either --x and --y, or --trials with --metric and --baseline",
            ))
        }
    };
    let r = mann_whitney_u(&x, &y)?;
    println!("n_x = {}", x.len());
    println!("n_y = {}", y.len());
    println!("median_x = {}", median(&x));
    println!("median_y = {}", median(&y));
    println!("u = {}", r.u);
    println!("p_one_tailed = {}", r.p);
    println!("exact = {}", r.exact);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Phantom(a) => cmd_phantom(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Register(a) => cmd_register(a),
        Command::Triangulate(a) => cmd_triangulate(a),
        Command::Study(a) => cmd_study(a),
        Command::Stats(a) => cmd_stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
