use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use ifield::io::{read_mesh, read_point_cloud, read_sensors, write_mesh, write_point_cloud, MeshFormat, PlyFormat};
use ifield::prep::NormalizationTransform;
use ifield::siren::{load_checkpoint, save_checkpoint};
use ifield::train::{GradientSamples, TrainMode};
use ifield::Field;
use ifield_cli::config::{CameraLayout, PipelineConfig, Preset};
use ifield_cli::pipeline::{self, AblationRow, ReconstructionSummary};
use ifield_cli::provenance::Document;
use ifield_cli::scenes::Scene;
use log::{info, warn};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "ifield", version, about = "Indicator-field surface reconstruction from oriented scans")]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Virtually scan a mesh into an oriented, sensor-tagged point cloud.
    Scan(ScanArgs),
    /// Fit a field to a scan and save it as a checkpoint.
    Reconstruct(ReconstructArgs),
    /// Mesh the level set of a checkpoint.
    Extract(ExtractArgs),
    /// Compare a predicted mesh to ground truth.
    Eval(EvalArgs),
    /// Run all training modes on one scan and tabulate the metrics.
    Ablate(AblateArgs),
    /// Print the resolved configuration as TOML.
    Config(ConfigArgs),
}

#[derive(Args, Clone, Default)]
struct ConfigSource {
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// TOML config; command-line flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone, Default)]
struct ScanFlags {
    #[arg(long, value_enum)]
    layout: Option<CameraLayout>,
    #[arg(long)]
    spacing: Option<f64>,
    #[arg(long)]
    tilt: Option<f64>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    orbit_cameras: Option<usize>,
    #[arg(long)]
    elevation_min: Option<f64>,
    #[arg(long)]
    elevation_max: Option<f64>,
    #[arg(long)]
    depth_noise: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct PrepFlags {
    /// Neighbours for the gradient targets.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    near_radius: Option<f64>,
    #[arg(long)]
    per_ray: Option<usize>,
    #[arg(long)]
    near_count: Option<usize>,
    #[arg(long)]
    near_band: Option<f64>,
    #[arg(long)]
    empty_res: Option<f64>,
    #[arg(long)]
    max_empty: Option<usize>,
    #[arg(long)]
    fill: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct TrainFlags {
    #[arg(long, value_parser = parse_mode)]
    mode: Option<TrainMode>,
    #[arg(long)]
    lg: Option<f64>,
    #[arg(long)]
    ls: Option<f64>,
    #[arg(long)]
    le: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    omega0: Option<f64>,
    #[arg(long)]
    gradient_magnitude: Option<f64>,
    /// Apply the gradient term on surface points only.
    #[arg(long)]
    surface_only_gradient: bool,
}

#[derive(Args)]
struct ScanArgs {
    #[arg(long, conflicts_with = "scene", required_unless_present = "scene")]
    mesh: Option<PathBuf>,
    #[arg(long, value_enum)]
    scene: Option<Scene>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    sensors: PathBuf,
    /// Also write the scanned mesh (useful with --scene).
    #[arg(long)]
    gt_out: Option<PathBuf>,
    #[arg(long)]
    ascii: bool,
    #[command(flatten)]
    source: ConfigSource,
    #[command(flatten)]
    scan: ScanFlags,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    sensors: Option<PathBuf>,
    #[arg(long)]
    out_checkpoint: PathBuf,
    /// Defaults to `<checkpoint>.report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Defaults to `<checkpoint>.transform.json`.
    #[arg(long)]
    transform: Option<PathBuf>,
    /// Replace the cloud's normals by PCA estimates oriented with the sensors.
    #[arg(long)]
    estimate_normals: bool,
    #[command(flatten)]
    source: ConfigSource,
    #[command(flatten)]
    prep: PrepFlags,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to `<checkpoint>.transform.json`.
    #[arg(long)]
    transform: Option<PathBuf>,
    /// Keep the mesh in the normalized frame.
    #[arg(long, conflicts_with = "transform")]
    normalized: bool,
    #[arg(long)]
    res: Option<usize>,
    #[arg(long)]
    iso: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    source: ConfigSource,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    res: Option<usize>,
    /// Skip the always-occupied surface shell in the voxelization.
    #[arg(long)]
    no_shell: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    source: ConfigSource,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    sensors: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out_csv: PathBuf,
    #[arg(long)]
    out_json: Option<PathBuf>,
    /// Subset of modes, comma separated; all four by default.
    #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
    modes: Vec<TrainMode>,
    #[command(flatten)]
    source: ConfigSource,
    #[command(flatten)]
    prep: PrepFlags,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    source: ConfigSource,
    #[command(flatten)]
    scan: ScanFlags,
    #[command(flatten)]
    prep: PrepFlags,
    #[command(flatten)]
    train: TrainFlags,
}

fn parse_mode(s: &str) -> Result<TrainMode, String> {
    TrainMode::parse(s).ok_or_else(|| {
        let names: Vec<_> = TrainMode::ALL.iter().map(|m| m.name()).collect();
        format!("unknown mode {s:?}; expected one of {}", names.join(", "))
    })
}

macro_rules! set {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}

impl ConfigSource {
    fn load(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p, self.preset)?,
            None => PipelineConfig::preset(self.preset.unwrap_or(Preset::Desk)),
        };
        set!(cfg.seed, self.seed);
        Ok(cfg)
    }
}

impl ScanFlags {
    fn apply(&self, c: &mut PipelineConfig) {
        let s = &mut c.scan;
        set!(s.layout, self.layout);
        set!(s.spacing, self.spacing);
        set!(s.tilt, self.tilt);
        set!(s.width, self.width);
        set!(s.height, self.height);
        set!(s.points, self.points);
        set!(s.orbit_cameras, self.orbit_cameras);
        set!(s.elevation_min, self.elevation_min);
        set!(s.elevation_max, self.elevation_max);
        set!(s.depth_noise, self.depth_noise);
    }
}

impl PrepFlags {
    fn apply(&self, c: &mut PipelineConfig) {
        set!(c.vector_field.k, self.k);
        if let Some(r) = self.near_radius {
            c.vector_field.near_radius = r;
            c.train.near_radius = r;
        }
        set!(c.empty.per_ray, self.per_ray);
        set!(c.empty.near_count, self.near_count);
        set!(c.empty.near_band, self.near_band);
        set!(c.empty.resolution, self.empty_res);
        set!(c.empty.max_points, self.max_empty);
        set!(c.prep.fill, self.fill);
    }
}

impl TrainFlags {
    fn apply(&self, c: &mut PipelineConfig) {
        let t = &mut c.train;
        set!(t.mode, self.mode);
        set!(t.weights.lg, self.lg);
        set!(t.weights.ls, self.ls);
        set!(t.weights.le, self.le);
        set!(t.epochs, self.epochs);
        set!(t.batch_size, self.batch);
        set!(t.lr, self.lr);
        set!(t.hidden, self.hidden);
        set!(t.layers, self.layers);
        set!(t.omega0, self.omega0);
        set!(t.gradient_magnitude, self.gradient_magnitude);
        if self.surface_only_gradient {
            t.gradient_samples = GradientSamples::SurfaceOnly;
        }
    }
}

/// Failure classes mapped to exit codes.
enum Failure {
    Input(anyhow::Error),
    Numerical(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let numerical = e
            .chain()
            .any(|c| matches!(c.downcast_ref::<ifield::Error>(), Some(ifield::Error::Numerical(_))));
        if numerical {
            Failure::Numerical(e)
        } else {
            Failure::Input(e)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Scan(a) => run_scan(a),
        Command::Reconstruct(a) => run_reconstruct(a),
        Command::Extract(a) => run_extract(a),
        Command::Eval(a) => run_eval(a),
        Command::Ablate(a) => run_ablate(a),
        Command::Config(a) => run_config(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical failure: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn mesh_format(path: &Path) -> anyhow::Result<MeshFormat> {
    MeshFormat::from_path(path).ok_or_else(|| anyhow!("{}: mesh files must end in .obj or .ply", path.display()))
}

fn load_mesh(path: &Path) -> anyhow::Result<ifield::geom::TriangleMesh<f64>> {
    read_mesh(path).with_context(|| format!("cannot load mesh {}", path.display()))
}

#[derive(Serialize)]
struct ScanBody {
    source: String,
    points: usize,
    sensors: usize,
    cloud: PathBuf,
    sensor_file: PathBuf,
}

fn run_scan(a: ScanArgs) -> Result<(), Failure> {
    let mut cfg = a.source.load()?;
    a.scan.apply(&mut cfg);
    let cfg = cfg.resolved();
    cfg.validate()?;
    let (mesh, source) = match (&a.mesh, a.scene) {
        (Some(p), _) => (load_mesh(p)?, p.display().to_string()),
        (None, Some(s)) => (s.mesh(), format!("scene:{}", serde_json::to_value(s).unwrap().as_str().unwrap())),
        (None, None) => return Err(anyhow!("pass --mesh or --scene").into()),
    };
    let (cloud, sensors) = pipeline::scan_mesh(&mesh, &cfg)?;
    let format = if a.ascii { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian };
    write_point_cloud(&cloud, &a.out, format).map_err(anyhow::Error::from)?;
    ifield::io::write_sensors(&sensors, &a.sensors).map_err(anyhow::Error::from)?;
    if let Some(gt) = &a.gt_out {
        write_mesh(&mesh, gt, mesh_format(gt)?).map_err(anyhow::Error::from)?;
    }
    let body = ScanBody {
        source,
        points: cloud.len(),
        sensors: sensors.len(),
        cloud: a.out.clone(),
        sensor_file: a.sensors.clone(),
    };
    write_json(&sibling(&a.out, "scan.json"), &Document::new("scan", &cfg, body))?;
    info!("wrote {} points to {}", cloud.len(), a.out.display());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct TransformBody {
    transform: NormalizationTransform,
}

fn read_transform(path: &Path) -> anyhow::Result<NormalizationTransform> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read transform {}", path.display()))?;
    let body: TransformBody =
        serde_json::from_str(&text).with_context(|| format!("{} is not a transform file", path.display()))?;
    Ok(body.transform)
}

fn load_scan(
    input: &Path,
    sensors: Option<&Path>,
    estimate: bool,
    cfg: &PipelineConfig,
) -> anyhow::Result<(ifield::PointCloud, Option<ifield::Sensors>, usize)> {
    let cloud: ifield::PointCloud =
        read_point_cloud(input).with_context(|| format!("cannot load point cloud {}", input.display()))?;
    let sensors: Option<ifield::Sensors> = sensors
        .map(|p| read_sensors(p).with_context(|| format!("cannot load sensors {}", p.display())))
        .transpose()?;
    if estimate || cloud.needs_normals() {
        if !estimate {
            bail!("{} has no normals; rerun with --estimate-normals", input.display());
        }
        let (cloud, dropped) = pipeline::estimate_normals(&cloud, sensors.as_ref(), cfg)?;
        if dropped > 0 {
            warn!("dropped {dropped} points with degenerate neighbourhoods");
        }
        return Ok((cloud, sensors, dropped));
    }
    Ok((cloud, sensors, 0))
}

fn run_reconstruct(a: ReconstructArgs) -> Result<(), Failure> {
    let mut cfg = a.source.load()?;
    a.prep.apply(&mut cfg);
    a.train.apply(&mut cfg);
    let cfg = cfg.resolved();
    cfg.validate()?;
    let (cloud, sensors, dropped) = load_scan(&a.input, a.sensors.as_deref(), a.estimate_normals, &cfg)?;
    let rec = pipeline::reconstruct(&cloud, sensors.as_ref(), &cfg, pipeline::log_epoch)?;

    save_checkpoint(&rec.field, &a.out_checkpoint).map_err(anyhow::Error::from)?;
    let transform_path = a.transform.clone().unwrap_or_else(|| sibling(&a.out_checkpoint, "transform.json"));
    write_json(
        &transform_path,
        &Document::new("reconstruct", &cfg, TransformBody { transform: rec.transform }),
    )?;
    let summary: ReconstructionSummary = rec.summary(cfg.train.mode, dropped);
    let report_path = a.report.clone().unwrap_or_else(|| sibling(&a.out_checkpoint, "report.json"));
    write_json(&report_path, &Document::new("reconstruct", &cfg, summary))?;
    if let Some(e) = rec.abort {
        return Err(Failure::Numerical(anyhow!(
            "training stopped: {e}; the last finite parameters were saved to {}",
            a.out_checkpoint.display()
        )));
    }
    info!("wrote checkpoint {}", a.out_checkpoint.display());
    Ok(())
}

fn run_extract(a: ExtractArgs) -> Result<(), Failure> {
    let mut cfg = a.source.load()?;
    set!(cfg.extract.resolution, a.res);
    set!(cfg.extract.iso, a.iso);
    let cfg = cfg.resolved();
    cfg.validate()?;
    let field: Field = load_checkpoint(&a.checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", a.checkpoint.display()))?;
    let transform = if a.normalized {
        NormalizationTransform::identity()
    } else {
        read_transform(&a.transform.clone().unwrap_or_else(|| sibling(&a.checkpoint, "transform.json")))?
    };
    let mesh = pipeline::extract(&field, &transform, &cfg)?;
    write_mesh(&mesh, &a.out, mesh_format(&a.out)?).map_err(anyhow::Error::from)?;
    info!(
        "wrote {} vertices, {} triangles to {}",
        mesh.vertices.len(),
        mesh.triangles.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalBody {
    pred: PathBuf,
    gt: PathBuf,
    metrics: ifield::eval::MetricReport,
}

fn run_eval(a: EvalArgs) -> Result<(), Failure> {
    let mut cfg = a.source.load()?;
    set!(cfg.eval.samples, a.samples);
    set!(cfg.eval.resolution, a.res);
    if a.no_shell {
        cfg.eval.surface_shell = false;
    }
    let cfg = cfg.resolved();
    cfg.eval.validate().map_err(anyhow::Error::from)?;
    let pred = load_mesh(&a.pred)?;
    let gt = load_mesh(&a.gt)?;
    let metrics = pipeline::evaluate_meshes(&pred, &gt, &cfg)?;
    println!("cd={:.6} iou={:.6} l2={:.6}", metrics.chamfer, metrics.iou, metrics.l2);
    if let Some(out) = &a.out {
        let body = EvalBody {
            pred: a.pred.clone(),
            gt: a.gt.clone(),
            metrics,
        };
        write_json(out, &Document::new("eval", &cfg, body))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct AblateBody {
    rows: Vec<AblationRow>,
}

fn run_ablate(a: AblateArgs) -> Result<(), Failure> {
    let mut cfg = a.source.load()?;
    a.prep.apply(&mut cfg);
    a.train.apply(&mut cfg);
    let cfg = cfg.resolved();
    cfg.validate()?;
    let (cloud, sensors, _) = load_scan(&a.input, Some(&a.sensors), false, &cfg)?;
    let sensors = sensors.expect("sensors were given");
    let gt = load_mesh(&a.gt)?;
    let modes = if a.modes.is_empty() { TrainMode::ALL.to_vec() } else { a.modes.clone() };
    let rows = pipeline::ablate(&cloud, &sensors, &gt, &cfg, &modes);

    let mut w = csv::Writer::from_path(&a.out_csv).with_context(|| format!("cannot write {}", a.out_csv.display()))?;
    w.write_record(["mode", "cd", "iou", "l2"]).map_err(anyhow::Error::from)?;
    let cell = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"));
    for r in &rows {
        w.write_record([r.mode.clone(), cell(r.cd), cell(r.iou), cell(r.l2)])
            .map_err(anyhow::Error::from)?;
        if let Some(e) = &r.error {
            warn!("mode {} failed: {e}", r.mode);
        }
    }
    w.flush().map_err(anyhow::Error::from)?;
    let json = a.out_json.clone().unwrap_or_else(|| a.out_csv.with_extension("json"));
    write_json(&json, &Document::new("ablate", &cfg, AblateBody { rows }))?;
    Ok(())
}

fn run_config(a: ConfigArgs) -> Result<(), Failure> {
    let mut cfg = a.source.load()?;
    a.scan.apply(&mut cfg);
    a.prep.apply(&mut cfg);
    a.train.apply(&mut cfg);
    let cfg = cfg.resolved();
    cfg.validate()?;
    let text = cfg.to_toml();
    match &a.out {
        Some(p) => std::fs::write(p, &text).with_context(|| format!("cannot write {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}
