//! The pipeline stages, shared by the binary and the tests.

use anyhow::{bail, Context};
use ifield::eval::{evaluate, MetricReport};
use ifield::extract::extract_mesh;
use ifield::geom::{Aabb, OrientedPointCloud, SensorSet, TriangleMesh};
use ifield::prep::{
    estimate_normals_pca, normalize_to_unit_cube, sample_empty_space, NormalizationTransform, NormalizedInputs,
    VectorFieldEstimator,
};
use ifield::scanner::{orbit_cameras, sample_cameras, scan, Camera, GridLayout, Intrinsics, ScanOptions};
use ifield::train::{train_with, LossReport, TrainInputs, TrainMode};
use ifield::{Field, Real};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{CameraLayout, PipelineConfig};

/// Seed offsets so the stages draw independent streams from one global seed.
const EMPTY_SEED_SALT: u64 = 0x5eed_e3b7;

pub fn cameras<T: Real>(bounds: &Aabb<T>, cfg: &PipelineConfig) -> anyhow::Result<Vec<Camera<T>>> {
    let s = &cfg.scan;
    let intrinsics = Intrinsics::from_vertical_fov(s.width, s.height, s.fov_deg);
    let cams = match s.layout {
        CameraLayout::Grid => {
            let tilts = if s.tilt == 0.0 { vec![] } else { vec![s.tilt, -s.tilt] };
            let layout = GridLayout {
                spacing: s.spacing,
                tilts,
                height: s.camera_height,
                intrinsics,
                ..GridLayout::default()
            };
            sample_cameras(bounds, &layout)?
        }
        CameraLayout::Orbit => {
            if bounds.is_empty() {
                return Err(ifield::Error::EmptyScene.into());
            }
            let radius = 0.5 * bounds.extent().cast::<f64>().norm();
            orbit_cameras(
                bounds.center(),
                s.orbit_distance * radius,
                s.orbit_cameras,
                (s.elevation_min, s.elevation_max),
                intrinsics,
            )?
        }
    };
    Ok(cams)
}

/// Virtually scan `mesh`; points are tagged with the index of their camera.
pub fn scan_mesh(
    mesh: &TriangleMesh<f64>,
    cfg: &PipelineConfig,
) -> anyhow::Result<(OrientedPointCloud<f32>, SensorSet<f32>)> {
    let cams = cameras(&mesh.bounds(), cfg)?;
    let opts = ScanOptions {
        points: cfg.scan.points,
        seed: cfg.seed,
        depth_noise: (cfg.scan.depth_noise > 0.0).then_some(cfg.scan.depth_noise),
    };
    let (cloud, sensors) = scan(mesh, &cams, &opts)?;
    if cloud.is_empty() {
        bail!("no camera saw the mesh");
    }
    info!("scan cameras={} points={}", cams.len(), cloud.len());
    Ok((cloud.cast(), sensors.cast()))
}

#[derive(Debug)]
pub struct Reconstruction {
    pub field: Field,
    pub transform: NormalizationTransform,
    /// Inputs in the normalized frame the field lives in.
    pub inputs: NormalizedInputs<f32>,
    pub reports: Vec<LossReport>,
    /// Why training stopped early; `field` is then the last finite state.
    pub abort: Option<ifield::Error>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ReconstructionSummary {
    pub mode: String,
    pub points: usize,
    pub empty_points: usize,
    pub dropped_normals: usize,
    pub transform: Option<NormalizationTransform>,
    pub epochs: Vec<LossReport>,
    pub aborted: Option<String>,
}

impl Reconstruction {
    pub fn summary(&self, mode: TrainMode, dropped_normals: usize) -> ReconstructionSummary {
        ReconstructionSummary {
            mode: mode.name().into(),
            points: self.inputs.cloud.len(),
            empty_points: self.inputs.empties.as_ref().map_or(0, |e| e.len()),
            dropped_normals,
            transform: Some(self.transform),
            epochs: self.reports.clone(),
            aborted: self.abort.as_ref().map(|e| e.to_string()),
        }
    }
}

/// Replace the normals of `cloud` by PCA estimates. Returns the number of
/// points dropped for degenerate neighbourhoods.
pub fn estimate_normals(
    cloud: &OrientedPointCloud<f32>,
    sensors: Option<&SensorSet<f32>>,
    cfg: &PipelineConfig,
) -> anyhow::Result<(OrientedPointCloud<f32>, usize)> {
    let Some(sensors) = sensors else {
        bail!("normal estimation needs sensor positions to orient the normals; pass --sensors");
    };
    let est = estimate_normals_pca(cloud, sensors, cfg.prep.normal_k)?;
    Ok((est.cloud, est.dropped))
}

/// Normalize, sample free space, build the gradient targets and train.
pub fn reconstruct(
    cloud: &OrientedPointCloud<f32>,
    sensors: Option<&SensorSet<f32>>,
    cfg: &PipelineConfig,
    mut on_epoch: impl FnMut(&LossReport),
) -> anyhow::Result<Reconstruction> {
    cfg.validate()?;
    if cloud.needs_normals() {
        bail!("the cloud has no normals; pass --estimate-normals (with --sensors)");
    }
    let empties = if cfg.train.mode.uses_free_space() {
        let Some(sensors) = sensors else {
            bail!("mode {} needs sensor positions for free-space sampling", cfg.train.mode);
        };
        let e = sample_empty_space(cloud, sensors, &cfg.empty, cfg.seed ^ EMPTY_SEED_SALT)
            .context("free-space sampling")?;
        info!(
            "empty rays={} raw={} kept={} skipped={}",
            e.total_rays,
            e.raw_samples,
            e.len(),
            e.skipped_rays
        );
        Some(e)
    } else {
        None
    };
    let no_sensors = SensorSet::new(vec![]);
    let inputs = normalize_to_unit_cube(cloud, sensors.unwrap_or(&no_sensors), empties.as_ref(), cfg.prep.fill)?;
    let estimator = VectorFieldEstimator::build(&inputs.cloud, cfg.vector_field)?;
    let train_inputs = TrainInputs {
        cloud: &inputs.cloud,
        estimator: &estimator,
        empties: inputs.empties.as_ref().map(|e| e.points.as_slice()),
    };
    let outcome = train_with(&train_inputs, &cfg.train, |r| on_epoch(r))?;
    Ok(Reconstruction {
        field: outcome.field,
        transform: inputs.transform,
        inputs,
        reports: outcome.reports,
        abort: outcome.abort,
    })
}

/// Mesh the field in scene coordinates.
pub fn extract(field: &Field, transform: &NormalizationTransform, cfg: &PipelineConfig) -> anyhow::Result<TriangleMesh<f64>> {
    Ok(extract_mesh(field, &cfg.extract, Some(transform))?)
}

/// Metrics after mapping both meshes with the transform that takes the
/// ground truth into `[-1, 1]³`.
pub fn evaluate_meshes(
    pred: &TriangleMesh<f64>,
    gt: &TriangleMesh<f64>,
    cfg: &PipelineConfig,
) -> anyhow::Result<MetricReport> {
    let frame = NormalizationTransform::fit(&gt.bounds(), 1.0).context("ground-truth mesh")?;
    Ok(evaluate(&frame.apply_mesh(pred), &frame.apply_mesh(gt), &cfg.eval)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: String,
    pub cd: Option<f64>,
    pub iou: Option<f64>,
    pub l2: Option<f64>,
    pub error: Option<String>,
}

/// Train, mesh and evaluate every mode on the same inputs and seed.
/// A failing mode is recorded in its row and the others still run.
pub fn ablate(
    cloud: &OrientedPointCloud<f32>,
    sensors: &SensorSet<f32>,
    gt: &TriangleMesh<f64>,
    cfg: &PipelineConfig,
    modes: &[TrainMode],
) -> Vec<AblationRow> {
    modes
        .iter()
        .map(|&mode| {
            let mut c = cfg.clone();
            c.train.mode = mode;
            info!("ablate mode={mode}");
            let run = || -> anyhow::Result<MetricReport> {
                let rec = reconstruct(cloud, Some(sensors), &c, log_epoch)?;
                if let Some(e) = rec.abort {
                    bail!("training aborted: {e}");
                }
                let mesh = extract(&rec.field, &rec.transform, &c)?;
                evaluate_meshes(&mesh, gt, &c)
            };
            match run() {
                Ok(m) => AblationRow {
                    mode: mode.name().into(),
                    cd: Some(m.chamfer),
                    iou: Some(m.iou),
                    l2: Some(m.l2),
                    error: None,
                },
                Err(e) => AblationRow {
                    mode: mode.name().into(),
                    cd: None,
                    iou: None,
                    l2: None,
                    error: Some(format!("{e:#}")),
                },
            }
        })
        .collect()
}

pub fn log_epoch(r: &LossReport) {
    info!(
        "epoch={} steps={} lg={:.6e} ls={:.6e} le={:.6e} align={:.6e} total={:.6e} secs={:.1}",
        r.epoch, r.steps, r.lg, r.ls, r.le, r.align, r.total, r.wall_seconds
    );
}
