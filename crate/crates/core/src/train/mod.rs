//! Fitting the field: loss assembly, batching and the optimization loop.

mod loss;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{OrientedPointCloud, Point3, Vec3};
use crate::prep::VectorFieldEstimator;
use crate::siren::{architecture, AdamConfig, AdamState, SirenField, DEFAULT_HIDDEN, DEFAULT_LAYERS, DEFAULT_OMEGA0};
use crate::{Error, Real, Result};

pub use loss::{
    batch_loss, batch_loss_and_gradient, indicator_levels, loss_empty_term, loss_gradient_term, loss_sdf_terms,
    loss_surface_term, LossTerm, StepBatch, TermValues,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainMode {
    /// Gradient, surface and free-space terms.
    #[serde(rename = "indicator")]
    Indicator,
    /// Gradient and surface terms only.
    #[serde(rename = "no-empty")]
    IndicatorNoEmpty,
    /// Signed distance with eikonal and normal-alignment terms.
    #[serde(rename = "sdf")]
    Sdf,
    /// [`Sdf`](Self::Sdf) plus a penalty on small values off the surface.
    #[serde(rename = "sdf-high")]
    SdfHighOffSurface,
}

impl TrainMode {
    pub const ALL: [TrainMode; 4] = [
        TrainMode::Indicator,
        TrainMode::IndicatorNoEmpty,
        TrainMode::Sdf,
        TrainMode::SdfHighOffSurface,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Indicator => "indicator",
            TrainMode::IndicatorNoEmpty => "no-empty",
            TrainMode::Sdf => "sdf",
            TrainMode::SdfHighOffSurface => "sdf-high",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn is_sdf(self) -> bool {
        matches!(self, TrainMode::Sdf | TrainMode::SdfHighOffSurface)
    }

    /// Whether the free-space samples enter the loss.
    pub fn uses_free_space(self) -> bool {
        matches!(self, TrainMode::Indicator | TrainMode::SdfHighOffSurface)
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lg: f64,
    pub ls: f64,
    pub le: f64,
}

impl LossWeights {
    /// Free-space weight for real sensor data.
    pub const REAL_SCAN_LE: f64 = 50.0;

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lg", self.lg), ("ls", self.ls), ("le", self.le)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("loss weight {name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lg: 1.0,
            ls: 100.0,
            le: 100.0,
        }
    }
}

/// Where the gradient term is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientSamples {
    SurfaceOnly,
    /// Surface points plus one jittered point within the near radius each.
    SurfaceAndNear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub weights: LossWeights,
    pub epochs: usize,
    /// Points per step drawn from each of the surface and free-space streams.
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub near_radius: f64,
    pub gradient_samples: GradientSamples,
    /// Targets `+-0.5` with the surface at 0; otherwise `0/1` with the surface at 0.5.
    pub centered: bool,
    /// Weight of the normal-alignment term in the signed-distance modes.
    pub alignment_weight: f64,
    /// Length of the gradient targets in the indicator modes.
    pub gradient_magnitude: f64,
    pub off_surface_alpha: f64,
    /// Use `exp(+alpha |chi|)` for the off-surface penalty.
    pub literal_off_surface_sign: bool,
    /// Weight matrices, including the output layer.
    pub layers: usize,
    pub hidden: usize,
    pub omega0: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Indicator,
            weights: LossWeights::default(),
            epochs: 40,
            batch_size: 100_000,
            lr: 1e-4,
            seed: 0,
            near_radius: crate::prep::DEFAULT_NEAR_RADIUS,
            gradient_samples: GradientSamples::SurfaceAndNear,
            centered: true,
            alignment_weight: 1.0,
            gradient_magnitude: 1.0,
            off_surface_alpha: 100.0,
            literal_off_surface_sign: false,
            layers: DEFAULT_LAYERS,
            hidden: DEFAULT_HIDDEN,
            omega0: DEFAULT_OMEGA0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be at least 1"));
        }
        if !(self.gradient_magnitude > 0.0) || !self.gradient_magnitude.is_finite() {
            return Err(Error::invalid("gradient magnitude must be positive and finite"));
        }
        if !(self.lr > 0.0) || !(self.near_radius >= 0.0) || !(self.alignment_weight >= 0.0) {
            return Err(Error::invalid("learning rate must be positive, radii and weights non-negative"));
        }
        if self.layers < 2 || self.hidden == 0 {
            return Err(Error::invalid("need at least one hidden layer of non-zero width"));
        }
        Ok(())
    }

    pub fn dims(&self) -> Vec<usize> {
        architecture(self.layers, self.hidden)
    }

    /// Level set separating inside from outside.
    pub fn iso_level(&self) -> f64 {
        if self.mode.is_sdf() {
            0.0
        } else {
            let (c, _) = indicator_levels(self.centered);
            c
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// 1-based.
    pub epoch: usize,
    pub steps: usize,
    /// Epoch means of the unweighted terms.
    pub lg: f64,
    pub ls: f64,
    pub le: f64,
    pub align: f64,
    /// Weighted sum of the epoch means.
    pub total: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainInputs<'a, T> {
    /// Normalized oriented surface points.
    pub cloud: &'a OrientedPointCloud<T>,
    pub estimator: &'a VectorFieldEstimator<T>,
    /// Normalized free-space samples.
    pub empties: Option<&'a [Point3<T>]>,
}

#[derive(Debug)]
pub struct TrainOutcome<T> {
    /// The trained field, or the last finite one when training aborted.
    pub field: SirenField<T>,
    pub reports: Vec<LossReport>,
    /// Set when a non-finite loss or gradient stopped training.
    pub abort: Option<Error>,
}

pub fn train<T: Real>(inputs: &TrainInputs<'_, T>, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    train_with(inputs, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<T: Real>(
    inputs: &TrainInputs<'_, T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&LossReport),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let cloud = inputs.cloud;
    if cloud.is_empty() {
        return Err(Error::EmptyInput("surface points"));
    }
    if cloud.needs_normals() {
        return Err(Error::invalid("training needs oriented points"));
    }
    let empties: &[Point3<T>] = if cfg.mode.uses_free_space() {
        match inputs.empties {
            Some(e) if !e.is_empty() => e,
            _ => return Err(Error::invalid(format!("mode {} needs free-space samples", cfg.mode))),
        }
    } else {
        &[]
    };

    let scale = T::of(if cfg.mode.is_sdf() { 1.0 } else { cfg.gradient_magnitude });
    let target = |q: Point3<T>| inputs.estimator.query(q).map(|v| v * scale);
    let surface_targets: Vec<Option<Vec3<T>>> = cloud.points().par_iter().map(|&p| target(p)).collect();
    let surface_idx: Vec<usize> = (0..cloud.len()).filter(|&i| surface_targets[i].is_some()).collect();
    if surface_idx.is_empty() {
        return Err(Error::DegenerateInput("no surface point has a defined gradient target".into()));
    }

    let mut field = SirenField::<T>::init(&cfg.dims(), cfg.omega0, cfg.seed)?;
    let mut adam = AdamState::new(
        field.num_params(),
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let b = cfg.batch_size;
    let n_s = surface_idx.len();
    let n_e = empties.len();
    let steps = n_s.max(n_e).div_ceil(b);
    let mut reports = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();

    for epoch in 0..cfg.epochs {
        let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        order_rng.set_stream(2 * epoch as u64);
        let mut s_perm = surface_idx.clone();
        s_perm.shuffle(&mut order_rng);
        let mut e_perm: Vec<usize> = (0..n_e).collect();
        e_perm.shuffle(&mut order_rng);
        let mut jitter_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        jitter_rng.set_stream(2 * epoch as u64 + 1);

        let mut sums = TermValues::default();
        for step in 0..steps {
            let s_sel = stream_window(&s_perm, step, b, n_s >= n_e);
            let e_sel = stream_window(&e_perm, step, b, n_e > n_s);
            let mut batch = StepBatch {
                surface: s_sel.iter().map(|&i| cloud.points()[i]).collect(),
                surface_targets: s_sel.iter().map(|&i| surface_targets[i].unwrap()).collect(),
                empty: e_sel.iter().map(|&i| empties[i]).collect(),
                ..Default::default()
            };
            if cfg.gradient_samples == GradientSamples::SurfaceAndNear && cfg.near_radius > 0.0 {
                let jittered: Vec<Point3<T>> = batch
                    .surface
                    .iter()
                    .map(|&p| p + ball_offset(&mut jitter_rng, cfg.near_radius).cast())
                    .collect();
                let targets: Vec<Option<Vec3<T>>> =
                    jittered.par_iter().map(|&q| target(q)).collect();
                for (q, t) in jittered.into_iter().zip(targets) {
                    if let Some(t) = t {
                        batch.near.push(q);
                        batch.near_targets.push(t);
                    }
                }
            }
            let (terms, grad) = batch_loss_and_gradient(&field, &batch, cfg)?;
            let total = terms.total(cfg);
            if !total.is_finite() {
                return Ok(aborted(field, reports, format!("non-finite loss at epoch {}, step {step}", epoch + 1)));
            }
            let before = field.clone();
            if let Err(e) = field.adam_step(&mut adam, &grad) {
                return Ok(TrainOutcome {
                    field: before,
                    reports,
                    abort: Some(e),
                });
            }
            if !field.all_finite() {
                return Ok(aborted(before, reports, format!("non-finite parameters at epoch {}", epoch + 1)));
            }
            sums.lg += terms.lg;
            sums.ls += terms.ls;
            sums.le += terms.le;
            sums.align += terms.align;
        }
        let k = steps as f64;
        let mean = TermValues {
            lg: sums.lg / k,
            ls: sums.ls / k,
            le: sums.le / k,
            align: sums.align / k,
        };
        let report = LossReport {
            epoch: epoch + 1,
            steps,
            lg: mean.lg,
            ls: mean.ls,
            le: mean.le,
            align: mean.align,
            total: mean.total(cfg),
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&report);
        reports.push(report);
    }
    Ok(TrainOutcome {
        field,
        reports,
        abort: None,
    })
}

fn aborted<T>(field: SirenField<T>, reports: Vec<LossReport>, msg: String) -> TrainOutcome<T> {
    TrainOutcome {
        field,
        reports,
        abort: Some(Error::Numerical(msg)),
    }
}

/// Indices used by `step`. The stream that sets the epoch length is read
/// once with a short final window; the other cycles.
fn stream_window(perm: &[usize], step: usize, b: usize, drives_epoch: bool) -> Vec<usize> {
    let n = perm.len();
    if n == 0 {
        return Vec::new();
    }
    let start = step * b;
    if drives_epoch {
        perm[start.min(n)..(start + b).min(n)].to_vec()
    } else {
        (0..b.min(n)).map(|i| perm[(start + i) % n]).collect()
    }
}

/// Uniform sample from the ball of radius `r`.
fn ball_offset(rng: &mut ChaCha8Rng, r: f64) -> Vec3<f64> {
    loop {
        let d = Vec3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        if let Some(u) = d.try_normalize() {
            return u * (r * rng.random::<f64>().cbrt());
        }
    }
}
