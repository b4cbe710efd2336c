//! Pipeline configuration: presets, TOML files and flag overrides.

use std::path::Path;

use anyhow::{bail, Context};
use clap::ValueEnum;
use ifield::eval::EvalConfig;
use ifield::extract::{ExtractionConfig, PAPER_RESOLUTION};
use ifield::prep::{EmptySpaceConfig, VectorFieldConfig, DEFAULT_NORMAL_K};
use ifield::scanner::{DEFAULT_CAMERA_HEIGHT, DEFAULT_POINTS, DEFAULT_SPACING};
use ifield::train::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Published settings: 5×256 network, batch 100k, 40 epochs, 640³ meshes.
    Paper,
    /// Single-CPU settings for object-scale scenes.
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CameraLayout {
    /// Horizontal grid of camera positions inside the scene bounds.
    Grid,
    /// Cameras on a sphere around the scene, looking at its center.
    Orbit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSettings {
    pub layout: CameraLayout,
    /// Grid spacing in scene units.
    pub spacing: f64,
    /// Pitch of the tilted cameras, in degrees; each grid camera is added
    /// level and at `±tilt`.
    pub tilt: f64,
    pub camera_height: f64,
    pub orbit_cameras: usize,
    /// Orbit radius as a multiple of the scene's bounding-sphere radius.
    pub orbit_distance: f64,
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    pub points: usize,
    /// Standard deviation of depth noise; 0 disables it.
    pub depth_noise: f64,
}

impl Default for ScanSettings {
    fn default() -> Self {
        ScanSettings {
            layout: CameraLayout::Grid,
            spacing: DEFAULT_SPACING,
            tilt: 30.0,
            camera_height: DEFAULT_CAMERA_HEIGHT,
            orbit_cameras: 24,
            orbit_distance: 2.5,
            elevation_min: -80.0,
            elevation_max: 80.0,
            width: 320,
            height: 240,
            fov_deg: 60.0,
            points: DEFAULT_POINTS,
            depth_noise: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepSettings {
    /// Neighbours for PCA normals.
    pub normal_k: usize,
    /// Fraction of `[-1, 1]` the longest bounding-box side is mapped onto.
    pub fill: f64,
}

impl Default for PrepSettings {
    fn default() -> Self {
        PrepSettings {
            normal_k: DEFAULT_NORMAL_K,
            fill: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub preset: Preset,
    pub seed: u64,
    pub scan: ScanSettings,
    pub prep: PrepSettings,
    pub vector_field: VectorFieldConfig,
    pub empty: EmptySpaceConfig,
    pub train: TrainConfig,
    pub extract: ExtractionConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

impl PipelineConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => PipelineConfig {
                preset,
                seed: 0,
                scan: ScanSettings::default(),
                prep: PrepSettings::default(),
                vector_field: VectorFieldConfig::default(),
                empty: EmptySpaceConfig::default(),
                train: TrainConfig::default(),
                extract: ExtractionConfig {
                    resolution: PAPER_RESOLUTION,
                    iso: 0.0,
                },
                eval: EvalConfig::default(),
            },
            Preset::Desk => PipelineConfig {
                preset,
                seed: 0,
                scan: ScanSettings {
                    layout: CameraLayout::Orbit,
                    width: 160,
                    height: 120,
                    points: 50_000,
                    ..ScanSettings::default()
                },
                prep: PrepSettings {
                    fill: 0.9,
                    ..PrepSettings::default()
                },
                vector_field: VectorFieldConfig::default(),
                empty: EmptySpaceConfig {
                    max_points: 50_000,
                    ..EmptySpaceConfig::default()
                },
                train: TrainConfig {
                    epochs: 60,
                    batch_size: 10_000,
                    lr: 1e-3,
                    hidden: 128,
                    omega0: 5.0,
                    gradient_magnitude: 20.0,
                    ..TrainConfig::default()
                },
                extract: ExtractionConfig::default(),
                eval: EvalConfig::default(),
            },
        }
    }

    /// Parse TOML. Fields left out take the values of the base preset:
    /// `forced` if given, else the file's `preset`, else desk.
    pub fn from_toml(text: &str, forced: Option<Preset>) -> anyhow::Result<Self> {
        let mut value: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
        let named = match value.get("preset") {
            Some(p) => Some(Preset::deserialize(p.clone()).context("unknown preset")?),
            None => None,
        };
        let preset = forced.or(named).unwrap_or(Preset::Desk);
        value.remove("preset");
        let mut base = toml::Table::try_from(Self::preset(preset)).expect("config serializes");
        merge(&mut base, value);
        let cfg: PipelineConfig = base.try_into().context("invalid config")?;
        Ok(cfg)
    }

    pub fn load(path: &Path, forced: Option<Preset>) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml(&text, forced).with_context(|| format!("in config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Copy the global seed into the module configs that carry their own.
    pub fn resolved(mut self) -> Self {
        self.train.seed = self.seed;
        self.eval.seed = self.seed;
        self
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.empty.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.extract.resolution < 2 {
            bail!("extraction resolution must be at least 2");
        }
        if !(self.prep.fill > 0.0 && self.prep.fill <= 1.0) {
            bail!("prep.fill must be in (0, 1]");
        }
        if self.vector_field.k == 0 || self.prep.normal_k < 3 {
            bail!("neighbour counts must be positive (normals need at least 3)");
        }
        let s = &self.scan;
        if s.points == 0 || s.width == 0 || s.height == 0 || !(s.fov_deg > 0.0 && s.fov_deg < 180.0) {
            bail!("scan needs positive points, image size and a field of view in (0, 180)");
        }
        if s.layout == CameraLayout::Orbit && (s.orbit_cameras == 0 || !(s.orbit_distance > 1.0)) {
            bail!("orbit needs at least one camera and a distance above 1 bounding radius");
        }
        if !(s.depth_noise >= 0.0) {
            bail!("depth noise must be non-negative");
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip() {
        for p in [Preset::Paper, Preset::Desk] {
            let cfg = PipelineConfig::preset(p);
            cfg.validate().unwrap();
            assert_eq!(PipelineConfig::from_toml(&cfg.to_toml(), None).unwrap(), cfg);
        }
    }

    #[test]
    fn partial_file_keeps_preset_values() {
        let cfg = PipelineConfig::from_toml("preset = \"paper\"\n[train]\nepochs = 3\n", None).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 100_000);
        assert_eq!(cfg.extract.resolution, 640);
        let cfg = PipelineConfig::from_toml("seed = 9", None).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.hidden, 128);
        let cfg = PipelineConfig::from_toml("preset = \"desk\"", Some(Preset::Paper)).unwrap();
        assert_eq!(cfg, PipelineConfig::preset(Preset::Paper));
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(PipelineConfig::from_toml("[scan]\nbogus = 1\n", None).is_err());
        assert!(PipelineConfig::from_toml("preset = \"huge\"", None).is_err());
    }
}
