//! Run configuration: a TOML file with fixed sections, merged over one of
//! two built-in profiles.
//!
//! `desk` is a scaled-down configuration that trains in minutes on a laptop.
//! `paper` uses a 64-element array, 1020 samples at 50 MHz, a 72×118 grid,
//! steel/air speeds, source undersampling by two and a learning rate of
//! 1e-3. Element pitch, pixel size, grid offset, pulse, noise level, defect
//! sizes and the wall band are not fixed by that setting; the values below
//! are chosen so that the whole grid lies inside the recorded time window.
//!
//! Unknown keys anywhere in the file are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, ImageGrid, MediumModel};
use crate::nets::NetOptions;
use crate::optim::AdamConfig;
use crate::phantom::{PhantomConfig, WallBand, AIR_SPEED_MPS, STEEL_SPEED_MPS};
use crate::pipeline::{DatasetConfig, TrainConfig};
use crate::sim::PulseModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::Validation(format!("unknown profile {s:?} (expected desk or paper)"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

/// Linear array centred on x = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub n_elements: usize,
    pub pitch_m: f64,
    /// Depth of the element row.
    pub depth_m: f64,
}

/// Grid centred laterally on the array; `z0_m` is the depth of the first row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n_x: usize,
    pub n_z: usize,
    pub dx_m: f64,
    pub dz_m: f64,
    pub z0_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumSection {
    /// Class 0; also the speed assumed by the beamformer.
    pub background_speed_mps: f64,
    /// Class 1 (defects and wall band).
    pub inclusion_speed_mps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionSection {
    pub sampling_frequency_hz: f64,
    pub n_t: usize,
    /// Signal-to-noise ratio of the corrupted data; `inf` disables noise.
    pub snr_db: f64,
    /// Keep every n-th source.
    pub undersampling: usize,
    /// Peak absolute amplitude of each clean sample after scaling.
    pub peak_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSection {
    pub center_frequency_hz: f64,
    /// Full-width-half-maximum bandwidth as a fraction of the centre frequency.
    pub bandwidth_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSection {
    pub defects_min: usize,
    pub defects_max: usize,
    pub radius_min_m: f64,
    pub radius_max_m: f64,
    /// Fractions of the grid width bounding defect centres.
    pub band_x: [f64; 2],
    /// Fractions of the grid height bounding defect centres.
    pub band_z: [f64; 2],
    /// First row of the wall band; `wall_rows = 0` disables it.
    pub wall_start_row: usize,
    pub wall_rows: usize,
    pub rect_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub n_train: usize,
    pub n_test: usize,
    /// Sample `i` uses phantom seed `seed + i`.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs_pre: usize,
    pub epochs_post: usize,
    pub epochs_joint: usize,
    pub learning_rate: f64,
    /// Step size of the strategy-2 θ stage.
    pub finetune_learning_rate: f64,
    /// Step size of the joint stage.
    pub joint_learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Seeds parameter initialisation and the per-epoch sample order.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub out_dir: PathBuf,
    /// Index-table cache; empty disables caching.
    pub cache_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub geometry: GeometrySection,
    pub grid: GridSection,
    pub medium: MediumSection,
    pub acquisition: AcquisitionSection,
    pub pulse: PulseSection,
    pub phantom: PhantomSection,
    pub dataset: DatasetSection,
    pub training: TrainingSection,
    pub paths: PathsSection,
}

impl RunConfig {
    pub fn desk() -> Self {
        Self {
            profile: Profile::Desk,
            geometry: GeometrySection { n_elements: 16, pitch_m: 1.0e-3, depth_m: 0.0 },
            grid: GridSection { n_x: 24, n_z: 40, dx_m: 0.5e-3, dz_m: 0.5e-3, z0_m: 4.0e-3 },
            medium: MediumSection {
                background_speed_mps: STEEL_SPEED_MPS,
                inclusion_speed_mps: AIR_SPEED_MPS,
            },
            acquisition: AcquisitionSection {
                sampling_frequency_hz: 25.0e6,
                n_t: 256,
                snr_db: 10.0,
                undersampling: 2,
                peak_amplitude: 0.5,
            },
            pulse: PulseSection { center_frequency_hz: 5.0e6, bandwidth_fraction: 0.6 },
            phantom: PhantomSection {
                defects_min: 1,
                defects_max: 3,
                radius_min_m: 0.5e-3,
                radius_max_m: 1.25e-3,
                band_x: [0.25, 0.75],
                band_z: [0.3, 0.7],
                wall_start_row: 36,
                wall_rows: 4,
                rect_probability: 0.0,
            },
            dataset: DatasetSection { n_train: 20, n_test: 5, seed: 1000 },
            training: TrainingSection {
                epochs_pre: 50,
                epochs_post: 50,
                epochs_joint: 50,
                learning_rate: 1e-3,
                finetune_learning_rate: 1e-4,
                joint_learning_rate: 1e-5,
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
                seed: 7,
            },
            paths: PathsSection { out_dir: PathBuf::from("out"), cache_dir: PathBuf::new() },
        }
    }

    pub fn paper() -> Self {
        let mut c = Self::desk();
        c.profile = Profile::Paper;
        c.geometry = GeometrySection { n_elements: 64, pitch_m: 0.5e-3, depth_m: 0.0 };
        c.grid = GridSection { n_x: 72, n_z: 118, dx_m: 0.4e-3, dz_m: 0.4e-3, z0_m: 2.0e-3 };
        c.acquisition.sampling_frequency_hz = 50.0e6;
        c.acquisition.n_t = 1020;
        c.phantom.radius_min_m = 0.8e-3;
        c.phantom.radius_max_m = 2.0e-3;
        c.phantom.wall_start_row = 106;
        c.phantom.wall_rows = 12;
        c.dataset = DatasetSection { n_train: 180, n_test: 50, seed: 1000 };
        c
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration is always representable")
    }

    /// Parses `text` as a partial configuration layered over `profile`
    /// defaults. A `profile` key in the text selects the base instead.
    pub fn from_toml_over(text: &str, profile: Profile) -> Result<Self> {
        let overlay: toml::Table =
            text.parse().map_err(|e: toml::de::Error| Error::Validation(e.to_string()))?;
        let base_profile = match overlay.get("profile") {
            Some(v) => v
                .as_str()
                .ok_or_else(|| Error::Validation("profile must be a string".into()))?
                .parse()?,
            None => profile,
        };
        let mut base = toml::Table::try_from(Self::for_profile(base_profile))
            .map_err(|e| Error::Validation(e.to_string()))?;
        merge(&mut base, overlay, "")?;
        let cfg: RunConfig = base.try_into().map_err(|e: toml::de::Error| Error::Validation(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, profile: Profile) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_over(&text, profile)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }

    /// SHA-256 of the canonical TOML rendering, hex encoded.
    pub fn hash_hex(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Validation(format!("{key}: {why}")));
        if self.geometry.n_elements == 0 {
            return bad("geometry.n_elements", "must be positive");
        }
        if self.grid.n_x == 0 || self.grid.n_z == 0 {
            return bad("grid", "n_x and n_z must be positive");
        }
        if self.acquisition.undersampling == 0 {
            return bad("acquisition.undersampling", "must be at least 1");
        }
        if self.acquisition.n_t == 0 {
            return bad("acquisition.n_t", "must be positive");
        }
        if !(self.acquisition.peak_amplitude > 0.0) {
            return bad("acquisition.peak_amplitude", "must be positive");
        }
        if self.phantom.defects_min > self.phantom.defects_max {
            return bad("phantom.defects_min", "exceeds defects_max");
        }
        if self.phantom.wall_rows > 0 && self.phantom.wall_start_row + self.phantom.wall_rows > self.grid.n_z {
            return bad("phantom.wall_start_row", "wall band extends past the grid");
        }
        let t = &self.training;
        if !(t.learning_rate > 0.0 && t.finetune_learning_rate > 0.0 && t.joint_learning_rate > 0.0) {
            return bad("training.learning_rate", "learning rates must be positive");
        }
        if self.dataset.n_train == 0 {
            return bad("dataset.n_train", "training set must not be empty");
        }
        self.dataset_config().map(|_| ())
    }

    pub fn dataset_config(&self) -> Result<DatasetConfig> {
        let g = &self.geometry;
        let geometry = ArrayGeometry::uniform(g.n_elements, g.pitch_m, g.depth_m)?;
        let r = &self.grid;
        let grid = ImageGrid::centered(r.n_x, r.n_z, r.dx_m, r.dz_m, r.z0_m)?;
        let medium = MediumModel::new(self.medium.background_speed_mps)?;
        let pulse = PulseModel::gaussian(self.pulse.center_frequency_hz, self.pulse.bandwidth_fraction)?;
        let p = &self.phantom;
        let phantom = PhantomConfig {
            defect_count: (p.defects_min, p.defects_max),
            radius_range: (p.radius_min_m, p.radius_max_m),
            band_x: (p.band_x[0], p.band_x[1]),
            band_z: (p.band_z[0], p.band_z[1]),
            wall: (p.wall_rows > 0).then_some(WallBand { start_row: p.wall_start_row, rows: p.wall_rows }),
            rect_probability: p.rect_probability,
            material_speeds: (self.medium.background_speed_mps, self.medium.inclusion_speed_mps),
            ..PhantomConfig::default()
        };
        let a = &self.acquisition;
        Ok(DatasetConfig {
            geometry,
            grid,
            medium,
            pulse,
            sampling_frequency_hz: a.sampling_frequency_hz,
            n_t: a.n_t,
            snr_db: a.snr_db,
            undersampling: a.undersampling,
            phantom,
            peak_amplitude: a.peak_amplitude,
            n_train: self.dataset.n_train,
            n_test: self.dataset.n_test,
            seed: self.dataset.seed,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            epochs_pre: t.epochs_pre,
            epochs_post: t.epochs_post,
            epochs_joint: t.epochs_joint,
            adam: AdamConfig {
                learning_rate: t.learning_rate,
                beta1: t.beta1,
                beta2: t.beta2,
                epsilon: t.epsilon,
            },
            finetune_learning_rate: t.finetune_learning_rate,
            joint_learning_rate: t.joint_learning_rate,
            seed: t.seed,
            net: NetOptions::default(),
        }
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table, prefix: &str) -> Result<()> {
    for (key, value) in overlay {
        let path = format!("{prefix}{key}");
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o, &format!("{path}."))?,
            (Some(toml::Value::Table(_)), _) => {
                return Err(Error::Validation(format!("{path}: expected a section")));
            }
            (Some(_), toml::Value::Table(_)) => {
                return Err(Error::Validation(format!("{path}: expected a value, found a section")));
            }
            (Some(slot), v) => *slot = v,
            (None, _) => return Err(Error::Validation(format!("unknown key {path}"))),
        }
    }
    Ok(())
}
