//! On-disk datasets, run manifests and the index-table cache.
//!
//! A dataset directory holds `manifest.toml` plus one subdirectory per
//! sample:
//!
//! ```text
//! sample-01000/phantom.dast    u8   [n_x, n_z]   class map
//! sample-01000/clean.dasc      data volume f
//! sample-01000/corrupted.dasc  data volume f_eps
//! sample-01000/image.dast      f64  [n_x, n_z]   DAS image of f
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::das::{fingerprint, IndexTable, InterpMode, OUT_OF_RECORD};
use crate::error::{Error, Result};
use crate::geometry::Image;
use crate::io::archive::{load_fmc, save_fmc};
use crate::io::tensorfile::TensorFile;
use crate::phantom::{generate_phantom, SegmentationMap};
use crate::pipeline::dataset::build_table;
use crate::pipeline::{Dataset, DatasetConfig, TrainingSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub seed: u64,
    pub split: Split,
    pub phantom: PathBuf,
    pub clean: PathBuf,
    pub corrupted: PathBuf,
    pub image: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub config_hash: String,
    pub table_fingerprint: String,
    pub config: DatasetConfig,
    pub samples: Vec<SampleEntry>,
}

pub const MANIFEST: &str = "manifest.toml";

fn format_err(path: &Path, reason: String) -> Error {
    Error::Format { path: path.to_path_buf(), offset: 0, reason }
}

pub fn save_segmentation(path: &Path, c: &SegmentationMap) -> Result<()> {
    TensorFile::u8(&[c.n_x(), c.n_z()], c.classes().to_vec())?.write(path)
}

pub fn load_segmentation(path: &Path) -> Result<SegmentationMap> {
    let t = TensorFile::read(path)?;
    let &[n_x, n_z] = t.dims() else {
        return Err(format_err(path, format!("class map must be 2-D, got {:?}", t.dims())));
    };
    let crate::io::tensorfile::TensorData::U8(v) = t.data() else {
        return Err(format_err(path, "class map must have dtype u8".into()));
    };
    SegmentationMap::from_vec(n_x, n_z, v.clone())
}

pub fn save_image(path: &Path, u: &Image) -> Result<()> {
    TensorFile::f64(&[u.grid().n_x, u.grid().n_z], u.pixels().to_vec())?.write(path)
}

pub fn load_image(path: &Path, grid: crate::geometry::ImageGrid) -> Result<Image> {
    let t = TensorFile::read(path)?;
    if t.dims() != [grid.n_x, grid.n_z] {
        return Err(format_err(path, format!("image shape {:?} does not match the grid", t.dims())));
    }
    Image::from_vec(grid, t.into_f64())
}

/// Writes every sample and the manifest into `dir`.
pub fn save_dataset(dir: &Path, cfg: &DatasetConfig, config_hash: &str, ds: &Dataset) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let mut samples = Vec::new();
    let splits = ds.train.iter().map(|s| (s, Split::Train)).chain(ds.test.iter().map(|s| (s, Split::Test)));
    for (s, split) in splits {
        let sub = PathBuf::from(format!("sample-{:05}", s.seed));
        fs::create_dir_all(dir.join(&sub))?;
        let e = SampleEntry {
            seed: s.seed,
            split,
            phantom: sub.join("phantom.dast"),
            clean: sub.join("clean.dasc"),
            corrupted: sub.join("corrupted.dasc"),
            image: sub.join("image.dast"),
        };
        save_segmentation(&dir.join(&e.phantom), &s.c)?;
        save_fmc(&dir.join(&e.clean), &s.f)?;
        save_fmc(&dir.join(&e.corrupted), &s.f_eps)?;
        save_image(&dir.join(&e.image), &s.u)?;
        samples.push(e);
    }
    let m = DatasetManifest {
        config_hash: config_hash.to_string(),
        table_fingerprint: ds.table.fingerprint_hex(),
        config: cfg.clone(),
        samples,
    };
    let text = toml::to_string(&m).map_err(|e| Error::Validation(e.to_string()))?;
    fs::write(dir.join(MANIFEST), text)?;
    Ok(m)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path)?;
    toml::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

/// Loads a dataset written by [`save_dataset`]. Phantom shapes are
/// regenerated from the seeds and checked against the stored class maps, and
/// each stored image is checked against the DAS image of the clean data.
pub fn load_dataset(dir: &Path, cache_dir: Option<&Path>) -> Result<Dataset> {
    let m = read_manifest(dir)?;
    let table = Arc::new(match cache_dir {
        Some(c) => cached_index_table(c, &m.config)?,
        None => build_table(&m.config)?,
    });
    if table.fingerprint_hex() != m.table_fingerprint {
        return Err(Error::Config("dataset was generated for a different index table".into()));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for e in &m.samples {
        let c = load_segmentation(&dir.join(&e.phantom))?;
        let phantom = generate_phantom(&m.config.grid, e.seed, &m.config.phantom)?;
        if phantom.class_map != c {
            return Err(Error::Data(format!("sample {}: class map does not match its seed", e.seed)));
        }
        let s = TrainingSample {
            seed: e.seed,
            phantom,
            c: Arc::new(c),
            f: load_fmc(&dir.join(&e.clean))?,
            f_eps: load_fmc(&dir.join(&e.corrupted))?,
            u: load_image(&dir.join(&e.image), m.config.grid)?,
        };
        s.verify(&table)?;
        match e.split {
            Split::Train => train.push(s),
            Split::Test => test.push(s),
        }
    }
    Ok(Dataset { table, train, test })
}

/// Record of one command invocation, sufficient to repeat it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub profile: String,
    pub config_hash: String,
    pub dataset_seed: u64,
    pub training_seed: u64,
    pub strategy: Option<u8>,
    pub version: String,
    pub outputs: Vec<PathBuf>,
}

pub fn write_run_manifest(dir: &Path, m: &RunManifest) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("run-{}.toml", m.command));
    let text = toml::to_string(m).map_err(|e| Error::Validation(e.to_string()))?;
    fs::write(&path, text)?;
    Ok(path)
}

/// Nearest-mode table for `cfg`, read from `cache_dir` when a file with the
/// configuration fingerprint exists and written there otherwise. Entries are
/// stored as f64 with -1 marking out-of-record samples.
pub fn cached_index_table(cache_dir: &Path, cfg: &DatasetConfig) -> Result<IndexTable> {
    let sources: Vec<usize> = (0..cfg.geometry.n_elements()).collect();
    let fp = fingerprint(
        &cfg.geometry,
        &cfg.grid,
        &cfg.medium,
        cfg.sampling_frequency_hz,
        cfg.n_t,
        &sources,
        InterpMode::Nearest,
    );
    let hex: String = fp.iter().map(|b| format!("{b:02x}")).collect();
    let path = cache_dir.join(format!("table-{hex}.dast"));
    if path.exists() {
        let t = TensorFile::read(&path)?;
        let n_r = cfg.geometry.n_elements();
        if t.dims() != [cfg.grid.n_pixels(), n_r, n_r] {
            return Err(format_err(&path, format!("cached table has shape {:?}", t.dims())));
        }
        let mut indices = Vec::with_capacity(t.data().len());
        for v in t.into_f64() {
            indices.push(if v < 0.0 { OUT_OF_RECORD } else { v as u32 });
        }
        return IndexTable::from_parts(
            InterpMode::Nearest,
            cfg.grid,
            cfg.n_t,
            n_r,
            cfg.sampling_frequency_hz,
            sources,
            indices,
            None,
            fp,
        );
    }
    let table = build_table(cfg)?;
    fs::create_dir_all(cache_dir)?;
    let values = table
        .indices()
        .iter()
        .map(|&k| if k == OUT_OF_RECORD { -1.0 } else { f64::from(k) })
        .collect();
    TensorFile::f64(&[table.n_pixels(), table.n_s(), table.n_r()], values)?.write(&path)?;
    Ok(table)
}
