use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::das::{build_index_table, das_forward, IndexTable, InterpMode};
use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, FmcData, Image, ImageGrid, MediumModel};
use crate::phantom::{generate_phantom, phantom_to_scatterers, Phantom, PhantomConfig, SegmentationMap};
use crate::sim::{add_noise, simulate_fmc, undersample_sources, PulseModel};

/// Everything needed to synthesise one training collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub geometry: ArrayGeometry,
    pub grid: ImageGrid,
    /// Speed used by the index table (the background material).
    pub medium: MediumModel,
    pub pulse: PulseModel,
    pub sampling_frequency_hz: f64,
    pub n_t: usize,
    pub snr_db: f64,
    pub undersampling: usize,
    pub phantom: PhantomConfig,
    /// Clean data of every sample is scaled to this peak absolute amplitude.
    pub peak_amplitude: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

/// One element of the training collection: ground truth `c`, clean data
/// `f`, corrupted data `f_eps` and the DAS image `u` of the clean data.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub seed: u64,
    pub phantom: Phantom,
    pub c: Arc<SegmentationMap>,
    pub f: FmcData,
    pub f_eps: FmcData,
    pub u: Image,
}

impl TrainingSample {
    /// Checks shapes and that `u` is the DAS image of `f` under `table`.
    pub fn verify(&self, table: &IndexTable) -> Result<()> {
        if !self.c.matches_grid(table.grid()) {
            return Err(Error::Shape("segmentation map does not match the image grid".into()));
        }
        if self.f.dims() != self.f_eps.dims() {
            return Err(Error::Shape("clean and corrupted data differ in shape".into()));
        }
        if das_forward(&self.f, table)? != self.u {
            return Err(Error::Data(format!("sample {}: stored image is not B f", self.seed)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub table: Arc<IndexTable>,
    pub train: Vec<TrainingSample>,
    pub test: Vec<TrainingSample>,
}

/// SplitMix64 step; derives independent stream seeds from a run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const NOISE_STREAM: u64 = 1;
const SIM_STREAM: u64 = 2;

pub fn build_table(cfg: &DatasetConfig) -> Result<IndexTable> {
    build_index_table(
        &cfg.geometry,
        &cfg.grid,
        &cfg.medium,
        cfg.sampling_frequency_hz,
        cfg.n_t,
        InterpMode::Nearest,
    )
}

/// Synthesises the sample with seed `seed`: phantom, scatterers, clean data
/// scaled to the configured peak, noise, source undersampling and the DAS
/// image of the clean data.
pub fn generate_sample(cfg: &DatasetConfig, table: &IndexTable, seed: u64) -> Result<TrainingSample> {
    let phantom = generate_phantom(&cfg.grid, seed, &cfg.phantom)?;
    let scatterers = phantom_to_scatterers(&phantom);
    let sim = simulate_fmc(
        &scatterers,
        &cfg.geometry,
        &cfg.medium,
        &cfg.pulse,
        cfg.sampling_frequency_hz,
        cfg.n_t,
        derive_seed(seed, SIM_STREAM),
    )?;
    for w in &sim.warnings {
        log::warn!("sample {seed}: {w}");
    }
    let mut f = sim.data;
    let peak = f.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let scale = cfg.peak_amplitude / peak;
        f.samples_mut().iter_mut().for_each(|v| *v *= scale);
    }
    let noisy = add_noise(&f, cfg.snr_db, derive_seed(seed, NOISE_STREAM))?;
    let f_eps = undersample_sources(&noisy, cfg.undersampling)?;
    let u = das_forward(&f, table)?;
    Ok(TrainingSample { seed, c: Arc::new(phantom.class_map.clone()), phantom, f, f_eps, u })
}

/// Generates `n_train + n_test` samples with seeds `seed + index`; the first
/// `n_train` form the training split.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    let table = Arc::new(build_table(cfg)?);
    let total = cfg.n_train + cfg.n_test;
    let samples = (0..total as u64)
        .into_par_iter()
        .map(|i| generate_sample(cfg, &table, cfg.seed.wrapping_add(i)))
        .collect::<Result<Vec<_>>>()?;
    let mut samples = samples;
    let test = samples.split_off(cfg.n_train);
    Ok(Dataset { table, train: samples, test })
}
