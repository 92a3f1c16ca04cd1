//! Delay-and-sum image formation and its adjoint.
//!
//! The operator maps a full-matrix-capture volume `f[t][m][l]` to an image by
//! summing, for every pixel, the sample of each source/receiver trace at the
//! pixel's two-way travel time:
//!
//! ```text
//! u_i = sum_{m < n_s} sum_{l < n_r} f(idx(i, m, l), m, l)
//! ```
//!
//! The sample indices are precomputed once in an [`IndexTable`]. Samples that
//! fall outside the record contribute zero. No normalisation is applied.
//!
//! Forward parallelises over pixels and the adjoint over source slots, so each
//! output element is written by exactly one task and accumulated in the same
//! order as the single-threaded reference path. Both parallel variants are
//! therefore bit-identical to the reference.

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{
    time_to_fractional_index, time_to_index, ArrayGeometry, FmcData, Image, ImageGrid,
    MediumModel,
};

/// Marks an out-of-record table entry.
pub const OUT_OF_RECORD: u32 = u32::MAX;

/// How travel times are turned into samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpMode {
    /// Single nearest sample (reference mode).
    Nearest,
    /// Two neighbouring samples weighted linearly.
    Linear,
}

/// Precomputed sample indices realising the travel-time model for one
/// acquisition configuration.
#[derive(Debug, Clone)]
pub struct IndexTable {
    mode: InterpMode,
    grid: ImageGrid,
    n_t: usize,
    n_r: usize,
    fs: f64,
    source_ids: Vec<usize>,
    /// `[pixel][source slot][receiver]`
    indices: Vec<u32>,
    /// Weight of the upper sample, linear mode only.
    weights: Option<Vec<f64>>,
    fingerprint: [u8; 32],
}

/// Builds the table for a full capture where every element fires once.
pub fn build_index_table(
    geom: &ArrayGeometry,
    grid: &ImageGrid,
    medium: &MediumModel,
    fs: f64,
    n_t: usize,
    mode: InterpMode,
) -> Result<IndexTable> {
    let sources: Vec<usize> = (0..geom.n_elements()).collect();
    build_index_table_for_sources(geom, grid, medium, fs, n_t, &sources, mode)
}

/// Builds the table for an explicit list of firing elements.
pub fn build_index_table_for_sources(
    geom: &ArrayGeometry,
    grid: &ImageGrid,
    medium: &MediumModel,
    fs: f64,
    n_t: usize,
    source_ids: &[usize],
    mode: InterpMode,
) -> Result<IndexTable> {
    if n_t == 0 {
        return Err(Error::Config("record length must be at least one sample".into()));
    }
    if n_t >= OUT_OF_RECORD as usize {
        return Err(Error::Config(format!("record length {n_t} exceeds table index range")));
    }
    if !(fs > 0.0) {
        return Err(Error::Domain(format!("sampling frequency must be positive, got {fs}")));
    }
    if source_ids.is_empty() {
        return Err(Error::Config("at least one source is required".into()));
    }
    let n_r = geom.n_elements();
    if let Some(&bad) = source_ids.iter().find(|&&s| s >= n_r) {
        return Err(Error::Config(format!("source id {bad} out of range for {n_r} elements")));
    }
    let n_s = source_ids.len();
    let n_pixels = grid.n_pixels();
    let speed = medium.speed();

    // one-way times pixel -> element; the two-way time is their sum, which is
    // exactly the same arithmetic as `travel_time`
    let mut one_way = vec![0.0; n_pixels * n_r];
    for ix in 0..grid.n_x {
        for iz in 0..grid.n_z {
            let i = grid.flat(ix, iz);
            let p = grid.pixel_center(ix, iz);
            for (e, r) in geom.positions().iter().enumerate() {
                one_way[i * n_r + e] = r.distance(p) / speed;
            }
        }
    }

    let len = n_pixels * n_s * n_r;
    let mut indices = vec![OUT_OF_RECORD; len];
    let mut weights = match mode {
        InterpMode::Nearest => None,
        InterpMode::Linear => Some(vec![0.0; len]),
    };
    for i in 0..n_pixels {
        let times = &one_way[i * n_r..(i + 1) * n_r];
        for (m, &src) in source_ids.iter().enumerate() {
            for l in 0..n_r {
                let t = times[src] + times[l];
                let k = i * n_s * n_r + m * n_r + l;
                match mode {
                    InterpMode::Nearest => {
                        if let Some(idx) = time_to_index(t, fs, n_t) {
                            indices[k] = idx as u32;
                        }
                    }
                    InterpMode::Linear => {
                        if let Some((idx, w)) = time_to_fractional_index(t, fs, n_t) {
                            indices[k] = idx as u32;
                            weights.as_mut().unwrap()[k] = w;
                        }
                    }
                }
            }
        }
    }

    Ok(IndexTable {
        mode,
        grid: *grid,
        n_t,
        n_r,
        fs,
        source_ids: source_ids.to_vec(),
        indices,
        weights,
        fingerprint: fingerprint(geom, grid, medium, fs, n_t, source_ids, mode),
    })
}

/// Stable digest of everything an index table depends on.
pub fn fingerprint(
    geom: &ArrayGeometry,
    grid: &ImageGrid,
    medium: &MediumModel,
    fs: f64,
    n_t: usize,
    source_ids: &[usize],
    mode: InterpMode,
) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"dasnet-index-table-v1");
    h.update([match mode {
        InterpMode::Nearest => 0u8,
        InterpMode::Linear => 1u8,
    }]);
    h.update((geom.n_elements() as u64).to_le_bytes());
    for p in geom.positions() {
        h.update(p.x.to_bits().to_le_bytes());
        h.update(p.z.to_bits().to_le_bytes());
    }
    for v in [grid.n_x as u64, grid.n_z as u64] {
        h.update(v.to_le_bytes());
    }
    for v in [grid.origin.x, grid.origin.z, grid.dx, grid.dz, medium.speed(), fs] {
        h.update(v.to_bits().to_le_bytes());
    }
    h.update((n_t as u64).to_le_bytes());
    h.update((source_ids.len() as u64).to_le_bytes());
    for &s in source_ids {
        h.update((s as u64).to_le_bytes());
    }
    h.finalize().into()
}

impl IndexTable {
    /// Reassembles a table from stored entries; the caller vouches that the
    /// entries were built for the configuration that produced `fingerprint`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        mode: InterpMode,
        grid: ImageGrid,
        n_t: usize,
        n_r: usize,
        fs: f64,
        source_ids: Vec<usize>,
        indices: Vec<u32>,
        weights: Option<Vec<f64>>,
        fingerprint: [u8; 32],
    ) -> Result<Self> {
        let len = grid.n_pixels() * source_ids.len() * n_r;
        if indices.len() != len || weights.as_ref().is_some_and(|w| w.len() != len) {
            return Err(Error::Shape(format!("index table needs {len} entries")));
        }
        if weights.is_some() != (mode == InterpMode::Linear) {
            return Err(Error::Config("interpolation weights do not match table mode".into()));
        }
        let limit = match mode {
            InterpMode::Nearest => n_t,
            InterpMode::Linear => n_t.saturating_sub(1),
        };
        if indices.iter().any(|&k| k != OUT_OF_RECORD && k as usize >= limit) {
            return Err(Error::Data("index table entry outside the record".into()));
        }
        Ok(Self { mode, grid, n_t, n_r, fs, source_ids, indices, weights, fingerprint })
    }

    pub fn mode(&self) -> InterpMode {
        self.mode
    }

    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_s(&self) -> usize {
        self.source_ids.len()
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn n_pixels(&self) -> usize {
        self.grid.n_pixels()
    }

    pub fn sampling_frequency(&self) -> f64 {
        self.fs
    }

    pub fn source_ids(&self) -> &[usize] {
        &self.source_ids
    }

    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }

    pub fn fingerprint_hex(&self) -> String {
        self.fingerprint.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Raw `[pixel][source][receiver]` entries, [`OUT_OF_RECORD`] for misses.
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Entry for pixel `i`, source slot `m`, receiver `l`.
    pub fn index(&self, i: usize, m: usize, l: usize) -> Option<usize> {
        let k = self.indices[(i * self.n_s() + m) * self.n_r + l];
        (k != OUT_OF_RECORD).then_some(k as usize)
    }

    /// Number of samples in a data volume this table applies to.
    pub fn data_len(&self) -> usize {
        self.n_t * self.n_s() * self.n_r
    }

    pub(crate) fn check_data(&self, f: &FmcData) -> Result<()> {
        if f.dims() != [self.n_t, self.n_s(), self.n_r] {
            return Err(Error::Config(format!(
                "data volume {:?} does not match index table {:?}",
                f.dims(),
                [self.n_t, self.n_s(), self.n_r]
            )));
        }
        if f.sampling_frequency() != self.fs {
            return Err(Error::Config(format!(
                "data sampled at {} Hz but table built for {} Hz",
                f.sampling_frequency(),
                self.fs
            )));
        }
        if f.source_ids() != self.source_ids.as_slice() {
            return Err(Error::Config("data source ids do not match index table".into()));
        }
        Ok(())
    }

    pub(crate) fn check_image(&self, u: &Image) -> Result<()> {
        if u.grid() != &self.grid {
            return Err(Error::Config("image grid does not match index table".into()));
        }
        Ok(())
    }

    fn zero_data(&self) -> FmcData {
        FmcData::from_samples(
            self.n_t,
            self.n_r,
            self.fs,
            self.source_ids.clone(),
            vec![0.0; self.data_len()],
        )
        .expect("table dimensions were validated at construction")
    }

    #[inline]
    fn pixel_value(&self, i: usize, f: &[f64]) -> f64 {
        let n_s = self.n_s();
        let n_r = self.n_r;
        let row = i * n_s * n_r;
        let mut acc = 0.0;
        match &self.weights {
            None => {
                for m in 0..n_s {
                    let idx = &self.indices[row + m * n_r..row + (m + 1) * n_r];
                    for (l, &k) in idx.iter().enumerate() {
                        if k != OUT_OF_RECORD {
                            acc += f[(k as usize * n_s + m) * n_r + l];
                        }
                    }
                }
            }
            Some(w) => {
                for m in 0..n_s {
                    for l in 0..n_r {
                        let e = row + m * n_r + l;
                        let k = self.indices[e];
                        if k != OUT_OF_RECORD {
                            let lo = (k as usize * n_s + m) * n_r + l;
                            let hi = lo + n_s * n_r;
                            acc += (1.0 - w[e]) * f[lo] + w[e] * f[hi];
                        }
                    }
                }
            }
        }
        acc
    }

    /// Forward kernel on raw buffers, single-threaded reference order.
    pub fn forward_into(&self, f: &[f64], u: &mut [f64]) {
        assert_eq!(f.len(), self.data_len());
        assert_eq!(u.len(), self.n_pixels());
        for (i, out) in u.iter_mut().enumerate() {
            *out = self.pixel_value(i, f);
        }
    }

    /// Forward kernel parallel over pixels on the current rayon pool.
    pub fn forward_into_par(&self, f: &[f64], u: &mut [f64]) {
        assert_eq!(f.len(), self.data_len());
        assert_eq!(u.len(), self.n_pixels());
        u.par_iter_mut()
            .enumerate()
            .for_each(|(i, out)| *out = self.pixel_value(i, f));
    }

    /// Accumulates the adjoint of source slot `m` into `trace[t][l]`.
    fn adjoint_source(&self, m: usize, u: &[f64], trace: &mut [f64]) {
        let n_s = self.n_s();
        let n_r = self.n_r;
        for l in 0..n_r {
            for (i, &ui) in u.iter().enumerate() {
                let e = (i * n_s + m) * n_r + l;
                let k = self.indices[e];
                if k == OUT_OF_RECORD {
                    continue;
                }
                let k = k as usize;
                match &self.weights {
                    None => trace[k * n_r + l] += ui,
                    Some(w) => {
                        trace[k * n_r + l] += (1.0 - w[e]) * ui;
                        trace[(k + 1) * n_r + l] += w[e] * ui;
                    }
                }
            }
        }
    }

    fn scatter_source(&self, m: usize, trace: &[f64], g: &mut [f64]) {
        let n_s = self.n_s();
        let n_r = self.n_r;
        for t in 0..self.n_t {
            let dst = (t * n_s + m) * n_r;
            g[dst..dst + n_r].copy_from_slice(&trace[t * n_r..(t + 1) * n_r]);
        }
    }

    /// Adjoint kernel on raw buffers, single-threaded reference order.
    pub fn adjoint_into(&self, u: &[f64], g: &mut [f64]) {
        assert_eq!(u.len(), self.n_pixels());
        assert_eq!(g.len(), self.data_len());
        let mut trace = vec![0.0; self.n_t * self.n_r];
        for m in 0..self.n_s() {
            trace.fill(0.0);
            self.adjoint_source(m, u, &mut trace);
            self.scatter_source(m, &trace, g);
        }
    }

    /// Adjoint kernel parallel over source slots on the current rayon pool.
    pub fn adjoint_into_par(&self, u: &[f64], g: &mut [f64]) {
        assert_eq!(u.len(), self.n_pixels());
        assert_eq!(g.len(), self.data_len());
        let traces: Vec<Vec<f64>> = (0..self.n_s())
            .into_par_iter()
            .map(|m| {
                let mut trace = vec![0.0; self.n_t * self.n_r];
                self.adjoint_source(m, u, &mut trace);
                trace
            })
            .collect();
        for (m, trace) in traces.iter().enumerate() {
            self.scatter_source(m, trace, g);
        }
    }
}

/// Delay-and-sum image of `f` (reference, single-threaded).
pub fn das_forward(f: &FmcData, table: &IndexTable) -> Result<Image> {
    table.check_data(f)?;
    let mut u = Image::zeros(table.grid);
    table.forward_into(f.samples(), u.pixels_mut());
    Ok(u)
}

/// Delay-and-sum image computed on the current rayon pool; bit-identical to
/// [`das_forward`].
pub fn das_forward_par(f: &FmcData, table: &IndexTable) -> Result<Image> {
    table.check_data(f)?;
    let mut u = Image::zeros(table.grid);
    table.forward_into_par(f.samples(), u.pixels_mut());
    Ok(u)
}

/// Transpose of [`das_forward`]: spreads each pixel back onto the samples it
/// was summed from.
pub fn das_adjoint(u: &Image, table: &IndexTable) -> Result<FmcData> {
    table.check_image(u)?;
    let mut g = table.zero_data();
    table.adjoint_into(u.pixels(), g.samples_mut());
    Ok(g)
}

pub fn das_adjoint_par(u: &Image, table: &IndexTable) -> Result<FmcData> {
    table.check_image(u)?;
    let mut g = table.zero_data();
    table.adjoint_into_par(u.pixels(), g.samples_mut());
    Ok(g)
}

/// Applies [`das_forward`] to each volume with one shared table.
pub fn das_apply_batched(batch: &[FmcData], table: &IndexTable) -> Result<Vec<Image>> {
    batch.iter().map(|f| das_forward(f, table)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{travel_time, Point2};

    fn setup(mode: InterpMode) -> (ArrayGeometry, ImageGrid, MediumModel, IndexTable) {
        let geom = ArrayGeometry::uniform(4, 1e-3, 0.0).unwrap();
        let grid = ImageGrid::centered(4, 5, 0.7e-3, 0.8e-3, 2e-3).unwrap();
        let medium = MediumModel::new(1500.0).unwrap();
        let table = build_index_table(&geom, &grid, &medium, 4e6, 24, mode).unwrap();
        (geom, grid, medium, table)
    }

    #[test]
    fn pixel_on_element_maps_to_sample_zero() {
        let geom =
            ArrayGeometry::new(vec![Point2::new(0.0, 0.0), Point2::new(1e-3, 0.0)]).unwrap();
        let grid = ImageGrid::new(1, 1, Point2::new(0.0, 0.0), 1e-3, 1e-3).unwrap();
        let medium = MediumModel::new(5920.0).unwrap();
        let table = build_index_table_for_sources(
            &geom, &grid, &medium, 50e6, 100, &[0], InterpMode::Nearest,
        )
        .unwrap();
        assert_eq!(table.index(0, 0, 0), Some(0));
    }

    #[test]
    fn table_entries_match_direct_recomputation() {
        let (geom, grid, medium, table) = setup(InterpMode::Nearest);
        for ix in 0..grid.n_x {
            for iz in 0..grid.n_z {
                let p = grid.pixel_center(ix, iz);
                let i = grid.flat(ix, iz);
                for m in 0..4 {
                    for l in 0..4 {
                        let t = travel_time(p, geom.position(m), geom.position(l), medium.speed())
                            .unwrap();
                        assert_eq!(table.index(i, m, l), time_to_index(t, 4e6, 24));
                    }
                }
            }
        }
    }

    #[test]
    fn symmetric_grid_gives_mirrored_table() {
        let geom = ArrayGeometry::uniform(4, 1e-3, 0.0).unwrap();
        let grid = ImageGrid::centered(2, 2, 1e-3, 1e-3, 3e-3).unwrap();
        let medium = MediumModel::new(1500.0).unwrap();
        let table =
            build_index_table(&geom, &grid, &medium, 20e6, 200, InterpMode::Nearest).unwrap();
        let n = geom.n_elements();
        for iz in 0..2 {
            let a = grid.flat(0, iz);
            let b = grid.flat(1, iz);
            for m in 0..n {
                for l in 0..n {
                    assert_eq!(table.index(a, m, l), table.index(b, n - 1 - l, n - 1 - m));
                    assert_eq!(table.index(a, m, l), table.index(a, l, m));
                }
            }
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let (_, grid, _, table) = setup(InterpMode::Nearest);
        let f = FmcData::zeros(24, 4, 4e6).unwrap();
        assert!(das_forward(&f, &table).unwrap().pixels().iter().all(|&v| v == 0.0));
        let u = Image::zeros(grid);
        assert!(das_adjoint(&u, &table).unwrap().samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_impulse_forward_and_adjoint() {
        let (_, grid, _, table) = setup(InterpMode::Nearest);
        let mut f = FmcData::zeros(24, 4, 4e6).unwrap();
        let (k, m, l) = (table.index(7, 1, 2).unwrap(), 1, 2);
        let off = f.offset(k, m, l);
        f.samples_mut()[off] = 1.0;
        let u = das_forward(&f, &table).unwrap();
        for i in 0..grid.n_pixels() {
            let expected = if table.index(i, m, l) == Some(k) { 1.0 } else { 0.0 };
            assert_eq!(u.pixels()[i], expected);
        }

        let mut img = Image::zeros(grid);
        img.pixels_mut()[7] = 1.0;
        let g = das_adjoint(&img, &table).unwrap();
        let mut hits = 0;
        for t in 0..24 {
            for m in 0..4 {
                for l in 0..4 {
                    let expected = if table.index(7, m, l) == Some(t) { 1.0 } else { 0.0 };
                    assert_eq!(g.get(t, m, l), expected);
                    hits += expected as usize;
                }
            }
        }
        assert_eq!(hits, (0..16).filter(|&e| table.index(7, e / 4, e % 4).is_some()).count());
    }

    #[test]
    fn mismatched_data_is_rejected() {
        let (_, grid, _, table) = setup(InterpMode::Nearest);
        let f = FmcData::zeros(23, 4, 4e6).unwrap();
        assert!(matches!(das_forward(&f, &table), Err(Error::Config(_))));
        let f = FmcData::zeros(24, 4, 5e6).unwrap();
        assert!(matches!(das_forward(&f, &table), Err(Error::Config(_))));
        let other = ImageGrid::centered(3, 3, 1e-3, 1e-3, 0.0).unwrap();
        assert_ne!(other, grid);
        assert!(das_adjoint(&Image::zeros(other), &table).is_err());
    }

    #[test]
    fn batched_edge_cases() {
        let (_, _, _, table) = setup(InterpMode::Nearest);
        assert!(das_apply_batched(&[], &table).unwrap().is_empty());
        let mut f = FmcData::zeros(24, 4, 4e6).unwrap();
        f.samples_mut().iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64).sin());
        let out = das_apply_batched(std::slice::from_ref(&f), &table).unwrap();
        assert_eq!(out, vec![das_forward(&f, &table).unwrap()]);
    }

    #[test]
    fn linear_mode_adjoint_uses_same_weights() {
        let (_, grid, _, table) = setup(InterpMode::Linear);
        let mut f = FmcData::zeros(24, 4, 4e6).unwrap();
        f.samples_mut().iter_mut().enumerate().for_each(|(i, v)| *v = (0.37 * i as f64).cos());
        let mut u = Image::zeros(grid);
        u.pixels_mut().iter_mut().enumerate().for_each(|(i, v)| *v = (1.3 * i as f64).sin());
        let bf = das_forward(&f, &table).unwrap();
        let btu = das_adjoint(&u, &table).unwrap();
        let lhs: f64 = bf.pixels().iter().zip(u.pixels()).map(|(a, b)| a * b).sum();
        let rhs: f64 = f.samples().iter().zip(btu.samples()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn parallel_paths_are_bit_identical() {
        for mode in [InterpMode::Nearest, InterpMode::Linear] {
            let (_, grid, _, table) = setup(mode);
            let mut f = FmcData::zeros(24, 4, 4e6).unwrap();
            f.samples_mut().iter_mut().enumerate().for_each(|(i, v)| *v = (0.1 * i as f64).sin());
            let mut u = Image::zeros(grid);
            u.pixels_mut().iter_mut().enumerate().for_each(|(i, v)| *v = (0.7 * i as f64).cos());
            assert_eq!(das_forward(&f, &table).unwrap(), das_forward_par(&f, &table).unwrap());
            assert_eq!(das_adjoint(&u, &table).unwrap(), das_adjoint_par(&u, &table).unwrap());
        }
    }
}
