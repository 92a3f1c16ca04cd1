//! Acquisition geometry, data volumes and image lattices.
//!
//! Coordinates are meters with `x` lateral and `z` depth, times are seconds
//! and frequencies hertz. Unit conversions only happen at the CLI boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the imaging plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub z: f64,
}

impl Point2 {
    pub const fn new(x: f64, z: f64) -> Self {
        Self { x, z }
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.z - other.z)
    }
}

/// Element positions of a linear transducer array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    positions: Vec<Point2>,
}

impl ArrayGeometry {
    /// Builds a geometry from explicit element positions.
    ///
    /// Elements must share one depth and be strictly increasing laterally.
    pub fn new(positions: Vec<Point2>) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::Config(format!(
                "a linear array needs at least 2 elements, got {}",
                positions.len()
            )));
        }
        let depth = positions[0].z;
        if positions.iter().any(|p| !p.x.is_finite() || !p.z.is_finite()) {
            return Err(Error::Config("element positions must be finite".into()));
        }
        if positions.iter().any(|p| p.z != depth) {
            return Err(Error::Config(
                "all elements of a linear array must share the same depth".into(),
            ));
        }
        if positions.windows(2).any(|w| w[1].x <= w[0].x) {
            return Err(Error::Config(
                "element positions must be strictly increasing laterally".into(),
            ));
        }
        Ok(Self { positions })
    }

    /// Uniform linear array centred on `x = 0` at depth `depth`.
    pub fn uniform(n_elements: usize, pitch: f64, depth: f64) -> Result<Self> {
        if !(pitch > 0.0) {
            return Err(Error::Config(format!("pitch must be positive, got {pitch}")));
        }
        let half = (n_elements as f64 - 1.0) * pitch / 2.0;
        let positions = (0..n_elements)
            .map(|i| Point2::new(i as f64 * pitch - half, depth))
            .collect();
        Self::new(positions)
    }

    pub fn n_elements(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[Point2] {
        &self.positions
    }

    pub fn position(&self, element: usize) -> Point2 {
        self.positions[element]
    }

    /// Mean spacing between neighbouring elements.
    pub fn pitch(&self) -> f64 {
        let n = self.positions.len();
        (self.positions[n - 1].x - self.positions[0].x) / (n - 1) as f64
    }

    /// Depth shared by all elements.
    pub fn depth(&self) -> f64 {
        self.positions[0].z
    }
}

/// Homogeneous medium used by the travel-time model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MediumModel {
    speed_of_sound_mps: f64,
}

impl MediumModel {
    pub fn new(speed_of_sound_mps: f64) -> Result<Self> {
        if !(speed_of_sound_mps > 0.0) || !speed_of_sound_mps.is_finite() {
            return Err(Error::Domain(format!(
                "speed of sound must be positive and finite, got {speed_of_sound_mps}"
            )));
        }
        Ok(Self { speed_of_sound_mps })
    }

    pub fn speed(&self) -> f64 {
        self.speed_of_sound_mps
    }
}

/// Regular pixel lattice; pixel `(ix, iz)` is centred at
/// `origin + (ix * dx, iz * dz)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub n_x: usize,
    pub n_z: usize,
    pub origin: Point2,
    pub dx: f64,
    pub dz: f64,
}

impl ImageGrid {
    pub fn new(n_x: usize, n_z: usize, origin: Point2, dx: f64, dz: f64) -> Result<Self> {
        if n_x == 0 || n_z == 0 {
            return Err(Error::Config(format!("empty image grid {n_x}x{n_z}")));
        }
        if !(dx > 0.0 && dz > 0.0) {
            return Err(Error::Config(format!(
                "pixel pitch must be positive, got dx={dx}, dz={dz}"
            )));
        }
        Ok(Self { n_x, n_z, origin, dx, dz })
    }

    /// Grid laterally centred on `x = 0`, starting at depth `z0`.
    pub fn centered(n_x: usize, n_z: usize, dx: f64, dz: f64, z0: f64) -> Result<Self> {
        let x0 = -(n_x as f64 - 1.0) * dx / 2.0;
        Self::new(n_x, n_z, Point2::new(x0, z0), dx, dz)
    }

    pub fn n_pixels(&self) -> usize {
        self.n_x * self.n_z
    }

    /// Flat pixel index; images are stored `[n_x][n_z]` row-major.
    pub fn flat(&self, ix: usize, iz: usize) -> usize {
        ix * self.n_z + iz
    }

    pub fn unflat(&self, i: usize) -> (usize, usize) {
        (i / self.n_z, i % self.n_z)
    }

    pub fn pixel_center(&self, ix: usize, iz: usize) -> Point2 {
        Point2::new(
            self.origin.x + ix as f64 * self.dx,
            self.origin.z + iz as f64 * self.dz,
        )
    }

    /// Nearest pixel to a point, if the point lies within half a pixel of the grid.
    pub fn nearest_pixel(&self, p: Point2) -> Option<(usize, usize)> {
        let fx = ((p.x - self.origin.x) / self.dx).round();
        let fz = ((p.z - self.origin.z) / self.dz).round();
        if fx < 0.0 || fz < 0.0 || fx >= self.n_x as f64 || fz >= self.n_z as f64 {
            return None;
        }
        Some((fx as usize, fz as usize))
    }
}

/// A real-valued image on an [`ImageGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    grid: ImageGrid,
    pixels: Vec<f64>,
}

impl Image {
    pub fn zeros(grid: ImageGrid) -> Self {
        Self { grid, pixels: vec![0.0; grid.n_pixels()] }
    }

    pub fn from_vec(grid: ImageGrid, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != grid.n_pixels() {
            return Err(Error::Shape(format!(
                "image has {} pixels but grid {}x{} needs {}",
                pixels.len(),
                grid.n_x,
                grid.n_z,
                grid.n_pixels()
            )));
        }
        Ok(Self { grid, pixels })
    }

    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, ix: usize, iz: usize) -> f64 {
        self.pixels[self.grid.flat(ix, iz)]
    }

    /// Pixel holding the largest value; ties resolve to the lowest flat index.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.pixels.iter().enumerate() {
            if v > self.pixels[best] {
                best = i;
            }
        }
        self.grid.unflat(best)
    }
}

/// Full-matrix-capture data volume `[n_t][n_s][n_r]`, row-major.
///
/// Source slots map to array elements through `source_ids`. Inactive slots
/// (after undersampling) hold all-zero traces.
#[derive(Debug, Clone, PartialEq)]
pub struct FmcData {
    n_t: usize,
    n_s: usize,
    n_r: usize,
    sampling_frequency_hz: f64,
    source_ids: Vec<usize>,
    active_sources: Vec<bool>,
    samples: Vec<f64>,
}

impl FmcData {
    /// Zero volume where every element fires once, in element order.
    pub fn zeros(n_t: usize, n_elements: usize, sampling_frequency_hz: f64) -> Result<Self> {
        Self::from_samples(
            n_t,
            n_elements,
            sampling_frequency_hz,
            (0..n_elements).collect(),
            vec![0.0; n_t * n_elements * n_elements],
        )
    }

    /// Full-matrix volume from raw samples, all sources active.
    pub fn from_samples(
        n_t: usize,
        n_r: usize,
        sampling_frequency_hz: f64,
        source_ids: Vec<usize>,
        samples: Vec<f64>,
    ) -> Result<Self> {
        let n_s = source_ids.len();
        let active = vec![true; n_s];
        Self::with_mask(n_t, n_r, sampling_frequency_hz, source_ids, active, samples)
    }

    pub fn with_mask(
        n_t: usize,
        n_r: usize,
        sampling_frequency_hz: f64,
        source_ids: Vec<usize>,
        active_sources: Vec<bool>,
        samples: Vec<f64>,
    ) -> Result<Self> {
        let n_s = source_ids.len();
        if n_t == 0 || n_s == 0 || n_r == 0 {
            return Err(Error::Config(format!(
                "empty data volume {n_t}x{n_s}x{n_r}"
            )));
        }
        if !(sampling_frequency_hz > 0.0) {
            return Err(Error::Domain(format!(
                "sampling frequency must be positive, got {sampling_frequency_hz}"
            )));
        }
        if let Some(&bad) = source_ids.iter().find(|&&id| id >= n_r) {
            return Err(Error::Config(format!(
                "source id {bad} out of range for {n_r} elements"
            )));
        }
        if active_sources.len() != n_s {
            return Err(Error::Shape(format!(
                "mask has {} entries for {n_s} sources",
                active_sources.len()
            )));
        }
        if samples.len() != n_t * n_s * n_r {
            return Err(Error::Shape(format!(
                "{} samples do not fill a {n_t}x{n_s}x{n_r} volume",
                samples.len()
            )));
        }
        let data = Self {
            n_t,
            n_s,
            n_r,
            sampling_frequency_hz,
            source_ids,
            active_sources,
            samples,
        };
        for m in (0..n_s).filter(|&m| !data.active_sources[m]) {
            if (0..n_t).any(|t| (0..n_r).any(|l| data.get(t, m, l) != 0.0)) {
                return Err(Error::Data(format!(
                    "inactive source slot {m} carries nonzero samples"
                )));
            }
        }
        Ok(data)
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_s(&self) -> usize {
        self.n_s
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.n_t, self.n_s, self.n_r]
    }

    pub fn sampling_frequency(&self) -> f64 {
        self.sampling_frequency_hz
    }

    pub fn source_ids(&self) -> &[usize] {
        &self.source_ids
    }

    pub fn active_sources(&self) -> &[bool] {
        &self.active_sources
    }

    pub fn n_active_sources(&self) -> usize {
        self.active_sources.iter().filter(|&&a| a).count()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Mutable samples. Callers must keep inactive traces at zero.
    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    #[inline]
    pub fn offset(&self, t: usize, m: usize, l: usize) -> usize {
        (t * self.n_s + m) * self.n_r + l
    }

    #[inline]
    pub fn get(&self, t: usize, m: usize, l: usize) -> f64 {
        self.samples[self.offset(t, m, l)]
    }

    /// Same metadata with replaced samples.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::with_mask(
            self.n_t,
            self.n_r,
            self.sampling_frequency_hz,
            self.source_ids.clone(),
            self.active_sources.clone(),
            samples,
        )
    }

    pub(crate) fn set_mask_unchecked(&mut self, active: Vec<bool>) {
        self.active_sources = active;
    }
}

/// Two-way travel time source -> point -> receiver in a homogeneous medium.
pub fn travel_time(p: Point2, source: Point2, receiver: Point2, speed: f64) -> Result<f64> {
    if !(speed > 0.0) {
        return Err(Error::Domain(format!("speed of sound must be positive, got {speed}")));
    }
    Ok(source.distance(p) / speed + receiver.distance(p) / speed)
}

/// Nearest sample index (round half away from zero) for time `t`, or `None`
/// when the sample falls outside `[0, n_t)`.
pub fn time_to_index(t: f64, fs: f64, n_t: usize) -> Option<usize> {
    let k = (t * fs).round();
    if k >= 0.0 && k < n_t as f64 {
        Some(k as usize)
    } else {
        None
    }
}

/// Lower sample index and interpolation weight of the upper sample, or
/// `None` when either neighbour falls outside the record.
pub fn time_to_fractional_index(t: f64, fs: f64, n_t: usize) -> Option<(usize, f64)> {
    let q = t * fs;
    let k = q.floor();
    if k >= 0.0 && k + 1.0 < n_t as f64 {
        Some((k as usize, q - k))
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MM: f64 = 1e-3;

    #[test]
    fn travel_time_on_axis_steel() {
        let p = Point2::new(0.0, 0.0296);
        let r = Point2::new(0.0, 0.0);
        let t = travel_time(p, r, r, 5920.0).unwrap();
        assert!((t - 1.0e-5).abs() < 1e-18);
    }

    #[test]
    fn travel_time_zero_distance() {
        let p = Point2::new(1.0 * MM, 2.0 * MM);
        assert_eq!(travel_time(p, p, p, 1500.0).unwrap(), 0.0);
    }

    #[test]
    fn travel_time_345_triangle() {
        let p = Point2::new(3.0 * MM, 4.0 * MM);
        let t = travel_time(p, Point2::new(0.0, 0.0), Point2::new(6.0 * MM, 0.0), 1000.0).unwrap();
        assert!((t - 1.0e-5).abs() < 1e-18);
    }

    #[test]
    fn travel_time_rejects_bad_speed() {
        let p = Point2::new(0.0, 0.0);
        assert!(matches!(travel_time(p, p, p, 0.0), Err(Error::Domain(_))));
        assert!(matches!(travel_time(p, p, p, -1.0), Err(Error::Domain(_))));
        assert!(MediumModel::new(0.0).is_err());
    }

    #[test]
    fn time_to_index_examples() {
        assert_eq!(time_to_index(1.0e-5, 50e6, 1020), Some(500));
        assert_eq!(time_to_index(0.0, 50e6, 1020), Some(0));
        assert_eq!(time_to_index(2.1e-5, 50e6, 1020), None);
        assert_eq!(time_to_index(-1e-6, 50e6, 1020), None);
        // half away from zero
        assert_eq!(time_to_index(2.5, 1.0, 10), Some(3));
    }

    #[test]
    fn fractional_index_brackets_time() {
        let (k, w) = time_to_fractional_index(10.25, 1.0, 20).unwrap();
        assert_eq!(k, 10);
        assert!((w - 0.25).abs() < 1e-15);
        assert_eq!(time_to_fractional_index(19.5, 1.0, 20), None);
    }

    #[test]
    fn geometry_validation() {
        let g = ArrayGeometry::uniform(4, 1e-3, 0.0).unwrap();
        assert_eq!(g.n_elements(), 4);
        assert!((g.pitch() - 1e-3).abs() < 1e-15);
        assert!((g.position(0).x + 1.5e-3).abs() < 1e-15);
        assert!(ArrayGeometry::uniform(1, 1e-3, 0.0).is_err());
        assert!(ArrayGeometry::new(vec![Point2::new(0.0, 0.0), Point2::new(0.0, 0.0)]).is_err());
        assert!(ArrayGeometry::new(vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.1)]).is_err());
    }

    #[test]
    fn fmc_rejects_inconsistent_volumes() {
        assert!(FmcData::from_samples(2, 2, 1.0, vec![0, 2], vec![0.0; 8]).is_err());
        assert!(FmcData::from_samples(2, 2, 1.0, vec![0, 1], vec![0.0; 7]).is_err());
        let bad_mask =
            FmcData::with_mask(1, 2, 1.0, vec![0, 1], vec![true, false], vec![0.0, 0.0, 1.0, 0.0]);
        assert!(matches!(bad_mask, Err(Error::Data(_))));
    }

    #[test]
    fn grid_pixel_centres() {
        let g = ImageGrid::centered(3, 2, 1.0, 0.5, 2.0).unwrap();
        assert_eq!(g.pixel_center(0, 0), Point2::new(-1.0, 2.0));
        assert_eq!(g.pixel_center(2, 1), Point2::new(1.0, 2.5));
        assert_eq!(g.nearest_pixel(Point2::new(0.9, 2.4)), Some((2, 1)));
        assert_eq!(g.unflat(g.flat(2, 1)), (2, 1));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn pt() -> impl Strategy<Value = Point2> {
            (-0.05f64..0.05, -0.05f64..0.05).prop_map(|(x, z)| Point2::new(x, z))
        }

        proptest! {
            #[test]
            fn travel_time_symmetric(p in pt(), a in pt(), b in pt(), s in 100.0f64..8000.0) {
                prop_assert_eq!(travel_time(p, a, b, s).unwrap(), travel_time(p, b, a, s).unwrap());
            }

            #[test]
            fn travel_time_scales_inversely(p in pt(), a in pt(), b in pt(), s in 100.0f64..8000.0, k in 0.1f64..10.0) {
                let t1 = travel_time(p, a, b, s).unwrap();
                let tk = travel_time(p, a, b, k * s).unwrap();
                prop_assert!((tk - t1 / k).abs() <= 1e-14 * t1.abs().max(1e-30) / k + 1e-300);
            }

            #[test]
            fn time_to_index_monotone(t1 in 0.0f64..1e-4, dt in 0.0f64..1e-5, fs in 1e6f64..1e8) {
                let n = usize::MAX >> 1;
                let a = time_to_index(t1, fs, n).unwrap();
                let b = time_to_index(t1 + dt, fs, n).unwrap();
                prop_assert!(a <= b);
            }
        }
    }
}
