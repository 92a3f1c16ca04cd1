//! Two-material phantoms: a steel background with an air back-wall band and
//! randomly placed air defects, plus their point-scatterer decomposition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ImageGrid, Point2};

/// Default background (carbon steel) speed of sound.
pub const STEEL_SPEED_MPS: f64 = 5920.0;
/// Default defect and wall (air) speed of sound.
pub const AIR_SPEED_MPS: f64 = 343.0;

/// Per-pixel class ids, `[n_x][n_z]` row-major; 0 is background, 1 the
/// second material.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    n_x: usize,
    n_z: usize,
    classes: Vec<u8>,
}

impl SegmentationMap {
    pub fn zeros(n_x: usize, n_z: usize) -> Self {
        Self { n_x, n_z, classes: vec![0; n_x * n_z] }
    }

    pub fn from_vec(n_x: usize, n_z: usize, classes: Vec<u8>) -> Result<Self> {
        if classes.len() != n_x * n_z {
            return Err(Error::Shape(format!(
                "{} class ids for a {n_x}x{n_z} map",
                classes.len()
            )));
        }
        if let Some(bad) = classes.iter().find(|&&c| c > 1) {
            return Err(Error::Data(format!("class id {bad} outside {{0,1}}")));
        }
        Ok(Self { n_x, n_z, classes })
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn get(&self, ix: usize, iz: usize) -> u8 {
        self.classes[ix * self.n_z + iz]
    }

    pub fn set(&mut self, ix: usize, iz: usize, class: u8) {
        self.classes[ix * self.n_z + iz] = class;
    }

    pub fn matches_grid(&self, grid: &ImageGrid) -> bool {
        self.n_x == grid.n_x && self.n_z == grid.n_z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DefectShape {
    Disk { radius: f64 },
    Rect { half_width: f64, half_height: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Defect {
    pub center: Point2,
    pub shape: DefectShape,
}

impl Defect {
    pub fn contains(&self, p: Point2) -> bool {
        let dx = p.x - self.center.x;
        let dz = p.z - self.center.z;
        match self.shape {
            DefectShape::Disk { radius } => dx * dx + dz * dz <= radius * radius,
            DefectShape::Rect { half_width, half_height } => {
                dx.abs() <= half_width && dz.abs() <= half_height
            }
        }
    }

    /// Radius of the smallest centred disk covering the defect.
    pub fn extent(&self) -> f64 {
        match self.shape {
            DefectShape::Disk { radius } => radius,
            DefectShape::Rect { half_width, half_height } => half_width.hypot(half_height),
        }
    }
}

/// Horizontal band of class 1 covering rows `start_row .. start_row + rows`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WallBand {
    pub start_row: usize,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    /// Inclusive range of defect counts.
    pub defect_count: (usize, usize),
    /// Inclusive range of defect radii (meters).
    pub radius_range: (f64, f64),
    /// Lateral band for defect centres, as fractions of the grid width.
    pub band_x: (f64, f64),
    /// Depth band for defect centres, as fractions of the grid height.
    pub band_z: (f64, f64),
    pub wall: Option<WallBand>,
    /// Chance of a square defect instead of a disk.
    pub rect_probability: f64,
    pub material_speeds: (f64, f64),
    pub max_retries: usize,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            defect_count: (1, 3),
            radius_range: (0.5e-3, 1.25e-3),
            band_x: (0.25, 0.75),
            band_z: (0.3, 0.7),
            wall: None,
            rect_probability: 0.0,
            material_speeds: (STEEL_SPEED_MPS, AIR_SPEED_MPS),
            max_retries: 1000,
        }
    }
}

/// Ground-truth material map together with the shapes that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub grid: ImageGrid,
    pub class_map: SegmentationMap,
    pub material_speeds: (f64, f64),
    pub defects: Vec<Defect>,
    pub wall: Option<WallBand>,
}

impl Phantom {
    /// Rasterises a wall band and defects onto `grid`.
    pub fn from_shapes(
        grid: ImageGrid,
        material_speeds: (f64, f64),
        defects: Vec<Defect>,
        wall: Option<WallBand>,
    ) -> Result<Self> {
        for d in &defects {
            if grid.nearest_pixel(d.center).is_none() {
                return Err(Error::Config(format!(
                    "defect centre ({}, {}) outside the grid",
                    d.center.x, d.center.z
                )));
            }
        }
        let class_map = rasterize(&grid, &defects, wall);
        Ok(Self { grid, class_map, material_speeds, defects, wall })
    }

    /// Speed-of-sound map implied by the class map.
    pub fn speed_map(&self) -> Vec<f64> {
        let (s0, s1) = self.material_speeds;
        self.class_map
            .classes()
            .iter()
            .map(|&c| if c == 0 { s0 } else { s1 })
            .collect()
    }
}

pub fn rasterize(grid: &ImageGrid, defects: &[Defect], wall: Option<WallBand>) -> SegmentationMap {
    let mut map = SegmentationMap::zeros(grid.n_x, grid.n_z);
    for ix in 0..grid.n_x {
        for iz in 0..grid.n_z {
            let in_wall = wall.is_some_and(|w| iz >= w.start_row && iz < w.start_row + w.rows);
            let p = grid.pixel_center(ix, iz);
            if in_wall || defects.iter().any(|d| d.contains(p)) {
                map.set(ix, iz, 1);
            }
        }
    }
    map
}

fn band_indices(n: usize, band: (f64, f64)) -> Result<(usize, usize)> {
    let span = (n - 1) as f64;
    let lo = (band.0 * span).ceil().max(0.0) as usize;
    let hi = ((band.1 * span).floor() as usize).min(n - 1);
    if !(band.0 <= band.1) || lo > hi {
        return Err(Error::Config(format!("placement band {band:?} contains no pixel")));
    }
    Ok((lo, hi))
}

/// Draws a random phantom; defect centres snap to pixel centres inside the
/// configured central band, and defects keep at least one pixel of clearance
/// from each other and from the wall band.
pub fn generate_phantom(grid: &ImageGrid, seed: u64, config: &PhantomConfig) -> Result<Phantom> {
    let (n_min, n_max) = config.defect_count;
    let (r_min, r_max) = config.radius_range;
    if n_min > n_max {
        return Err(Error::Config(format!("empty defect count range {n_min}..={n_max}")));
    }
    if !(r_min >= 0.0 && r_min <= r_max) {
        return Err(Error::Config(format!("invalid radius range {r_min}..={r_max}")));
    }
    if let Some(w) = config.wall {
        if w.start_row + w.rows > grid.n_z {
            return Err(Error::Config("wall band extends below the grid".into()));
        }
    }
    let (x_lo, x_hi) = band_indices(grid.n_x, config.band_x)?;
    let (z_lo, z_hi) = band_indices(grid.n_z, config.band_z)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(n_min..=n_max);
    let gap = grid.dx.max(grid.dz);
    let wall_top = config.wall.map(|w| grid.origin.z + w.start_row as f64 * grid.dz);

    let mut defects: Vec<Defect> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..config.max_retries.max(1) {
            let ix = rng.random_range(x_lo..=x_hi);
            let iz = rng.random_range(z_lo..=z_hi);
            let radius = if r_min == r_max { r_min } else { rng.random_range(r_min..=r_max) };
            let shape = if rng.random_bool(config.rect_probability.clamp(0.0, 1.0)) {
                DefectShape::Rect { half_width: radius, half_height: radius }
            } else {
                DefectShape::Disk { radius }
            };
            let candidate = Defect { center: grid.pixel_center(ix, iz), shape };
            let clear_of_wall = wall_top
                .is_none_or(|top| candidate.center.z + candidate.extent() + gap < top);
            let clear_of_others = defects.iter().all(|d| {
                d.center.distance(candidate.center) > d.extent() + candidate.extent() + gap
            });
            if clear_of_wall && clear_of_others {
                defects.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place defect {} of {count} after {} attempts",
                defects.len() + 1,
                config.max_retries
            )));
        }
    }
    Phantom::from_shapes(*grid, config.material_speeds, defects, config.wall)
}

/// Point reflector used by the forward simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    pub position: Point2,
    pub reflectivity: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScattererSet {
    pub scatterers: Vec<Scatterer>,
}

impl ScattererSet {
    pub fn len(&self) -> usize {
        self.scatterers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scatterers.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            scatterers: self
                .scatterers
                .iter()
                .map(|s| Scatterer { position: s.position, reflectivity: s.reflectivity * factor })
                .collect(),
        }
    }
}

/// Pressure reflection coefficient between the two materials, using speed
/// as the impedance proxy.
pub fn reflectivity(background_speed: f64, other_speed: f64) -> f64 {
    (other_speed - background_speed) / (other_speed + background_speed)
}

/// One scatterer at the centre of every background pixel that has a class-1
/// pixel among its four neighbours, i.e. on the background side of each
/// material interface. Emission order is row-major over the grid.
pub fn phantom_to_scatterers(ph: &Phantom) -> ScattererSet {
    let map = &ph.class_map;
    let r = reflectivity(ph.material_speeds.0, ph.material_speeds.1);
    let (n_x, n_z) = (map.n_x(), map.n_z());
    let mut scatterers = Vec::new();
    for ix in 0..n_x {
        for iz in 0..n_z {
            if map.get(ix, iz) != 0 {
                continue;
            }
            let touches = (ix > 0 && map.get(ix - 1, iz) == 1)
                || (ix + 1 < n_x && map.get(ix + 1, iz) == 1)
                || (iz > 0 && map.get(ix, iz - 1) == 1)
                || (iz + 1 < n_z && map.get(ix, iz + 1) == 1);
            if touches {
                scatterers.push(Scatterer { position: ph.grid.pixel_center(ix, iz), reflectivity: r });
            }
        }
    }
    ScattererSet { scatterers }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> ImageGrid {
        ImageGrid::centered(24, 40, 0.5e-3, 0.5e-3, 4e-3).unwrap()
    }

    #[test]
    fn no_defects_leaves_only_the_wall() {
        let cfg = PhantomConfig {
            defect_count: (0, 0),
            wall: Some(WallBand { start_row: 36, rows: 4 }),
            ..Default::default()
        };
        let ph = generate_phantom(&grid(), 3, &cfg).unwrap();
        assert!(ph.defects.is_empty());
        for ix in 0..24 {
            for iz in 0..40 {
                assert_eq!(ph.class_map.get(ix, iz), u8::from(iz >= 36));
            }
        }
    }

    #[test]
    fn same_seed_same_phantom() {
        let cfg = PhantomConfig::default();
        assert_eq!(
            generate_phantom(&grid(), 42, &cfg).unwrap(),
            generate_phantom(&grid(), 42, &cfg).unwrap()
        );
    }

    #[test]
    fn defects_rasterize_to_the_class_map() {
        let cfg = PhantomConfig { rect_probability: 0.5, ..Default::default() };
        for seed in 0..20 {
            let ph = generate_phantom(&grid(), seed, &cfg).unwrap();
            assert_eq!(rasterize(&ph.grid, &ph.defects, ph.wall), ph.class_map);
            for d in &ph.defects {
                let (ix, iz) = ph.grid.nearest_pixel(d.center).unwrap();
                assert_eq!(ph.class_map.get(ix, iz), 1);
            }
        }
    }

    #[test]
    fn impossible_placement_is_reported() {
        let cfg = PhantomConfig {
            defect_count: (5, 5),
            radius_range: (3e-3, 3e-3),
            max_retries: 50,
            ..Default::default()
        };
        assert!(matches!(generate_phantom(&grid(), 1, &cfg), Err(Error::Generation(_))));
        let bad = PhantomConfig { band_x: (0.6, 0.4), ..Default::default() };
        assert!(matches!(generate_phantom(&grid(), 1, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn uniform_phantom_has_no_scatterers() {
        let ph = Phantom::from_shapes(grid(), (STEEL_SPEED_MPS, AIR_SPEED_MPS), vec![], None)
            .unwrap();
        assert!(phantom_to_scatterers(&ph).is_empty());
    }

    #[test]
    fn single_pixel_defect_has_four_neighbour_scatterers() {
        let g = grid();
        let center = g.pixel_center(10, 20);
        let ph = Phantom::from_shapes(
            g,
            (STEEL_SPEED_MPS, AIR_SPEED_MPS),
            vec![Defect { center, shape: DefectShape::Disk { radius: 0.0 } }],
            None,
        )
        .unwrap();
        assert_eq!(ph.class_map.classes().iter().filter(|&&c| c == 1).count(), 1);
        let sc = phantom_to_scatterers(&ph);
        let mut got: Vec<(usize, usize)> =
            sc.scatterers.iter().map(|s| g.nearest_pixel(s.position).unwrap()).collect();
        got.sort();
        assert_eq!(got, vec![(9, 20), (10, 19), (10, 21), (11, 20)]);
        let r = reflectivity(STEEL_SPEED_MPS, AIR_SPEED_MPS);
        assert!(sc.scatterers.iter().all(|s| s.reflectivity == r));
        assert!(r < 0.0);
    }
}
