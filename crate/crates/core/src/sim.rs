//! Linear point-scatterer forward model, additive noise and source
//! undersampling.
//!
//! Each scatterer contributes a delayed copy of the transmit pulse to every
//! source/receiver trace:
//!
//! ```text
//! trace(t, m, l) = sum_k r_k / sqrt(d_mk + d_lk) * pulse(t - tau(p_k, r_m, r_l))
//! ```
//!
//! with `d_ek` the element-to-scatterer distance. The model ignores mode
//! conversion, multiple scattering and attenuation.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{time_to_index, ArrayGeometry, FmcData, MediumModel};
use crate::phantom::ScattererSet;

/// Noise standard deviation used when the clean signal has zero energy.
pub const ZERO_SIGNAL_NOISE_STD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseKind {
    /// Gaussian-windowed cosine.
    GaussianSine,
    /// Unit sample at the nearest index to the arrival time.
    Impulse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseModel {
    pub center_frequency_hz: f64,
    /// Full width of the spectrum at half amplitude, relative to the centre frequency.
    pub bandwidth_fraction: f64,
    pub kind: PulseKind,
}

impl PulseModel {
    pub fn gaussian(center_frequency_hz: f64, bandwidth_fraction: f64) -> Result<Self> {
        let p = Self { center_frequency_hz, bandwidth_fraction, kind: PulseKind::GaussianSine };
        p.validate()?;
        Ok(p)
    }

    pub fn impulse() -> Self {
        Self { center_frequency_hz: 1.0, bandwidth_fraction: 1.0, kind: PulseKind::Impulse }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.center_frequency_hz > 0.0 && self.center_frequency_hz.is_finite()) {
            return Err(Error::Domain(format!(
                "pulse centre frequency must be positive, got {}",
                self.center_frequency_hz
            )));
        }
        if !(self.bandwidth_fraction > 0.0 && self.bandwidth_fraction.is_finite()) {
            return Err(Error::Domain(format!(
                "pulse bandwidth fraction must be positive, got {}",
                self.bandwidth_fraction
            )));
        }
        Ok(())
    }

    /// Standard deviation of the Gaussian envelope in seconds.
    pub fn sigma_t(&self) -> f64 {
        let sigma_f =
            self.bandwidth_fraction * self.center_frequency_hz / (2.0 * (2.0 * 2f64.ln()).sqrt());
        1.0 / (2.0 * PI * sigma_f)
    }

    /// Envelope half-width beyond which the pulse is treated as zero.
    pub fn support(&self) -> f64 {
        5.0 * self.sigma_t()
    }

    pub fn eval(&self, t: f64) -> f64 {
        let s = self.sigma_t();
        (-t * t / (2.0 * s * s)).exp() * (2.0 * PI * self.center_frequency_hz * t).cos()
    }
}

/// Options beyond the default deterministic model.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimOptions {
    /// Standard deviation of per-echo arrival jitter in seconds; 0 disables it.
    pub jitter_std_s: f64,
}

/// Simulated data plus non-fatal diagnostics.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: FmcData,
    pub warnings: Vec<String>,
}

pub fn simulate_fmc(
    sc: &ScattererSet,
    geom: &ArrayGeometry,
    medium: &MediumModel,
    pulse: &PulseModel,
    fs: f64,
    n_t: usize,
    seed: u64,
) -> Result<Simulated> {
    simulate_fmc_with(sc, geom, medium, pulse, fs, n_t, seed, SimOptions::default())
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_fmc_with(
    sc: &ScattererSet,
    geom: &ArrayGeometry,
    medium: &MediumModel,
    pulse: &PulseModel,
    fs: f64,
    n_t: usize,
    seed: u64,
    opts: SimOptions,
) -> Result<Simulated> {
    pulse.validate()?;
    let n = geom.n_elements();
    let mut data = FmcData::zeros(n_t, n, fs)?;
    let speed = medium.speed();
    let depth = geom.depth();
    let jitter = if opts.jitter_std_s > 0.0 {
        Some((
            ChaCha8Rng::seed_from_u64(seed),
            Normal::new(0.0, opts.jitter_std_s).map_err(|e| Error::Domain(e.to_string()))?,
        ))
    } else {
        None
    };
    let mut jitter = jitter;

    let half = pulse.support();
    let mut written = 0usize;
    let mut dist = vec![0.0; n];
    let mut one_way = vec![0.0; n];
    for s in &sc.scatterers {
        if !(s.position.z > depth) || !s.position.x.is_finite() || !s.reflectivity.is_finite() {
            return Err(Error::Domain(format!(
                "scatterer at ({}, {}) is not inside the insonified half-space",
                s.position.x, s.position.z
            )));
        }
        for (e, r) in geom.positions().iter().enumerate() {
            dist[e] = r.distance(s.position);
            one_way[e] = dist[e] / speed;
        }
        for m in 0..n {
            for l in 0..n {
                let mut tau = one_way[m] + one_way[l];
                if let Some((rng, normal)) = jitter.as_mut() {
                    tau += normal.sample(rng);
                }
                let amp = s.reflectivity / (dist[m] + dist[l]).sqrt();
                match pulse.kind {
                    PulseKind::Impulse => {
                        if let Some(k) = time_to_index(tau, fs, n_t) {
                            let off = data.offset(k, m, l);
                            data.samples_mut()[off] += amp;
                            written += 1;
                        }
                    }
                    PulseKind::GaussianSine => {
                        let first = ((tau - half) * fs).ceil().max(0.0);
                        let last = ((tau + half) * fs).floor().min(n_t as f64 - 1.0);
                        if first > last {
                            continue;
                        }
                        for k in first as usize..=last as usize {
                            let off = data.offset(k, m, l);
                            data.samples_mut()[off] += amp * pulse.eval(k as f64 / fs - tau);
                        }
                        written += 1;
                    }
                }
            }
        }
    }

    let mut warnings = Vec::new();
    if !sc.is_empty() && written == 0 {
        warnings.push(format!(
            "record of {n_t} samples at {fs} Hz ends before any echo arrives"
        ));
    }
    Ok(Simulated { data, warnings })
}

/// Adds white Gaussian noise at `snr_db` relative to the RMS of the active
/// traces. `f64::INFINITY` returns the data unchanged; all-zero data gets
/// noise with standard deviation [`ZERO_SIGNAL_NOISE_STD`].
pub fn add_noise(f: &FmcData, snr_db: f64, seed: u64) -> Result<FmcData> {
    add_noise_with_floor(f, snr_db, ZERO_SIGNAL_NOISE_STD, seed)
}

pub fn add_noise_with_floor(f: &FmcData, snr_db: f64, floor_std: f64, seed: u64) -> Result<FmcData> {
    if snr_db == f64::INFINITY {
        return Ok(f.clone());
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::Domain(format!("invalid SNR {snr_db} dB")));
    }
    let active = f.active_sources().to_vec();
    let (n_t, n_s, n_r) = (f.n_t(), f.n_s(), f.n_r());
    let mut energy = 0.0;
    let mut count = 0usize;
    for t in 0..n_t {
        for (m, _) in active.iter().enumerate().filter(|(_, &a)| a) {
            for l in 0..n_r {
                let v = f.get(t, m, l);
                energy += v * v;
                count += 1;
            }
        }
    }
    let rms = if count > 0 { (energy / count as f64).sqrt() } else { 0.0 };
    let sigma = if rms > 0.0 { rms * 10f64.powf(-snr_db / 20.0) } else { floor_std };
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = f.clone();
    let samples = out.samples_mut();
    for t in 0..n_t {
        for m in (0..n_s).filter(|&m| active[m]) {
            for l in 0..n_r {
                samples[(t * n_s + m) * n_r + l] += normal.sample(&mut rng);
            }
        }
    }
    Ok(out)
}

/// Keeps source slots whose index is a multiple of `factor`; the others are
/// zero-filled and masked out. Shapes are unchanged.
pub fn undersample_sources(f: &FmcData, factor: usize) -> Result<FmcData> {
    if factor == 0 {
        return Err(Error::Domain("undersampling factor must be at least 1".into()));
    }
    let (n_t, n_s, n_r) = (f.n_t(), f.n_s(), f.n_r());
    let keep: Vec<bool> = (0..n_s).map(|m| m % factor == 0 && f.active_sources()[m]).collect();
    let mut out = f.clone();
    let samples = out.samples_mut();
    for t in 0..n_t {
        for m in (0..n_s).filter(|&m| !keep[m]) {
            let off = (t * n_s + m) * n_r;
            samples[off..off + n_r].fill(0.0);
        }
    }
    out.set_mask_unchecked(keep);
    Ok(out)
}

/// Empirical SNR in dB of `noisy` against `clean` over the active traces.
pub fn measured_snr_db(clean: &FmcData, noisy: &FmcData) -> f64 {
    let mut sig = 0.0;
    let mut noise = 0.0;
    for t in 0..clean.n_t() {
        for m in (0..clean.n_s()).filter(|&m| clean.active_sources()[m]) {
            for l in 0..clean.n_r() {
                let c = clean.get(t, m, l);
                let d = noisy.get(t, m, l) - c;
                sig += c * c;
                noise += d * d;
            }
        }
    }
    10.0 * (sig / noise).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{travel_time, Point2};
    use crate::phantom::Scatterer;

    fn geom() -> ArrayGeometry {
        ArrayGeometry::uniform(6, 1e-3, 0.0).unwrap()
    }

    fn steel() -> MediumModel {
        MediumModel::new(5920.0).unwrap()
    }

    fn one(x: f64, z: f64, r: f64) -> ScattererSet {
        ScattererSet { scatterers: vec![Scatterer { position: Point2::new(x, z), reflectivity: r }] }
    }

    #[test]
    fn empty_set_gives_zero_data() {
        let pulse = PulseModel::gaussian(5e6, 0.6).unwrap();
        let out = simulate_fmc(&ScattererSet::default(), &geom(), &steel(), &pulse, 25e6, 128, 0)
            .unwrap();
        assert!(out.data.samples().iter().all(|&v| v == 0.0));
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn impulse_lands_at_travel_time_index() {
        let g = geom();
        let p = Point2::new(0.3e-3, 8e-3);
        let out =
            simulate_fmc(&one(p.x, p.z, 1.0), &g, &steel(), &PulseModel::impulse(), 25e6, 128, 0)
                .unwrap();
        for m in 0..6 {
            for l in 0..6 {
                let tau = travel_time(p, g.position(m), g.position(l), 5920.0).unwrap();
                let k = time_to_index(tau, 25e6, 128).unwrap();
                for t in 0..128 {
                    assert_eq!(out.data.get(t, m, l) != 0.0, t == k, "t={t} m={m} l={l}");
                }
            }
        }
    }

    #[test]
    fn short_record_warns() {
        let pulse = PulseModel::gaussian(5e6, 0.6).unwrap();
        let out = simulate_fmc(&one(0.0, 0.05, 1.0), &geom(), &steel(), &pulse, 25e6, 16, 0).unwrap();
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn scatterer_above_array_is_rejected() {
        let pulse = PulseModel::gaussian(5e6, 0.6).unwrap();
        let res = simulate_fmc(&one(0.0, -1e-3, 1.0), &geom(), &steel(), &pulse, 25e6, 16, 0);
        assert!(matches!(res, Err(Error::Domain(_))));
    }

    #[test]
    fn linear_in_reflectivity_and_reciprocal() {
        let pulse = PulseModel::gaussian(5e6, 0.6).unwrap();
        let sc = ScattererSet {
            scatterers: vec![
                Scatterer { position: Point2::new(0.4e-3, 6e-3), reflectivity: 0.7 },
                Scatterer { position: Point2::new(-1.1e-3, 9e-3), reflectivity: -0.3 },
            ],
        };
        let a = simulate_fmc(&sc, &geom(), &steel(), &pulse, 25e6, 128, 0).unwrap().data;
        let b = simulate_fmc(&sc.scaled(2.0), &geom(), &steel(), &pulse, 25e6, 128, 0).unwrap().data;
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert_eq!(2.0 * x, *y);
        }
        for t in 0..128 {
            for m in 0..6 {
                for l in 0..6 {
                    assert_eq!(a.get(t, m, l), a.get(t, l, m));
                }
            }
        }
    }

    #[test]
    fn infinite_snr_is_identity() {
        let mut f = FmcData::zeros(8, 3, 1e6).unwrap();
        f.samples_mut().iter_mut().enumerate().for_each(|(i, v)| *v = i as f64);
        assert_eq!(add_noise(&f, f64::INFINITY, 9).unwrap(), f);
    }

    #[test]
    fn zero_signal_gets_floor_noise() {
        let f = FmcData::zeros(200, 8, 1e6).unwrap();
        let noisy = add_noise(&f, 10.0, 1).unwrap();
        let n = noisy.samples().len() as f64;
        let var = noisy.samples().iter().map(|v| v * v).sum::<f64>() / n;
        let rel = (var.sqrt() - ZERO_SIGNAL_NOISE_STD).abs() / ZERO_SIGNAL_NOISE_STD;
        assert!(rel < 0.05, "std {} vs floor", var.sqrt());
        assert_eq!(add_noise(&f, 10.0, 1).unwrap(), noisy);
    }

    #[test]
    fn undersampling_factor_one_is_identity() {
        let mut f = FmcData::zeros(4, 4, 1e6).unwrap();
        f.samples_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 1.0 + i as f64);
        assert_eq!(undersample_sources(&f, 1).unwrap(), f);
        assert!(undersample_sources(&f, 0).is_err());
    }

    #[test]
    fn undersampling_by_two_of_64_elements() {
        let mut f = FmcData::zeros(3, 64, 1e6).unwrap();
        f.samples_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 1.0 + i as f64);
        let u = undersample_sources(&f, 2).unwrap();
        assert_eq!(u.n_active_sources(), 32);
        for t in 0..3 {
            for m in 0..64 {
                for l in 0..64 {
                    if m % 2 == 1 {
                        assert_eq!(u.get(t, m, l), 0.0);
                    } else {
                        assert_eq!(u.get(t, m, l), f.get(t, m, l));
                    }
                }
            }
        }
        assert_eq!(undersample_sources(&u, 2).unwrap(), u);
    }

    #[test]
    fn noise_skips_masked_traces() {
        let mut f = FmcData::zeros(16, 4, 1e6).unwrap();
        f.samples_mut().iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64).sin());
        let u = undersample_sources(&f, 2).unwrap();
        let n = add_noise(&u, 5.0, 3).unwrap();
        for t in 0..16 {
            for l in 0..4 {
                assert_eq!(n.get(t, 1, l), 0.0);
                assert_eq!(n.get(t, 3, l), 0.0);
            }
        }
    }
}
