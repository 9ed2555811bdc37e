//! Seeded synthesis of laser, fiber and temperature disturbances.
//!
//! All randomness comes from ChaCha20 (`rand_chacha::ChaCha20Rng`), seeded
//! from a `u64` and split into independent streams with `set_stream`.
//! Gaussian variates use the Box–Muller transform on 53-bit uniforms, so a
//! given (spec, grid, seed) always yields the same samples.

use std::f64::consts::TAU;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{CounterKind, FrequencySeries, FrequencyUnit, PhaseSeries, SampleGrid, TemperatureSeries};

/// Nominal optical carrier (Hz).
pub const DEFAULT_CARRIER_HZ: f64 = 194.4e12;

/// SplitMix64 finalizer, used to derive per-component seeds from a
/// scenario seed.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal variates from a ChaCha20 stream.
pub struct GaussianSource {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl GaussianSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    /// Uniform on [0, 1) with 53 bits of resolution.
    fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn fill(&mut self, n: usize, sigma: f64) -> Vec<f64> {
        (0..n).map(|_| sigma * self.next_gaussian()).collect()
    }
}

/// Levels of the independent noise components summed by [`gen_powerlaw`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// White phase noise, per-sample phase variance (rad²).
    #[serde(default)]
    pub white_pm_rad2: f64,
    /// White frequency noise, one-sided PSD of frequency (Hz²/Hz).
    #[serde(default)]
    pub white_fm_hz2_per_hz: f64,
    /// Random-walk frequency noise, frequency diffusion rate (Hz²/s).
    #[serde(default)]
    pub random_walk_fm_hz2_per_s: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn white_pm(variance_rad2: f64, seed: u64) -> Self {
        Self {
            white_pm_rad2: variance_rad2,
            seed,
            ..Self::default()
        }
    }

    pub fn white_fm(psd_hz2_per_hz: f64, seed: u64) -> Self {
        Self {
            white_fm_hz2_per_hz: psd_hz2_per_hz,
            seed,
            ..Self::default()
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn is_zero(&self) -> bool {
        self.white_pm_rad2 == 0.0 && self.white_fm_hz2_per_hz == 0.0 && self.random_walk_fm_hz2_per_s == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("white_pm_rad2", self.white_pm_rad2),
            ("white_fm_hz2_per_hz", self.white_fm_hz2_per_hz),
            ("random_walk_fm_hz2_per_s", self.random_walk_fm_hz2_per_s),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Sum of white-PM, integrated white-FM and doubly integrated white
/// (random-walk FM) phase components. Each component draws from its own
/// stream, and a zero level draws nothing.
pub fn gen_powerlaw(spec: &NoiseSpec, grid: &SampleGrid) -> Result<PhaseSeries> {
    spec.validate()?;
    grid.validate()?;
    let n = grid.n;
    let dt = grid.dt;
    let mut phase = vec![0.0; n];

    if spec.white_pm_rad2 > 0.0 {
        let mut g = GaussianSource::new(spec.seed, 0);
        let sigma = spec.white_pm_rad2.sqrt();
        for p in phase.iter_mut() {
            *p += sigma * g.next_gaussian();
        }
    }
    if spec.white_fm_hz2_per_hz > 0.0 {
        let mut g = GaussianSource::new(spec.seed, 1);
        // One-sided PSD S over the band [0, 1/(2dt)] gives variance S/(2dt).
        let sigma_nu = (spec.white_fm_hz2_per_hz / (2.0 * dt)).sqrt();
        let mut acc = 0.0;
        for p in phase.iter_mut().skip(1) {
            acc += TAU * sigma_nu * g.next_gaussian() * dt;
            *p += acc;
        }
    }
    if spec.random_walk_fm_hz2_per_s > 0.0 {
        let mut g = GaussianSource::new(spec.seed, 2);
        let step = (spec.random_walk_fm_hz2_per_s * dt).sqrt();
        let (mut nu, mut acc) = (0.0, 0.0);
        for p in phase.iter_mut().skip(1) {
            nu += step * g.next_gaussian();
            acc += TAU * nu * dt;
            *p += acc;
        }
    }
    PhaseSeries::new(*grid, phase)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaserModel {
    #[serde(default = "default_carrier")]
    pub nu0_hz: f64,
    #[serde(default)]
    pub drift_hz_per_s: f64,
    #[serde(default)]
    pub curvature_hz_per_s2: f64,
    #[serde(default)]
    pub noise: NoiseSpec,
}

fn default_carrier() -> f64 {
    DEFAULT_CARRIER_HZ
}

impl Default for LaserModel {
    fn default() -> Self {
        Self {
            nu0_hz: DEFAULT_CARRIER_HZ,
            drift_hz_per_s: 0.0,
            curvature_hz_per_s2: 0.0,
            noise: NoiseSpec::default(),
        }
    }
}

impl LaserModel {
    pub fn drifting(drift_hz_per_s: f64) -> Self {
        Self {
            drift_hz_per_s,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu0_hz.is_finite() && self.nu0_hz > 0.0) {
            return Err(Error::InvalidConfig(format!("nu0_hz must be > 0, got {}", self.nu0_hz)));
        }
        if !self.drift_hz_per_s.is_finite() || !self.curvature_hz_per_s2.is_finite() {
            return Err(Error::InvalidConfig("laser drift terms must be finite".into()));
        }
        self.noise.validate()
    }

    /// Frequency offset from the carrier of the deterministic part at `t`.
    pub fn deterministic_offset_hz(&self, t: f64) -> f64 {
        self.drift_hz_per_s * t + 0.5 * self.curvature_hz_per_s2 * t * t
    }
}

/// Laser phase relative to its carrier, and its instantaneous frequency
/// offset. The `2π·ν0·t` term is implicit; `ν0` is stored as the carrier.
///
/// The frequency sample `i` is the exact derivative of the deterministic
/// part at `t_i` plus the backward noise increment
/// `(n[i]-n[i-1])/(2π·dt)`; sample 0 carries no noise increment.
pub fn gen_laser(model: &LaserModel, grid: &SampleGrid) -> Result<(PhaseSeries, FrequencySeries)> {
    model.validate()?;
    let noise = gen_powerlaw(&model.noise, grid)?;
    let nv = noise.values();
    let dt = grid.dt;
    let d = model.drift_hz_per_s;
    let c = model.curvature_hz_per_s2;
    let mut phase = Vec::with_capacity(grid.n);
    let mut freq = Vec::with_capacity(grid.n);
    for i in 0..grid.n {
        let t = grid.time(i);
        phase.push(TAU * (d * t * t / 2.0 + c * t * t * t / 6.0) + nv[i]);
        let incr = if i == 0 { 0.0 } else { (nv[i] - nv[i - 1]) / (TAU * dt) };
        freq.push(model.deterministic_offset_hz(t) + incr);
    }
    let phase = PhaseSeries::new(*grid, phase)?.with_carrier(model.nu0_hz);
    let freq = FrequencySeries::new(*grid, freq, CounterKind::Instant, FrequencyUnit::Hz)?;
    Ok((phase, freq))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineComponent {
    pub amplitude_k: f64,
    pub period_s: f64,
    #[serde(default)]
    pub phase_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureProfile {
    #[serde(default = "default_mean_k")]
    pub mean_k: f64,
    #[serde(default)]
    pub sines: Vec<SineComponent>,
    /// Temperature diffusion rate (K²/s).
    #[serde(default)]
    pub random_walk_k2_per_s: f64,
    /// Delay between the sensor reading and the temperature the fiber sees.
    #[serde(default)]
    pub heat_lag_s: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_mean_k() -> f64 {
    298.0
}

impl Default for TemperatureProfile {
    fn default() -> Self {
        Self {
            mean_k: default_mean_k(),
            sines: Vec::new(),
            random_walk_k2_per_s: 0.0,
            heat_lag_s: 0.0,
            seed: 0,
        }
    }
}

impl TemperatureProfile {
    pub fn constant(mean_k: f64) -> Self {
        Self {
            mean_k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean_k.is_finite() {
            return Err(Error::InvalidConfig("mean_k must be finite".into()));
        }
        for s in &self.sines {
            if !(s.period_s.is_finite() && s.period_s > 0.0) {
                return Err(Error::InvalidConfig(format!("sine period must be > 0, got {}", s.period_s)));
            }
            if !s.amplitude_k.is_finite() || !s.phase_rad.is_finite() {
                return Err(Error::InvalidConfig("sine amplitude/phase must be finite".into()));
            }
        }
        if !(self.random_walk_k2_per_s.is_finite() && self.random_walk_k2_per_s >= 0.0) {
            return Err(Error::InvalidConfig("random_walk_k2_per_s must be >= 0".into()));
        }
        if !(self.heat_lag_s.is_finite() && self.heat_lag_s >= 0.0) {
            return Err(Error::InvalidConfig("heat_lag_s must be >= 0".into()));
        }
        Ok(())
    }

    pub fn is_constant(&self) -> bool {
        self.random_walk_k2_per_s == 0.0 && self.sines.iter().all(|s| s.amplitude_k == 0.0)
    }
}

/// Returns `(measured, effective)` on `grid`, where `effective` is the
/// sensor temperature delayed by the heat lag. The underlying process is
/// generated `lag` samples earlier than `grid.t0`, so `effective` is defined
/// on the whole grid and `effective[i] == measured[i - lag]` wherever both
/// exist.
pub fn gen_temperature(
    profile: &TemperatureProfile,
    grid: &SampleGrid,
) -> Result<(TemperatureSeries, TemperatureSeries)> {
    profile.validate()?;
    grid.validate()?;
    let lag = grid.samples_in("heat_lag_s", profile.heat_lag_s)?;
    let total = grid.n + lag;
    let start = grid.t0 - lag as f64 * grid.dt;

    let mut raw: Vec<f64> = (0..total)
        .map(|j| {
            let t = start + j as f64 * grid.dt;
            profile.mean_k
                + profile
                    .sines
                    .iter()
                    .map(|s| s.amplitude_k * (TAU * t / s.period_s + s.phase_rad).sin())
                    .sum::<f64>()
        })
        .collect();
    if profile.random_walk_k2_per_s > 0.0 {
        let mut g = GaussianSource::new(profile.seed, 3);
        let step = (profile.random_walk_k2_per_s * grid.dt).sqrt();
        let mut acc = 0.0;
        for r in raw.iter_mut().skip(1) {
            acc += step * g.next_gaussian();
            *r += acc;
        }
    }
    let measured = TemperatureSeries::new(*grid, raw[lag..].to_vec())?;
    raw.truncate(grid.n);
    let effective = TemperatureSeries::new(*grid, raw)?;
    Ok((measured, effective))
}
