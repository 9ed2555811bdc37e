//! Phase-only model of the link topology: laser L1 is sent to the remote
//! site over fiber 1 under active noise cancellation (ANC), while the
//! local laser L2 and the remote copy of L1 are exchanged over fiber 2 for
//! two-way comparison.
//!
//! All phases are baseband (relative to their carriers); AOM offsets are
//! metadata only. With `τ1`, `τ2` the one-way fiber delays, `fwdₖ(t)` the
//! fiber-k noise picked up by light arriving at the remote end at `t` and
//! `bwdₖ(t)` the noise picked up by light arriving at the local end at `t`:
//!
//! ```text
//! ϕ_l      = L1 + θ_local                        (light entering fiber 1)
//! RT1(t)   = fwd1(t−τ1) + bwd1(t)
//! ϕ_C(t)   = ϕ_l(t) − ϕ_l(t−2τ1) − RT1(t) − ϕ_C(t−2τ1)     (ideal ANC)
//! ϕ_rem(t) = ϕ_l(t−τ1) + ϕ_C(t−τ1) + fwd1(t)
//! ϕ_r2     = ϕ_rem + θ_remote
//! PD4A = ϕ_r2(t−τ2) + bwd2(t) − L2(t)
//! PD4B = L2(t−2τ2) + fwd2(t−τ2) + bwd2(t) − L2(t)
//! PD3A = ϕ_r2(t) − L2(t−τ2) − fwd2(t)
//! PD3B = ϕ_r2(t−2τ2) + bwd2(t−τ2) + fwd2(t) − ϕ_r2(t)
//! PD1  = ϕ_l(t−2τ1) + RT1(t) − ϕ_l(t)            (uncorrected round trip)
//! LM   = L1 − L2
//! ```
//!
//! A noise segment at fractional position `x` from the local end enters
//! `fwd` delayed by `(1−x)τ` and `bwd` delayed by `xτ`. Non-reciprocal noise
//! is added to `bwd` only.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{gen_laser, gen_powerlaw, gen_temperature, mix_seed, LaserModel, NoiseSpec, TemperatureProfile};
use crate::series::{derivative, FrequencySeries, PhaseSeries, SampleGrid, TemperatureSeries};

/// Phase-temperature coefficient of standard fiber (fs/(K·m)).
pub const DEFAULT_GAMMA_FS_PER_K_M: f64 = 37.0;
/// One-way delay of the 43 km fibers (s).
pub const DEFAULT_TAU_S: f64 = 2.1e-4;

fn default_gamma() -> f64 {
    DEFAULT_GAMMA_FS_PER_K_M
}

fn default_tau() -> f64 {
    DEFAULT_TAU_S
}

fn default_length_km() -> f64 {
    43.0
}

fn default_temperature_sample_s() -> f64 {
    5.0
}

/// `2π·ν·δL·γ·(T(t) − T(t₀))` with `γ` in fs/(K·m).
pub fn thermal_phase(delta_l_m: f64, temp: &TemperatureSeries, gamma_fs_per_k_m: f64, nu_hz: f64) -> Result<PhaseSeries> {
    let k = TAU * nu_hz * delta_l_m * gamma_fs_per_k_m * 1e-15;
    let t0 = temp.values()[0];
    PhaseSeries::new(*temp.grid(), temp.values().iter().map(|t| k * (t - t0)).collect())
}

/// Local interferometer. Its uncompensated mismatch is
/// `δL = (L14 + L16 − L15) + (L11 + L12 − L13)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalInterferometer {
    #[serde(default)]
    pub l11_m: f64,
    #[serde(default)]
    pub l12_m: f64,
    #[serde(default)]
    pub l13_m: f64,
    #[serde(default)]
    pub l14_m: f64,
    #[serde(default)]
    pub l15_m: f64,
    #[serde(default)]
    pub l16_m: f64,
    #[serde(default = "default_gamma")]
    pub gamma_fs_per_k_m: f64,
    #[serde(default)]
    pub temperature: TemperatureProfile,
}

impl Default for LocalInterferometer {
    fn default() -> Self {
        Self {
            l11_m: 0.0,
            l12_m: 0.0,
            l13_m: 0.0,
            l14_m: 0.0,
            l15_m: 0.0,
            l16_m: 0.0,
            gamma_fs_per_k_m: DEFAULT_GAMMA_FS_PER_K_M,
            temperature: TemperatureProfile::default(),
        }
    }
}

impl LocalInterferometer {
    /// Arms matched except for `delta_l_m` of extra length on L14.
    pub fn with_mismatch(delta_l_m: f64, temperature: TemperatureProfile) -> Self {
        Self {
            l14_m: delta_l_m,
            temperature,
            ..Self::default()
        }
    }

    pub fn delta_l_m(&self) -> f64 {
        (self.l14_m + self.l16_m - self.l15_m) + (self.l11_m + self.l12_m - self.l13_m)
    }

    fn lengths(&self) -> [(&'static str, f64); 6] {
        [
            ("l11_m", self.l11_m),
            ("l12_m", self.l12_m),
            ("l13_m", self.l13_m),
            ("l14_m", self.l14_m),
            ("l15_m", self.l15_m),
            ("l16_m", self.l16_m),
        ]
    }
}

/// Remote interferometer. Its mismatch is `δL = L22 − L21 − L23`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteInterferometer {
    #[serde(default)]
    pub l21_m: f64,
    #[serde(default)]
    pub l22_m: f64,
    #[serde(default)]
    pub l23_m: f64,
    #[serde(default = "default_gamma")]
    pub gamma_fs_per_k_m: f64,
    #[serde(default)]
    pub temperature: TemperatureProfile,
}

impl Default for RemoteInterferometer {
    fn default() -> Self {
        Self {
            l21_m: 0.0,
            l22_m: 0.0,
            l23_m: 0.0,
            gamma_fs_per_k_m: DEFAULT_GAMMA_FS_PER_K_M,
            temperature: TemperatureProfile::default(),
        }
    }
}

impl RemoteInterferometer {
    /// Arms matched except for `delta_l_m` of extra length on L22.
    pub fn with_mismatch(delta_l_m: f64, temperature: TemperatureProfile) -> Self {
        Self {
            l22_m: delta_l_m,
            temperature,
            ..Self::default()
        }
    }

    pub fn delta_l_m(&self) -> f64 {
        self.l22_m - self.l21_m - self.l23_m
    }

    fn lengths(&self) -> [(&'static str, f64); 3] {
        [("l21_m", self.l21_m), ("l22_m", self.l22_m), ("l23_m", self.l23_m)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberSegment {
    /// Fractional distance from the local end, in `[0, 1]`.
    pub position: f64,
    pub noise: NoiseSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberModel {
    #[serde(default = "default_length_km")]
    pub length_km: f64,
    #[serde(default = "default_tau")]
    pub tau_s: f64,
    #[serde(default = "FiberModel::default_segments")]
    pub segments: Vec<FiberSegment>,
    /// Extra noise on the local-bound direction only.
    #[serde(default)]
    pub nonreciprocal: Option<NoiseSpec>,
}

impl Default for FiberModel {
    fn default() -> Self {
        Self {
            length_km: default_length_km(),
            tau_s: DEFAULT_TAU_S,
            segments: Self::default_segments(),
            nonreciprocal: None,
        }
    }
}

impl FiberModel {
    fn default_segments() -> Vec<FiberSegment> {
        vec![FiberSegment {
            position: 0.5,
            noise: NoiseSpec::default(),
        }]
    }

    /// `m` segments at the midpoints of equal spans, each with `noise`
    /// (the seed is re-derived per segment).
    pub fn distributed(tau_s: f64, m: usize, noise: NoiseSpec) -> Self {
        Self {
            tau_s,
            segments: (0..m)
                .map(|j| FiberSegment {
                    position: (j as f64 + 0.5) / m as f64,
                    noise,
                })
                .collect(),
            ..Self::default()
        }
    }

    pub fn quiet(tau_s: f64) -> Self {
        Self {
            tau_s,
            ..Self::default()
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.tau_s.is_finite() && self.tau_s >= 0.0) {
            return Err(Error::InvalidConfig(format!("{name}.tau_s must be >= 0")));
        }
        if self.segments.is_empty() {
            return Err(Error::InvalidConfig(format!("{name} needs at least one segment")));
        }
        for s in &self.segments {
            if !(0.0..=1.0).contains(&s.position) {
                return Err(Error::InvalidConfig(format!(
                    "{name} segment position {} outside [0, 1]",
                    s.position
                )));
            }
            s.noise.validate()?;
        }
        if let Some(nr) = &self.nonreciprocal {
            nr.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum AncMode {
    /// Exact recursion, correction zero on the first `2τ`.
    Ideal,
    /// Integrator on the in-loop error, `c[i] = c[i−1] − g·dt·e[i−1]`.
    Loop { gain_per_s: f64 },
    Off,
}

impl AncMode {
    pub fn label(&self) -> String {
        match self {
            AncMode::Ideal => "ideal".into(),
            AncMode::Loop { gain_per_s } => format!("loop(gain_per_s={gain_per_s})"),
            AncMode::Off => "off".into(),
        }
    }

    /// Approximate closed-loop bandwidth of loop mode (Hz).
    pub fn bandwidth_hz(&self) -> Option<f64> {
        match self {
            AncMode::Loop { gain_per_s } => Some(gain_per_s / std::f64::consts::PI),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemoteMirror {
    Standard,
    /// No fiber-length mismatch at the remote site.
    PartialFm,
}

/// How `x(t − a)` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayModel {
    /// Integer-sample shifts; every delay must lie on the grid.
    Exact,
    /// `x(t) − a·ẋ(t)` with a central-difference derivative, for grids far
    /// coarser than the fiber delay.
    FirstOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AomOffsets {
    #[serde(default)]
    pub f1_hz: f64,
    #[serde(default)]
    pub f2_hz: f64,
    #[serde(default)]
    pub f3_hz: f64,
    #[serde(default)]
    pub f4_hz: f64,
}

impl Default for AomOffsets {
    fn default() -> Self {
        Self {
            f1_hz: 40e6,
            f2_hz: 40e6,
            f3_hz: 40e6,
            f4_hz: 40e6,
        }
    }
}

/// White phase noise of each detection chain (rad² per sample).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionNoise {
    #[serde(default)]
    pub pd1_rad2: f64,
    #[serde(default)]
    pub pd3a_rad2: f64,
    #[serde(default)]
    pub pd3b_rad2: f64,
    #[serde(default)]
    pub pd4a_rad2: f64,
    #[serde(default)]
    pub pd4b_rad2: f64,
    #[serde(default)]
    pub lm_rad2: f64,
}

impl DetectionNoise {
    pub fn uniform(rad2: f64) -> Self {
        Self {
            pd1_rad2: rad2,
            pd3a_rad2: rad2,
            pd3b_rad2: rad2,
            pd4a_rad2: rad2,
            pd4b_rad2: rad2,
            lm_rad2: rad2,
        }
    }

    fn levels(&self) -> [f64; 6] {
        [
            self.pd1_rad2,
            self.pd3a_rad2,
            self.pd3b_rad2,
            self.pd4a_rad2,
            self.pd4b_rad2,
            self.lm_rad2,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    #[serde(default)]
    pub laser1: LaserModel,
    #[serde(default)]
    pub laser2: LaserModel,
    #[serde(default)]
    pub fiber1: FiberModel,
    #[serde(default)]
    pub fiber2: FiberModel,
    /// Correlation of fiber-2 segment noise with the matching fiber-1
    /// segment, in `[-1, 1]`.
    #[serde(default)]
    pub fiber_noise_correlation: f64,
    #[serde(default)]
    pub local_ifo: LocalInterferometer,
    #[serde(default)]
    pub remote_ifo: RemoteInterferometer,
    #[serde(default)]
    pub aom: AomOffsets,
    #[serde(default = "default_anc")]
    pub anc: AncMode,
    #[serde(default = "default_mirror")]
    pub remote_mirror: RemoteMirror,
    #[serde(default)]
    pub same_laser: bool,
    #[serde(default)]
    pub zero_delay: bool,
    #[serde(default = "default_delay_model")]
    pub delay_model: DelayModel,
    #[serde(default)]
    pub detection_noise: DetectionNoise,
    /// Spacing of the recorded sensor temperatures.
    #[serde(default = "default_temperature_sample_s")]
    pub temperature_sample_s: f64,
}

fn default_anc() -> AncMode {
    AncMode::Ideal
}

fn default_mirror() -> RemoteMirror {
    RemoteMirror::Standard
}

fn default_delay_model() -> DelayModel {
    DelayModel::Exact
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            laser1: LaserModel::default(),
            laser2: LaserModel::default(),
            fiber1: FiberModel::default(),
            fiber2: FiberModel::default(),
            fiber_noise_correlation: 0.0,
            local_ifo: LocalInterferometer::default(),
            remote_ifo: RemoteInterferometer::default(),
            aom: AomOffsets::default(),
            anc: AncMode::Ideal,
            remote_mirror: RemoteMirror::Standard,
            same_laser: false,
            zero_delay: false,
            delay_model: DelayModel::Exact,
            detection_noise: DetectionNoise::default(),
            temperature_sample_s: default_temperature_sample_s(),
        }
    }
}

impl LinkConfig {
    pub fn tau1_s(&self) -> f64 {
        if self.zero_delay {
            0.0
        } else {
            self.fiber1.tau_s
        }
    }

    pub fn tau2_s(&self) -> f64 {
        if self.zero_delay {
            0.0
        } else {
            self.fiber2.tau_s
        }
    }

    pub fn delta_l_local_m(&self) -> f64 {
        self.local_ifo.delta_l_m()
    }

    /// Zero in partial-FM mode whatever the arm lengths.
    pub fn delta_l_remote_m(&self) -> f64 {
        match self.remote_mirror {
            RemoteMirror::Standard => self.remote_ifo.delta_l_m(),
            RemoteMirror::PartialFm => 0.0,
        }
    }

    /// Checks everything that does not depend on the grid.
    pub fn validate(&self) -> Result<()> {
        self.laser1.validate()?;
        self.laser2.validate()?;
        self.fiber1.validate("fiber1")?;
        self.fiber2.validate("fiber2")?;
        let rho = self.fiber_noise_correlation;
        if !(rho.is_finite() && (-1.0..=1.0).contains(&rho)) {
            return Err(Error::InvalidConfig(format!("fiber_noise_correlation {rho} outside [-1, 1]")));
        }
        if rho != 0.0 {
            let same_layout = self.fiber1.segments.len() == self.fiber2.segments.len()
                && self
                    .fiber1
                    .segments
                    .iter()
                    .zip(&self.fiber2.segments)
                    .all(|(a, b)| a.noise.with_seed(0) == b.noise.with_seed(0));
            if !same_layout {
                return Err(Error::InvalidConfig(
                    "correlated fibers need matching segment counts and noise levels".into(),
                ));
            }
        }
        for (name, v) in self.local_ifo.lengths().iter().chain(self.remote_ifo.lengths().iter()) {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        for g in [self.local_ifo.gamma_fs_per_k_m, self.remote_ifo.gamma_fs_per_k_m] {
            if !(g.is_finite() && g >= 0.0) {
                return Err(Error::InvalidConfig(format!("gamma_fs_per_k_m must be >= 0, got {g}")));
            }
        }
        self.local_ifo.temperature.validate()?;
        self.remote_ifo.temperature.validate()?;
        for v in self.detection_noise.levels() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig("detection noise levels must be >= 0".into()));
            }
        }
        if !(self.temperature_sample_s.is_finite() && self.temperature_sample_s > 0.0) {
            return Err(Error::InvalidConfig("temperature_sample_s must be > 0".into()));
        }
        if let AncMode::Loop { gain_per_s } = self.anc {
            if !(gain_per_s.is_finite() && gain_per_s > 0.0) {
                return Err(Error::InvalidConfig(format!("ANC loop gain must be > 0, got {gain_per_s}")));
            }
            if self.delay_model != DelayModel::Exact {
                return Err(Error::InvalidConfig("ANC loop mode needs the exact delay model".into()));
            }
            let tau = self.tau1_s();
            if tau > 0.0 && gain_per_s * 2.0 * tau >= 1.0 {
                return Err(Error::UnstableLoop {
                    gain_per_s,
                    bound_per_s: 1.0 / (2.0 * tau),
                });
            }
        }
        Ok(())
    }
}

/// Delay of one path, either whole samples or seconds for the first-order
/// model.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Lag {
    Samples(usize),
    Seconds(f64),
}

#[derive(Debug, Clone, Copy)]
struct Delays {
    model: DelayModel,
    dt: f64,
}

impl Delays {
    fn lag(&self, grid: &SampleGrid, what: &str, seconds: f64) -> Result<Lag> {
        match self.model {
            DelayModel::Exact => Ok(Lag::Samples(grid.samples_in(what, seconds)?)),
            DelayModel::FirstOrder => Ok(Lag::Seconds(seconds)),
        }
    }

    /// Segment lag as a fraction of a fiber lag; rounded to whole samples
    /// in exact mode.
    fn fraction(&self, total: Lag, frac: f64) -> Lag {
        match total {
            Lag::Samples(k) => Lag::Samples((frac * k as f64).round() as usize),
            Lag::Seconds(s) => Lag::Seconds(frac * s),
        }
    }

    fn twice(&self, l: Lag) -> Lag {
        match l {
            Lag::Samples(k) => Lag::Samples(2 * k),
            Lag::Seconds(s) => Lag::Seconds(2.0 * s),
        }
    }

    fn minus(&self, total: Lag, part: Lag) -> Lag {
        match (total, part) {
            (Lag::Samples(a), Lag::Samples(b)) => Lag::Samples(a - b),
            (Lag::Seconds(a), Lag::Seconds(b)) => Lag::Seconds(a - b),
            _ => unreachable!("mixed lag kinds"),
        }
    }

    /// `acc[i] += coef·x(t_i − lag)`; exact shifts hold `x[0]` before the
    /// start of the record.
    fn add(&self, acc: &mut [f64], x: &[f64], lag: Lag, coef: f64) {
        match lag {
            Lag::Samples(k) => {
                for (i, a) in acc.iter_mut().enumerate() {
                    *a += coef * x[i.saturating_sub(k)];
                }
            }
            Lag::Seconds(s) if s == 0.0 => {
                for (a, v) in acc.iter_mut().zip(x) {
                    *a += coef * v;
                }
            }
            Lag::Seconds(s) => {
                let dx = derivative(x, self.dt);
                for ((a, v), d) in acc.iter_mut().zip(x).zip(&dx) {
                    *a += coef * (v - s * d);
                }
            }
        }
    }

    fn samples(&self, lag: Lag) -> usize {
        match lag {
            Lag::Samples(k) => k,
            Lag::Seconds(_) => 0,
        }
    }
}

/// Output of [`anc_correction`].
#[derive(Debug, Clone, PartialEq)]
pub struct AncOutput {
    pub correction: PhaseSeries,
    /// Residual round-trip beat with the correction applied.
    pub in_loop_error: PhaseSeries,
    /// Samples before the correction is meaningful.
    pub settle: usize,
}

/// Computes the correction `ϕ_C` that nulls the round-trip beat
/// `ϕ_l(t−2τ) + ϕ_C(t−2τ) + RT(t) + ϕ_C(t) − ϕ_l(t)`.
///
/// Ideal mode solves the recursion exactly with `ϕ_C = 0` on the first
/// `2τ`; for `τ = 0` it reduces to half the drive. Under the first-order
/// delay model the recursion is replaced by its expansion
/// `ϕ_C ≈ (D + τ·Ḋ)/2` with `D = ϕ_l − ϕ_l(t−2τ) − RT`.
pub fn anc_correction(
    reference: &PhaseSeries,
    round_trip: &PhaseSeries,
    tau_s: f64,
    mode: AncMode,
    delay_model: DelayModel,
) -> Result<AncOutput> {
    let grid = *reference.grid();
    grid.ensure_same(round_trip.grid())?;
    let delays = Delays {
        model: delay_model,
        dt: grid.dt,
    };
    let one_way = delays.lag(&grid, "tau_s", tau_s)?;
    let rt = delays.twice(one_way);
    let k2 = delays.samples(rt);
    if delay_model == DelayModel::Exact && k2 >= grid.n {
        return Err(Error::Insufficient {
            what: format!("record of {} samples is shorter than the {k2}-sample round trip", grid.n),
            suggestion: None,
        });
    }
    let phi = reference.values();
    let rtv = round_trip.values();
    let n = grid.n;
    // D = ϕ_l − ϕ_l(t−2τ) − RT
    let mut drive: Vec<f64> = phi.iter().zip(rtv).map(|(p, r)| p - r).collect();
    delays.add(&mut drive, phi, rt, -1.0);

    let (c, settle) = match (mode, delay_model) {
        (AncMode::Off, _) => (vec![0.0; n], 0),
        (AncMode::Ideal, DelayModel::FirstOrder) => {
            let dd = derivative(&drive, grid.dt);
            (drive.iter().zip(&dd).map(|(d, s)| 0.5 * (d + tau_s * s)).collect(), 0)
        }
        (AncMode::Ideal, DelayModel::Exact) => {
            let mut c = vec![0.0; n];
            if k2 == 0 {
                for (ci, d) in c.iter_mut().zip(&drive) {
                    *ci = 0.5 * d;
                }
            } else {
                for i in k2..n {
                    c[i] = drive[i] - c[i - k2];
                }
            }
            (c, k2)
        }
        (AncMode::Loop { gain_per_s }, DelayModel::Exact) => {
            let k = gain_per_s * grid.dt;
            if !(k > 0.0 && k < 0.5) || gain_per_s * 2.0 * tau_s >= 1.0 {
                return Err(Error::UnstableLoop {
                    gain_per_s,
                    bound_per_s: if tau_s > 0.0 {
                        (1.0 / (2.0 * tau_s)).min(0.5 / grid.dt)
                    } else {
                        0.5 / grid.dt
                    },
                });
            }
            let mut c = vec![0.0; n];
            let mut prev_err = 0.0;
            for i in 0..n {
                if i > 0 {
                    c[i] = c[i - 1] - k * prev_err;
                }
                prev_err = c[i] + c[i.saturating_sub(k2)] - drive[i];
            }
            // Ten closed-loop time constants of 1/(2g).
            let settle = k2 + (10.0 / (2.0 * k)).ceil() as usize;
            (c, settle.min(n))
        }
        (AncMode::Loop { .. }, DelayModel::FirstOrder) => {
            return Err(Error::InvalidConfig("ANC loop mode needs the exact delay model".into()));
        }
    };
    let mut err: Vec<f64> = c.iter().zip(&drive).map(|(ci, d)| ci - d).collect();
    delays.add(&mut err, &c, rt, 1.0);
    Ok(AncOutput {
        correction: PhaseSeries::new(grid, c)?.with_warmup(settle),
        in_loop_error: PhaseSeries::new(grid, err)?.with_warmup(settle),
        settle,
    })
}

/// Raw realizations of every disturbance, before propagation. Editing
/// these and calling [`propagate`] runs the same link on modified inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Disturbances {
    pub grid: SampleGrid,
    pub laser1: PhaseSeries,
    pub laser2: PhaseSeries,
    pub nu1: FrequencySeries,
    pub nu2: FrequencySeries,
    /// Per-segment phase noise; `None` for a silent segment.
    pub fiber1_segments: Vec<Option<Vec<f64>>>,
    pub fiber2_segments: Vec<Option<Vec<f64>>>,
    pub fiber1_nonreciprocal: Option<Vec<f64>>,
    pub fiber2_nonreciprocal: Option<Vec<f64>>,
    /// `(measured, effective)`; `None` for a constant temperature profile.
    pub temp_local: Option<(TemperatureSeries, TemperatureSeries)>,
    pub temp_remote: Option<(TemperatureSeries, TemperatureSeries)>,
    /// PD1, PD3A, PD3B, PD4A, PD4B, LM.
    pub detection: [Option<Vec<f64>>; 6],
}

mod component {
    pub const LASER1: u64 = 1;
    pub const LASER2: u64 = 2;
    pub const FIBER1_NONRECIPROCAL: u64 = 10;
    pub const FIBER2_NONRECIPROCAL: u64 = 11;
    pub const TEMP_LOCAL: u64 = 20;
    pub const TEMP_REMOTE: u64 = 21;
    pub const DETECTION: u64 = 30;
    pub const FIBER1_SEGMENT: u64 = 1_000;
    pub const FIBER2_SEGMENT: u64 = 2_000;
}

fn component_seed(seed: u64, component: u64, salt: u64) -> u64 {
    mix_seed(mix_seed(seed, component), salt)
}

fn segment_noise(spec: &NoiseSpec, grid: &SampleGrid, seed: u64) -> Result<Option<Vec<f64>>> {
    if spec.is_zero() {
        return Ok(None);
    }
    Ok(Some(gen_powerlaw(&spec.with_seed(seed), grid)?.into_values()))
}

impl Disturbances {
    pub fn generate(config: &LinkConfig, grid: &SampleGrid, seed: u64) -> Result<Self> {
        config.validate()?;
        grid.validate()?;
        let mut l1 = config.laser1;
        l1.noise = l1.noise.with_seed(component_seed(seed, component::LASER1, l1.noise.seed));
        let (laser1, nu1) = gen_laser(&l1, grid)?;
        let (laser2, nu2) = if config.same_laser {
            (laser1.clone(), nu1.clone())
        } else {
            let mut l2 = config.laser2;
            l2.noise = l2.noise.with_seed(component_seed(seed, component::LASER2, l2.noise.seed));
            gen_laser(&l2, grid)?
        };

        let fiber1_segments = config
            .fiber1
            .segments
            .iter()
            .enumerate()
            .map(|(j, s)| segment_noise(&s.noise, grid, component_seed(seed, component::FIBER1_SEGMENT + j as u64, s.noise.seed)))
            .collect::<Result<Vec<_>>>()?;
        let rho = config.fiber_noise_correlation;
        let fiber2_segments = config
            .fiber2
            .segments
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let own = if rho.abs() == 1.0 {
                    None
                } else {
                    segment_noise(&s.noise, grid, component_seed(seed, component::FIBER2_SEGMENT + j as u64, s.noise.seed))?
                };
                if rho == 0.0 {
                    return Ok(own);
                }
                let shared = fiber1_segments[j].as_ref();
                let c = (1.0 - rho * rho).sqrt();
                Ok(match (shared, own) {
                    (None, None) => None,
                    (Some(a), None) => Some(a.iter().map(|v| rho * v).collect()),
                    (None, Some(b)) => Some(b.iter().map(|v| c * v).collect()),
                    (Some(a), Some(b)) => Some(a.iter().zip(&b).map(|(x, y)| rho * x + c * y).collect()),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let nonrecip = |fiber: &FiberModel, id: u64| -> Result<Option<Vec<f64>>> {
            match &fiber.nonreciprocal {
                Some(spec) => segment_noise(spec, grid, component_seed(seed, id, spec.seed)),
                None => Ok(None),
            }
        };
        let fiber1_nonreciprocal = nonrecip(&config.fiber1, component::FIBER1_NONRECIPROCAL)?;
        let fiber2_nonreciprocal = nonrecip(&config.fiber2, component::FIBER2_NONRECIPROCAL)?;

        let temps = |profile: &TemperatureProfile, id: u64| -> Result<Option<(TemperatureSeries, TemperatureSeries)>> {
            if profile.is_constant() {
                return Ok(None);
            }
            let mut p = profile.clone();
            p.seed = component_seed(seed, id, profile.seed);
            gen_temperature(&p, grid).map(Some)
        };
        let temp_local = temps(&config.local_ifo.temperature, component::TEMP_LOCAL)?;
        let temp_remote = temps(&config.remote_ifo.temperature, component::TEMP_REMOTE)?;

        let mut detection: [Option<Vec<f64>>; 6] = Default::default();
        for (i, level) in config.detection_noise.levels().into_iter().enumerate() {
            let spec = NoiseSpec::white_pm(level, 0);
            detection[i] = segment_noise(&spec, grid, component_seed(seed, component::DETECTION + i as u64, 0))?;
        }

        Ok(Self {
            grid: *grid,
            laser1,
            laser2,
            nu1,
            nu2,
            fiber1_segments,
            fiber2_segments,
            fiber1_nonreciprocal,
            fiber2_nonreciprocal,
            temp_local,
            temp_remote,
            detection,
        })
    }
}

/// Oracle-only traces. Nothing on the measurement side reads these.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// One-way fiber-1 noise seen at the remote end, `fwd1`.
    pub n1: PhaseSeries,
    /// One-way fiber-2 noise seen at the remote end, `fwd2`.
    pub n2: PhaseSeries,
    pub phi_c: PhaseSeries,
    pub anc_in_loop_error: PhaseSeries,
    /// ANC reference `ϕ_l = L1 + θ_local`.
    pub phi_local: PhaseSeries,
    /// Transferred phase at the remote end before the remote interferometer.
    pub phi_remote: PhaseSeries,
    pub theta_local: PhaseSeries,
    pub theta_remote: PhaseSeries,
    pub nu1: FrequencySeries,
    pub nu2: FrequencySeries,
    pub temp_local_effective: Option<TemperatureSeries>,
    pub temp_remote_effective: Option<TemperatureSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub tau1_s: f64,
    pub tau2_s: f64,
    pub delay_model: DelayModel,
    pub anc: AncMode,
    pub anc_bandwidth_hz: Option<f64>,
    pub remote_mirror: RemoteMirror,
    pub same_laser: bool,
    pub zero_delay: bool,
    pub aom: AomOffsets,
    pub delta_l_local_m: f64,
    pub delta_l_remote_m: f64,
    pub carrier_hz: f64,
    /// Leading samples excluded from statistics on every measured series.
    pub warmup: usize,
}

/// Every photodiode phase of one run on a shared grid, plus the sensor
/// temperatures at their own sampling and the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatRecord {
    pub grid: SampleGrid,
    pub pd1: PhaseSeries,
    pub pd3a: PhaseSeries,
    pub pd3b: PhaseSeries,
    pub pd4a: PhaseSeries,
    pub pd4b: PhaseSeries,
    pub lm: PhaseSeries,
    pub temp_local: Option<TemperatureSeries>,
    pub temp_remote: Option<TemperatureSeries>,
    pub meta: RecordMeta,
    pub truth: GroundTruth,
}

impl BeatRecord {
    /// Measured series by name, in the persisted order.
    pub fn measured(&self) -> [(&'static str, &PhaseSeries); 6] {
        [
            ("pd1", &self.pd1),
            ("pd3a", &self.pd3a),
            ("pd3b", &self.pd3b),
            ("pd4a", &self.pd4a),
            ("pd4b", &self.pd4b),
            ("lm", &self.lm),
        ]
    }
}

struct FiberPaths {
    fwd: Vec<f64>,
    bwd: Vec<f64>,
}

fn fiber_paths(
    delays: &Delays,
    fiber: &FiberModel,
    segments: &[Option<Vec<f64>>],
    nonreciprocal: Option<&Vec<f64>>,
    tau: Lag,
    n: usize,
) -> FiberPaths {
    let mut fwd = vec![0.0; n];
    let mut bwd = vec![0.0; n];
    for (seg, noise) in fiber.segments.iter().zip(segments) {
        let Some(noise) = noise else { continue };
        let near = delays.fraction(tau, seg.position);
        let far = delays.minus(tau, near);
        delays.add(&mut fwd, noise, far, 1.0);
        delays.add(&mut bwd, noise, near, 1.0);
    }
    if let Some(nr) = nonreciprocal {
        for (b, v) in bwd.iter_mut().zip(nr) {
            *b += v;
        }
    }
    FiberPaths { fwd, bwd }
}

fn add_noise(v: &mut [f64], noise: &Option<Vec<f64>>) {
    if let Some(n) = noise {
        for (a, b) in v.iter_mut().zip(n) {
            *a += b;
        }
    }
}

/// Runs the link on a fixed set of disturbances.
pub fn propagate(config: &LinkConfig, d: &Disturbances) -> Result<BeatRecord> {
    config.validate()?;
    let grid = d.grid;
    let n = grid.n;
    let delays = Delays {
        model: config.delay_model,
        dt: grid.dt,
    };
    let tau1 = delays.lag(&grid, "fiber1.tau_s", config.tau1_s())?;
    let tau2 = delays.lag(&grid, "fiber2.tau_s", config.tau2_s())?;
    let (k1, k2) = (delays.samples(tau1), delays.samples(tau2));
    let reach = 3 * k1 + 2 * k2;
    if reach >= n {
        return Err(Error::Insufficient {
            what: format!("{n} samples do not cover the {reach}-sample propagation warm-up"),
            suggestion: None,
        });
    }
    let carrier = config.laser1.nu0_hz;
    let thermal = |t: &Option<(TemperatureSeries, TemperatureSeries)>, dl: f64, gamma: f64| -> Result<PhaseSeries> {
        match t {
            Some((_, eff)) => thermal_phase(dl, eff, gamma, carrier),
            None => Ok(PhaseSeries::zeros(grid)),
        }
    };
    let theta_local = thermal(&d.temp_local, config.delta_l_local_m(), config.local_ifo.gamma_fs_per_k_m)?;
    let theta_remote = match config.remote_mirror {
        RemoteMirror::PartialFm => PhaseSeries::zeros(grid),
        RemoteMirror::Standard => thermal(&d.temp_remote, config.delta_l_remote_m(), config.remote_ifo.gamma_fs_per_k_m)?,
    };

    let l1 = d.laser1.values();
    let l2 = if config.same_laser { d.laser1.values() } else { d.laser2.values() };
    let phi_l: Vec<f64> = l1.iter().zip(theta_local.values()).map(|(a, b)| a + b).collect();

    let f1 = fiber_paths(&delays, &config.fiber1, &d.fiber1_segments, d.fiber1_nonreciprocal.as_ref(), tau1, n);
    let f2 = fiber_paths(&delays, &config.fiber2, &d.fiber2_segments, d.fiber2_nonreciprocal.as_ref(), tau2, n);

    let mut rt1 = f1.bwd.clone();
    delays.add(&mut rt1, &f1.fwd, tau1, 1.0);

    let phi_l_series = PhaseSeries::new(grid, phi_l)?;
    let rt1_series = PhaseSeries::new(grid, rt1)?;
    let anc = anc_correction(&phi_l_series, &rt1_series, config.tau1_s(), config.anc, config.delay_model)?;
    let phi_l = phi_l_series.values();
    let rt1 = rt1_series.values();
    let c = anc.correction.values();

    let mut phi_rem = f1.fwd.clone();
    delays.add(&mut phi_rem, phi_l, tau1, 1.0);
    delays.add(&mut phi_rem, c, tau1, 1.0);
    let phi_r2: Vec<f64> = phi_rem.iter().zip(theta_remote.values()).map(|(a, b)| a + b).collect();

    let two_tau2 = delays.twice(tau2);
    let mut pd4a = f2.bwd.clone();
    delays.add(&mut pd4a, &phi_r2, tau2, 1.0);
    delays.add(&mut pd4a, l2, Lag::Samples(0), -1.0);

    let mut pd4b = f2.bwd.clone();
    delays.add(&mut pd4b, l2, two_tau2, 1.0);
    delays.add(&mut pd4b, &f2.fwd, tau2, 1.0);
    delays.add(&mut pd4b, l2, Lag::Samples(0), -1.0);

    let mut pd3a: Vec<f64> = phi_r2.iter().zip(&f2.fwd).map(|(a, b)| a - b).collect();
    delays.add(&mut pd3a, l2, tau2, -1.0);

    let mut pd3b: Vec<f64> = f2.fwd.iter().zip(&phi_r2).map(|(a, b)| a - b).collect();
    delays.add(&mut pd3b, &phi_r2, two_tau2, 1.0);
    delays.add(&mut pd3b, &f2.bwd, tau2, 1.0);

    let mut pd1: Vec<f64> = rt1.iter().zip(phi_l).map(|(r, p)| r - p).collect();
    delays.add(&mut pd1, phi_l, delays.twice(tau1), 1.0);

    let mut lm: Vec<f64> = l1.iter().zip(l2).map(|(a, b)| a - b).collect();

    for (v, noise) in [&mut pd1, &mut pd3a, &mut pd3b, &mut pd4a, &mut pd4b, &mut lm]
        .into_iter()
        .zip(&d.detection)
    {
        add_noise(v, noise);
    }

    let warmup = (reach + anc.settle.saturating_sub(2 * k1)).min(n - 1);
    let measured = |v: Vec<f64>| -> Result<PhaseSeries> { Ok(PhaseSeries::new(grid, v)?.with_warmup(warmup)) };

    let recorded = |t: &Option<(TemperatureSeries, TemperatureSeries)>| -> Option<TemperatureSeries> {
        let (meas, _) = t.as_ref()?;
        let factor = grid.samples_in("temperature_sample_s", config.temperature_sample_s).ok()?;
        if factor == 0 {
            return None;
        }
        meas.subsample(factor).ok()
    };

    Ok(BeatRecord {
        grid,
        pd1: measured(pd1)?,
        pd3a: measured(pd3a)?,
        pd3b: measured(pd3b)?,
        pd4a: measured(pd4a)?,
        pd4b: measured(pd4b)?,
        lm: measured(lm)?,
        temp_local: recorded(&d.temp_local),
        temp_remote: recorded(&d.temp_remote),
        meta: RecordMeta {
            tau1_s: config.tau1_s(),
            tau2_s: config.tau2_s(),
            delay_model: config.delay_model,
            anc: config.anc,
            anc_bandwidth_hz: config.anc.bandwidth_hz(),
            remote_mirror: config.remote_mirror,
            same_laser: config.same_laser,
            zero_delay: config.zero_delay,
            aom: config.aom,
            delta_l_local_m: config.delta_l_local_m(),
            delta_l_remote_m: config.delta_l_remote_m(),
            carrier_hz: carrier,
            warmup,
        },
        truth: GroundTruth {
            n1: PhaseSeries::new(grid, f1.fwd)?,
            n2: PhaseSeries::new(grid, f2.fwd)?,
            phi_c: anc.correction,
            anc_in_loop_error: anc.in_loop_error,
            phi_local: phi_l_series.clone().with_carrier(carrier),
            phi_remote: PhaseSeries::new(grid, phi_rem)?.with_warmup((anc.settle + k1).min(n - 1)),
            theta_local,
            theta_remote,
            nu1: d.nu1.clone(),
            nu2: if config.same_laser { d.nu1.clone() } else { d.nu2.clone() },
            temp_local_effective: d.temp_local.as_ref().map(|t| t.1.clone()),
            temp_remote_effective: d.temp_remote.as_ref().map(|t| t.1.clone()),
        },
    })
}

/// Generates disturbances for `seed` and propagates them.
pub fn simulate(config: &LinkConfig, grid: &SampleGrid, seed: u64) -> Result<BeatRecord> {
    let d = Disturbances::generate(config, grid, seed)?;
    propagate(config, &d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::SineComponent;
    use crate::stability::psd;

    fn grid(dt: f64, n: usize) -> SampleGrid {
        SampleGrid::new(dt, n, 0.0).unwrap()
    }

    fn noisy_config() -> LinkConfig {
        LinkConfig {
            laser1: LaserModel {
                drift_hz_per_s: 0.7,
                noise: NoiseSpec::white_fm(1e-2, 0),
                ..LaserModel::default()
            },
            laser2: LaserModel {
                drift_hz_per_s: -0.2,
                noise: NoiseSpec::white_pm(0.3, 0),
                ..LaserModel::default()
            },
            fiber1: FiberModel::distributed(1e-3, 4, NoiseSpec::white_fm(5.0, 0)),
            fiber2: FiberModel::distributed(1e-3, 4, NoiseSpec::white_pm(0.2, 0)),
            ..LinkConfig::default()
        }
    }

    fn pd_sub(a: &PhaseSeries, b: &PhaseSeries, scale: f64) -> Vec<f64> {
        a.values().iter().zip(b.values()).map(|(x, y)| x - scale * y).collect()
    }

    fn max_abs(v: &[f64]) -> f64 {
        v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    #[test]
    fn thermal_phase_examples() {
        let g = grid(1.0, 3);
        let t = TemperatureSeries::new(g, vec![300.0, 301.0, 299.0]).unwrap();
        let p = thermal_phase(0.15, &t, 37.0, 194.4e12).unwrap();
        let expected = TAU * 194.4e12 * 0.15 * 37e-15;
        assert!((p.values()[1] - expected).abs() < 1e-12);
        assert!((expected - 6.78).abs() < 0.01);
        assert_eq!(p.values()[0], 0.0);
        assert!(thermal_phase(0.0, &t, 37.0, 194.4e12).unwrap().values().iter().all(|&v| v == 0.0));
        let flat = TemperatureSeries::new(g, vec![310.0; 3]).unwrap();
        assert!(thermal_phase(0.35, &flat, 37.0, 194.4e12).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quiet_link_has_zero_correction() {
        let cfg = LinkConfig {
            fiber1: FiberModel::quiet(1e-3),
            fiber2: FiberModel::quiet(1e-3),
            ..LinkConfig::default()
        };
        let r = simulate(&cfg, &grid(1e-4, 500), 1).unwrap();
        assert!(r.truth.phi_c.values().iter().all(|&v| v == 0.0));
        for (_, s) in r.measured() {
            assert!(s.values().iter().all(|&v| v == 0.0));
        }
    }

    /// Remote error for a linear drift `d` from the exact recursion with
    /// zero start: `ϕ_C = 2πdτ·t + h`, where `h = −2πdτ·t` on `[0, 2τ)` and
    /// `h(t) = −h(t−2τ)`. The remote error is `−πdτ² + h(t−τ)`.
    fn drift_error_oracle(d: f64, tau: f64, t: f64) -> f64 {
        let s = t - tau;
        let m = (s / (2.0 * tau) + 1e-9).floor();
        let within = (s - 2.0 * tau * m).max(0.0);
        let sign = if (m as i64) % 2 == 0 { -1.0 } else { 1.0 };
        -std::f64::consts::PI * d * tau * tau + sign * TAU * d * tau * within
    }

    #[test]
    fn anc_linear_drift_residual_matches_oracle() {
        let d = 1.0;
        let tau = 2.1e-4;
        let dt = tau / 7.0;
        let cfg = LinkConfig {
            laser1: LaserModel::drifting(d),
            fiber1: FiberModel::quiet(tau),
            fiber2: FiberModel::quiet(tau),
            ..LinkConfig::default()
        };
        let g = grid(dt, 20_000);
        let r = simulate(&cfg, &g, 3).unwrap();
        let rem = r.truth.phi_remote.values();
        let loc = r.truth.phi_local.values();
        let bound = TAU * d * tau * tau;
        let mut worst: f64 = 0.0;
        for i in 7..g.n {
            let err = rem[i] - loc[i];
            let oracle = drift_error_oracle(d, tau, g.time(i));
            assert!((err - oracle).abs() < 1e-12 * g.time(i).max(1.0), "i={i} err={err} oracle={oracle}");
            worst = worst.max(err.abs());
        }
        // The start-up alternation adds up to 2πdτ² on top of the πdτ²
        // steady offset.
        assert!(worst <= 2.5 * bound * (1.0 + 1e-9));
        assert!(worst < 10.0 * bound);
    }

    #[test]
    fn anc_telescoped_identity() {
        let tau = 5e-4;
        let cfg = LinkConfig {
            laser1: LaserModel {
                drift_hz_per_s: 2.0,
                curvature_hz_per_s2: 0.3,
                noise: NoiseSpec::white_fm(1.0, 0),
                ..LaserModel::default()
            },
            fiber1: FiberModel::quiet(tau),
            fiber2: FiberModel::quiet(tau),
            ..LinkConfig::default()
        };
        let g = grid(1e-4, 5_000);
        let r = simulate(&cfg, &g, 5).unwrap();
        let c = r.truth.phi_c.values();
        let p = r.truth.phi_local.values();
        for i in 20..g.n {
            let lhs = c[i - 10] + c[i];
            let rhs = p[i] - p[i - 10];
            assert!((lhs - rhs).abs() < 1e-9 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn anc_suppression_follows_transfer_function() {
        // Single midpoint segment: remote residual over one-way noise is
        // |1 − e^{−iωτ}|² / |1 + e^{−2iωτ}|² = sin²(ωτ/2)/cos²(ωτ).
        let tau = 1e-3;
        let dt = tau / 10.0;
        let cfg = LinkConfig {
            fiber1: FiberModel::distributed(tau, 1, NoiseSpec::white_pm(1.0, 0)),
            fiber2: FiberModel::quiet(tau),
            ..LinkConfig::default()
        };
        let g = grid(dt, 1 << 18);
        let r = simulate(&cfg, &g, 9).unwrap();
        let start = r.truth.phi_remote.warmup();
        let residual: Vec<f64> = pd_sub(&r.truth.phi_remote, &r.truth.phi_local, 1.0)[start..].to_vec();
        let one_way = r.truth.n1.values()[start..].to_vec();
        let gs = grid(dt, residual.len());
        let pr = psd(&PhaseSeries::new(gs, residual).unwrap(), 15).unwrap();
        let pn = psd(&PhaseSeries::new(gs, one_way).unwrap(), 15).unwrap();
        for k in 2..=20 {
            let w = TAU * pr.freq_hz[k] * tau;
            let expected = (w / 2.0).sin().powi(2) / w.cos().powi(2);
            let ratio = pr.density[k] / pn.density[k];
            assert!((ratio / expected - 1.0).abs() < 0.25, "bin {k}: {ratio} vs {expected}");
        }
        assert!(pr.density[2] / pn.density[2] < 1e-3);
    }

    #[test]
    fn zero_delay_two_way_exactness() {
        let cfg = LinkConfig {
            zero_delay: true,
            ..noisy_config()
        };
        let r = simulate(&cfg, &grid(1e-4, 20_000), 11).unwrap();
        let ltw_l: Vec<f64> = pd_sub(&r.pd4a, &r.pd4b, 0.5);
        let ltw_r: Vec<f64> = r.pd3a.values().iter().zip(r.pd3b.values()).map(|(a, b)| a + 0.5 * b).collect();
        let lm = r.lm.values();
        assert!(max_abs(&ltw_l.iter().zip(lm).map(|(a, b)| a - b).collect::<Vec<_>>()) < 1e-9);
        assert!(max_abs(&ltw_r.iter().zip(lm).map(|(a, b)| a - b).collect::<Vec<_>>()) < 1e-9);
        let two_n2 = r.truth.n2.scaled(2.0);
        assert!(max_abs(&pd_sub(&r.pd4b, &two_n2, 1.0)) < 1e-12);
        assert!(max_abs(&pd_sub(&r.pd3b, &two_n2, 1.0)) < 1e-12);
    }

    #[test]
    fn delayed_pd4b_and_pd3b_differ_by_two_tau_increment() {
        let tau = 1e-3;
        let cfg = LinkConfig {
            same_laser: true,
            laser1: LaserModel::default(),
            fiber1: FiberModel::quiet(tau),
            fiber2: FiberModel::distributed(tau, 1, NoiseSpec::white_fm(10.0, 0)),
            ..LinkConfig::default()
        };
        let g = grid(tau / 10.0, 10_000);
        let r = simulate(&cfg, &g, 2).unwrap();
        let n2 = r.truth.n2.values();
        let w = r.meta.warmup;
        for i in w..g.n {
            let diff = (r.pd4b.values()[i] - r.pd3b.values()[i]).abs();
            // Both are fwd2 + bwd2 pairs taken τ apart; the gap is bounded
            // by the one-way noise change over 2τ.
            let incr = (n2[i] - n2[i - 20]).abs() + (n2[i - 10] - n2[i - 20]).abs() + (n2[i] - n2[i - 10]).abs();
            assert!(diff <= incr + 1e-12, "i={i}");
        }
    }

    #[test]
    fn flipping_fiber2_noise_sign() {
        let cfg = LinkConfig {
            zero_delay: true,
            ..noisy_config()
        };
        let g = grid(1e-4, 4_000);
        let d = Disturbances::generate(&cfg, &g, 4).unwrap();
        let mut flipped = d.clone();
        for s in flipped.fiber2_segments.iter_mut().flatten() {
            for v in s.iter_mut() {
                *v = -*v;
            }
        }
        let a = propagate(&cfg, &d).unwrap();
        let b = propagate(&cfg, &flipped).unwrap();
        assert!(max_abs(&pd_sub(&a.pd4b, &b.pd4b, -1.0)) < 1e-12);
        assert!(max_abs(&pd_sub(&a.pd3b, &b.pd3b, -1.0)) < 1e-12);
        let ctw = |r: &BeatRecord| -> Vec<f64> { r.pd4a.values().iter().zip(r.pd3a.values()).map(|(x, y)| 0.5 * (x + y)).collect() };
        let (ca, cb) = (ctw(&a), ctw(&b));
        assert!(max_abs(&ca.iter().zip(&cb).map(|(x, y)| x - y).collect::<Vec<_>>()) < 1e-12);
    }

    fn step_record(mirror: RemoteMirror) -> BeatRecord {
        let cfg = LinkConfig {
            same_laser: true,
            fiber1: FiberModel::quiet(1e-3),
            fiber2: FiberModel::quiet(1e-3),
            remote_ifo: RemoteInterferometer::with_mismatch(
                0.35,
                TemperatureProfile {
                    sines: vec![SineComponent {
                        amplitude_k: 1.0,
                        period_s: 1.0,
                        phase_rad: 0.0,
                    }],
                    ..TemperatureProfile::default()
                },
            ),
            remote_mirror: mirror,
            ..LinkConfig::default()
        };
        let g = grid(1e-3, 400);
        let mut d = Disturbances::generate(&cfg, &g, 1).unwrap();
        if let Some((meas, eff)) = d.temp_remote.as_mut() {
            let step: Vec<f64> = (0..g.n).map(|i| if i < 200 { 300.0 } else { 300.1 }).collect();
            *eff = TemperatureSeries::new(g, step.clone()).unwrap();
            *meas = TemperatureSeries::new(g, step).unwrap();
        }
        propagate(&cfg, &d).unwrap()
    }

    #[test]
    fn remote_temperature_step_shifts_two_way_phase() {
        let r = step_record(RemoteMirror::Standard);
        let ltw: Vec<f64> = pd_sub(&r.pd4a, &r.pd4b, 0.5);
        let lm = r.lm.values();
        let expected = TAU * 194.4e12 * 0.35 * 37e-15 * 0.1;
        assert!((expected - 1.58).abs() < 0.01);
        let before = ltw[100] - lm[100];
        let after = ltw[399] - lm[399];
        assert!(before.abs() < 1e-12);
        assert!((after - expected).abs() < 1e-9, "{after} vs {expected}");
    }

    #[test]
    fn partial_fm_removes_remote_thermal_term() {
        let r = step_record(RemoteMirror::PartialFm);
        assert!(r.truth.theta_remote.values().iter().all(|&v| v == 0.0));
        let ltw: Vec<f64> = pd_sub(&r.pd4a, &r.pd4b, 0.5);
        assert!(max_abs(&ltw) < 1e-12);
        assert_eq!(r.meta.delta_l_remote_m, 0.0);
    }

    #[test]
    fn matched_arms_cancel() {
        let ifo = LocalInterferometer {
            l11_m: 2.0,
            l12_m: 3.0,
            l13_m: 5.0,
            l14_m: 1.0,
            l15_m: 4.0,
            l16_m: 3.0,
            ..LocalInterferometer::default()
        };
        assert_eq!(ifo.delta_l_m(), 0.0);
        let remote = RemoteInterferometer {
            l21_m: 1.0,
            l22_m: 3.0,
            l23_m: 2.0,
            ..RemoteInterferometer::default()
        };
        assert_eq!(remote.delta_l_m(), 0.0);
    }

    #[test]
    fn simulate_is_deterministic() {
        let cfg = noisy_config();
        let g = grid(1e-4, 3_000);
        assert_eq!(simulate(&cfg, &g, 7).unwrap(), simulate(&cfg, &g, 7).unwrap());
        assert_ne!(simulate(&cfg, &g, 7).unwrap().pd4a, simulate(&cfg, &g, 8).unwrap().pd4a);
    }

    #[test]
    fn same_laser_cancels_lm() {
        let cfg = LinkConfig {
            same_laser: true,
            ..noisy_config()
        };
        let r = simulate(&cfg, &grid(1e-4, 1_000), 1).unwrap();
        assert!(r.lm.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn off_grid_delay_rejected() {
        let cfg = LinkConfig {
            fiber1: FiberModel::quiet(2.15e-4),
            ..LinkConfig::default()
        };
        let e = simulate(&cfg, &grid(1e-4, 100), 1).unwrap_err();
        assert!(e.is_config_error(), "{e}");
    }

    #[test]
    fn loop_gain_bound_enforced() {
        let tau = 1e-3;
        let cfg = LinkConfig {
            anc: AncMode::Loop { gain_per_s: 600.0 },
            fiber1: FiberModel::quiet(tau),
            ..LinkConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::UnstableLoop { .. })));
        let first_order = LinkConfig {
            anc: AncMode::Loop { gain_per_s: 100.0 },
            delay_model: DelayModel::FirstOrder,
            ..LinkConfig::default()
        };
        assert!(first_order.validate().is_err());
    }

    #[test]
    fn loop_mode_settles_and_tracks() {
        let tau = 1e-3;
        let dt = 1e-4;
        for gain in [50.0, 250.0, 450.0] {
            let cfg = LinkConfig {
                anc: AncMode::Loop { gain_per_s: gain },
                laser1: LaserModel::drifting(1.0),
                fiber1: FiberModel::distributed(tau, 1, NoiseSpec::white_fm(1.0, 0)),
                fiber2: FiberModel::quiet(tau),
                ..LinkConfig::default()
            };
            let r = simulate(&cfg, &grid(dt, 40_000), 3).unwrap();
            let e = &r.truth.anc_in_loop_error;
            let tail = &e.values()[e.warmup()..];
            let max_tail = max_abs(tail);
            assert!(max_tail.is_finite() && max_tail < 10.0, "gain {gain}: {max_tail}");
            // The loop removes the low-frequency round-trip noise it sees.
            let open = r.pd1.values()[e.warmup()..].to_vec();
            let rms = |v: &[f64]| {
                let m = v.iter().sum::<f64>() / v.len() as f64;
                (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
            };
            assert!(rms(tail) < rms(&open), "gain {gain}");
        }
    }

    #[test]
    fn first_order_matches_exact_for_smooth_signals() {
        let tau = 1e-3;
        let base = LinkConfig {
            laser1: LaserModel {
                drift_hz_per_s: 3.0,
                curvature_hz_per_s2: 0.5,
                ..LaserModel::default()
            },
            laser2: LaserModel::drifting(-1.0),
            fiber1: FiberModel::quiet(tau),
            fiber2: FiberModel::quiet(tau),
            ..LinkConfig::default()
        };
        let g = grid(1e-4, 50_000);
        let exact = simulate(&base, &g, 1).unwrap();
        let approx = simulate(
            &LinkConfig {
                delay_model: DelayModel::FirstOrder,
                ..base
            },
            &g,
            1,
        )
        .unwrap();
        let w = exact.meta.warmup;
        let ltw = |r: &BeatRecord| pd_sub(&r.pd4a, &r.pd4b, 0.5);
        let (a, b) = (ltw(&exact), ltw(&approx));
        // Exact and expanded forms differ by second-order terms plus the
        // exact run's start-up alternation, both O(2πdτ²).
        let bound = 10.0 * TAU * 3.5 * tau * tau;
        for i in w..g.n {
            let da = a[i] - a[w];
            let db = b[i] - b[w];
            assert!((da - db).abs() < bound, "i={i}: {da} vs {db}");
        }
    }

    #[test]
    fn correlated_fibers() {
        let noise = NoiseSpec::white_pm(1.0, 0);
        let mk = |rho: f64| LinkConfig {
            zero_delay: true,
            same_laser: true,
            fiber1: FiberModel::distributed(0.0, 1, noise),
            fiber2: FiberModel::distributed(0.0, 1, noise),
            fiber_noise_correlation: rho,
            ..LinkConfig::default()
        };
        let g = grid(1e-3, 2_000);
        let full = simulate(&mk(1.0), &g, 4).unwrap();
        assert_eq!(full.truth.n1, full.truth.n2);
        let bad = LinkConfig {
            fiber2: FiberModel::distributed(0.0, 2, noise),
            ..mk(0.5)
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn temperatures_recorded_at_sensor_rate() {
        let cfg = LinkConfig {
            fiber1: FiberModel::quiet(0.0),
            fiber2: FiberModel::quiet(0.0),
            local_ifo: LocalInterferometer::with_mismatch(
                0.15,
                TemperatureProfile {
                    random_walk_k2_per_s: 1e-4,
                    heat_lag_s: 20.0,
                    ..TemperatureProfile::default()
                },
            ),
            ..LinkConfig::default()
        };
        let r = simulate(&cfg, &grid(1.0, 101), 1).unwrap();
        let t = r.temp_local.unwrap();
        assert_eq!(t.grid().dt, 5.0);
        assert_eq!(t.len(), 21);
        let eff = r.truth.temp_local_effective.unwrap();
        assert_eq!(eff.values()[25], t.values()[1]);
        assert!(r.temp_remote.is_none());
    }
}
