//! Scenario configuration: one JSON document holding the link, the sample
//! grid, the seed and the analysis pipeline, plus the bundled scenarios.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::link::{
    AncMode, DelayModel, DetectionNoise, FiberModel, LinkConfig, LocalInterferometer, RemoteInterferometer,
    RemoteMirror, DEFAULT_TAU_S,
};
use crate::noise::{LaserModel, NoiseSpec, SineComponent, TemperatureProfile};
use crate::regression::{DecomposeOptions, FitConstants};
use crate::series::{CounterKind, SampleGrid};
use crate::stability::Estimator;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dt_s: f64,
    pub n: usize,
    #[serde(default)]
    pub t0_s: f64,
}

impl GridSpec {
    pub fn grid(&self) -> Result<SampleGrid> {
        SampleGrid::new(self.dt_s, self.n, self.t0_s)
    }
}

/// Fast grids resolve the fiber delay; slow grids carry it to first order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Timescale {
    Fast,
    Slow,
}

/// Comparison series formed from the photodiode phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    /// `ltw_local − lm`
    LtwLocal,
    /// `ltw_remote − lm`
    LtwRemote,
    /// `ctw − lm`
    Ctw,
    /// `pd1/2 − pd4b/2`
    UniTwoWay,
    /// `pd1/2`
    Fiber1Estimate,
    /// `pd4b/2`
    Fiber2Estimate,
}

impl SeriesKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SeriesKind::LtwLocal => "ltw_local",
            SeriesKind::LtwRemote => "ltw_remote",
            SeriesKind::Ctw => "ctw",
            SeriesKind::UniTwoWay => "uni_two_way",
            SeriesKind::Fiber1Estimate => "fiber1_estimate",
            SeriesKind::Fiber2Estimate => "fiber2_estimate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecompositionSpec {
    pub max_lag_local_s: f64,
    pub max_lag_remote_s: f64,
    #[serde(default = "default_refinements")]
    pub refinements: usize,
}

fn default_refinements() -> usize {
    4
}

impl DecompositionSpec {
    pub fn options(&self, link: &LinkConfig) -> DecomposeOptions {
        DecomposeOptions {
            max_lag_local_s: self.max_lag_local_s,
            max_lag_remote_s: self.max_lag_remote_s,
            constants: FitConstants {
                gamma_fs_per_k_m: link.local_ifo.gamma_fs_per_k_m,
                nu_hz: link.laser1.nu0_hz,
            },
            refinements: self.refinements,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    pub gate_s: f64,
    #[serde(default = "default_series")]
    pub series: Vec<SeriesKind>,
    #[serde(default = "default_counters")]
    pub counters: Vec<CounterKind>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default = "yes")]
    pub offsets: bool,
    #[serde(default = "yes")]
    pub slips: bool,
    /// `None` uses half a cycle per gate.
    #[serde(default)]
    pub slip_threshold_hz: Option<f64>,
    #[serde(default = "default_consistency_tolerance")]
    pub consistency_tolerance_hz: f64,
    /// Welch segments for the phase PSD of every series; `None` skips it.
    #[serde(default)]
    pub psd_segments: Option<usize>,
    #[serde(default)]
    pub decomposition: Option<DecompositionSpec>,
}

fn default_series() -> Vec<SeriesKind> {
    vec![SeriesKind::LtwLocal, SeriesKind::LtwRemote, SeriesKind::Ctw]
}

fn default_counters() -> Vec<CounterKind> {
    vec![CounterKind::Pi, CounterKind::Lambda]
}

fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::Oadev, Estimator::Mdev]
}

fn yes() -> bool {
    true
}

fn default_consistency_tolerance() -> f64 {
    1e-3
}

impl PipelineSpec {
    pub fn new(gate_s: f64) -> Self {
        Self {
            gate_s,
            series: default_series(),
            counters: default_counters(),
            estimators: default_estimators(),
            offsets: true,
            slips: true,
            slip_threshold_hz: None,
            consistency_tolerance_hz: default_consistency_tolerance(),
            psd_segments: None,
            decomposition: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub seed: u64,
    pub grid: GridSpec,
    #[serde(default)]
    pub link: LinkConfig,
    pub pipeline: PipelineSpec,
    /// Bundle directory; the CLI `--out` flag takes precedence.
    #[serde(default)]
    pub output_dir: Option<String>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Hex SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn timescale(&self) -> Timescale {
        match self.link.delay_model {
            DelayModel::Exact => Timescale::Fast,
            DelayModel::FirstOrder => Timescale::Slow,
        }
    }

    /// Applies `key.path=value` overrides. The value is read as JSON and
    /// falls back to a plain string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut doc = serde_json::to_value(self)?;
        for o in overrides {
            let o = o.as_ref();
            let (path, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("override `{o}` is not key=value")))?;
            let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, path.trim(), value)?;
        }
        serde_json::from_value(doc).map_err(|e| Error::InvalidConfig(format!("after overrides: {e}")))
    }

    /// Every grid-independent and on-grid check, before any computation.
    pub fn validate(&self) -> Result<SampleGrid> {
        let grid = self.grid.grid()?;
        let link = &self.link;
        link.validate()?;
        if link.delay_model == DelayModel::Exact {
            grid.samples_in("fiber1.tau_s", link.tau1_s())?;
            grid.samples_in("fiber2.tau_s", link.tau2_s())?;
        }
        let temps = !link.local_ifo.temperature.is_constant() || !link.remote_ifo.temperature.is_constant();
        if temps {
            let f = grid.samples_in("link.temperature_sample_s", link.temperature_sample_s)?;
            if f == 0 {
                return Err(Error::InvalidConfig("temperature_sample_s must be >= grid dt".into()));
            }
            for (name, p) in [("local", &link.local_ifo.temperature), ("remote", &link.remote_ifo.temperature)] {
                grid.samples_in(&format!("{name} heat_lag_s"), p.heat_lag_s)?;
            }
        }
        let p = &self.pipeline;
        let m = grid.samples_in("pipeline.gate_s", p.gate_s)?;
        if m == 0 {
            return Err(Error::InvalidConfig("pipeline.gate_s must be >= grid dt".into()));
        }
        if p.gate_s * 4.0 > grid.span() {
            return Err(Error::InvalidConfig(format!(
                "pipeline.gate_s {} s leaves fewer than four gates in the {} s record",
                p.gate_s,
                grid.span()
            )));
        }
        if p.series.is_empty() {
            return Err(Error::InvalidConfig("pipeline.series is empty".into()));
        }
        if p.counters.contains(&CounterKind::Instant) {
            return Err(Error::InvalidConfig("pipeline.counters accepts Pi and Lambda only".into()));
        }
        if p.slips && !(p.counters.contains(&CounterKind::Pi) && p.counters.contains(&CounterKind::Lambda)) {
            return Err(Error::InvalidConfig("slip detection needs both Pi and Lambda counters".into()));
        }
        if let Some(t) = p.slip_threshold_hz {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::InvalidConfig("slip_threshold_hz must be > 0".into()));
            }
        }
        if let Some(s) = p.psd_segments {
            if s == 0 {
                return Err(Error::InvalidConfig("psd_segments must be >= 1".into()));
            }
        }
        if let Some(d) = &p.decomposition {
            if !temps {
                return Err(Error::InvalidConfig(
                    "decomposition needs a non-constant local or remote temperature profile".into(),
                ));
            }
            let tg = link.temperature_sample_s;
            for (what, lag) in [("max_lag_local_s", d.max_lag_local_s), ("max_lag_remote_s", d.max_lag_remote_s)] {
                if !(lag.is_finite() && lag >= 0.0) {
                    return Err(Error::InvalidConfig(format!("{what} must be >= 0")));
                }
                SampleGrid::new(tg, 1, 0.0)?.samples_in(what, lag)?;
                if 4.0 * lag > grid.span() {
                    return Err(Error::InvalidConfig(format!(
                        "{what} {lag} s needs a record of at least {} s",
                        4.0 * lag
                    )));
                }
            }
        }
        Ok(grid)
    }
}

fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("`{part}` in `{path}` is not an array index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::InvalidConfig(format!("index {idx} in `{path}` out of range ({len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            Value::Null => {
                *cur = Value::Object(Default::default());
                let Value::Object(map) = cur else { unreachable!() };
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            _ => return Err(Error::InvalidConfig(format!("`{path}` descends into a scalar at `{part}`"))),
        };
    }
    Err(Error::InvalidConfig("empty override key".into()))
}

/// Names accepted by [`bundled`].
pub const BUNDLED: [&str; 6] = [
    "fig2_anc_loop",
    "fig3_independent_lasers",
    "fig3_same_laser",
    "fig4_partial_fm",
    "fig5_same_laser_pfm",
    "fig6_unidirectional",
];

pub fn bundled(name: &str) -> Result<ScenarioConfig> {
    let cfg = match name {
        "fig2_anc_loop" => anc_loop(),
        "fig3_independent_lasers" | "fig3_independent" => thermal("fig3_independent_lasers", false, false),
        "fig3_same_laser" => thermal("fig3_same_laser", true, false),
        "fig4_partial_fm" => thermal("fig4_partial_fm", false, true),
        "fig5_same_laser_pfm" => thermal("fig5_same_laser_pfm", true, true),
        "fig6_unidirectional" => unidirectional(),
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown scenario `{other}`; bundled: {}",
                BUNDLED.join(", ")
            )))
        }
    };
    Ok(cfg)
}

fn fast_grid(n: usize) -> GridSpec {
    GridSpec {
        dt_s: DEFAULT_TAU_S / 10.0,
        n,
        t0_s: 0.0,
    }
}

fn noisy_laser(drift_hz_per_s: f64, white_fm: f64) -> LaserModel {
    LaserModel {
        drift_hz_per_s,
        noise: NoiseSpec::white_fm(white_fm, 0),
        ..LaserModel::default()
    }
}

fn anc_loop() -> ScenarioConfig {
    let fiber = FiberModel::distributed(DEFAULT_TAU_S, 4, NoiseSpec::white_fm(1.0, 0));
    let mut pipeline = PipelineSpec::new(100.0 * fast_grid(0).dt_s);
    pipeline.series = vec![
        SeriesKind::LtwLocal,
        SeriesKind::LtwRemote,
        SeriesKind::Ctw,
        SeriesKind::Fiber1Estimate,
    ];
    pipeline.psd_segments = Some(8);
    ScenarioConfig {
        name: "fig2_anc_loop".into(),
        description: "fast grid, servo-loop noise cancellation on fiber 1 at 1000 1/s gain".into(),
        seed: 2,
        grid: fast_grid(1 << 16),
        link: LinkConfig {
            laser1: noisy_laser(1.0, 1.0),
            laser2: noisy_laser(-0.5, 1.0),
            fiber1: fiber.clone(),
            fiber2: fiber,
            fiber_noise_correlation: 0.0,
            anc: AncMode::Loop { gain_per_s: 1000.0 },
            detection_noise: DetectionNoise::uniform(1e-6),
            ..LinkConfig::default()
        },
        pipeline,
        output_dir: None,
    }
}

fn thermal(name: &str, same_laser: bool, partial_fm: bool) -> ScenarioConfig {
    let local_t = TemperatureProfile {
        mean_k: 294.0,
        sines: vec![SineComponent {
            amplitude_k: 0.4,
            period_s: 86_400.0,
            phase_rad: 0.0,
        }],
        random_walk_k2_per_s: 1e-6,
        heat_lag_s: 2300.0,
        seed: 0,
    };
    let remote_t = TemperatureProfile {
        mean_k: 296.0,
        sines: vec![SineComponent {
            amplitude_k: 0.3,
            period_s: 1800.0,
            phase_rad: 0.5,
        }],
        random_walk_k2_per_s: 2e-6,
        heat_lag_s: 105.0,
        seed: 0,
    };
    let fiber = FiberModel::distributed(DEFAULT_TAU_S, 4, NoiseSpec::white_fm(1.0, 0));
    let mut pipeline = PipelineSpec::new(1.0);
    pipeline.decomposition = Some(DecompositionSpec {
        max_lag_local_s: 3000.0,
        max_lag_remote_s: 300.0,
        refinements: default_refinements(),
    });
    let mut description = String::from("slow grid, 1e5 s at 0.1 s, thermal mismatch 0.15 m local");
    description.push_str(if partial_fm {
        " with a partial Faraday mirror at the remote end"
    } else {
        " and 0.35 m remote"
    });
    description.push_str(if same_laser { ", one laser" } else { ", independent drifting lasers" });
    ScenarioConfig {
        name: name.into(),
        description,
        seed: 3,
        grid: GridSpec {
            dt_s: 0.1,
            n: 1_000_000,
            t0_s: 0.0,
        },
        link: LinkConfig {
            laser1: LaserModel {
                curvature_hz_per_s2: 1e-4,
                ..noisy_laser(0.02, 1e-2)
            },
            laser2: noisy_laser(-0.01, 1e-2),
            fiber1: fiber.clone(),
            fiber2: fiber,
            local_ifo: LocalInterferometer::with_mismatch(0.15, local_t),
            remote_ifo: RemoteInterferometer::with_mismatch(0.35, remote_t),
            remote_mirror: if partial_fm { RemoteMirror::PartialFm } else { RemoteMirror::Standard },
            same_laser,
            delay_model: DelayModel::FirstOrder,
            detection_noise: DetectionNoise::uniform(2.5e-3),
            ..LinkConfig::default()
        },
        pipeline,
        output_dir: None,
    }
}

fn unidirectional() -> ScenarioConfig {
    let fiber = FiberModel::distributed(DEFAULT_TAU_S, 8, NoiseSpec::white_fm(1.0, 0));
    let mut pipeline = PipelineSpec::new(100.0 * fast_grid(0).dt_s);
    pipeline.series = vec![SeriesKind::LtwLocal, SeriesKind::Ctw, SeriesKind::UniTwoWay];
    pipeline.psd_segments = Some(8);
    ScenarioConfig {
        name: "fig6_unidirectional".into(),
        description: "fast grid, fibers in one cable with 0.8 noise correlation, uni-directional two-way estimate".into(),
        seed: 6,
        grid: fast_grid(1 << 17),
        link: LinkConfig {
            laser1: noisy_laser(0.0, 1.0),
            laser2: noisy_laser(0.0, 1.0),
            fiber1: fiber.clone(),
            fiber2: fiber,
            fiber_noise_correlation: 0.8,
            anc: AncMode::Loop { gain_per_s: 1000.0 },
            detection_noise: DetectionNoise::uniform(1e-6),
            ..LinkConfig::default()
        },
        pipeline,
        output_dir: None,
    }
}
