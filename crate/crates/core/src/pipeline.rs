//! Measurement-side pipeline: beat-record persistence, the comparison
//! series, counters, stability, offsets, cycle slips, the consistency check
//! and the thermal decomposition.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::combiners::{ctw, drift_from_beat, fiber1_estimate, fiber2_estimate, ltw_local, ltw_remote, uni_directional_two_way};
use crate::counters::{
    consistency_check, count, default_slip_threshold_hz, detect_cycle_slips, ConsistencyReport, CounterConfig, CycleSlip,
};
use crate::error::{Error, Result};
use crate::link::{simulate, BeatRecord, RecordMeta};
use crate::regression::{decompose, DecomposeOptions, DecompositionResult};
use crate::scenario::{PipelineSpec, ScenarioConfig, SeriesKind};
use crate::series::{read_series_csv, CounterKind, FrequencySeries, PhaseSeries, SampleGrid, TemperatureSeries};
use crate::stability::{mdev, mean_offset, oadev, psd, tau_ladder, Estimator, OffsetEstimate, OffsetMethod, PsdEstimate, StabilityCurve};

/// What a measurement system records: photodiode phases, the laser beat and
/// the sensor temperatures. No ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
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
}

impl From<&BeatRecord> for Measurements {
    fn from(r: &BeatRecord) -> Self {
        Self {
            grid: r.grid,
            pd1: r.pd1.clone(),
            pd3a: r.pd3a.clone(),
            pd3b: r.pd3b.clone(),
            pd4a: r.pd4a.clone(),
            pd4b: r.pd4b.clone(),
            lm: r.lm.clone(),
            temp_local: r.temp_local.clone(),
            temp_remote: r.temp_remote.clone(),
            meta: r.meta.clone(),
        }
    }
}

const PD_NAMES: [&str; 6] = ["pd1", "pd3a", "pd3b", "pd4a", "pd4b", "lm"];

impl Measurements {
    fn pds(&self) -> [&PhaseSeries; 6] {
        [&self.pd1, &self.pd3a, &self.pd3b, &self.pd4a, &self.pd4b, &self.lm]
    }

    /// Named files of a record directory, in a fixed order.
    pub fn files(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let mut out = Vec::new();
        for (name, s) in PD_NAMES.iter().zip(self.pds()) {
            let mut buf = Vec::new();
            s.write_csv(&mut buf)?;
            out.push((format!("{name}.csv"), buf));
        }
        for (name, t) in [("temp_local", &self.temp_local), ("temp_remote", &self.temp_remote)] {
            if let Some(t) = t {
                let mut buf = Vec::new();
                t.write_csv(&mut buf)?;
                out.push((format!("{name}.csv"), buf));
            }
        }
        out.push(("meta.json".into(), serde_json::to_vec_pretty(&self.meta)?));
        Ok(out)
    }

    /// Reads a record directory written from [`Measurements::files`].
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let meta: RecordMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
        let mut series = Vec::new();
        let mut grid: Option<SampleGrid> = None;
        for name in PD_NAMES {
            let (g, v) = read_series_csv(fs::File::open(dir.join(format!("{name}.csv")))?)?;
            if let Some(prev) = grid {
                prev.ensure_same(&g)?;
            }
            grid = Some(g);
            series.push(PhaseSeries::new(g, v)?.with_warmup(meta.warmup));
        }
        let temp = |name: &str| -> Result<Option<TemperatureSeries>> {
            let p = dir.join(format!("{name}.csv"));
            if !p.exists() {
                return Ok(None);
            }
            let (g, v) = read_series_csv(fs::File::open(p)?)?;
            Ok(Some(TemperatureSeries::new(g, v)?))
        };
        let mut it = series.into_iter();
        let mut next = || it.next().expect("six series read");
        Ok(Self {
            grid: grid.expect("six series read"),
            pd1: next(),
            pd3a: next(),
            pd3b: next(),
            pd4a: next(),
            pd4b: next(),
            lm: next(),
            temp_local: temp("temp_local")?,
            temp_remote: temp("temp_remote")?,
            meta,
        })
    }

    pub fn series(&self, kind: SeriesKind) -> Result<PhaseSeries> {
        match kind {
            SeriesKind::LtwLocal => ltw_local(&self.pd4a, &self.pd4b)?.sub(&self.lm),
            SeriesKind::LtwRemote => ltw_remote(&self.pd3a, &self.pd3b)?.sub(&self.lm),
            SeriesKind::Ctw => ctw(&self.pd4a, &self.pd3a)?.sub(&self.lm),
            SeriesKind::UniTwoWay => uni_directional_two_way(&fiber1_estimate(&self.pd1), &fiber2_estimate(&self.pd4b)),
            SeriesKind::Fiber1Estimate => Ok(fiber1_estimate(&self.pd1)),
            SeriesKind::Fiber2Estimate => Ok(fiber2_estimate(&self.pd4b)),
        }
    }

    /// Max |·| over the valid region of every combination that vanishes in
    /// the zero-delay reciprocal limit.
    pub fn identities(&self) -> Result<Vec<(String, f64)>> {
        let l = ltw_local(&self.pd4a, &self.pd4b)?;
        let r = ltw_remote(&self.pd3a, &self.pd3b)?;
        let c = ctw(&self.pd4a, &self.pd3a)?;
        let mean = crate::series::affine(&[(0.5, &l), (0.5, &r)])?;
        let valid_max = |s: PhaseSeries| s.valid().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(vec![
            ("ltw_local_minus_lm".into(), valid_max(l.sub(&self.lm)?)),
            ("ltw_remote_minus_lm".into(), valid_max(r.sub(&self.lm)?)),
            ("ctw_minus_lm".into(), valid_max(c.sub(&self.lm)?)),
            ("ctw_minus_mean_ltw".into(), valid_max(c.sub(&mean)?)),
        ])
    }

    /// Thermal decomposition of `ltw_local − lm` with the drift term taken
    /// from the measured beat.
    pub fn decompose(&self, opts: &DecomposeOptions) -> Result<DecompositionResult> {
        let (tl, tr) = match (&self.temp_local, &self.temp_remote) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::InvalidConfig(
                    "decomposition needs both local and remote temperature records".into(),
                ))
            }
        };
        let y = self.series(SeriesKind::LtwLocal)?;
        let drift = drift_from_beat(&self.lm, self.meta.tau2_s)?;
        decompose(&y, &drift, tl, tr, opts)
    }
}

/// Stability, offsets and slips for one counter stream.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterAnalysis {
    pub label: String,
    pub counts: Vec<FrequencySeries>,
    pub curves: Vec<StabilityCurve>,
    pub offsets: Vec<OffsetEstimate>,
    pub slips: Vec<CycleSlip>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub carrier_hz: f64,
    pub per_series: Vec<CounterAnalysis>,
    pub psds: Vec<(String, PsdEstimate)>,
    pub consistency: Option<ConsistencyReport>,
    pub identities: Vec<(String, f64)>,
    pub decomposition: Option<DecompositionResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CounterOptions {
    pub offsets: bool,
    pub slips: bool,
    pub slip_threshold_hz: Option<f64>,
}

/// Stability, offsets and slips of counter readings in Hz. Slips need one
/// Π and one Λ stream on the same gates.
pub fn analyze_counts(label: &str, counts: Vec<FrequencySeries>, estimators: &[Estimator], carrier_hz: f64, opts: CounterOptions) -> Result<CounterAnalysis> {
    let mut curves = Vec::new();
    let mut offsets = Vec::new();
    for f in &counts {
        let y = f.to_fractional(carrier_hz)?;
        let gate = y.grid().dt;
        let taus = tau_ladder(gate, y.len() as f64 * gate);
        for e in estimators {
            curves.push(match e {
                Estimator::Oadev => oadev(&y, &taus)?,
                Estimator::Mdev => mdev(&y, &taus)?,
            });
        }
        if opts.offsets {
            let method = match f.kind() {
                CounterKind::Pi => OffsetMethod::pi_default(),
                _ => OffsetMethod::lambda_default(),
            };
            offsets.push(mean_offset(&y, method)?);
        }
    }
    let mut slips = Vec::new();
    if opts.slips {
        let pi = counts.iter().find(|f| f.kind() == CounterKind::Pi);
        let la = counts.iter().find(|f| f.kind() == CounterKind::Lambda);
        if let (Some(pi), Some(la)) = (pi, la) {
            let thr = opts.slip_threshold_hz.unwrap_or_else(|| default_slip_threshold_hz(pi.grid().dt));
            slips = detect_cycle_slips(pi, la, thr)?;
        }
    }
    Ok(CounterAnalysis {
        label: label.to_string(),
        counts,
        curves,
        offsets,
        slips,
    })
}

/// Runs the counter pipeline over every configured series. The
/// decomposition runs only when `options` is given.
pub fn analyze(m: &Measurements, spec: &PipelineSpec, options: Option<&DecomposeOptions>) -> Result<Analysis> {
    let carrier = m.meta.carrier_hz;
    let copts = CounterOptions {
        offsets: spec.offsets,
        slips: spec.slips,
        slip_threshold_hz: spec.slip_threshold_hz,
    };
    let mut per_series = Vec::new();
    let mut psds = Vec::new();
    for kind in &spec.series {
        let phase = m.series(*kind)?;
        let counts = spec
            .counters
            .iter()
            .map(|k| {
                count(
                    &phase,
                    &CounterConfig {
                        gate_s: spec.gate_s,
                        kind: *k,
                        lambda_resolution_s: None,
                    },
                )
            })
            .collect::<Result<Vec<_>>>()?;
        per_series.push(analyze_counts(kind.as_str(), counts, &spec.estimators, carrier, copts)?);
        if let Some(segments) = spec.psd_segments {
            psds.push((kind.as_str().to_string(), psd(&phase, segments)?));
        }
    }
    let consistency = {
        let pi = |k: SeriesKind| -> Result<FrequencySeries> {
            let phase = match k {
                SeriesKind::LtwLocal => ltw_local(&m.pd4a, &m.pd4b)?,
                SeriesKind::LtwRemote => ltw_remote(&m.pd3a, &m.pd3b)?,
                _ => ctw(&m.pd4a, &m.pd3a)?,
            };
            count(&phase, &CounterConfig::pi(spec.gate_s))
        };
        Some(consistency_check(
            &pi(SeriesKind::LtwLocal)?,
            &pi(SeriesKind::LtwRemote)?,
            &pi(SeriesKind::Ctw)?,
            spec.consistency_tolerance_hz,
        )?)
    };
    let decomposition = match options {
        Some(o) => Some(m.decompose(o)?),
        None => None,
    };
    Ok(Analysis {
        carrier_hz: carrier,
        per_series,
        psds,
        consistency,
        identities: m.identities()?,
        decomposition,
    })
}

/// Validates `config`, then simulates its link on its grid and seed.
pub fn simulate_scenario(config: &ScenarioConfig) -> Result<(BeatRecord, Measurements)> {
    let grid = config.validate()?;
    let record = simulate(&config.link, &grid, config.seed)?;
    let m = Measurements::from(&record);
    Ok((record, m))
}

/// Simulation followed by the full pipeline, decomposition included when
/// the config asks for it.
pub fn run_scenario(config: &ScenarioConfig) -> Result<Analysis> {
    let (_, m) = simulate_scenario(config)?;
    let opts = config.pipeline.decomposition.map(|d| d.options(&config.link));
    analyze(&m, &config.pipeline, opts.as_ref())
}
