//! Dead-time-free Π and Λ frequency counters on phase series, with
//! cycle-slip and redundancy checks.
//!
//! Both counters start their first gate at the first sample past the
//! warm-up prefix of the input, and their output grid has spacing equal to
//! the gate with `t0` at the first gate start.
//!
//! The Λ counter is modelled as the average of `m = gate / resolution`
//! overlapping Π readings whose starts are spaced by the resolution. This
//! gives a triangular phase weighting over two gates. With the default
//! resolution (one sample) a Λ reading averages phase over the gate at both
//! ends. For a linearly drifting frequency the Λ reading `k` equals the
//! frequency at `t_k + T - δ/2` while the Π reading equals it at
//! `t_k + T/2`.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{CounterKind, FrequencySeries, FrequencyUnit, PhaseSeries, SampleGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CounterConfig {
    pub gate_s: f64,
    pub kind: CounterKind,
    /// Λ sub-gate step; `None` means one sample.
    #[serde(default)]
    pub lambda_resolution_s: Option<f64>,
}

impl CounterConfig {
    pub fn pi(gate_s: f64) -> Self {
        Self {
            gate_s,
            kind: CounterKind::Pi,
            lambda_resolution_s: None,
        }
    }

    pub fn lambda(gate_s: f64) -> Self {
        Self {
            gate_s,
            kind: CounterKind::Lambda,
            lambda_resolution_s: None,
        }
    }

    fn gate_samples(&self, grid: &SampleGrid) -> Result<usize> {
        let m = grid.samples_in("gate_s", self.gate_s)?;
        if m == 0 {
            return Err(Error::OffGrid {
                what: "gate_s (must be >= dt)".into(),
                seconds: self.gate_s,
                dt: grid.dt,
            });
        }
        Ok(m)
    }
}

/// Runs whichever counter `cfg.kind` names.
pub fn count(phase: &PhaseSeries, cfg: &CounterConfig) -> Result<FrequencySeries> {
    match cfg.kind {
        CounterKind::Pi => pi_counter(phase, cfg),
        CounterKind::Lambda => lambda_counter(phase, cfg),
        CounterKind::Instant => Err(Error::InvalidConfig("Instant is not a counter kind".into())),
    }
}

fn output_grid(phase: &PhaseSeries, gate_s: f64, gates: usize) -> Result<SampleGrid> {
    SampleGrid::new(gate_s, gates, phase.grid().time(phase.warmup()))
}

/// `f[k] = (ϕ(t_k+T) − ϕ(t_k)) / (2πT)` over contiguous gates.
pub fn pi_counter(phase: &PhaseSeries, cfg: &CounterConfig) -> Result<FrequencySeries> {
    let grid = phase.grid();
    let m = cfg.gate_samples(grid)?;
    let start = phase.warmup();
    let avail = grid.n.saturating_sub(1).saturating_sub(start);
    let gates = avail / m;
    if gates == 0 {
        return Err(Error::Insufficient {
            what: format!("{} valid samples cannot fill a {} s gate", avail + 1, cfg.gate_s),
            suggestion: None,
        });
    }
    let v = phase.values();
    let scale = 1.0 / (TAU * cfg.gate_s);
    let values = (0..gates)
        .map(|k| {
            let a = start + k * m;
            (v[a + m] - v[a]) * scale
        })
        .collect();
    FrequencySeries::new(output_grid(phase, cfg.gate_s, gates)?, values, CounterKind::Pi, FrequencyUnit::Hz)
}

/// Average of the `T/δ` overlapping Π readings starting at
/// `t_k, t_k+δ, …, t_k+T−δ`.
pub fn lambda_counter(phase: &PhaseSeries, cfg: &CounterConfig) -> Result<FrequencySeries> {
    let grid = phase.grid();
    let m = cfg.gate_samples(grid)?;
    let r = match cfg.lambda_resolution_s {
        None => 1,
        Some(res) => {
            let r = grid.samples_in("lambda_resolution_s", res)?;
            if r == 0 {
                return Err(Error::OffGrid {
                    what: "lambda_resolution_s (must be >= dt)".into(),
                    seconds: res,
                    dt: grid.dt,
                });
            }
            r
        }
    };
    if m % r != 0 {
        return Err(Error::OffGrid {
            what: "gate_s (must be a multiple of lambda_resolution_s)".into(),
            seconds: cfg.gate_s,
            dt: r as f64 * grid.dt,
        });
    }
    let subs = m / r;
    let start = phase.warmup();
    // Gate k reads up to sample start + k·m + (subs−1)·r + m.
    let reach = (subs - 1) * r + m;
    let last = grid.n - 1;
    if start + reach > last {
        return Err(Error::Insufficient {
            what: format!("Λ gate of {} s needs {} samples past warm-up", cfg.gate_s, reach + 1),
            suggestion: None,
        });
    }
    let gates = (last - start - reach) / m + 1;
    let v = phase.values();
    let scale = 1.0 / (TAU * cfg.gate_s * subs as f64);
    let values = (0..gates)
        .map(|k| {
            let a = start + k * m;
            let mut acc = 0.0;
            for i in 0..subs {
                let s = a + i * r;
                acc += v[s + m] - v[s];
            }
            acc * scale
        })
        .collect();
    FrequencySeries::new(
        output_grid(phase, cfg.gate_s, gates)?,
        values,
        CounterKind::Lambda,
        FrequencyUnit::Hz,
    )
}

/// Half a cycle per gate, in Hz.
pub fn default_slip_threshold_hz(gate_s: f64) -> f64 {
    0.5 / gate_s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleSlip {
    pub gate: usize,
    /// Excess frequency of the gate over the Λ reference (Hz); ±1/T for a
    /// single-cycle slip.
    pub magnitude_hz: f64,
}

fn check_pair(pi: &FrequencySeries, lambda: &FrequencySeries) -> Result<()> {
    if pi.kind() != CounterKind::Pi {
        return Err(Error::KindMismatch {
            expected: "Pi".into(),
            found: pi.kind().to_string(),
        });
    }
    if lambda.kind() != CounterKind::Lambda {
        return Err(Error::KindMismatch {
            expected: "Lambda".into(),
            found: lambda.kind().to_string(),
        });
    }
    let (gp, gl) = (pi.grid(), lambda.grid());
    if (gp.dt - gl.dt).abs() > 1e-12 * gp.dt || (gp.t0 - gl.t0).abs() > 1e-9 * gp.dt.max(1.0) {
        return Err(Error::GridMismatch(format!("Π gates {gp:?} vs Λ gates {gl:?}")));
    }
    Ok(())
}

/// Flags gates whose Π reading departs from a Λ-derived reference by more
/// than `threshold_hz`.
///
/// A cycle slip inside Π gate `k` adds the full `q/T` to `Π[k]` but is
/// spread by the Λ weighting over `Λ[k−1]` and `Λ[k]`. The reference for
/// gate `k` is therefore the mean of the nearest unaffected Λ readings,
/// `Λ[k−2]` (ending before gate `k`) and `Λ[k+1]` (starting after it), and
/// the statistic is `Π[k] − ref`: the point-to-point Π increment measured
/// against the redundant Λ data. A gate is reported only where the
/// statistic is a local maximum in magnitude, so one slip yields one flag
/// even though its neighbours see up to half of it. Slips must be at least
/// three gates apart to be resolved individually.
pub fn detect_cycle_slips(
    pi: &FrequencySeries,
    lambda: &FrequencySeries,
    threshold_hz: f64,
) -> Result<Vec<CycleSlip>> {
    check_pair(pi, lambda)?;
    let p = pi.values();
    let l = lambda.values();
    let stat: Vec<Option<f64>> = (0..p.len())
        .map(|k| {
            let before = k.checked_sub(2).and_then(|j| l.get(j));
            let after = l.get(k + 1);
            let reference = match (before, after) {
                (Some(a), Some(b)) => 0.5 * (a + b),
                (Some(a), None) => *a,
                (None, Some(b)) => *b,
                (None, None) => return None,
            };
            Some(p[k] - reference)
        })
        .collect();
    let mag = |k: usize| stat.get(k).copied().flatten().map(f64::abs).unwrap_or(0.0);
    let mut slips = Vec::new();
    for k in 0..stat.len() {
        let Some(s) = stat[k] else { continue };
        if s.abs() <= threshold_hz {
            continue;
        }
        let left = if k > 0 { mag(k - 1) } else { 0.0 };
        if s.abs() >= left && s.abs() > mag(k + 1) {
            slips.push(CycleSlip {
                gate: k,
                magnitude_hz: s,
            });
        }
    }
    Ok(slips)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub gates_checked: usize,
    pub max_deviation_hz: f64,
    pub tolerance_hz: f64,
    pub violating_gates: Vec<usize>,
}

impl ConsistencyReport {
    pub fn passed(&self) -> bool {
        self.violating_gates.is_empty()
    }
}

/// Checks `ctw ≈ (ltw_local + ltw_remote)/2` gate by gate.
pub fn consistency_check(
    ltw_local: &FrequencySeries,
    ltw_remote: &FrequencySeries,
    ctw: &FrequencySeries,
    tolerance_hz: f64,
) -> Result<ConsistencyReport> {
    ltw_local.grid().ensure_same(ltw_remote.grid())?;
    ltw_local.grid().ensure_same(ctw.grid())?;
    let mut max_dev: f64 = 0.0;
    let mut violating = Vec::new();
    for (k, ((a, b), c)) in ltw_local
        .values()
        .iter()
        .zip(ltw_remote.values())
        .zip(ctw.values())
        .enumerate()
    {
        let dev = (c - 0.5 * (a + b)).abs();
        max_dev = max_dev.max(dev);
        if dev > tolerance_hz {
            violating.push(k);
        }
    }
    Ok(ConsistencyReport {
        gates_checked: ltw_local.len(),
        max_deviation_hz: max_dev,
        tolerance_hz,
        violating_gates: violating,
    })
}
