//! Allan statistics, Welch PSD and mean-offset estimators.
//!
//! `oadev` and `mdev` take fractional frequency averages `y[k]` over
//! contiguous gates of length `τ0` and work on the phase-time
//! `x[0] = 0`, `x[k+1] = x[k] + (y[k] − ȳ)·τ0` (M = N + 1 points).
//! Removing the mean does not change either statistic and keeps `x` small.

use std::f64::consts::TAU;
use std::io::Write;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{CounterKind, FrequencySeries, FrequencyUnit, PhaseSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    Oadev,
    Mdev,
}

impl Estimator {
    pub fn as_str(&self) -> &'static str {
        match self {
            Estimator::Oadev => "OADEV",
            Estimator::Mdev => "MDEV",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityPoint {
    pub tau_s: f64,
    pub sigma: f64,
    /// Number of terms in the defining sum.
    pub count: usize,
}

/// `(τ, σ)` pairs from one estimator over one counter kind. A Λ-sourced
/// OADEV is a different statistic from true OADEV; `source_kind` keeps it
/// labelled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCurve {
    pub points: Vec<StabilityPoint>,
    pub estimator: Estimator,
    pub source_kind: CounterKind,
    /// Requested τ values that were omitted, with the reason.
    pub notes: Vec<String>,
}

impl StabilityCurve {
    pub fn sigma_at(&self, tau_s: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| (p.tau_s - tau_s).abs() <= 1e-9 * tau_s.abs().max(1e-12))
            .map(|p| p.sigma)
    }

    /// Least-squares slope of `log σ` against `log τ` over `[lo, hi]`.
    pub fn loglog_slope(&self, lo: f64, hi: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .points
            .iter()
            .filter(|p| p.tau_s >= lo * (1.0 - 1e-9) && p.tau_s <= hi * (1.0 + 1e-9) && p.sigma > 0.0)
            .map(|p| (p.tau_s.ln(), p.sigma.ln()))
            .collect();
        loglog_fit(&pts)
    }

    /// `tau_s,sigma,count,estimator,source_kind`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["tau_s", "sigma", "count", "estimator", "source_kind"])?;
        for p in &self.points {
            wr.write_record([
                p.tau_s.to_string(),
                p.sigma.to_string(),
                p.count.to_string(),
                self.estimator.as_str().to_string(),
                self.source_kind.as_str().to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Slope of an ordinary least-squares line through `(x, y)` pairs.
pub fn loglog_fit(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// `gate·{1, 2, 5}·10^d` up to `span/5` inclusive.
pub fn tau_ladder(gate_s: f64, span_s: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let limit = span_s / 5.0 * (1.0 + 1e-12);
    let mut decade = 1u64;
    'outer: loop {
        for f in [1u64, 2, 5] {
            let tau = gate_s * (f * decade) as f64;
            if tau > limit {
                break 'outer;
            }
            out.push(tau);
        }
        decade = match decade.checked_mul(10) {
            Some(d) => d,
            None => break,
        };
    }
    out
}

fn require_fractional(y: &FrequencySeries) -> Result<()> {
    if y.unit() != FrequencyUnit::Fractional {
        return Err(Error::KindMismatch {
            expected: "fractional frequency".into(),
            found: "Hz".into(),
        });
    }
    if y.len() < 2 {
        return Err(Error::Insufficient {
            what: "at least two frequency samples are needed".into(),
            suggestion: None,
        });
    }
    Ok(())
}

fn phase_time(y: &FrequencySeries) -> Vec<f64> {
    let tau0 = y.grid().dt;
    let mean = y.mean();
    let mut x = Vec::with_capacity(y.len() + 1);
    let mut acc = 0.0;
    x.push(acc);
    for v in y.values() {
        acc += (v - mean) * tau0;
        x.push(acc);
    }
    x
}

/// Averaging factors for `taus`; rejects off-grid and non-increasing taus.
fn factors(y: &FrequencySeries, taus: &[f64]) -> Result<Vec<usize>> {
    let mut out: Vec<usize> = Vec::with_capacity(taus.len());
    for &tau in taus {
        let m = y.grid().samples_in("tau_s", tau)?;
        if m == 0 {
            return Err(Error::OffGrid {
                what: "tau_s (must be >= gate)".into(),
                seconds: tau,
                dt: y.grid().dt,
            });
        }
        if out.last().is_some_and(|&prev| m <= prev) {
            return Err(Error::InvalidConfig("taus must be strictly increasing".into()));
        }
        out.push(m);
    }
    Ok(out)
}

/// Overlapping Allan deviation:
/// `σ²(mτ0) = Σ_{i=0}^{M−2m−1} (x[i+2m] − 2x[i+m] + x[i])² / (2 m²τ0² (M−2m))`.
/// Taus with `2m > N` are omitted with a note.
pub fn oadev(y: &FrequencySeries, taus: &[f64]) -> Result<StabilityCurve> {
    require_fractional(y)?;
    let ms = factors(y, taus)?;
    let x = phase_time(y);
    let big_m = x.len();
    let tau0 = y.grid().dt;
    let mut points = Vec::new();
    let mut notes = Vec::new();
    for (&tau, &m) in taus.iter().zip(&ms) {
        if 2 * m > y.len() {
            notes.push(format!("tau {tau} s omitted: exceeds half the {} s span", y.len() as f64 * tau0));
            continue;
        }
        let count = big_m - 2 * m;
        let sum: f64 = (0..count)
            .map(|i| {
                let d = x[i + 2 * m] - 2.0 * x[i + m] + x[i];
                d * d
            })
            .sum();
        let mt = m as f64 * tau0;
        points.push(StabilityPoint {
            tau_s: tau,
            sigma: (sum / (2.0 * mt * mt * count as f64)).sqrt(),
            count,
        });
    }
    Ok(StabilityCurve {
        points,
        estimator: Estimator::Oadev,
        source_kind: y.kind(),
        notes,
    })
}

/// Modified Allan deviation:
/// `σ²(mτ0) = Σ_{j=0}^{M−3m} [Σ_{i=j}^{j+m−1} (x[i+2m] − 2x[i+m] + x[i])]² / (2 m⁴τ0² (M−3m+1))`.
/// Taus with `3m > M` are omitted with a note.
pub fn mdev(y: &FrequencySeries, taus: &[f64]) -> Result<StabilityCurve> {
    require_fractional(y)?;
    let ms = factors(y, taus)?;
    let x = phase_time(y);
    let big_m = x.len();
    let tau0 = y.grid().dt;
    let mut points = Vec::new();
    let mut notes = Vec::new();
    for (&tau, &m) in taus.iter().zip(&ms) {
        if 3 * m > big_m {
            notes.push(format!("tau {tau} s omitted: needs {} phase points, have {big_m}", 3 * m));
            continue;
        }
        let count = big_m - 3 * m + 1;
        let d = |i: usize| x[i + 2 * m] - 2.0 * x[i + m] + x[i];
        let mut sum = 0.0;
        let mut window = 0.0;
        for j in 0..count {
            // Rebuilt from scratch every m steps so rounding never accumulates
            // over more than 2m updates.
            if j % m == 0 {
                window = (j..j + m).map(d).sum();
            } else {
                window += d(j + m - 1) - d(j - 1);
            }
            sum += window * window;
        }
        let mf = m as f64;
        points.push(StabilityPoint {
            tau_s: tau,
            sigma: (sum / (2.0 * mf.powi(4) * tau0 * tau0 * count as f64)).sqrt(),
            count,
        });
    }
    Ok(StabilityCurve {
        points,
        estimator: Estimator::Mdev,
        source_kind: y.kind(),
        notes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsdEstimate {
    pub freq_hz: Vec<f64>,
    /// One-sided density (rad²/Hz).
    pub density: Vec<f64>,
    pub segment_len: usize,
    pub segments: usize,
}

impl PsdEstimate {
    pub fn df(&self) -> f64 {
        self.freq_hz.get(1).copied().unwrap_or(0.0)
    }

    /// Mean density over bins `lo..=hi`.
    pub fn band_mean(&self, lo: usize, hi: usize) -> f64 {
        let hi = hi.min(self.density.len() - 1);
        let band = &self.density[lo..=hi];
        band.iter().sum::<f64>() / band.len() as f64
    }
}

/// Welch periodogram of the valid (post-warm-up) samples: `segments`
/// Hann-windowed pieces of length `L = ⌊2n/(segments+1)⌋` at 50% overlap,
/// each with its mean removed. The one-sided density satisfies
/// `Σ S·df = mean over segments of Σ(w·x)²/Σw²`, which is the variance for
/// stationary input.
pub fn psd(phase: &PhaseSeries, segments: usize) -> Result<PsdEstimate> {
    if segments == 0 {
        return Err(Error::InvalidConfig("psd needs at least one segment".into()));
    }
    let data = phase.valid();
    let n = data.len();
    let len = 2 * n / (segments + 1);
    if len < 4 {
        return Err(Error::Insufficient {
            what: format!("{n} samples cannot form {segments} segments of at least 4"),
            suggestion: None,
        });
    }
    let step = len / 2;
    let window: Vec<f64> = (0..len)
        .map(|j| 0.5 * (1.0 - (TAU * j as f64 / len as f64).cos()))
        .collect();
    let wsum2: f64 = window.iter().map(|w| w * w).sum();
    let dt = phase.grid().dt;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(len);
    let bins = len / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    for s in 0..segments {
        let seg = &data[s * step..s * step + len];
        let mean = seg.iter().sum::<f64>() / len as f64;
        for ((b, v), w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new((v - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
    }
    let base = dt / (wsum2 * segments as f64);
    let density = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let one_sided = if k == 0 || (len % 2 == 0 && k == len / 2) { 1.0 } else { 2.0 };
            a * base * one_sided
        })
        .collect();
    let df = 1.0 / (len as f64 * dt);
    Ok(PsdEstimate {
        freq_hz: (0..bins).map(|k| k as f64 * df).collect(),
        density,
        segment_len: len,
        segments,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LengthNormalization {
    /// `std / L`, the white-PM reading.
    Length,
    /// `std / √L`.
    SqrtLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OffsetMethod {
    /// Mean of Λ data; uncertainty is the OADEV at `tau_s`, or when `None`
    /// at the longest ladder τ that fits at least `min_intervals` times in
    /// the span.
    LambdaLongTermAdev { tau_s: Option<f64>, min_intervals: usize },
    /// Mean of Π data; uncertainty is `std(y)` over the segment length.
    PiSegmentStd { normalization: LengthNormalization },
}

impl OffsetMethod {
    pub fn lambda_default() -> Self {
        OffsetMethod::LambdaLongTermAdev {
            tau_s: None,
            min_intervals: 5,
        }
    }

    pub fn pi_default() -> Self {
        OffsetMethod::PiSegmentStd {
            normalization: LengthNormalization::Length,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            OffsetMethod::LambdaLongTermAdev { .. } => "LambdaLongTermADEV",
            OffsetMethod::PiSegmentStd {
                normalization: LengthNormalization::Length,
            } => "PiSegmentStd(L)",
            OffsetMethod::PiSegmentStd {
                normalization: LengthNormalization::SqrtLength,
            } => "PiSegmentStd(sqrtL)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetEstimate {
    pub mean: f64,
    /// Zero only for constant input.
    pub uncertainty: f64,
    pub method: OffsetMethod,
    /// τ at which the ADEV was read (Λ method only).
    pub tau_s: Option<f64>,
}

pub fn mean_offset(y: &FrequencySeries, method: OffsetMethod) -> Result<OffsetEstimate> {
    require_fractional(y)?;
    let expected = match method {
        OffsetMethod::LambdaLongTermAdev { .. } => CounterKind::Lambda,
        OffsetMethod::PiSegmentStd { .. } => CounterKind::Pi,
    };
    if y.kind() != expected {
        return Err(Error::KindMismatch {
            expected: expected.to_string(),
            found: y.kind().to_string(),
        });
    }
    let mean = y.mean();
    match method {
        OffsetMethod::LambdaLongTermAdev { tau_s, min_intervals } => {
            let gate = y.grid().dt;
            let span = y.len() as f64 * gate;
            let min_intervals = min_intervals.max(1);
            let fits = |tau: f64| (span / tau + 1e-9).floor() as usize >= min_intervals && 2.0 * tau <= span;
            let ladder: Vec<f64> = tau_ladder(gate, span * 5.0).into_iter().filter(|&t| fits(t)).collect();
            let largest = ladder.last().copied();
            let tau = match tau_s {
                Some(t) if fits(t) => t,
                Some(t) => {
                    return Err(Error::Insufficient {
                        what: format!("span {span} s holds fewer than {min_intervals} intervals of {t} s"),
                        suggestion: largest,
                    })
                }
                None => largest.ok_or_else(|| Error::Insufficient {
                    what: format!("span {span} s holds fewer than {min_intervals} gates"),
                    suggestion: None,
                })?,
            };
            let sigma = oadev(y, &[tau])?
                .points
                .first()
                .map(|p| p.sigma)
                .ok_or_else(|| Error::Insufficient {
                    what: format!("no OADEV value at {tau} s"),
                    suggestion: largest,
                })?;
            Ok(OffsetEstimate {
                mean,
                uncertainty: sigma,
                method,
                tau_s: Some(tau),
            })
        }
        OffsetMethod::PiSegmentStd { normalization } => {
            let n = y.len() as f64;
            let var = y.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let l = match normalization {
                LengthNormalization::Length => n,
                LengthNormalization::SqrtLength => n.sqrt(),
            };
            Ok(OffsetEstimate {
                mean,
                uncertainty: var.sqrt() / l,
                method,
                tau_s: None,
            })
        }
    }
}
