//! Uniform-grid time series and the delay / affine-combination algebra.
//!
//! Phase is always stored unwrapped, in radians. Every series carries a
//! warm-up prefix length: samples inside the prefix exist (so array indexing
//! stays aligned across series) but hold transient values that statistics
//! must skip. Combining series propagates the longest prefix.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when checking that a duration falls on the grid.
const ON_GRID_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleGrid {
    /// Sample period (s).
    pub dt: f64,
    /// Number of samples.
    pub n: usize,
    /// Epoch of sample 0 (s).
    pub t0: f64,
}

impl SampleGrid {
    pub fn new(dt: f64, n: usize, t0: f64) -> Result<Self> {
        let grid = Self { dt, n, t0 };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidGrid(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.n == 0 {
            return Err(Error::InvalidGrid("n must be >= 1".into()));
        }
        if !self.t0.is_finite() {
            return Err(Error::InvalidGrid("t0 must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    /// Duration covered from the first to the last sample.
    pub fn span(&self) -> f64 {
        (self.n.saturating_sub(1)) as f64 * self.dt
    }

    /// Number of whole samples in `seconds`, or an error if `seconds` is not
    /// an integer multiple of `dt`.
    pub fn samples_in(&self, what: &str, seconds: f64) -> Result<usize> {
        let off_grid = || Error::OffGrid {
            what: what.to_string(),
            seconds,
            dt: self.dt,
        };
        if !(seconds.is_finite() && seconds >= 0.0) {
            return Err(off_grid());
        }
        let k = (seconds / self.dt).round();
        if (k * self.dt - seconds).abs() > ON_GRID_RTOL * seconds.max(self.dt) {
            return Err(off_grid());
        }
        Ok(k as usize)
    }

    pub fn same_as(&self, other: &SampleGrid) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300);
        self.n == other.n && close(self.dt, other.dt) && (self.t0 == other.t0 || close(self.t0, other.t0))
    }

    pub fn ensure_same(&self, other: &SampleGrid) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{what} at sample {i}"))),
        None => Ok(()),
    }
}

fn check_len(grid: &SampleGrid, values: &[f64]) -> Result<()> {
    if values.len() != grid.n {
        return Err(Error::InvalidGrid(format!(
            "{} values for a grid of {} samples",
            values.len(),
            grid.n
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSeries {
    grid: SampleGrid,
    values: Vec<f64>,
    carrier_hz: Option<f64>,
    warmup: usize,
}

impl PhaseSeries {
    pub fn new(grid: SampleGrid, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        check_len(&grid, &values)?;
        check_finite(&values, "phase series")?;
        Ok(Self {
            grid,
            values,
            carrier_hz: None,
            warmup: 0,
        })
    }

    pub fn zeros(grid: SampleGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n],
            carrier_hz: None,
            warmup: 0,
        }
    }

    pub fn from_fn(grid: SampleGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..grid.n).map(|i| f(grid.time(i))).collect();
        Self::new(grid, values)
    }

    pub fn with_carrier(mut self, carrier_hz: f64) -> Self {
        self.carrier_hz = Some(carrier_hz);
        self
    }

    /// Extends the warm-up prefix to at least `warmup` samples.
    pub fn with_warmup(mut self, warmup: usize) -> Self {
        self.warmup = self.warmup.max(warmup).min(self.grid.n);
        self
    }

    pub fn grid(&self) -> &SampleGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn carrier_hz(&self) -> Option<f64> {
        self.carrier_hz
    }

    pub fn warmup(&self) -> usize {
        self.warmup
    }

    /// Samples past the warm-up prefix.
    pub fn valid(&self) -> &[f64] {
        &self.values[self.warmup..]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, alpha: f64) -> PhaseSeries {
        PhaseSeries {
            values: self.values.iter().map(|v| alpha * v).collect(),
            ..self.clone()
        }
    }

    /// Applies `f` to every sample, keeping grid, carrier and warm-up.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<PhaseSeries> {
        let values: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        check_finite(&values, "mapped phase series")?;
        Ok(PhaseSeries { values, ..self.clone() })
    }

    pub fn sub(&self, other: &PhaseSeries) -> Result<PhaseSeries> {
        affine(&[(1.0, self), (-1.0, other)])
    }

    pub fn add(&self, other: &PhaseSeries) -> Result<PhaseSeries> {
        affine(&[(1.0, self), (1.0, other)])
    }

    /// Largest absolute value past the warm-up prefix.
    pub fn max_abs(&self) -> f64 {
        self.valid().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Root mean square past the warm-up prefix.
    pub fn rms(&self) -> f64 {
        let v = self.valid();
        if v.is_empty() {
            return 0.0;
        }
        (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_series_csv(w, &self.grid, &self.values)
    }
}

/// What a frequency series was produced by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CounterKind {
    Pi,
    Lambda,
    Instant,
}

impl CounterKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CounterKind::Pi => "Pi",
            CounterKind::Lambda => "Lambda",
            CounterKind::Instant => "Instant",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "Pi" | "pi" | "PI" => Ok(CounterKind::Pi),
            "Lambda" | "lambda" | "LAMBDA" => Ok(CounterKind::Lambda),
            "Instant" | "instant" => Ok(CounterKind::Instant),
            other => Err(Error::Parse(format!("unknown counter kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for CounterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrequencyUnit {
    Hz,
    /// Dimensionless, frequency divided by the nominal carrier.
    Fractional,
}

/// Frequency samples on a grid whose spacing is the gate (or sample) period.
/// The kind and unit are fixed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySeries {
    grid: SampleGrid,
    values: Vec<f64>,
    kind: CounterKind,
    unit: FrequencyUnit,
}

impl FrequencySeries {
    pub fn new(grid: SampleGrid, values: Vec<f64>, kind: CounterKind, unit: FrequencyUnit) -> Result<Self> {
        grid.validate()?;
        check_len(&grid, &values)?;
        check_finite(&values, "frequency series")?;
        Ok(Self { grid, values, kind, unit })
    }

    pub fn grid(&self) -> &SampleGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> CounterKind {
        self.kind
    }

    pub fn unit(&self) -> FrequencyUnit {
        self.unit
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Divides a Hz series by the nominal carrier.
    pub fn to_fractional(&self, carrier_hz: f64) -> Result<FrequencySeries> {
        if self.unit != FrequencyUnit::Hz {
            return Err(Error::KindMismatch {
                expected: "Hz series".into(),
                found: "fractional series".into(),
            });
        }
        if !(carrier_hz.is_finite() && carrier_hz > 0.0) {
            return Err(Error::InvalidConfig(format!("carrier must be > 0, got {carrier_hz}")));
        }
        Ok(FrequencySeries {
            values: self.values.iter().map(|v| v / carrier_hz).collect(),
            unit: FrequencyUnit::Fractional,
            ..self.clone()
        })
    }

    /// Pointwise Σ cᵢ·fᵢ. All inputs must share grid, kind and unit.
    pub fn combine(terms: &[(f64, &FrequencySeries)]) -> Result<FrequencySeries> {
        let (_, first) = terms
            .first()
            .ok_or_else(|| Error::OutOfRange("empty combination".into()))?;
        for (_, s) in &terms[1..] {
            first.grid.ensure_same(&s.grid)?;
            if s.kind != first.kind || s.unit != first.unit {
                return Err(Error::KindMismatch {
                    expected: format!("{:?}/{:?}", first.kind, first.unit),
                    found: format!("{:?}/{:?}", s.kind, s.unit),
                });
            }
        }
        let mut values = vec![0.0; first.len()];
        for (c, s) in terms {
            for (acc, v) in values.iter_mut().zip(&s.values) {
                *acc += c * v;
            }
        }
        FrequencySeries::new(first.grid, values, first.kind, first.unit)
    }

    /// Writes the counter CSV layout `gate_start,freq_hz,kind`.
    pub fn write_counter_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["gate_start", "freq_hz", "kind"])?;
        for (i, v) in self.values.iter().enumerate() {
            wr.write_record([
                self.grid.time(i).to_string(),
                v.to_string(),
                self.kind.as_str().to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the `gate_start,freq_hz,kind` layout. The gate is taken from
    /// the first two rows; rows must be uniformly spaced.
    pub fn read_counter_csv<R: Read>(r: R) -> Result<FrequencySeries> {
        let mut rd = csv::Reader::from_reader(r);
        let mut times = Vec::new();
        let mut values = Vec::new();
        let mut kind = None;
        for rec in rd.records() {
            let rec = rec?;
            if rec.len() < 3 {
                return Err(Error::Parse(format!("expected 3 columns, got {}", rec.len())));
            }
            times.push(parse_f64(&rec[0])?);
            values.push(parse_f64(&rec[1])?);
            let k = CounterKind::parse(&rec[2])?;
            match kind {
                None => kind = Some(k),
                Some(prev) if prev != k => {
                    return Err(Error::Parse("mixed counter kinds in one file".into()));
                }
                _ => {}
            }
        }
        let grid = grid_from_times(&times)?;
        let kind = kind.ok_or_else(|| Error::Parse("empty counter file".into()))?;
        FrequencySeries::new(grid, values, kind, FrequencyUnit::Hz)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureSeries {
    grid: SampleGrid,
    values: Vec<f64>,
}

impl TemperatureSeries {
    pub fn new(grid: SampleGrid, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        check_len(&grid, &values)?;
        check_finite(&values, "temperature series")?;
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &SampleGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Keeps every `factor`-th sample, starting with the first.
    pub fn subsample(&self, factor: usize) -> Result<TemperatureSeries> {
        if factor == 0 {
            return Err(Error::OutOfRange("subsample factor must be >= 1".into()));
        }
        let values: Vec<f64> = self.values.iter().step_by(factor).copied().collect();
        let grid = SampleGrid::new(self.grid.dt * factor as f64, values.len(), self.grid.t0)?;
        TemperatureSeries::new(grid, values)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_series_csv(w, &self.grid, &self.values)
    }
}

/// `output[i] = s[i-k]`. The first `k` samples hold `s[0]` and are added to
/// the warm-up prefix.
pub fn delay(s: &PhaseSeries, k: usize) -> Result<PhaseSeries> {
    let n = s.len();
    if k >= n {
        return Err(Error::OutOfRange(format!("delay of {k} samples on a series of {n}")));
    }
    if k == 0 {
        return Ok(s.clone());
    }
    let mut values = Vec::with_capacity(n);
    values.extend(std::iter::repeat(s.values[0]).take(k));
    values.extend_from_slice(&s.values[..n - k]);
    Ok(PhaseSeries {
        grid: s.grid,
        values,
        carrier_hz: s.carrier_hz,
        warmup: (s.warmup + k).min(n),
    })
}

/// Pointwise Σ cᵢ·sᵢ over series on one grid. The warm-up prefix of the
/// result is the longest input prefix. The carrier is kept only when all
/// inputs agree on it.
pub fn affine(terms: &[(f64, &PhaseSeries)]) -> Result<PhaseSeries> {
    let (_, first) = terms
        .first()
        .ok_or_else(|| Error::OutOfRange("empty affine combination".into()))?;
    let mut warmup = 0;
    let mut carrier = first.carrier_hz;
    for (_, s) in terms {
        first.grid.ensure_same(&s.grid)?;
        warmup = warmup.max(s.warmup);
        if s.carrier_hz != carrier {
            carrier = None;
        }
    }
    let mut values = vec![0.0; first.len()];
    for (c, s) in terms {
        for (acc, v) in values.iter_mut().zip(&s.values) {
            *acc += c * v;
        }
    }
    check_finite(&values, "affine combination")?;
    Ok(PhaseSeries {
        grid: first.grid,
        values,
        carrier_hz: carrier,
        warmup,
    })
}

/// Integrates an instantaneous frequency series into phase:
/// `ϕ[0] = 0`, `ϕ[i] = ϕ[i-1] + 2π·f[i]·dt`.
///
/// Counting the result with a Π gate of one sample returns `f[1..]`: gate
/// `k` spans samples `k..k+1` and reports `f[k+1]`.
pub fn integrate_freq(f: &FrequencySeries) -> Result<PhaseSeries> {
    if f.kind() != CounterKind::Instant {
        return Err(Error::KindMismatch {
            expected: "Instant".into(),
            found: f.kind().to_string(),
        });
    }
    if f.unit() != FrequencyUnit::Hz {
        return Err(Error::KindMismatch {
            expected: "Hz".into(),
            found: "fractional".into(),
        });
    }
    let dt = f.grid().dt;
    let mut values = Vec::with_capacity(f.len());
    let mut acc = 0.0;
    values.push(acc);
    for v in &f.values()[1..] {
        acc += TAU * v * dt;
        values.push(acc);
    }
    PhaseSeries::new(*f.grid(), values)
}

/// Time derivative by central differences, with second-order one-sided
/// differences at the ends. Exact for polynomials up to second order.
pub fn derivative(values: &[f64], dt: f64) -> Vec<f64> {
    let n = values.len();
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        2 => vec![(values[1] - values[0]) / dt; 2],
        _ => (0..n)
            .map(|i| {
                if i == 0 {
                    (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dt)
                } else if i == n - 1 {
                    (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * dt)
                } else {
                    (values[i + 1] - values[i - 1]) / (2.0 * dt)
                }
            })
            .collect(),
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("`{s}`: {e}")))
}

fn grid_from_times(times: &[f64]) -> Result<SampleGrid> {
    match times.len() {
        0 => Err(Error::Parse("no rows".into())),
        1 => SampleGrid::new(1.0, 1, times[0]),
        n => {
            let dt = times[1] - times[0];
            let grid = SampleGrid::new(dt, n, times[0])?;
            for (i, t) in times.iter().enumerate() {
                if (grid.time(i) - t).abs() > 1e-6 * dt.max(1e-12) {
                    return Err(Error::Parse(format!("row {i} breaks uniform spacing")));
                }
            }
            Ok(grid)
        }
    }
}

/// Writes a `t,value` CSV with shortest round-trip float formatting.
pub fn write_series_csv<W: Write>(w: W, grid: &SampleGrid, values: &[f64]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "value"])?;
    for (i, v) in values.iter().enumerate() {
        wr.write_record([grid.time(i).to_string(), v.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads a `t,value` CSV back into its grid and values.
pub fn read_series_csv<R: Read>(r: R) -> Result<(SampleGrid, Vec<f64>)> {
    let mut rd = csv::Reader::from_reader(r);
    let mut times = Vec::new();
    let mut values = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() < 2 {
            return Err(Error::Parse(format!("expected 2 columns, got {}", rec.len())));
        }
        times.push(parse_f64(&rec[0])?);
        values.push(parse_f64(&rec[1])?);
    }
    Ok((grid_from_times(&times)?, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize) -> SampleGrid {
        SampleGrid::new(0.5, n, 0.0).unwrap()
    }

    fn ramp(n: usize) -> PhaseSeries {
        PhaseSeries::new(grid(n), (0..n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn grid_rejects_bad_inputs() {
        assert!(SampleGrid::new(0.0, 10, 0.0).is_err());
        assert!(SampleGrid::new(-1.0, 10, 0.0).is_err());
        assert!(SampleGrid::new(1.0, 0, 0.0).is_err());
        assert!(SampleGrid::new(f64::NAN, 3, 0.0).is_err());
    }

    #[test]
    fn on_grid_check() {
        let g = SampleGrid::new(2.1e-5, 10, 0.0).unwrap();
        assert_eq!(g.samples_in("tau", 2.1e-4).unwrap(), 10);
        assert!(g.samples_in("tau", 2.15e-4).is_err());
    }

    #[test]
    fn delay_zero_is_identity() {
        let s = ramp(16);
        assert_eq!(delay(&s, 0).unwrap(), s);
    }

    #[test]
    fn delay_shifts_ramp() {
        let d = delay(&ramp(20), 3).unwrap();
        assert_eq!(d.warmup(), 3);
        for i in 3..20 {
            assert_eq!(d.values()[i], (i - 3) as f64);
        }
    }

    #[test]
    fn delay_out_of_range() {
        assert!(delay(&ramp(5), 5).is_err());
        assert!(delay(&ramp(5), 9).is_err());
    }

    #[test]
    fn affine_cancels_itself() {
        let s = ramp(10);
        let z = affine(&[(1.0, &s), (-1.0, &s)]).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_constant_example() {
        let a = PhaseSeries::new(grid(8), vec![4.0; 8]).unwrap();
        let b = PhaseSeries::new(grid(8), vec![2.0; 8]).unwrap();
        let c = affine(&[(1.0, &a), (-0.5, &b)]).unwrap();
        assert!(c.values().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn affine_grid_mismatch() {
        let a = ramp(8);
        let b = PhaseSeries::new(SampleGrid::new(1.0, 8, 0.0).unwrap(), vec![0.0; 8]).unwrap();
        assert!(matches!(affine(&[(1.0, &a), (1.0, &b)]), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn affine_warmup_is_union() {
        let a = delay(&ramp(10), 2).unwrap();
        let b = delay(&ramp(10), 5).unwrap();
        assert_eq!(affine(&[(1.0, &a), (1.0, &b)]).unwrap().warmup(), 5);
    }

    #[test]
    fn integrate_zero_and_unit_frequency() {
        let g = SampleGrid::new(1.0, 6, 0.0).unwrap();
        let zero = FrequencySeries::new(g, vec![0.0; 6], CounterKind::Instant, FrequencyUnit::Hz).unwrap();
        assert!(integrate_freq(&zero).unwrap().values().iter().all(|&v| v == 0.0));
        let one = FrequencySeries::new(g, vec![1.0; 6], CounterKind::Instant, FrequencyUnit::Hz).unwrap();
        let p = integrate_freq(&one).unwrap();
        for (i, v) in p.values().iter().enumerate() {
            assert!((v - TAU * i as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn integrate_rejects_counter_output() {
        let g = SampleGrid::new(1.0, 3, 0.0).unwrap();
        let pi = FrequencySeries::new(g, vec![0.0; 3], CounterKind::Pi, FrequencyUnit::Hz).unwrap();
        assert!(matches!(integrate_freq(&pi), Err(Error::KindMismatch { .. })));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(PhaseSeries::new(grid(2), vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn csv_layout() {
        let g = SampleGrid::new(0.25, 3, 1.0).unwrap();
        let s = PhaseSeries::new(g, vec![0.1, -2.0, 1e-17]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "t,value\n1,0.1\n1.25,-2\n1.5,0.00000000000000001\n");
        let (g2, v2) = read_series_csv(buf.as_slice()).unwrap();
        assert!(g2.same_as(&g));
        assert_eq!(v2, s.values());
    }

    #[test]
    fn derivative_exact_for_quadratic() {
        let dt = 0.1;
        let v: Vec<f64> = (0..50).map(|i| 3.0 * (i as f64 * dt).powi(2)).collect();
        let d = derivative(&v, dt);
        for i in 1..49 {
            assert!((d[i] - 6.0 * i as f64 * dt).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn delay_composes(values in proptest::collection::vec(-1e3f64..1e3, 10..60), k1 in 0usize..5, k2 in 0usize..5) {
            let s = PhaseSeries::new(grid(values.len()), values).unwrap();
            let two = delay(&delay(&s, k1).unwrap(), k2).unwrap();
            let one = delay(&s, k1 + k2).unwrap();
            prop_assert_eq!(two.warmup(), one.warmup());
            for i in (k1 + k2)..s.len() {
                prop_assert_eq!(two.values()[i], one.values()[i]);
                prop_assert_eq!(one.values()[i], s.values()[i - k1 - k2]);
            }
        }

        #[test]
        fn affine_matches_direct_loop(
            a in proptest::collection::vec(-1e3f64..1e3, 32),
            b in proptest::collection::vec(-1e3f64..1e3, 32),
            c in proptest::collection::vec(-1e3f64..1e3, 32),
        ) {
            let g = grid(32);
            let (sa, sb, sc) = (
                PhaseSeries::new(g, a.clone()).unwrap(),
                PhaseSeries::new(g, b.clone()).unwrap(),
                PhaseSeries::new(g, c.clone()).unwrap(),
            );
            let out = affine(&[(2.0, &sa), (-1.0, &sb), (0.5, &sc)]).unwrap();
            for i in 0..32 {
                let expected = 2.0 * a[i] + -1.0 * b[i] + 0.5 * c[i];
                prop_assert!((out.values()[i] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
            }
        }

        #[test]
        fn affine_is_linear(a in proptest::collection::vec(-1e3f64..1e3, 16), alpha in -10.0f64..10.0) {
            let s = PhaseSeries::new(grid(16), a).unwrap();
            let lhs = affine(&[(alpha, &s), (-0.5 * alpha, &s)]).unwrap();
            let rhs = affine(&[(1.0, &s), (-0.5, &s)]).unwrap().scaled(alpha);
            for (x, y) in lhs.values().iter().zip(rhs.values()) {
                prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }

        #[test]
        fn delay_commutes_with_affine(a in proptest::collection::vec(-1e3f64..1e3, 24), b in proptest::collection::vec(-1e3f64..1e3, 24), k in 0usize..6) {
            let g = grid(24);
            let (sa, sb) = (PhaseSeries::new(g, a).unwrap(), PhaseSeries::new(g, b).unwrap());
            let lhs = affine(&[(1.5, &delay(&sa, k).unwrap()), (-2.0, &delay(&sb, k).unwrap())]).unwrap();
            let rhs = delay(&affine(&[(1.5, &sa), (-2.0, &sb)]).unwrap(), k).unwrap();
            for i in k..24 {
                prop_assert_eq!(lhs.values()[i], rhs.values()[i]);
            }
        }
    }
}
