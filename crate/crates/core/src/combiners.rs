//! Post-detection phase combinations: the two-way estimates, the
//! uni-directional two-way estimate, the drift term and the residual of the
//! three-term error model.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::series::{affine, derivative, CounterKind, FrequencySeries, FrequencyUnit, PhaseSeries};

/// Two-way estimate from the local photodiodes: `pd4a − pd4b/2`.
pub fn ltw_local(pd4a: &PhaseSeries, pd4b: &PhaseSeries) -> Result<PhaseSeries> {
    affine(&[(1.0, pd4a), (-0.5, pd4b)])
}

/// Two-way estimate from the remote photodiodes: `pd3a + pd3b/2`.
pub fn ltw_remote(pd3a: &PhaseSeries, pd3b: &PhaseSeries) -> Result<PhaseSeries> {
    affine(&[(1.0, pd3a), (0.5, pd3b)])
}

/// Conventional two-way estimate `(pd4a + pd3a)/2`. Both inputs must be
/// sampled synchronously; a lag between them leaks half its increment.
pub fn ctw(pd4a: &PhaseSeries, pd3a: &PhaseSeries) -> Result<PhaseSeries> {
    affine(&[(0.5, pd4a), (0.5, pd3a)])
}

/// One-way fiber-1 noise estimate from the uncorrected round-trip beat.
pub fn fiber1_estimate(pd1: &PhaseSeries) -> PhaseSeries {
    pd1.scaled(0.5)
}

/// One-way fiber-2 noise estimate from the local round-trip beat.
pub fn fiber2_estimate(pd4b: &PhaseSeries) -> PhaseSeries {
    pd4b.scaled(0.5)
}

/// Difference of the two one-way fiber noise estimates.
pub fn uni_directional_two_way(fiber1_noise_est: &PhaseSeries, fiber2_noise_est: &PhaseSeries) -> Result<PhaseSeries> {
    affine(&[(1.0, fiber1_noise_est), (-1.0, fiber2_noise_est)])
}

/// `−2πτ[(ν1(t) − ν2(t)) − (ν1(t₀) − ν2(t₀))]` on the frequency grid, with
/// `t₀` the first sample. Accepts instantaneous or Λ data in Hz.
pub fn phi_drift(nu1: &FrequencySeries, nu2: &FrequencySeries, tau_s: f64) -> Result<PhaseSeries> {
    nu1.grid().ensure_same(nu2.grid())?;
    for f in [nu1, nu2] {
        if !matches!(f.kind(), CounterKind::Instant | CounterKind::Lambda) {
            return Err(Error::KindMismatch {
                expected: "Instant or Lambda".into(),
                found: f.kind().to_string(),
            });
        }
        if f.unit() != FrequencyUnit::Hz {
            return Err(Error::KindMismatch {
                expected: "Hz".into(),
                found: "fractional".into(),
            });
        }
    }
    let diff: Vec<f64> = nu1.values().iter().zip(nu2.values()).map(|(a, b)| a - b).collect();
    let d0 = diff[0];
    PhaseSeries::new(*nu1.grid(), diff.iter().map(|d| -TAU * tau_s * (d - d0)).collect())
}

/// Drift term computed from the measured laser beat alone.
///
/// The frequency difference at each sample is the central-difference
/// derivative of `lm` over `2π`, taken as an instantaneous series on the
/// valid region; the result is zero on the warm-up prefix and referenced to
/// the first valid sample.
pub fn drift_from_beat(lm: &PhaseSeries, tau_s: f64) -> Result<PhaseSeries> {
    let grid = *lm.grid();
    let w = lm.warmup();
    let valid = lm.valid();
    if valid.len() < 3 {
        return Err(Error::Insufficient {
            what: "drift term needs at least three valid beat samples".into(),
            suggestion: None,
        });
    }
    let dnu: Vec<f64> = derivative(valid, grid.dt).iter().map(|v| v / TAU).collect();
    let vgrid = crate::series::SampleGrid::new(grid.dt, valid.len(), grid.time(w))?;
    let nu = FrequencySeries::new(vgrid, dnu, CounterKind::Instant, FrequencyUnit::Hz)?;
    let zero = FrequencySeries::new(vgrid, vec![0.0; valid.len()], CounterKind::Instant, FrequencyUnit::Hz)?;
    let drift = phi_drift(&nu, &zero, tau_s)?;
    let mut values = vec![0.0; w];
    values.extend_from_slice(drift.values());
    Ok(PhaseSeries::new(grid, values)?.with_warmup(w))
}

/// `ltw_minus_lm − drift − local − remote`.
pub fn residual(
    ltw_minus_lm: &PhaseSeries,
    drift: &PhaseSeries,
    local: &PhaseSeries,
    remote: &PhaseSeries,
) -> Result<PhaseSeries> {
    affine(&[(1.0, ltw_minus_lm), (-1.0, drift), (-1.0, local), (-1.0, remote)])
}
