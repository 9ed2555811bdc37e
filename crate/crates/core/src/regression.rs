//! Thermal decomposition: lag search by cross-correlation against the
//! sensor temperatures, then a least-squares fit of the two interferometer
//! mismatches, and the residual after removing drift and thermal terms.
//!
//! The fit runs on phase decimated to the temperature grid by centered
//! block averaging. The model always carries an intercept.

use std::f64::consts::TAU;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::DEFAULT_GAMMA_FS_PER_K_M;
use crate::noise::DEFAULT_CARRIER_HZ;
use crate::series::{PhaseSeries, SampleGrid, TemperatureSeries};

/// Phase averaged over blocks centered on the rows of `target`; `None`
/// where a block reaches into the warm-up prefix or past the end.
///
/// Even block lengths use half weight on both end samples so the block
/// stays centered on the row time.
pub fn decimate(phase: &PhaseSeries, target: &SampleGrid) -> Result<Vec<Option<f64>>> {
    let g = phase.grid();
    let f = g.samples_in("temperature sample period", target.dt)?;
    if f == 0 {
        return Err(Error::OffGrid {
            what: "temperature sample period (must be >= phase dt)".into(),
            seconds: target.dt,
            dt: g.dt,
        });
    }
    let offset = g.samples_in("temperature grid start offset", (target.t0 - g.t0).abs())?;
    if target.t0 < g.t0 {
        return Err(Error::GridMismatch("temperature grid starts before the phase grid".into()));
    }
    let v = phase.values();
    let w = phase.warmup();
    let half = f / 2;
    Ok((0..target.n)
        .map(|j| {
            let c = offset + j * f;
            let lo = c.checked_sub(half)?;
            let hi = c + half;
            if lo < w || hi >= v.len() {
                return None;
            }
            if f % 2 == 1 {
                Some(v[lo..=hi].iter().sum::<f64>() / f as f64)
            } else {
                let inner: f64 = v[lo + 1..hi].iter().sum();
                Some((inner + 0.5 * (v[lo] + v[hi])) / f as f64)
            }
        })
        .collect())
}

fn phase_on(phase: &PhaseSeries, target: &SampleGrid) -> Result<Vec<Option<f64>>> {
    if phase.grid().same_as(target) {
        let w = phase.warmup();
        return Ok(phase.values().iter().enumerate().map(|(i, v)| (i >= w).then_some(*v)).collect());
    }
    decimate(phase, target)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagEstimate {
    /// `None` when no lag reaches the significance threshold.
    pub lag_s: Option<f64>,
    /// Signed correlation at the best lag.
    pub correlation: f64,
    pub threshold: f64,
    pub rows: usize,
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Rows `j` of the temperature grid usable for every lag up to `max_k`.
fn lag_rows(y: &[Option<f64>], max_k: usize) -> Vec<usize> {
    (max_k..y.len()).filter(|&j| y[j].is_some()).collect()
}

/// Lag in `[0, max_lag]` maximizing `|corr(ϕ(t), T(t − lag))|` over a
/// common row range. The phase is decimated to the temperature grid
/// unless it already lies on it.
pub fn estimate_lag(phase: &PhaseSeries, temp: &TemperatureSeries, max_lag_s: f64) -> Result<LagEstimate> {
    let y = phase_on(phase, temp.grid())?;
    lag_search(&y, temp, max_lag_s)
}

fn lag_search(y: &[Option<f64>], temp: &TemperatureSeries, max_lag_s: f64) -> Result<LagEstimate> {
    let tg = temp.grid();
    let max_k = tg.samples_in("max_lag_s", max_lag_s)?;
    let t = temp.values();
    if t.iter().all(|&v| v == t[0]) {
        return Err(Error::FlatRegressor("temperature has zero variance".into()));
    }
    let rows = lag_rows(y, max_k);
    if (rows.len() as f64) * tg.dt < 4.0 * max_lag_s || rows.len() < 3 {
        return Err(Error::Insufficient {
            what: format!(
                "{} usable temperature rows ({} s) are less than 4 x max_lag {} s",
                rows.len(),
                rows.len() as f64 * tg.dt,
                max_lag_s
            ),
            suggestion: None,
        });
    }
    let yv: Vec<f64> = rows.iter().map(|&j| y[j].unwrap_or(0.0)).collect();
    let mut best: Option<(usize, f64)> = None;
    for k in 0..=max_k {
        let tv: Vec<f64> = rows.iter().map(|&j| t[j - k]).collect();
        let Some(r) = pearson(&yv, &tv) else { continue };
        if best.is_none_or(|(_, b)| r.abs() > b.abs()) {
            best = Some((k, r));
        }
    }
    let (k, r) = best.ok_or_else(|| Error::FlatRegressor("temperature is flat over the search rows".into()))?;
    let threshold = 4.0 / (rows.len() as f64).sqrt();
    Ok(LagEstimate {
        lag_s: (r.abs() > threshold).then(|| k as f64 * tg.dt),
        correlation: r,
        threshold,
        rows: rows.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionResult {
    pub lag_local_s: f64,
    pub lag_remote_s: f64,
    pub dl_local_m: f64,
    pub dl_remote_m: f64,
    pub dl_local_se_m: f64,
    pub dl_remote_se_m: f64,
    /// `[a, b, c]` of `ϕ ≈ a·x_local + b·x_remote + c` (rad/K, rad/K, rad).
    pub coefficients: [f64; 3],
    pub std_errors: [f64; 3],
    pub r_squared: f64,
    /// Temperature-grid rows used by the fit.
    pub rows: usize,
    /// Residual RMS on the input grid, over its valid region.
    pub residual_rms_rad: f64,
    /// Residual on the input grid.
    #[serde(skip)]
    pub residual: Option<PhaseSeries>,
    /// Fit residual on the temperature rows used.
    #[serde(skip)]
    pub fit_residual: Vec<f64>,
    /// Lagged regressors on the fit rows, for diagnostics.
    #[serde(skip)]
    pub regressors: [Vec<f64>; 2],
    pub notes: Vec<String>,
}

impl DecompositionResult {
    pub fn residual(&self) -> &PhaseSeries {
        self.residual.as_ref().expect("residual is always set by fit_mismatch")
    }

    /// Flat `key=value` report, one entry per line.
    pub fn write_report<W: Write>(&self, mut w: W) -> Result<()> {
        let lines = [
            ("lag_local_s", self.lag_local_s),
            ("lag_remote_s", self.lag_remote_s),
            ("dl_local_m", self.dl_local_m),
            ("dl_local_se_m", self.dl_local_se_m),
            ("dl_remote_m", self.dl_remote_m),
            ("dl_remote_se_m", self.dl_remote_se_m),
            ("coef_local_rad_per_k", self.coefficients[0]),
            ("coef_local_se", self.std_errors[0]),
            ("coef_remote_rad_per_k", self.coefficients[1]),
            ("coef_remote_se", self.std_errors[1]),
            ("intercept_rad", self.coefficients[2]),
            ("intercept_se", self.std_errors[2]),
            ("r_squared", self.r_squared),
            ("residual_rms_rad", self.residual_rms_rad),
        ];
        for (k, v) in lines {
            writeln!(w, "{k}={v}")?;
        }
        writeln!(w, "rows={}", self.rows)?;
        for (i, n) in self.notes.iter().enumerate() {
            writeln!(w, "note{i}={n}")?;
        }
        Ok(())
    }
}

/// Physical constants of the fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConstants {
    pub gamma_fs_per_k_m: f64,
    pub nu_hz: f64,
}

impl Default for FitConstants {
    fn default() -> Self {
        Self {
            gamma_fs_per_k_m: DEFAULT_GAMMA_FS_PER_K_M,
            nu_hz: DEFAULT_CARRIER_HZ,
        }
    }
}

impl FitConstants {
    /// rad per (K·m).
    fn scale(&self) -> f64 {
        TAU * self.nu_hz * self.gamma_fs_per_k_m * 1e-15
    }
}

fn lagged_rows(temp: &TemperatureSeries, k: usize, rows: &[usize]) -> Vec<f64> {
    let t = temp.values();
    let t0 = t[0];
    rows.iter().map(|&j| t[j - k] - t0).collect()
}

/// Sensor temperature at `t − lag` on the phase grid, linearly
/// interpolated and held past the last reading, minus the first sensor
/// value. `None` before the sensor record starts.
fn lagged_on_phase_grid(temp: &TemperatureSeries, lag_s: f64, grid: &SampleGrid) -> Vec<Option<f64>> {
    let tg = temp.grid();
    let t = temp.values();
    let t0 = t[0];
    (0..grid.n)
        .map(|i| {
            let u = (grid.time(i) - lag_s - tg.t0) / tg.dt;
            if u < -1e-9 {
                return None;
            }
            let u = u.clamp(0.0, (t.len() - 1) as f64);
            let j = (u.floor() as usize).min(t.len() - 1);
            let frac = u - j as f64;
            let v = if j + 1 < t.len() {
                t[j] + frac * (t[j + 1] - t[j])
            } else {
                t[j]
            };
            Some(v - t0)
        })
        .collect()
}

/// Least-squares fit of `ltw_minus_lm − drift_term` on the two lagged
/// temperature regressors plus an intercept, and the residual
/// `ltw_minus_lm − drift − a·x_local − b·x_remote − c` on the input grid.
pub fn fit_mismatch(
    ltw_minus_lm: &PhaseSeries,
    temp_local: &TemperatureSeries,
    temp_remote: &TemperatureSeries,
    lags_s: (f64, f64),
    drift_term: &PhaseSeries,
    constants: FitConstants,
) -> Result<DecompositionResult> {
    let grid = *ltw_minus_lm.grid();
    grid.ensure_same(drift_term.grid())?;
    temp_local.grid().ensure_same(temp_remote.grid())?;
    let tg = *temp_local.grid();
    let kl = tg.samples_in("lag_local_s", lags_s.0)?;
    let kr = tg.samples_in("lag_remote_s", lags_s.1)?;
    let corrected = ltw_minus_lm.sub(drift_term)?;
    let y = phase_on(&corrected, &tg)?;
    let rows: Vec<usize> = (kl.max(kr)..tg.n).filter(|&j| y[j].is_some()).collect();
    if rows.len() < 4 {
        return Err(Error::Insufficient {
            what: format!("only {} temperature rows overlap the phase after lags", rows.len()),
            suggestion: None,
        });
    }
    let xl = lagged_rows(temp_local, kl, &rows);
    let xr = lagged_rows(temp_remote, kr, &rows);
    let yv: Vec<f64> = rows.iter().map(|&j| y[j].unwrap_or(0.0)).collect();
    let n = rows.len();

    let flat = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if flat(&xl) || flat(&xr) {
        return Err(Error::RankDeficient {
            detail: format!(
                "{} temperature regressor is constant over the fit rows",
                if flat(&xl) { "local" } else { "remote" }
            ),
        });
    }
    let corr = pearson(&xl, &xr).unwrap_or(1.0);
    let x = DMatrix::from_fn(n, 3, |i, c| match c {
        0 => xl[i],
        1 => xr[i],
        _ => 1.0,
    });
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if corr.abs() > 1.0 - 1e-10 || smin <= 1e-10 * smax {
        return Err(Error::RankDeficient {
            detail: format!("temperature regressors are collinear (correlation {corr:.12}, condition {:.3e})", smax / smin),
        });
    }
    let yvec = DVector::from_vec(yv.clone());
    let beta = svd
        .solve(&yvec, 0.0)
        .map_err(|e| Error::RankDeficient { detail: e.to_string() })?;
    let fitted = &x * &beta;
    let resid: Vec<f64> = yv.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    let rss: f64 = resid.iter().map(|r| r * r).sum();
    let ymean = yv.iter().sum::<f64>() / n as f64;
    let tss: f64 = yv.iter().map(|v| (v - ymean).powi(2)).sum();
    let dof = (n as f64 - 3.0).max(1.0);
    let sigma2 = rss / dof;
    let v = svd.v_t.as_ref().expect("v_t requested").transpose();
    let inv_s2 = svd.singular_values.map(|s| 1.0 / (s * s));
    let cov = &v * DMatrix::from_diagonal(&inv_s2) * v.transpose();
    let se = [0, 1, 2].map(|i| (sigma2 * cov[(i, i)]).max(0.0).sqrt());
    let coefficients = [beta[0], beta[1], beta[2]];

    // Residual on the input grid.
    let il = lagged_on_phase_grid(temp_local, lags_s.0, &grid);
    let ir = lagged_on_phase_grid(temp_remote, lags_s.1, &grid);
    let cv = corrected.values();
    let mut warm = corrected.warmup();
    let mut values = vec![0.0; grid.n];
    for i in 0..grid.n {
        match (il[i], ir[i]) {
            (Some(a), Some(b)) => values[i] = cv[i] - coefficients[0] * a - coefficients[1] * b - coefficients[2],
            _ => {
                if i >= warm {
                    warm = i + 1;
                }
            }
        }
    }
    let warm = warm.min(grid.n);
    let residual = PhaseSeries::new(grid, values)?.with_warmup(warm);
    let valid = residual.valid();
    let residual_rms_rad = if valid.is_empty() {
        0.0
    } else {
        (valid.iter().map(|v| v * v).sum::<f64>() / valid.len() as f64).sqrt()
    };

    let scale = constants.scale();
    Ok(DecompositionResult {
        lag_local_s: kl as f64 * tg.dt,
        lag_remote_s: kr as f64 * tg.dt,
        dl_local_m: coefficients[0] / scale,
        dl_remote_m: coefficients[1] / scale,
        dl_local_se_m: se[0] / scale,
        dl_remote_se_m: se[1] / scale,
        coefficients,
        std_errors: se,
        r_squared: if tss > 0.0 { 1.0 - rss / tss } else { 1.0 },
        rows: n,
        residual_rms_rad,
        residual: Some(residual),
        fit_residual: resid,
        regressors: [xl, xr],
        notes: vec![
            "intercept included in the fit and removed from the residual".into(),
            format!("regressor correlation {corr:.6}"),
        ],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecomposeOptions {
    pub max_lag_local_s: f64,
    pub max_lag_remote_s: f64,
    pub constants: FitConstants,
    /// Alternating lag refinements after the first pass.
    pub refinements: usize,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            max_lag_local_s: 3000.0,
            max_lag_remote_s: 300.0,
            constants: FitConstants::default(),
            refinements: 4,
        }
    }
}

fn lagged_full(temp: &TemperatureSeries, k: usize) -> Vec<f64> {
    let t = temp.values();
    (0..t.len()).map(|j| t[j.saturating_sub(k)]).collect()
}

/// Two-stage decomposition: lag search, then the mismatch fit.
///
/// Each lag is first searched against the drift-corrected phase. The
/// search is then repeated on partial residuals, with the other
/// temperature's fitted contribution removed, until both lags are stable
/// or `refinements` passes have run.
pub fn decompose(
    ltw_minus_lm: &PhaseSeries,
    drift_term: &PhaseSeries,
    temp_local: &TemperatureSeries,
    temp_remote: &TemperatureSeries,
    opts: &DecomposeOptions,
) -> Result<DecompositionResult> {
    let tg = *temp_local.grid();
    let corrected = ltw_minus_lm.sub(drift_term)?;
    let y = phase_on(&corrected, &tg)?;
    let first_l = lag_search(&y, temp_local, opts.max_lag_local_s)?;
    let first_r = lag_search(&y, temp_remote, opts.max_lag_remote_s)?;
    let mut lags = (first_l.lag_s.unwrap_or(0.0), first_r.lag_s.unwrap_or(0.0));
    let mut notes = Vec::new();
    if first_l.lag_s.is_none() {
        notes.push("no significant local lag in the first pass".to_string());
    }
    if first_r.lag_s.is_none() {
        notes.push("no significant remote lag in the first pass".to_string());
    }
    let mut passes = 0;
    for _ in 0..opts.refinements {
        let fit = fit_mismatch(ltw_minus_lm, temp_local, temp_remote, lags, drift_term, opts.constants)?;
        let partial = |coef: f64, temp: &TemperatureSeries, lag: f64| -> Result<Vec<Option<f64>>> {
            let k = tg.samples_in("lag", lag)?;
            let t = lagged_full(temp, k);
            Ok(y.iter().zip(&t).map(|(v, x)| v.map(|v| v - coef * x)).collect())
        };
        let yl = partial(fit.coefficients[1], temp_remote, lags.1)?;
        let yr = partial(fit.coefficients[0], temp_local, lags.0)?;
        let nl = lag_search(&yl, temp_local, opts.max_lag_local_s)?.lag_s.unwrap_or(lags.0);
        let nr = lag_search(&yr, temp_remote, opts.max_lag_remote_s)?.lag_s.unwrap_or(lags.1);
        passes += 1;
        if (nl, nr) == lags {
            break;
        }
        lags = (nl, nr);
    }
    let mut result = fit_mismatch(ltw_minus_lm, temp_local, temp_remote, lags, drift_term, opts.constants)?;
    notes.push(format!("lag search passes {}", passes + 1));
    result.notes.extend(notes);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{gen_powerlaw, gen_temperature, NoiseSpec, SineComponent, TemperatureProfile};

    const DT: f64 = 1.0;
    const N: usize = 30_000;

    fn profile(rw: f64, period: f64, lag: f64, seed: u64) -> TemperatureProfile {
        TemperatureProfile {
            mean_k: 295.0,
            sines: vec![SineComponent {
                amplitude_k: 0.2,
                period_s: period,
                phase_rad: 0.3,
            }],
            random_walk_k2_per_s: rw,
            heat_lag_s: lag,
            seed,
        }
    }

    struct Synthetic {
        phase: PhaseSeries,
        drift: PhaseSeries,
        temp_local: TemperatureSeries,
        temp_remote: TemperatureSeries,
    }

    /// Phase built directly from the thermal model on a 1 s grid, with
    /// sensor temperatures kept every 5 s.
    fn synthetic(dl: (f64, f64), lags: (f64, f64), noise_rad: f64, drift_rad_per_s2: f64, seed: u64) -> Synthetic {
        let grid = SampleGrid::new(DT, N, 0.0).unwrap();
        let (ml, el) = gen_temperature(&profile(2e-6, 7200.0, lags.0, seed), &grid).unwrap();
        let (mr, er) = gen_temperature(&profile(4e-6, 1800.0, lags.1, seed + 1), &grid).unwrap();
        let k = FitConstants::default().scale();
        let noise = gen_powerlaw(&NoiseSpec::white_pm(1.0, seed + 2), &grid).unwrap();
        let (el0, er0) = (el.values()[0], er.values()[0]);
        let values: Vec<f64> = (0..N)
            .map(|i| {
                let t = grid.time(i);
                k * dl.0 * (el.values()[i] - el0)
                    + k * dl.1 * (er.values()[i] - er0)
                    + drift_rad_per_s2 * t * t
                    + noise_rad * noise.values()[i]
                    + 0.4
            })
            .collect();
        let drift = PhaseSeries::from_fn(grid, |t| drift_rad_per_s2 * t * t).unwrap();
        Synthetic {
            phase: PhaseSeries::new(grid, values).unwrap(),
            drift,
            temp_local: ml.subsample(5).unwrap(),
            temp_remote: mr.subsample(5).unwrap(),
        }
    }

    #[test]
    fn decimation_is_centered() {
        let g = SampleGrid::new(1.0, 50, 0.0).unwrap();
        let ramp = PhaseSeries::from_fn(g, |t| 2.0 * t).unwrap();
        for f in [4usize, 5] {
            let target = SampleGrid::new(f as f64, 50 / f, 0.0).unwrap();
            let d = decimate(&ramp, &target).unwrap();
            assert!(d[0].is_none());
            for (j, v) in d.iter().enumerate() {
                if let Some(v) = v {
                    assert!((v - 2.0 * target.time(j)).abs() < 1e-12, "f={f} j={j}");
                }
            }
            assert!(d.iter().filter(|v| v.is_some()).count() >= 50 / f - 2);
        }
    }

    #[test]
    fn lag_of_constructed_inverse_problem() {
        let g = SampleGrid::new(5.0, 4_000, 0.0).unwrap();
        let (meas, eff) = gen_temperature(&profile(1e-5, 3600.0, 105.0, 3), &g).unwrap();
        let phase = PhaseSeries::new(g, eff.values().iter().map(|t| 3.0 * t).collect()).unwrap();
        let e = estimate_lag(&phase, &meas, 300.0).unwrap();
        assert_eq!(e.lag_s, Some(105.0));
        let zero = PhaseSeries::new(g, meas.values().iter().map(|t| -2.0 * t).collect()).unwrap();
        let e0 = estimate_lag(&zero, &meas, 300.0).unwrap();
        assert_eq!(e0.lag_s, Some(0.0));
        assert!(e0.correlation < 0.0);
    }

    #[test]
    fn heat_lag_recovered_by_correlation() {
        let g = SampleGrid::new(5.0, 8_000, 0.0).unwrap();
        let (meas, eff) = gen_temperature(&profile(1e-5, 7200.0, 2300.0, 4), &g).unwrap();
        let phase = PhaseSeries::new(g, eff.values().to_vec()).unwrap();
        assert_eq!(estimate_lag(&phase, &meas, 3000.0).unwrap().lag_s, Some(2300.0));
    }

    #[test]
    fn independent_phase_has_no_lag() {
        let mut found = 0;
        for seed in 0..20 {
            let g = SampleGrid::new(5.0, 4_000, 0.0).unwrap();
            let (meas, _) = gen_temperature(&profile(0.0, 3600.0 / 7.3, 0.0, seed), &g).unwrap();
            let noise = gen_powerlaw(&NoiseSpec::white_pm(1.0, 100 + seed), &g).unwrap();
            if estimate_lag(&noise, &meas, 300.0).unwrap().lag_s.is_some() {
                found += 1;
            }
        }
        assert!(found <= 1, "{found} false detections");
    }

    #[test]
    fn flat_temperature_and_short_overlap_rejected() {
        let g = SampleGrid::new(5.0, 1_000, 0.0).unwrap();
        let flat = TemperatureSeries::new(g, vec![300.0; 1_000]).unwrap();
        let phase = PhaseSeries::zeros(g);
        assert!(matches!(estimate_lag(&phase, &flat, 100.0), Err(Error::FlatRegressor(_))));
        let (meas, _) = gen_temperature(&profile(1e-5, 600.0, 0.0, 1), &g).unwrap();
        assert!(matches!(estimate_lag(&phase, &meas, 1500.0), Err(Error::Insufficient { .. })));
    }

    #[test]
    fn noiseless_fit_is_exact() {
        let s = synthetic((0.15, 0.35), (2300.0, 105.0), 0.0, 0.0, 7);
        let r = fit_mismatch(&s.phase, &s.temp_local, &s.temp_remote, (2300.0, 105.0), &s.drift, FitConstants::default()).unwrap();
        assert!((r.dl_local_m - 0.15).abs() < 1e-3, "{}", r.dl_local_m);
        assert!((r.dl_remote_m - 0.35).abs() < 1e-3, "{}", r.dl_remote_m);
        assert!(r.r_squared > 1.0 - 1e-3, "{}", r.r_squared);
        // Between 5 s sensor samples the interpolated temperature departs
        // from the 1 s truth by the random-walk bridge, about
        // k·δL_r·sqrt(q_r·2.5 s) ≈ 0.04 rad.
        assert!(r.residual_rms_rad < 0.06, "{}", r.residual_rms_rad);
    }

    #[test]
    fn noiseless_fit_on_sensor_grid_is_machine_exact() {
        let g = SampleGrid::new(5.0, 6_000, 0.0).unwrap();
        let (ml, _) = gen_temperature(&profile(1e-5, 7200.0, 0.0, 1), &g).unwrap();
        let (mr, _) = gen_temperature(&profile(2e-5, 1800.0, 0.0, 2), &g).unwrap();
        let k = FitConstants::default().scale();
        let (kl, kr) = (460usize, 21usize);
        let values: Vec<f64> = (0..g.n)
            .map(|j| {
                let a = ml.values()[j.saturating_sub(kl)] - ml.values()[0];
                let b = mr.values()[j.saturating_sub(kr)] - mr.values()[0];
                k * 0.15 * a + k * 0.35 * b - 1.0
            })
            .collect();
        let phase = PhaseSeries::new(g, values).unwrap().with_warmup(kl);
        let r = fit_mismatch(&phase, &ml, &mr, (2300.0, 105.0), &PhaseSeries::zeros(g), FitConstants::default()).unwrap();
        assert!((r.dl_local_m - 0.15).abs() < 1e-10);
        assert!((r.dl_remote_m - 0.35).abs() < 1e-10);
        assert!((r.r_squared - 1.0).abs() < 1e-12);
        assert!(r.residual().valid().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn decomposition_recovers_mismatch_and_lags() {
        let s = synthetic((0.15, 0.35), (2300.0, 105.0), 0.5, 1e-6, 11);
        let r = decompose(&s.phase, &s.drift, &s.temp_local, &s.temp_remote, &DecomposeOptions::default()).unwrap();
        assert_eq!(r.lag_local_s, 2300.0);
        assert_eq!(r.lag_remote_s, 105.0);
        assert!((r.dl_local_m / 0.15 - 1.0).abs() < 0.05, "{}", r.dl_local_m);
        assert!((r.dl_remote_m / 0.35 - 1.0).abs() < 0.05, "{}", r.dl_remote_m);
        assert!(r.residual_rms_rad < 1.5 * 0.5, "{}", r.residual_rms_rad);
    }

    #[test]
    fn zero_remote_mismatch_is_consistent_with_zero() {
        let s = synthetic((0.15, 0.0), (2300.0, 105.0), 0.5, 0.0, 12);
        let r = fit_mismatch(&s.phase, &s.temp_local, &s.temp_remote, (2300.0, 105.0), &s.drift, FitConstants::default()).unwrap();
        assert!(r.dl_remote_m.abs() < 3.0 * r.dl_remote_se_m, "{} ± {}", r.dl_remote_m, r.dl_remote_se_m);
    }

    #[test]
    fn fit_error_scales_with_noise() {
        let err = |eps: f64| {
            let s = synthetic((0.15, 0.35), (2300.0, 105.0), eps, 0.0, 21);
            let base = synthetic((0.15, 0.35), (2300.0, 105.0), 0.0, 0.0, 21);
            let lags = (2300.0, 105.0);
            let a = fit_mismatch(&s.phase, &s.temp_local, &s.temp_remote, lags, &s.drift, FitConstants::default()).unwrap();
            let b = fit_mismatch(&base.phase, &base.temp_local, &base.temp_remote, lags, &base.drift, FitConstants::default()).unwrap();
            (a.dl_local_m - b.dl_local_m, a.dl_remote_m - b.dl_remote_m)
        };
        let (l1, r1) = err(0.1);
        let (l2, r2) = err(1.0);
        assert!((l2 / l1 - 10.0).abs() < 1e-6, "{l1} {l2}");
        assert!((r2 / r1 - 10.0).abs() < 1e-6, "{r1} {r2}");
    }

    #[test]
    fn residual_is_orthogonal_to_regressors() {
        let s = synthetic((0.15, 0.35), (2300.0, 105.0), 0.5, 0.0, 5);
        let r = fit_mismatch(&s.phase, &s.temp_local, &s.temp_remote, (2300.0, 105.0), &s.drift, FitConstants::default()).unwrap();
        let bound = 4.0 / (r.rows as f64).sqrt();
        for x in &r.regressors {
            let c = pearson(&r.fit_residual, x).unwrap();
            assert!(c.abs() < bound, "{c}");
            assert!(c.abs() < 1e-9);
        }
    }

    #[test]
    fn skipping_drift_term_inflates_residual() {
        let s = synthetic((0.15, 0.35), (2300.0, 105.0), 0.5, 2e-7, 6);
        let lags = (2300.0, 105.0);
        let good = fit_mismatch(&s.phase, &s.temp_local, &s.temp_remote, lags, &s.drift, FitConstants::default()).unwrap();
        let zero = PhaseSeries::zeros(*s.phase.grid());
        let bad = fit_mismatch(&s.phase, &s.temp_local, &s.temp_remote, lags, &zero, FitConstants::default()).unwrap();
        assert!(bad.residual_rms_rad > good.residual_rms_rad);
    }

    #[test]
    fn collinear_temperatures_rejected() {
        let s = synthetic((0.15, 0.35), (0.0, 0.0), 0.5, 0.0, 8);
        match fit_mismatch(&s.phase, &s.temp_local, &s.temp_local, (0.0, 0.0), &s.drift, FitConstants::default()) {
            Err(Error::RankDeficient { detail }) => assert!(detail.contains("collinear")),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn report_is_flat_key_value() {
        let s = synthetic((0.15, 0.35), (2300.0, 105.0), 0.5, 0.0, 9);
        let r = fit_mismatch(&s.phase, &s.temp_local, &s.temp_remote, (2300.0, 105.0), &s.drift, FitConstants::default()).unwrap();
        let mut out = Vec::new();
        r.write_report(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.lines().all(|l| l.split_once('=').is_some()));
        assert!(text.contains("lag_local_s=2300\n"));
    }
}
