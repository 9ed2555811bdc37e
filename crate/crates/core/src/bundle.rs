//! Report bundles: a flat directory of CSV and `key=value` files plus a
//! `manifest.json` listing every file with its SHA-256. Bundle comparison
//! works on the manifests.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pipeline::{Analysis, CounterAnalysis, Measurements};
use crate::regression::DecompositionResult;
use crate::scenario::{ScenarioConfig, Timescale};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// `record`, `report`, `decomposition` or `counters`.
    pub bundle: String,
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    /// Absent for bundles built from external counter files.
    pub timescale: Option<Timescale>,
    pub versions: Versions,
    pub notes: Vec<String>,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Versions {
    pub fiberlink: String,
    pub bundle_format: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            fiberlink: env!("CARGO_PKG_VERSION").to_string(),
            bundle_format: 1,
        }
    }
}

/// Files held in memory until written; insertion order is preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub files: Vec<(String, Vec<u8>)>,
    pub manifest: Manifest,
}

impl ReportBundle {
    /// Empty bundle with the given manifest header.
    pub fn with_header(kind: &str, scenario: &str, config_hash: String, seed: u64, timescale: Option<Timescale>) -> Self {
        Self {
            files: Vec::new(),
            manifest: Manifest {
                bundle: kind.into(),
                scenario: scenario.into(),
                config_hash,
                seed,
                timescale,
                versions: Versions::default(),
                notes: Vec::new(),
                files: Vec::new(),
            },
        }
    }

    fn new(kind: &str, config: &ScenarioConfig) -> Result<Self> {
        let mut b = Self::with_header(kind, &config.name, config.hash()?, config.seed, Some(config.timescale()));
        b.add("config.json", config.to_json()?.into_bytes())?;
        Ok(b)
    }

    pub fn add(&mut self, path: &str, bytes: Vec<u8>) -> Result<()> {
        if path == MANIFEST || self.files.iter().any(|(p, _)| p == path) {
            return Err(Error::InvalidConfig(format!("duplicate bundle file `{path}`")));
        }
        self.manifest.files.push(FileEntry {
            path: path.to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            bytes: bytes.len(),
        });
        self.files.push((path.to_string(), bytes));
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<&[u8]> {
        self.files.iter().find(|(p, _)| p == path).map(|(_, b)| b.as_slice())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (path, bytes) in &self.files {
            fs::write(dir.join(path), bytes)?;
        }
        let mut m = serde_json::to_vec_pretty(&self.manifest)?;
        m.push(b'\n');
        fs::write(dir.join(MANIFEST), m)?;
        Ok(())
    }
}

/// Fixed-point with nine decimals and no negative zero.
fn fixed9(v: f64) -> String {
    let s = format!("{v:.9}");
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

/// Bundle of a simulated beat record.
pub fn record_bundle(config: &ScenarioConfig, m: &Measurements) -> Result<ReportBundle> {
    let mut b = ReportBundle::new("record", config)?;
    for (name, bytes) in m.files()? {
        b.add(&name, bytes)?;
    }
    Ok(b)
}

const PI_NOTE: &str =
    "Pi offset uncertainty uses std/L with L in gates (white-PM reading); std/sqrt(L) is available as an option";
const LAMBDA_NOTE: &str = "Lambda-sourced OADEV/MDEV curves are labelled source_kind=Lambda and are not true ADEV";

/// Counter, stability, offset and slip files of each analysed stream.
pub fn add_counter_analyses(b: &mut ReportBundle, analyses: &[CounterAnalysis]) -> Result<()> {
    b.manifest.notes.push(PI_NOTE.into());
    b.manifest.notes.push(LAMBDA_NOTE.into());
    let mut offsets = String::from("series,kind,method,mean,uncertainty,tau_s\n");
    let mut slips = String::from("series,gate,gate_start_s,magnitude_hz\n");
    for s in analyses {
        for f in &s.counts {
            let mut buf = Vec::new();
            f.write_counter_csv(&mut buf)?;
            b.add(&format!("counter_{}_{}.csv", s.label, f.kind()), buf)?;
        }
        for c in &s.curves {
            let mut buf = Vec::new();
            c.write_csv(&mut buf)?;
            b.add(&format!("stability_{}_{}_{}.csv", s.label, c.source_kind, c.estimator.as_str()), buf)?;
        }
        for (o, f) in s.offsets.iter().zip(&s.counts) {
            let tau = o.tau_s.map(|t| t.to_string()).unwrap_or_default();
            let _ = writeln!(
                offsets,
                "{},{},{},{},{},{}",
                s.label,
                f.kind(),
                o.method.label(),
                o.mean,
                o.uncertainty,
                tau
            );
        }
        let gate = s.counts.first().map(|f| *f.grid());
        for slip in &s.slips {
            let t = gate.map(|g| g.time(slip.gate)).unwrap_or(f64::NAN);
            let _ = writeln!(slips, "{},{},{},{}", s.label, slip.gate, t, slip.magnitude_hz);
        }
    }
    b.add("offsets.csv", offsets.into_bytes())?;
    b.add("slips.csv", slips.into_bytes())?;
    Ok(())
}

/// Bundle of counter files recorded elsewhere. The manifest hash covers
/// the input bytes.
pub fn counter_bundle(label: &str, inputs: &[Vec<u8>], analyses: &[CounterAnalysis]) -> Result<ReportBundle> {
    let mut h = Sha256::new();
    for i in inputs {
        h.update(i);
    }
    let mut b = ReportBundle::with_header("counters", label, hex::encode(h.finalize()), 0, None);
    add_counter_analyses(&mut b, analyses)?;
    Ok(b)
}

/// Bundle of an analysis, with the decomposition files when present.
pub fn report_bundle(config: &ScenarioConfig, a: &Analysis) -> Result<ReportBundle> {
    let mut b = ReportBundle::new("report", config)?;
    add_counter_analyses(&mut b, &a.per_series)?;

    for (label, p) in &a.psds {
        let mut s = String::from("freq_hz,density_rad2_per_hz\n");
        for (f, d) in p.freq_hz.iter().zip(&p.density) {
            let _ = writeln!(s, "{f},{d}");
        }
        b.add(&format!("psd_{label}.csv"), s.into_bytes())?;
    }

    if let Some(c) = &a.consistency {
        let mut s = String::new();
        let _ = writeln!(s, "gates_checked={}", c.gates_checked);
        let _ = writeln!(s, "max_deviation_hz={}", c.max_deviation_hz);
        let _ = writeln!(s, "tolerance_hz={}", c.tolerance_hz);
        let _ = writeln!(s, "violating_gates={}", c.violating_gates.len());
        let _ = writeln!(s, "passed={}", c.passed());
        b.add("consistency.txt", s.into_bytes())?;
    }

    let mut ids = String::from("identity,max_abs_rad\n");
    for (name, v) in &a.identities {
        let _ = writeln!(ids, "{name},{}", fixed9(*v));
    }
    b.add("identities.csv", ids.into_bytes())?;

    if let Some(d) = &a.decomposition {
        add_decomposition(&mut b, d)?;
    }
    Ok(b)
}

/// Bundle holding only a decomposition.
pub fn decomposition_bundle(config: &ScenarioConfig, d: &DecompositionResult) -> Result<ReportBundle> {
    let mut b = ReportBundle::new("decomposition", config)?;
    add_decomposition(&mut b, d)?;
    Ok(b)
}

fn add_decomposition(b: &mut ReportBundle, d: &DecompositionResult) -> Result<()> {
    let mut report = Vec::new();
    d.write_report(&mut report)?;
    b.add("decomposition.txt", report)?;
    let mut res = Vec::new();
    d.residual().write_csv(&mut res)?;
    b.add("decomposition_residual.csv", res)?;
    b.manifest
        .notes
        .push("decomposition fit includes an intercept term; it is removed from the residual".into());
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let p = dir.join(MANIFEST);
    let bytes = fs::read(&p).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))))?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub absolute: f64,
    pub relative: f64,
}

impl Tolerance {
    pub fn exact() -> Self {
        Self {
            absolute: 0.0,
            relative: 0.0,
        }
    }

    fn allows(&self, a: f64, b: f64) -> bool {
        if a == b {
            return true;
        }
        (a - b).abs() <= self.absolute + self.relative * a.abs().max(b.abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDiff {
    pub path: String,
    /// Largest absolute difference between paired numeric tokens; infinite
    /// when the files differ structurally.
    pub max_deviation: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub tolerance: Tolerance,
    pub files: Vec<FileDiff>,
    pub missing_in_a: Vec<String>,
    pub missing_in_b: Vec<String>,
}

impl CompareReport {
    pub fn first_violation(&self) -> Option<&str> {
        self.files.iter().find(|f| !f.passed).map(|f| f.path.as_str())
    }

    pub fn passed(&self) -> bool {
        self.missing_in_a.is_empty() && self.missing_in_b.is_empty() && self.first_violation().is_none()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for f in &self.files {
            let _ = writeln!(
                s,
                "{} max_deviation={} {}",
                f.path,
                f.max_deviation,
                if f.passed { "ok" } else { "FAIL" }
            );
        }
        for p in &self.missing_in_a {
            let _ = writeln!(s, "{p} missing in first bundle");
        }
        for p in &self.missing_in_b {
            let _ = writeln!(s, "{p} missing in second bundle");
        }
        match self.first_violation() {
            Some(p) => {
                let _ = writeln!(s, "result=FAIL first_violation={p}");
            }
            None if !self.passed() => {
                let _ = writeln!(s, "result=FAIL missing files");
            }
            None => {
                let _ = writeln!(s, "result=PASS");
            }
        }
        s
    }
}

fn tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split([',', '=', '\n']).map(str::trim)
}

/// Largest numeric deviation between two files and whether every token
/// pair is within tolerance.
pub fn diff_text(a: &str, b: &str, tol: Tolerance) -> (f64, bool) {
    let ta: Vec<&str> = tokens(a).collect();
    let tb: Vec<&str> = tokens(b).collect();
    if ta.len() != tb.len() {
        return (f64::INFINITY, false);
    }
    let mut max_dev: f64 = 0.0;
    let mut ok = true;
    for (x, y) in ta.iter().zip(&tb) {
        if x == y {
            continue;
        }
        match (x.parse::<f64>(), y.parse::<f64>()) {
            (Ok(u), Ok(v)) => {
                let d = (u - v).abs();
                max_dev = max_dev.max(if d.is_nan() { f64::INFINITY } else { d });
                ok &= tol.allows(u, v);
            }
            _ => return (f64::INFINITY, false),
        }
    }
    (max_dev, ok)
}

/// Compares every file listed in either manifest.
pub fn compare(a: &Path, b: &Path, tol: Tolerance) -> Result<CompareReport> {
    let ma = read_manifest(a)?;
    let mb = read_manifest(b)?;
    let pa: BTreeSet<&str> = ma.files.iter().map(|f| f.path.as_str()).collect();
    let pb: BTreeSet<&str> = mb.files.iter().map(|f| f.path.as_str()).collect();
    let mut files = Vec::new();
    let mut missing_in_a: Vec<String> = pb.difference(&pa).map(|s| s.to_string()).collect();
    let mut missing_in_b: Vec<String> = pa.difference(&pb).map(|s| s.to_string()).collect();
    for entry in &ma.files {
        if !pb.contains(entry.path.as_str()) {
            continue;
        }
        let (ra, rb) = (fs::read(a.join(&entry.path)), fs::read(b.join(&entry.path)));
        let (ta, tb) = match (ra, rb) {
            (Ok(x), Ok(y)) => (x, y),
            (Err(_), _) => {
                missing_in_a.push(entry.path.clone());
                continue;
            }
            (_, Err(_)) => {
                missing_in_b.push(entry.path.clone());
                continue;
            }
        };
        let (max_deviation, passed) = if ta == tb {
            (0.0, true)
        } else {
            diff_text(&String::from_utf8_lossy(&ta), &String::from_utf8_lossy(&tb), tol)
        };
        files.push(FileDiff {
            path: entry.path.clone(),
            max_deviation,
            passed,
        });
    }
    Ok(CompareReport {
        tolerance: tol,
        files,
        missing_in_a,
        missing_in_b,
    })
}
