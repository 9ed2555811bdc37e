use std::fs;

use fiberlink::bundle::{compare, read_manifest, record_bundle, report_bundle, Tolerance, MANIFEST};
use fiberlink::pipeline::{analyze, simulate_scenario, Measurements};
use fiberlink::scenario::{bundled, ScenarioConfig};
use sha2::{Digest, Sha256};

fn small(name: &str) -> ScenarioConfig {
    bundled(name).unwrap().with_overrides(&["grid.n=16384"]).unwrap()
}

#[test]
fn manifest_lists_every_file_with_its_checksum() {
    let cfg = small("fig2_anc_loop");
    let (_, m) = simulate_scenario(&cfg).unwrap();
    let a = analyze(&m, &cfg.pipeline, None).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    report_bundle(&cfg, &a).unwrap().write(tmp.path()).unwrap();

    let manifest = read_manifest(tmp.path()).unwrap();
    assert_eq!(manifest.config_hash, cfg.hash().unwrap());
    assert_eq!(manifest.seed, cfg.seed);
    let mut on_disk: Vec<String> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != MANIFEST)
        .collect();
    on_disk.sort();
    let mut listed: Vec<String> = manifest.files.iter().map(|f| f.path.clone()).collect();
    listed.sort();
    assert_eq!(on_disk, listed);
    for f in &manifest.files {
        let bytes = fs::read(tmp.path().join(&f.path)).unwrap();
        assert_eq!(bytes.len(), f.bytes, "{}", f.path);
        assert_eq!(hex::encode(Sha256::digest(&bytes)), f.sha256, "{}", f.path);
    }
}

#[test]
fn record_written_and_read_back_analyzes_identically() {
    let cfg = small("fig6_unidirectional");
    let (_, m) = simulate_scenario(&cfg).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let rec = tmp.path().join("rec");
    record_bundle(&cfg, &m).unwrap().write(&rec).unwrap();
    let back = Measurements::read_dir(&rec).unwrap();

    let direct = report_bundle(&cfg, &analyze(&m, &cfg.pipeline, None).unwrap()).unwrap();
    let reread = report_bundle(&cfg, &analyze(&back, &cfg.pipeline, None).unwrap()).unwrap();
    assert_eq!(direct.files, reread.files);
}

#[test]
fn thermal_record_round_trip_keeps_temperatures() {
    let cfg = bundled("fig4_partial_fm").unwrap().with_overrides(&["grid.n=200000"]).unwrap();
    let (_, m) = simulate_scenario(&cfg).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    record_bundle(&cfg, &m).unwrap().write(tmp.path()).unwrap();
    let back = Measurements::read_dir(tmp.path()).unwrap();
    let (a, b) = (m.temp_local.as_ref().unwrap(), back.temp_local.as_ref().unwrap());
    assert_eq!(a.values(), b.values());
    assert_eq!(m.lm.values(), back.lm.values());
    assert_eq!(m.lm.warmup(), back.lm.warmup());
}

#[test]
fn compare_reports_missing_files_and_deviations() {
    let cfg = small("fig2_anc_loop");
    let tmp = tempfile::tempdir().unwrap();
    let (da, db) = (tmp.path().join("a"), tmp.path().join("b"));
    let (_, m) = simulate_scenario(&cfg).unwrap();
    let bundle = report_bundle(&cfg, &analyze(&m, &cfg.pipeline, None).unwrap()).unwrap();
    bundle.write(&da).unwrap();
    bundle.write(&db).unwrap();

    let same = compare(&da, &db, Tolerance::exact()).unwrap();
    assert!(same.passed());
    assert!(same.files.iter().all(|f| f.max_deviation == 0.0));

    let other = cfg.clone().with_overrides(&["seed=77"]).unwrap();
    let (_, m2) = simulate_scenario(&other).unwrap();
    let dc = tmp.path().join("c");
    report_bundle(&other, &analyze(&m2, &other.pipeline, None).unwrap())
        .unwrap()
        .write(&dc)
        .unwrap();
    let diff = compare(&da, &dc, Tolerance::exact()).unwrap();
    assert!(!diff.passed());
    let curve = diff.files.iter().find(|f| f.path == "stability_ltw_local_Pi_OADEV.csv").unwrap();
    assert!(curve.max_deviation > 0.0 && !curve.passed);

    fs::remove_file(db.join("psd_ctw.csv")).unwrap();
    let gone = compare(&da, &db, Tolerance::exact()).unwrap();
    assert!(!gone.passed());
    assert!(gone.render().contains("psd_ctw.csv"));
}
