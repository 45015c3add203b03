use std::path::Path;

use iontrap::io::sha256_file;
use iontrap::pipeline::{run_pipeline, ExperimentConfig, Manifest, RunStatus, MANIFEST_FILE};
use iontrap::Error;

fn config() -> ExperimentConfig {
    ExperimentConfig::from_json(
        r#"{"schema_version": 1, "seed": 3, "trap": {"profile": "L150"},
            "cooling": {}, "heating": {"ndot": 2.1}, "thermometry": {}, "noise": {}}"#,
    )
    .unwrap()
}

fn read_manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE)).unwrap()).unwrap()
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn manifest_lists_every_file_with_its_hash() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_pipeline(&config(), dir.path()).unwrap();
    let m = read_manifest(dir.path());
    assert_eq!(m.status, RunStatus::Complete);
    assert_eq!(m.stages, r.manifest.stages);
    let mut named: Vec<String> = m.files.iter().map(|f| f.path.clone()).collect();
    for want in ["solution.json", "populations.csv", "rate.json", "noise.csv"] {
        assert!(named.iter().any(|n| n == want), "{want} missing");
    }
    named.push(MANIFEST_FILE.into());
    named.sort();
    assert_eq!(named, listing(dir.path()));
    for f in &m.files {
        let p = dir.path().join(&f.path);
        assert_eq!(sha256_file(&p).unwrap(), f.sha256);
        assert_eq!(std::fs::metadata(&p).unwrap().len(), f.bytes);
    }
    // the resolved config carries the defaults that were filled in
    let cooling = m.config.cooling.as_ref().unwrap();
    assert_eq!(cooling.pulses, 150);
    assert_eq!(m.config.thermometry.as_ref().unwrap().delays_s, vec![0.0, 0.01, 0.02, 0.04]);
}

fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    listing(dir)
        .into_iter()
        .filter(|n| n != MANIFEST_FILE)
        .map(|n| (n.clone(), std::fs::read(dir.join(n)).unwrap()))
        .collect()
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let run = |threads: usize| {
        let dir = tempfile::tempdir().unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_pipeline(&config(), dir.path())).unwrap();
        let mut m = read_manifest(dir.path());
        m.created_unix_s = 0;
        (outputs(dir.path()), m)
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn different_seeds_give_different_scans() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(&config(), a.path()).unwrap();
    let mut c = config();
    c.seed = Some(4);
    run_pipeline(&c, b.path()).unwrap();
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(a.path(), "solution.json"), read(b.path(), "solution.json"));
    assert_ne!(read(a.path(), "scans.csv"), read(b.path(), "scans.csv"));
}

#[test]
fn stage_failure_leaves_partial_manifest() {
    // Too little RF to hold the ion against the DC curvature.
    let mut cfg = config();
    cfg.trap.voltages.v_rf_amplitude = 5.0;
    let dir = tempfile::tempdir().unwrap();
    let err = run_pipeline(&cfg, dir.path()).unwrap_err();
    assert!(matches!(&err, Error::Stage { stage, .. } if stage == "solve"), "{err}");
    let m = read_manifest(dir.path());
    assert_eq!(m.status, RunStatus::Partial);
    assert_eq!(m.failed_stage.as_deref(), Some("solve"));
    assert!(m.error.is_some());
    assert_eq!(m.stages, vec!["layout".to_string()]);
    assert_eq!(listing(dir.path()), vec!["layout.json".to_string(), MANIFEST_FILE.into()]);
}

#[test]
fn validation_fails_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut cfg = config();
    cfg.seed = None;
    assert!(matches!(run_pipeline(&cfg, &out), Err(Error::Config(_))));
    assert!(!out.exists());

    assert!(ExperimentConfig::from_json(r#"{"schema_version": 1, "trap": {"profile": "L150"}, "typo": 1}"#).is_err());
    let cfg = ExperimentConfig::from_json(r#"{"schema_version": 2, "trap": {"profile": "L150"}}"#).unwrap();
    assert!(cfg.validate().is_err());
    let cfg = ExperimentConfig::from_json(r#"{"schema_version": 1, "trap": {"layout_file": "nope.json"}}"#).unwrap();
    assert!(cfg.validate().is_err());
    let cfg = ExperimentConfig::from_json(r#"{"schema_version": 1, "trap": {}}"#).unwrap();
    assert!(cfg.validate().is_err());
}

#[test]
fn layout_file_is_resolved_next_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let layout = iontrap::geometry::Profile::L150.layout().unwrap();
    std::fs::write(dir.path().join("trap.json"), layout.to_json().unwrap()).unwrap();
    let cfg_path = dir.path().join("exp.json");
    std::fs::write(&cfg_path, r#"{"schema_version": 1, "trap": {"layout_file": "trap.json"}}"#).unwrap();
    let cfg = ExperimentConfig::load(&cfg_path).unwrap();
    let out = dir.path().join("out");
    let r = run_pipeline(&cfg, &out).unwrap();
    assert_eq!(r.layout, layout);
    assert!((r.solution.r_null[2] / 150e-6 - 1.0).abs() < 0.005);
    assert!(r.cooling.is_none() && r.heating.is_none());
}
