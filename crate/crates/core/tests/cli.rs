use std::path::Path;
use std::process::{Command, Output};

use probfield::io::mapfile;
use probfield::io::ply::PlyFile;
use probfield::io::report::parse_report;

fn probfield(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_probfield"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn value(report: &str, key: &str) -> String {
    parse_report(report)
        .into_iter()
        .find(|(k, _)| k == key)
        .unwrap_or_else(|| panic!("{key} missing"))
        .1
}

#[test]
fn synth_build_sample_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&probfield(&["synth", "plane", "--output", "scan", "--frames", "6"], d));
    assert!(d.join("scan/trajectory.txt").is_file());
    assert!(d.join("scan/000005.png").is_file());

    let report = ok(&probfield(
        &[
            "build",
            "--format",
            "depth-sequence",
            "--dataset",
            "scan",
            "--reference",
            "scan/reference.obj",
            "--voxel-size",
            "0.05",
            "--stride",
            "4",
            "--workers",
            "2",
            "--samples",
            "4000",
            "--output",
            "out",
        ],
        d,
    ));
    assert_eq!(value(&report, "frames"), "6");
    assert_eq!(value(&report, "sample_count"), "4000");
    let mean: f64 = value(&report, "mean_distance_cm").parse().unwrap();
    assert!(mean < 2.0, "mean {mean}");
    let csv = std::fs::read_to_string(d.join("out/frames.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);

    ok(&probfield(
        &["sample", "out/map.pfmap", "--count", "321", "--output", "s.ply"],
        d,
    ));
    assert_eq!(PlyFile::read(&d.join("s.ply")).unwrap().vertices().unwrap().len(), 321);
    let map = mapfile::load(&d.join("out/map.pfmap")).unwrap();
    ok(&probfield(
        &["sample", "out/map.pfmap", "--mode", "means", "--output", "m.ply"],
        d,
    ));
    assert_eq!(
        PlyFile::read(&d.join("m.ply")).unwrap().vertices().unwrap().len(),
        map.component_count()
    );

    let eval = ok(&probfield(&["eval", "s.ply", "--reference", "scan/reference.obj"], d));
    assert_eq!(value(&eval, "sample_count"), "321");
    let eval = ok(&probfield(
        &[
            "eval",
            "out/map.pfmap",
            "--reference",
            "scan/reference.obj",
            "--count",
            "50",
        ],
        d,
    ));
    assert_eq!(value(&eval, "sample_count"), "50");
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&probfield(&["synth", "gmm", "--output", "batches", "--frames", "2"], d));
    std::fs::write(
        d.join("run.toml"),
        "# two GMM batches\nformat = \"ply-sequence\"\ndataset = \"batches\"\nworkers = 1\nsamples = 100\noutput = \"from-config\"\n",
    )
    .unwrap();
    let report = ok(&probfield(&["build", "--config", "run.toml", "--workers", "3"], d));
    assert_eq!(value(&report, "workers"), "3");
    assert_eq!(value(&report, "frames"), "2");
    assert_eq!(value(&report, "mean_distance_cm"), "none");
    assert!(d.join("from-config/map.pfmap").is_file());
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = probfield(&["build", "--format", "ply-sequence", "--dataset", "missing"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing"));
    let out = probfield(&["build", "--workers", "0"], d);
    assert!(!out.status.success());
    std::fs::create_dir(d.join("empty")).unwrap();
    let out = probfield(&["build", "--format", "ply-sequence", "--dataset", "empty"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no frames"));
}
