use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use apnc::cluster::LloydPolicy;
use apnc::dataset::{load_labels, PartitionOptions};
use apnc::eval::nmi;
use apnc::kernels::KernelSpec;
use apnc::kkm::{exact_kkm, KernelMatrix, DEFAULT_CAP};
use apnc::synthetic::gaussian_blobs;

fn apnc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apnc")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = apnc(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_blobs(dir: &Path) -> (String, String) {
    let (ds, labels) = gaussian_blobs(240, 4, 3, 8.0, 3, PartitionOptions::new(1)).unwrap();
    let csv: String = ds
        .instances()
        .iter()
        .map(|x| x.features.to_dense().iter().map(f64::to_string).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    let truth: String = labels.labels.iter().map(|l| format!("{l}\n")).collect();
    let data = dir.join("blobs.csv");
    let truth_path = dir.join("truth.txt");
    fs::write(&data, csv).unwrap();
    fs::write(&truth_path, truth).unwrap();
    (data.to_str().unwrap().into(), truth_path.to_str().unwrap().into())
}

#[test]
fn chained_stages_recover_the_blobs() {
    let dir = tempfile::tempdir().unwrap();
    let (data, truth) = write_blobs(dir.path());
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    for (variant, disc) in [("nystrom", "l2"), ("stable", "l1")] {
        ok(&["coeffs", "--data", &data, "--variant", variant, "--l", "60", "--m", "40", "--kernel", "rbf", "--sigma", "4", "--seed", "2", "--out", &p("model.apnc")]);
        ok(&["embed", "--model", &p("model.apnc"), "--data", &data, "--out", &p("y.apncy"), "--parallelism", "3"]);
        ok(&["cluster", "--embeddings", &p("y.apncy"), "--k", "3", "--discrepancy", disc, "--seed", "1", "--out", &p("labels.txt"), "--log", &p("run.jsonl")]);
        let labels = fs::read_to_string(p("labels.txt")).unwrap();
        assert_eq!(labels.lines().count(), 240);
        assert!(labels.starts_with("0\t"));
        let log = fs::read_to_string(p("run.jsonl")).unwrap();
        let first = log.lines().next().unwrap();
        for key in ["\"iter\":1", "\"objective\"", "\"moved\":240", "\"shuffle_bytes\""] {
            assert!(first.contains(key), "{first}");
        }
        let score: f64 = ok(&["eval", "--pred", &p("labels.txt"), "--truth", &truth]).trim().parse().unwrap();
        assert!(score > 0.9, "{variant}: nmi {score}");
    }
}

#[test]
fn exact_and_parallelism_agree() {
    let dir = tempfile::tempdir().unwrap();
    let (data, truth) = write_blobs(dir.path());
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    ok(&["exact", "--data", &data, "--kernel", "rbf", "--sigma", "4", "--k", "3", "--seed", "5", "--out", &p("exact.txt")]);
    let ds = apnc::dataset::load_dense_csv(&data, PartitionOptions::new(1)).unwrap();
    let km = KernelMatrix::from_instances(&KernelSpec::rbf(4.0).unwrap(), ds.instances(), DEFAULT_CAP).unwrap();
    let expected = exact_kkm(&km, &LloydPolicy::new(3, 5)).unwrap().assignment.labels;
    let got = load_labels(p("exact.txt")).unwrap().labels;
    assert_eq!(got, expected);
    let score: f64 = ok(&["eval", "--pred", &p("exact.txt"), "--truth", &truth]).trim().parse().unwrap();
    assert!((score - nmi(&expected, &load_labels(&truth).unwrap().labels).unwrap()).abs() < 1e-12);

    for par in ["1", "4"] {
        ok(&["coeffs", "--data", &data, "--variant", "stable", "--l", "50", "--m", "30", "--kernel", "polynomial", "--degree", "2", "--out", &p(&format!("m{par}.apnc")), "--parallelism", par]);
    }
    assert_eq!(fs::read(p("m1.apnc")).unwrap(), fs::read(p("m4.apnc")).unwrap());
}

#[test]
fn pipeline_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(&cfg, "dataset = blobs\nblobs.n = 300\nblobs.d = 4\nvariant = nystrom\nl = 40\nm = 20\nk = 3\nrepeats = 2\n").unwrap();
    let out = dir.path().join("report.json");
    ok(&["pipeline", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--parallelism", "2"]);
    let report = fs::read_to_string(&out).unwrap();
    assert!(report.contains("\"nmi_mean\""));
    assert!(report.contains("\"seed\": 1"));
    let stdout = ok(&["pipeline", "--config", cfg.to_str().unwrap()]);
    assert_eq!(stdout.trim(), report.trim());
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1,2\n3\n").unwrap();
    let out = apnc(&["exact", "--data", bad.to_str().unwrap(), "--k", "2", "--sigma", "1", "--out", "/dev/null"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ragged row"));
    let out = apnc(&["cluster", "--embeddings", bad.to_str().unwrap(), "--k", "2", "--out", "/dev/null"]);
    assert!(!out.status.success());
}
