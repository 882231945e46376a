use std::fs;

use apnc::cluster::{cluster_run, LloydPolicy};
use apnc::coeffs::{fit_stable, StableParams};
use apnc::dataset::{load_dense_csv, load_labels, load_sparse, PartitionOptions};
use apnc::embed::embed_all;
use apnc::eval::{run_experiment, ExperimentConfig};
use apnc::kernels::KernelSpec;
use apnc::mr::Engine;
use apnc::persist::{load_embedding, load_model, save_assignment, save_embedding, save_model};
use apnc::Error;

#[test]
fn stages_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("x.csv");
    let rows: String = (0..90).map(|i| format!("{},{},{}\n", (i % 3) as f64 * 5.0 + (i as f64 * 0.7).sin(), (i as f64 * 1.3).cos(), i % 3)).collect();
    fs::write(&csv, rows).unwrap();
    let ds = load_dense_csv(&csv, PartitionOptions::new(4)).unwrap();
    let engine = Engine::new(2).unwrap();
    let (model, _) = fit_stable(&engine, &ds, &KernelSpec::rbf(2.0).unwrap(), &StableParams::new(30, 50, 4)).unwrap();

    let model_path = dir.path().join("m.apnc");
    save_model(&model, &model_path).unwrap();
    let back = load_model(&model_path).unwrap();
    assert_eq!(back, model);

    let (y, _) = embed_all(&engine, &ds, &back).unwrap();
    let y_path = dir.path().join("y.apncy");
    save_embedding(&y, &y_path).unwrap();
    let y_back = load_embedding(&y_path, 4).unwrap();
    assert_eq!(y_back, y);

    let run = cluster_run(&engine, &y_back, model.discrepancy, &LloydPolicy::new(3, 0)).unwrap();
    let labels_path = dir.path().join("labels.txt");
    save_assignment(&run.assignment, &labels_path).unwrap();
    assert_eq!(load_labels(&labels_path).unwrap().labels, run.assignment.labels);

    let mut bytes = fs::read(&model_path).unwrap();
    bytes[0] = b'X';
    fs::write(&model_path, &bytes).unwrap();
    assert!(matches!(load_model(&model_path), Err(Error::BadMagic)));
}

#[test]
fn sparse_file_drives_an_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.svm");
    let lines: String = (0..120)
        .map(|i| {
            let c = i % 2;
            format!("{} {}:{} 3:{}\n", c + 1, c + 1, 4.0 + (i as f64 * 0.37).sin(), (i as f64 * 0.91).cos())
        })
        .collect();
    fs::write(&path, lines).unwrap();
    let (ds, labels) = load_sparse(&path, PartitionOptions::new(3)).unwrap();
    assert_eq!(ds.n(), 120);
    assert_eq!(labels.len(), 120);

    let cfg_path = dir.path().join("exp.cfg");
    fs::write(
        &cfg_path,
        format!("dataset = sparse\ndata = {}\nvariant = nystrom\nkernel = linear\nl = 40\nk = 2\nseeds = 3, 4\nreport_timings = true\n", path.display()),
    )
    .unwrap();
    let report = run_experiment(&ExperimentConfig::load(&cfg_path).unwrap()).unwrap();
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    assert_eq!(report.runs.len(), 2);
    assert!(report.runs.iter().all(|r| r.timings_ms.is_some()));
    assert!(report.nmi_mean.unwrap() > 0.9);
    assert!(report.to_json().contains("\"nmi_std\""));
}
