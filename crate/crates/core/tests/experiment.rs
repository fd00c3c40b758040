use std::fs;
use std::path::Path;

use pcm_snn::array::SynapseArray;
use pcm_snn::experiment::{
    cmd_drift_eval, cmd_gen_data, cmd_jitter_eval, cmd_sweep_devices, cmd_train, dataset_for,
    drift_eval_array, generate_dataset, Backend, ExperimentConfig, DRIFT_HEADER, INPUTS_FILE,
    JITTER_HEADER, SWEEP_HEADER, TARGETS_FILE,
};
use pcm_snn::normad::TrainingLog;
use pcm_snn::Error;

fn quick_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.trainer.epochs = 3;
    cfg.output.plots = false;
    cfg.study.device_counts = vec![1, 2];
    cfg.study.drift_read_times_s = vec![1.0, 100.0, 4e5];
    cfg.study.rate_image_times_s = vec![1.0];
    cfg
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

fn checksum_line(cfg: &ExperimentConfig) -> String {
    format!("# config_sha256={}", cfg.checksum().unwrap())
}

#[test]
fn bundled_config_file_equals_defaults() {
    let text = include_str!("../../../configs/default.toml");
    let cfg = ExperimentConfig::from_toml_str(text, Path::new("")).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let cfg = quick_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = cmd_gen_data(&cfg, a.path()).unwrap();
    let mb = cmd_gen_data(&cfg, b.path()).unwrap();
    assert_eq!(ma, mb);
    for f in [INPUTS_FILE, TARGETS_FILE, "manifest.toml"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap()
        );
    }
    assert_eq!(ma.files[0].channels, 132);
    assert_eq!(ma.files[1].channels, 168);
    assert_eq!(ma.input_seed, cfg.task.inputs.seed);
    assert_eq!(ma.target_seed, cfg.task.targets.seed);
}

#[test]
fn tampered_dataset_is_rejected() {
    let cfg = quick_config();
    let dir = tempfile::tempdir().unwrap();
    cmd_gen_data(&cfg, dir.path()).unwrap();
    let path = dir.path().join(TARGETS_FILE);
    let mut text = read(&path);
    text.push_str("0,1.0\n");
    fs::write(&path, text).unwrap();
    assert!(matches!(
        cmd_train(&cfg, dir.path()),
        Err(Error::Checksum { .. })
    ));
    assert!(matches!(
        cmd_jitter_eval(&cfg, dir.path()),
        Err(Error::Checksum { .. })
    ));
}

#[test]
fn dataset_from_other_task_config_is_rejected() {
    let cfg = quick_config();
    let dir = tempfile::tempdir().unwrap();
    cmd_gen_data(&cfg, dir.path()).unwrap();
    let mut other = cfg.clone();
    other.task.inputs.seed += 1;
    assert!(matches!(
        dataset_for(&other, dir.path()),
        Err(Error::Config(_))
    ));
    // trainer settings do not invalidate the data
    let mut retrained = cfg.clone();
    retrained.trainer.eta = 10.0;
    assert_eq!(
        dataset_for(&retrained, dir.path()).unwrap(),
        generate_dataset(&cfg).unwrap()
    );
}

#[test]
fn train_is_reproducible_and_tables_carry_checksum() {
    let cfg = quick_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = cmd_train(&cfg, a.path()).unwrap();
    cmd_train(&cfg, b.path()).unwrap();
    for f in [
        "train_pcm_log.csv",
        "train_pcm_weights.csv",
        "snapshot.txt",
        "train_pcm_observed.raster",
    ] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let log = read(&a.path().join("train_pcm_log.csv"));
    let mut lines = log.lines();
    assert_eq!(lines.next().unwrap(), checksum_line(&cfg));
    assert!(lines.any(|l| l == TrainingLog::HEADER));
    assert_eq!(ra.log.records.len(), cfg.trainer.epochs + 1);
    let (array, t) = SynapseArray::read_snapshot(&a.path().join("snapshot.txt")).unwrap();
    assert_eq!(t, ra.log.end_time_s);
    assert_eq!(t, cfg.trainer.epochs as f64 * cfg.trainer.epoch_wall_time_s);
    assert_eq!(array.devices_per_side(), cfg.device.devices_per_side);
}

#[test]
fn fp64_training_writes_no_snapshot() {
    let mut cfg = quick_config();
    cfg.backend = Backend::Fp64;
    let dir = tempfile::tempdir().unwrap();
    let r = cmd_train(&cfg, dir.path()).unwrap();
    assert!(r.snapshot.is_none());
    assert!(!dir.path().join("snapshot.txt").exists());
    assert!(dir.path().join("train_fp64_log.csv").exists());
}

#[test]
fn plots_are_written_when_enabled() {
    let mut cfg = quick_config();
    cfg.output.plots = true;
    cfg.trainer.epochs = 1;
    let dir = tempfile::tempdir().unwrap();
    cmd_train(&cfg, dir.path()).unwrap();
    for f in [
        "train_pcm_accuracy.svg",
        "train_pcm_raster.svg",
        "train_pcm_rate.svg",
    ] {
        assert!(read(&dir.path().join(f)).starts_with("<svg"), "{f}");
    }
}

#[test]
fn sweep_reports_three_bands_per_device_count() {
    let cfg = quick_config();
    let dir = tempfile::tempdir().unwrap();
    let report = cmd_sweep_devices(&cfg, dir.path()).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.rows[0].devices_per_side, 1);
    assert_eq!(report.rows[0].device_count, 132 * 168 * 2);
    assert_eq!(report.rows[1].device_count, 132 * 168 * 4);
    let table = read(&dir.path().join("sweep_devices.csv"));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], checksum_line(&cfg));
    assert_eq!(lines[1], SWEEP_HEADER);
    assert!(lines[2..].iter().all(|l| l.split(',').count() == 6));
}

#[test]
fn jitter_zero_reproduces_train() {
    let mut cfg = quick_config();
    cfg.study.jitter_half_widths_ms = vec![0.0, 25.0];
    let dir = tempfile::tempdir().unwrap();
    let train = cmd_train(&cfg, dir.path()).unwrap();
    let jitter = cmd_jitter_eval(&cfg, dir.path()).unwrap();
    let zero = &jitter.rows[0];
    assert_eq!(zero.half_width_ms, 0.0);
    let curve: Vec<f64> = train.log.records.iter().map(|r| r.acc_pct(2)).collect();
    assert_eq!(zero.curve, curve);
    let last = train.log.last();
    assert_eq!(
        zero.final_acc,
        [last.acc_pct(0), last.acc_pct(1), last.acc_pct(2)]
    );
    assert!(jitter.rows[1].correlation_mean < zero.correlation_mean);
    let table = read(&dir.path().join("jitter_eval.csv"));
    assert_eq!(table.lines().nth(1).unwrap(), JITTER_HEADER);
    assert!(dir.path().join("jitter_curves.csv").exists());
    assert!(dir.path().join("jitter_correlation_histogram.csv").exists());
}

#[test]
fn drift_eval_from_snapshot_and_without_drift() {
    let cfg = quick_config();
    let dir = tempfile::tempdir().unwrap();
    let train = cmd_train(&cfg, dir.path()).unwrap();
    let report = cmd_drift_eval(&cfg, dir.path(), &train.snapshot.unwrap()).unwrap();
    assert_eq!(report.rows.len(), 3);
    let table = read(&dir.path().join("drift_eval.csv"));
    assert_eq!(table.lines().nth(1).unwrap(), DRIFT_HEADER);
    assert!(dir.path().join("drift_te1_raw_0.txt").exists());

    let (mut array, end) = SynapseArray::read_snapshot(&dir.path().join("snapshot.txt")).unwrap();
    for d in array.devices_mut() {
        d.nu = 0.0;
    }
    let data = dataset_for(&cfg, dir.path()).unwrap();
    let flat = drift_eval_array(&cfg, dir.path(), &data, &array, end).unwrap();
    assert!(flat.rows.windows(2).all(|w| w[0].raw == w[1].raw));
}

#[test]
fn drift_eval_rejects_mismatched_snapshot() {
    let cfg = quick_config();
    let dir = tempfile::tempdir().unwrap();
    let array = pcm_snn::array::init_array(3, 4, 1, &cfg.device.model, 0).unwrap();
    let path = dir.path().join("small.txt");
    array.write_snapshot(10.0, &path).unwrap();
    assert!(matches!(
        cmd_drift_eval(&cfg, dir.path(), &path),
        Err(Error::Shape(_))
    ));
}

#[test]
fn seed_override_changes_data() {
    let mut cfg = quick_config();
    let base = generate_dataset(&cfg).unwrap();
    cfg.apply_seed_override(2024);
    let other = generate_dataset(&cfg).unwrap();
    assert_ne!(base.inputs, other.inputs);
    assert_ne!(base.targets, other.targets);
}
