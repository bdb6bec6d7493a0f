//! Serialization round trips and cross-format consistency.

use lipmpc::config::RunConfig;
use lipmpc::envelope::{Dataset, Measurement};
use lipmpc::sim::{collect_random_measurements, SimLog};
use nalgebra::dvector;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trip_is_identity(
        horizon in 1usize..8,
        l in 0.0..0.5f64,
        seed in any::<u64>(),
        steps in 1usize..100,
        xs in (-1.0..1.0f64, -1.0..3.0f64),
        enlarge in any::<bool>(),
    ) {
        let mut cfg = RunConfig::default();
        cfg.mpc.horizon = horizon;
        cfg.system.lipschitz = l;
        cfg.exploration.seed = seed;
        cfg.control.steps = steps;
        cfg.control.x_start = vec![xs.0, xs.1];
        cfg.control.enlarge_terminal = enlarge;
        let text = cfg.to_json().unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_json().unwrap(), text);
    }
}

#[test]
fn dataset_jsonl_round_trip() {
    let r = RunConfig::default().resolve().unwrap();
    let mut plant = r.plant(2).unwrap();
    let ds = collect_random_measurements(&mut plant, &r.mpc.state_set, 15).unwrap();
    let mut buf = Vec::new();
    ds.write_jsonl(&mut buf).unwrap();
    let back = Dataset::read_jsonl(buf.as_slice(), ds.lipschitz()).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn inconsistent_dataset_file_is_rejected() {
    let mut ds = Dataset::new(1.0);
    ds.insert(Measurement::new(0, dvector![0.0, 0.0], dvector![0.0, 0.0]).unwrap())
        .unwrap();
    ds.insert(Measurement::new(1, dvector![1.0, 0.0], dvector![0.5, 0.0]).unwrap())
        .unwrap();
    let mut buf = Vec::new();
    ds.write_jsonl(&mut buf).unwrap();
    // The same file under a smaller Lipschitz constant is inconsistent.
    assert!(Dataset::read_jsonl(buf.as_slice(), 0.1).is_err());
}

#[test]
fn csv_and_jsonl_describe_the_same_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.control.x_start = vec![-0.5, 0.5];
    cfg.io.out_dir = dir.path().to_string_lossy().into_owned();
    lipmpc::cli::run_explore(&cfg).unwrap();
    let run = lipmpc::cli::run_control(&cfg, &dir.path().join(lipmpc::cli::DATASET_FILE)).unwrap();

    let text = std::fs::read(dir.path().join(lipmpc::cli::SIMLOG_FILE)).unwrap();
    let log = SimLog::read_jsonl(text.as_slice()).unwrap();
    assert_eq!(log.records.len(), run.log.records.len());

    let mut reader = csv::Reader::from_path(dir.path().join(lipmpc::cli::TRAJECTORY_FILE)).unwrap();
    let headers = reader.headers().unwrap().clone();
    assert_eq!(
        headers.iter().collect::<Vec<_>>(),
        ["t", "x1", "x2", "u", "d1", "d2", "status"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    let control: Vec<_> = log.control_records().collect();
    assert_eq!(rows.len(), control.len());
    for (row, rec) in rows.iter().zip(control) {
        let num = |i: usize| row[i].parse::<f64>().unwrap();
        assert_eq!(row[0].parse::<u64>().unwrap(), rec.t);
        assert_eq!([num(1), num(2)], [rec.x[0], rec.x[1]]);
        assert_eq!(num(3), rec.u[0]);
        assert_eq!([num(4), num(5)], [rec.d[0], rec.d[1]]);
        assert_eq!(&row[6], format!("{:?}", rec.status.unwrap()));
    }
}
