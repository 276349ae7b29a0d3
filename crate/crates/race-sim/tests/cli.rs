//! End-to-end checks of the `race-sim` binary: exit codes, file outputs and
//! the JSONL trace stream.

use std::path::Path;
use std::process::{Command, Output};

use race_sim::harness::{MetricsTable, CSV_HEADER};
use race_sim::schemes::SwitchTable;

fn race_sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_race-sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

const SWEEP_CONFIG: &str = r#"{
  "n_antennas": 8,
  "p_r": 1.0,
  "snr_grid_db": [0.0, 10.0, 20.0],
  "trials_per_point": 200,
  "master_seed": 42,
  "schemes": [
    { "name": "fixed-12", "kind": "fixed", "k_vector": [2, 2, 2] },
    { "name": "race", "kind": "race", "k_vector": [2, 2, 2], "gamma": 0.01, "m_max": 64 },
    { "name": "switch", "kind": "switch", "table": [
        { "snr_db": null, "k_vector": [4, 2] },
        { "snr_db": 12.0, "k_vector": [2, 2, 2] }
    ] }
  ]
}"#;

#[test]
fn sweep_writes_csv_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    write(&config, SWEEP_CONFIG);
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");

    for out in [&out_a, &out_b] {
        let run = race_sim(&[
            "sweep",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--format",
            "csv",
        ]);
        assert!(
            run.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&run.stderr)
        );
    }
    let text_a = std::fs::read_to_string(&out_a).unwrap();
    let text_b = std::fs::read_to_string(&out_b).unwrap();
    assert_eq!(text_a, text_b, "same config + seed must be byte-identical");
    assert!(text_a.starts_with(CSV_HEADER));
    assert_eq!(
        text_a.trim_end().lines().count(),
        1 + 9,
        "header plus 3 schemes x 3 points"
    );

    // worker count must not change the bytes
    let out_w = dir.path().join("w.csv");
    let run = race_sim(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_w.to_str().unwrap(),
        "--workers",
        "2",
    ]);
    assert!(run.status.success());
    assert_eq!(std::fs::read_to_string(&out_w).unwrap(), text_a);
}

#[test]
fn sweep_emits_parseable_json() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    write(&config, SWEEP_CONFIG);
    let out = dir.path().join("out.json");
    let run = race_sim(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert!(run.status.success());
    let table = MetricsTable::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(table.rows.len(), 9);
    assert!(table.row("fixed-12", 10.0).is_some());
}

#[test]
fn sweep_rejects_bad_config_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    write(&config, &SWEEP_CONFIG.replacen("[2, 2, 2]", "[2, 3, 2]", 1));
    let out = dir.path().join("out.csv");
    let run = race_sim(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!run.status.success());
    let stderr = String::from_utf8_lossy(&run.stderr);
    assert!(stderr.contains("schemes[0].k_vector"), "stderr: {stderr}");
    assert!(!out.exists());
}

#[test]
fn trial_streams_slots_posteriors_and_outcome() {
    let run = race_sim(&[
        "trial",
        "--n",
        "8",
        "--k-vector",
        "2,2,2",
        "--scheme",
        "race",
        "--gamma",
        "0.01",
        "--m-max",
        "64",
        "--snr-db",
        "6",
        "--seed",
        "7",
    ]);
    assert!(
        run.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&run.stderr)
    );
    let stdout = String::from_utf8(run.stdout).unwrap();
    let events: Vec<serde_json::Value> = stdout
        .lines()
        .map(|line| serde_json::from_str(line).expect("every line is JSON"))
        .collect();
    assert!(
        events.len() > 12 + 3 + 3,
        "scan slots + posteriors + selections + outcome"
    );
    assert_eq!(events[0]["event"], "slot");
    assert_eq!(events[0]["stage"], 1);
    assert_eq!(events[0]["tx_k"], 1);
    assert_eq!(events[0]["rx_k"], 1);
    assert!(events.iter().any(|e| e["event"] == "posterior"));
    let selections: Vec<&serde_json::Value> = events
        .iter()
        .filter(|e| e["event"] == "stage_selected")
        .collect();
    assert_eq!(selections.len(), 3, "one selection per stage");
    let outcome = events.last().unwrap();
    assert_eq!(outcome["event"], "outcome");
    assert!(outcome["total_measurements"].as_u64().unwrap() >= 12);

    // a fixed-scheme trace needs no gamma and spends exactly the scan cost
    let run = race_sim(&[
        "trial",
        "--n",
        "8",
        "--k-vector",
        "2,2,2",
        "--scheme",
        "fixed",
        "--snr-db",
        "6",
        "--seed",
        "7",
    ]);
    assert!(run.status.success());
    let stdout = String::from_utf8(run.stdout).unwrap();
    let outcome: serde_json::Value = serde_json::from_str(stdout.lines().last().unwrap()).unwrap();
    assert_eq!(outcome["total_measurements"], 12);
}

#[test]
fn codebook_export_covers_every_beam() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("beams.csv");
    let run = race_sim(&[
        "codebook",
        "--n",
        "8",
        "--k-vector",
        "2,2,2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(run.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    // 2 + 4 + 8 beams across the three stages
    assert_eq!(header.split(',').count(), 1 + 14);
    assert!(header.starts_with("grid_index,s1b0,s1b1,s2b0"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 8);
    // stage-1 beam 0 is flat over the lower half of the grid
    let first_col: Vec<f64> = rows
        .iter()
        .map(|r| r.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    let c1 = 0.5f64; // 1/sqrt(4)
    for (i, magnitude) in first_col.iter().enumerate() {
        if i < 4 {
            assert!((magnitude - c1).abs() < 1e-5);
        } else {
            assert!(*magnitude < 1e-5);
        }
    }
}

#[test]
fn calibrate_switch_produces_a_loadable_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cal.json");
    write(
        &config,
        r#"{
          "n_antennas": 8,
          "gamma": 0.05,
          "trials": 150,
          "master_seed": 3,
          "snr_grid_db": [-5.0, 25.0],
          "candidate_plans": [[2, 2, 2], [4, 2]]
        }"#,
    );
    let out = dir.path().join("table.json");
    let run = race_sim(&[
        "calibrate-switch",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        run.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&run.stderr)
    );
    let table = SwitchTable::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(!table.entries().is_empty());
    assert_eq!(table.n_antennas(), 8);
    // the open-below region must be first
    assert_eq!(table.entries()[0].snr_threshold_db, f64::NEG_INFINITY);
}

#[test]
fn nonexistent_config_fails_with_context() {
    let run = race_sim(&[
        "sweep",
        "--config",
        "/no/such/file.json",
        "--out",
        "/tmp/x.csv",
    ]);
    assert!(!run.status.success());
    let stderr = String::from_utf8_lossy(&run.stderr);
    assert!(stderr.contains("file.json"), "stderr: {stderr}");
}
