//! Black-box walk over the command-line surface: every subcommand once,
//! through real processes, checking the files each run leaves behind.

use std::path::Path;
use std::process::{Command, Output};

use sivsim::dataset::{load_record, save_table, DatasetManifest};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sivsim"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn sivsim");
    assert!(
        out.status.success(),
        "sivsim {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_code(args: &[&str]) -> i32 {
    bin()
        .args(args)
        .output()
        .expect("spawn sivsim")
        .status
        .code()
        .unwrap_or(-1)
}

fn verified_manifest(dir: &Path) -> DatasetManifest {
    let manifest = DatasetManifest::load(dir).expect("manifest loads");
    manifest.verify(dir).expect("manifest verifies");
    manifest
}

#[test]
fn ple_pipeline_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    let ana = tmp.path().join("ana");

    run_ok(&["simulate", "ple", "--seed", "11", "--out", sim.to_str().unwrap()]);
    for f in ["config.json", "scan.csv", "scan.json", "sweep_summary.json"] {
        assert!(sim.join(f).is_file(), "missing {f}");
    }
    verified_manifest(&sim);

    run_ok(&[
        "analyze",
        "ple",
        "--input",
        sim.join("scan").to_str().unwrap(),
        "--seed",
        "11",
        "--out",
        ana.to_str().unwrap(),
    ]);
    let stats: serde_json::Value = load_record(&ana.join("ple_line_stats.json"), "ple-line-stats")
        .expect("line stats record");
    assert!(stats["n_singles"].as_u64().unwrap() >= 10);
    let fit: serde_json::Value =
        load_record(&ana.join("ple_average_fit.json"), "fit-result").expect("fit record");
    assert!(fit["converged"].as_bool().unwrap());
    verified_manifest(&ana);
}

#[test]
fn hbt_then_g2_resolves_a_single_emitter() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.json");
    // bright, slow test transition: the dip resolves in two minutes of stream
    std::fs::write(
        &config,
        r#"{
            "master_seed": 5,
            "pillar": {
                "emitters": [{"lifetime_s": 3.0e-6, "max_signal_rate_cps": 20000, "ou_sigma_hz": 0}],
                "dark_rate_cps": 50
            },
            "drive": {"power_nw": 23, "hbt_duration_s": 120, "lag_bin_s": 1.5e-7, "max_lag_s": 6.0e-6}
        }"#,
    )
    .unwrap();
    let sim = tmp.path().join("sim");
    let ana = tmp.path().join("ana");

    run_ok(&[
        "simulate",
        "hbt",
        "--config",
        config.to_str().unwrap(),
        "--out",
        sim.to_str().unwrap(),
    ]);
    assert!(sim.join("tags.csv").is_file());
    verified_manifest(&sim);

    run_ok(&[
        "analyze",
        "g2",
        "--input",
        sim.join("tags.csv").to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out",
        ana.to_str().unwrap(),
    ]);
    let analysis: serde_json::Value =
        load_record(&ana.join("g2_analysis.json"), "g2-analysis").expect("analysis record");
    assert!(analysis["g2_zero"].as_f64().unwrap() < 0.5);
    assert_eq!(analysis["estimated_emitters"].as_u64(), Some(1));
    assert_eq!(analysis["consistent_with_single"].as_bool(), Some(true));
}

#[test]
fn survey_pipeline_recovers_occupancy() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    let ana = tmp.path().join("ana");

    run_ok(&["simulate", "survey", "--seed", "13", "--out", sim.to_str().unwrap()]);
    run_ok(&[
        "analyze",
        "survey",
        "--input",
        sim.join("survey_sites.csv").to_str().unwrap(),
        "--seed",
        "13",
        "--out",
        ana.to_str().unwrap(),
    ]);
    let fit: serde_json::Value =
        load_record(&ana.join("occupancy_fit.json"), "occupancy-fit").expect("occupancy record");
    let mean = fit["mean"].as_f64().unwrap();
    assert!((0.3..0.8).contains(&mean), "occupancy {mean} implausible");
    assert!(ana.join("occupancy_hist.csv").is_file());
}

#[test]
fn fit_subcommand_reads_named_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let table = tmp.path().join("sat.csv");
    let powers: Vec<f64> = (0..12).map(|i| 1.5_f64.powi(i)).collect();
    let rates: Vec<f64> = powers
        .iter()
        .map(|&p| 9.7e3 * p / (p + 23.0) + 3.0 * p)
        .collect();
    save_table(
        &table,
        &serde_json::json!({}),
        &[("power_nw", &powers), ("rate_cps", &rates)],
    )
    .unwrap();

    let out = tmp.path().join("fit");
    run_ok(&[
        "fit",
        "saturation",
        "--input",
        table.to_str().unwrap(),
        "--x",
        "power_nw",
        "--y",
        "rate_cps",
        "--weighting",
        "none",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    let record: serde_json::Value =
        load_record(&out.join("fit_result.json"), "fit-result").expect("fit record");
    let names: Vec<&str> = record["fit"]["names"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    let values = record["fit"]["values"].as_array().unwrap();
    let value_of = |name: &str| -> f64 {
        let i = names.iter().position(|n| *n == name).unwrap();
        values[i].as_f64().unwrap()
    };
    assert!((value_of("max_rate") - 9.7e3).abs() / 9.7e3 < 1e-3);
    assert!((value_of("saturation_power") - 23.0).abs() / 23.0 < 1e-3);
    assert!((value_of("linear_background") - 3.0).abs() < 0.1);
}

#[test]
fn every_figure_preset_runs_and_verifies() {
    let tmp = tempfile::tempdir().unwrap();
    for id in ["1e", "2c", "2d", "2e", "3a", "3c", "3d", "3ef", "4"] {
        let out = tmp.path().join(id);
        run_ok(&["report", "figure", id, "--seed", "3", "--out", out.to_str().unwrap()]);
        let manifest = verified_manifest(&out);
        // beyond config + manifest bookkeeping, each preset leaves real output
        assert!(
            manifest.files.len() > 1,
            "figure {id} wrote nothing but the config"
        );
    }
}

#[test]
fn exit_codes_separate_usage_from_data_errors() {
    // usage damage: unknown subcommand, unknown figure id
    assert_eq!(run_code(&["frobnicate"]), 2);
    assert_eq!(run_code(&["report", "figure", "9z", "--seed", "1"]), 2);

    // no config and no seed: a schema error, not a usage error
    assert_eq!(run_code(&["simulate", "ple"]), 1);

    // analysis on a missing file fails after the out dir exists, so the
    // error record lands next to where the results would have gone
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("broken");
    let code = run_code(&[
        "analyze",
        "ple",
        "--input",
        tmp.path().join("nope").to_str().unwrap(),
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    let err: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("error.json")).unwrap()).unwrap();
    assert!(err["error"]["kind"].as_str().is_some());
}

#[test]
fn json_table_format_and_thread_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.json");
    std::fs::write(
        &config,
        r#"{"master_seed": 9, "survey": {"n_sites": 40, "counting": "rate"}}"#,
    )
    .unwrap();
    let out = tmp.path().join("out");
    run_ok(&[
        "simulate",
        "survey",
        "--config",
        config.to_str().unwrap(),
        "--format",
        "json",
        "--threads",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(out.join("survey_sites.json").is_file());
    assert!(!out.join("survey_sites.csv").exists());
    let table: serde_json::Value =
        load_record(&out.join("survey_sites.json"), "table").expect("json table record");
    let columns = table["columns"].as_array().unwrap();
    assert!(columns.iter().any(|c| c["name"] == "estimated_emitters"));
}
