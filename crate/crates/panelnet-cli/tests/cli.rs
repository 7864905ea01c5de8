//! Workflow tests driving the compiled binary: pipeline composition,
//! determinism of reruns, exit codes, and error reporting.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_panelnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {args:?} failed with {:?}:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Parses the one-line JSON error the binary prints on stderr.
fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn synth(dir: &Path, extra: &[&str]) -> String {
    let root = dir.to_str().expect("utf8 path").to_string();
    let mut args = vec!["synth", "--out", root.as_str()];
    args.extend_from_slice(extra);
    run_ok(&args);
    dir.join("config.toml").to_str().expect("utf8 path").to_string()
}

#[test]
fn reruns_rewrite_outputs_byte_for_byte() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = synth(dir.path(), &["--seed", "5", "--regions", "8", "--years", "5"]);

    run_ok(&["ingest", "--config", &config]);
    let features = fs::read(dir.path().join("features.csv")).expect("features.csv");
    let ingest_manifest = fs::read(dir.path().join("manifest_ingest.json")).expect("manifest");
    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("ingest_report.json")).expect("ingest report"),
    )
    .expect("report parses");
    // Full synthetic years: every region-year clears the coverage floor.
    assert_eq!(report["coverage"]["n_groups_kept"], 8 * 5);
    assert_eq!(report["coverage"]["excluded"].as_array().expect("excluded").len(), 0);
    run_ok(&["ingest", "--config", &config]);
    assert_eq!(
        features,
        fs::read(dir.path().join("features.csv")).expect("features.csv"),
        "features.csv changed between identical runs"
    );
    assert_eq!(
        ingest_manifest,
        fs::read(dir.path().join("manifest_ingest.json")).expect("manifest"),
        "manifest_ingest.json changed between identical runs"
    );

    run_ok(&["fit", "--config", &config]);
    let fit = fs::read(dir.path().join("fit.json")).expect("fit.json");
    let diagnostics = fs::read(dir.path().join("diagnostics.json")).expect("diagnostics");
    let fit_manifest = fs::read(dir.path().join("manifest_fit.json")).expect("manifest");
    run_ok(&["fit", "--config", &config]);
    assert_eq!(fit, fs::read(dir.path().join("fit.json")).expect("fit.json"));
    assert_eq!(
        diagnostics,
        fs::read(dir.path().join("diagnostics.json")).expect("diagnostics")
    );
    assert_eq!(
        fit_manifest,
        fs::read(dir.path().join("manifest_fit.json")).expect("manifest")
    );

    // The fixture's linear model is pooled with two moment inputs: two
    // slopes plus an intercept.
    let fit: serde_json::Value = serde_json::from_slice(&fit).expect("fit.json parses");
    assert_eq!(fit["model"], "linear");
    assert_eq!(fit["df"], 3);
    assert_eq!(fit["converged"], true);
    assert_eq!(fit["params"]["beta"].as_array().expect("beta").len(), 3);
}

#[test]
fn missing_feature_table_is_reported_as_missing_input() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = synth(dir.path(), &["--regions", "4", "--years", "3"]);
    // No ingest: features.csv does not exist yet.
    let out = run(&["fit", "--config", &config]);
    assert_eq!(out.status.code(), Some(2));
    let error = error_json(&out);
    assert_eq!(error["error"]["kind"], "validation");
    let message = error["error"]["message"].as_str().expect("message");
    assert!(
        message.contains("missing input") && message.contains("features.csv"),
        "unexpected message: {message}"
    );
}

#[test]
fn margins_without_a_fit_is_reported_as_missing_input() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = synth(dir.path(), &["--regions", "4", "--years", "3"]);
    run_ok(&["ingest", "--config", &config]);
    let out = run(&["margins", "--config", &config]);
    assert_eq!(out.status.code(), Some(2));
    let message = error_json(&out)["error"]["message"]
        .as_str()
        .expect("message")
        .to_string();
    assert!(message.contains("missing input") && message.contains("fit.json"));
}

#[test]
fn shift_dimension_mismatch_is_a_validation_error() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = synth(dir.path(), &["--regions", "4", "--years", "3"]);
    run_ok(&["ingest", "--config", &config]);
    run_ok(&["fit", "--config", &config]);
    let out = run(&["scenario", "--config", &config, "--shift", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let error = error_json(&out);
    assert_eq!(error["error"]["kind"], "validation");
    assert!(error["error"]["message"]
        .as_str()
        .expect("message")
        .contains("shift has dimension 1"));
}

#[test]
fn malformed_shift_text_is_rejected() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = synth(dir.path(), &["--regions", "4", "--years", "3"]);
    let out = run(&["scenario", "--config", &config, "--shift", "2,x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["error"]["message"]
        .as_str()
        .expect("message")
        .contains("invalid shift component"));
}

#[test]
fn collinear_features_exit_with_numerical_failure() {
    let dir = tempfile::tempdir().expect("tempdir");
    let root = dir.path();
    fs::write(
        root.join("regions.csv"),
        "region_id,lat,lon\nA,40,5\nB,50,10\n",
    )
    .expect("regions");
    let mut gva = String::from("region_id,year,growth\n");
    let mut features = String::from("region_id,year,m1,m2\n");
    for (region, base) in [("A", 10.0), ("B", 15.0)] {
        for (offset, year) in (2000..2003).enumerate() {
            let m1 = base + offset as f64;
            gva.push_str(&format!("{region},{year},{}\n", 0.1 * m1));
            // The second moment is an exact multiple of the first, so the
            // design is rank deficient.
            features.push_str(&format!("{region},{year},{m1},{}\n", 2.0 * m1));
        }
    }
    fs::write(root.join("gva.csv"), gva).expect("gva");
    fs::write(root.join("features.csv"), features).expect("features");
    fs::write(
        root.join("config.toml"),
        r#"
            [inputs]
            gva = "gva.csv"
            regions = "regions.csv"
            features = "features.csv"

            [model]
            kind = "linear"
            fe = "pooled"

            [output]
            dir = "."
        "#,
    )
    .expect("config");

    let config = root.join("config.toml");
    let out = run(&["fit", "--config", config.to_str().expect("utf8")]);
    assert_eq!(out.status.code(), Some(1), "collinear fit should fail numerically");
    let error = error_json(&out);
    assert_eq!(error["error"]["kind"], "numerical");
    assert!(error["error"]["message"]
        .as_str()
        .expect("message")
        .contains("rank deficient"));
}

#[test]
fn select_writes_comparison_table_and_best_fit() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = synth(
        dir.path(),
        &["--kind", "slfn", "--regions", "6", "--years", "4", "--seed", "3"],
    );
    run_ok(&["ingest", "--config", &config]);
    run_ok(&["select", "--config", &config]);

    let table = fs::read_to_string(dir.path().join("selection.csv")).expect("selection.csv");
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("H,df,aic,bic,sigma_hat,converged"));
    assert_eq!(lines.count(), 3, "one row per candidate width");

    let fit: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fit.json")).expect("fit.json"))
            .expect("fit.json parses");
    assert_eq!(fit["model"], "slfn");
    let h = fit["H"].as_u64().expect("H") as usize;
    assert!([1, 2, 3].contains(&h), "H = {h} is not a candidate");
    // Pooled network on two moment inputs: (2 + 2) * H parameters (weights,
    // hidden biases, output weights).
    assert_eq!(fit["df"].as_u64().expect("df") as usize, 4 * h);
}

#[test]
fn select_requires_a_network_model() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = synth(dir.path(), &["--regions", "4", "--years", "3"]);
    run_ok(&["ingest", "--config", &config]);
    let out = run(&["select", "--config", &config]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["error"]["message"]
        .as_str()
        .expect("message")
        .contains("slfn"));
}

#[test]
fn time_effects_network_fit_counts_absorbed_years() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config_path = synth(
        dir.path(),
        &["--kind", "slfn", "--regions", "6", "--years", "22", "--seed", "8"],
    );
    // Re-target the generated config at a year-effects fit of width 3.
    let text = fs::read_to_string(&config_path)
        .expect("config")
        .replace("fe = \"pooled\"", "fe = \"time\"")
        .replace("n_hidden = 2", "n_hidden = 3");
    fs::write(&config_path, text).expect("write config");
    run_ok(&["ingest", "--config", &config_path]);
    run_ok(&["fit", "--config", &config_path]);
    let fit: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fit.json")).expect("fit.json"))
            .expect("fit.json parses");
    // (2 + 1) * 3 network parameters plus 22 absorbed year intercepts.
    assert_eq!(fit["df"], 31);
    assert_eq!(fit["fe_spec"], "time");
}

/// Reconstructs the network fixture's noise-free response from truth.json.
fn truth_response(truth: &serde_json::Value, m1: f64, m2: f64) -> f64 {
    let array = |key: &str| -> Vec<f64> {
        truth[key]
            .as_array()
            .unwrap_or_else(|| panic!("truth.json lacks {key}"))
            .iter()
            .map(|v| v.as_f64().expect("number"))
            .collect()
    };
    let means = array("input_means");
    let sds = array("input_sds");
    let theta0 = array("theta0");
    let theta1 = array("theta1");
    let z1 = (m1 - means[0]) / sds[0];
    let z2 = (m2 - means[1]) / sds[1];
    theta1
        .iter()
        .enumerate()
        .map(|(h, t1)| {
            let pre = theta0[2 * h] * z1 + theta0[2 * h + 1] * z2;
            t1 / (1.0 + (-pre).exp())
        })
        .sum()
}

#[test]
fn scenario_on_network_fixture_tracks_generator_deltas() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = synth(dir.path(), &["--kind", "slfn", "--seed", "4"]);
    run_ok(&["ingest", "--config", &config]);
    run_ok(&["fit", "--config", &config]);
    run_ok(&["scenario", "--config", &config, "--shift", "2,0"]);

    let truth: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("truth.json")).expect("truth"))
            .expect("truth parses");

    // Oracle: per-region mean generator response change under the same shift.
    let mut oracle: std::collections::BTreeMap<String, (f64, usize)> =
        std::collections::BTreeMap::new();
    let mut features =
        csv::Reader::from_path(dir.path().join("features.csv")).expect("features.csv");
    for row in features.records() {
        let row = row.expect("row");
        let m1: f64 = row[2].parse().expect("m1");
        let m2: f64 = row[3].parse().expect("m2");
        let delta = truth_response(&truth, m1 + 2.0, m2) - truth_response(&truth, m1, m2);
        let entry = oracle.entry(row[0].to_string()).or_insert((0.0, 0));
        entry.0 += delta;
        entry.1 += 1;
    }

    let mut scenario =
        csv::Reader::from_path(dir.path().join("scenario.csv")).expect("scenario.csv");
    let mut n_regions = 0;
    let mut mean_magnitude = 0.0;
    for row in scenario.records() {
        let row = row.expect("row");
        let (sum, count) = oracle[&row[0]];
        let want = sum / count as f64;
        let got: f64 = row[3].parse().expect("delta");
        mean_magnitude += want.abs();
        assert!(
            (got - want).abs() <= 0.1,
            "region {}: scenario delta {got} vs generator delta {want}",
            &row[0]
        );
        n_regions += 1;
    }
    assert_eq!(n_regions, 20, "one scenario row per region");
    // Guard against a vacuous comparison: the generator must actually
    // respond to the shift.
    assert!(
        mean_magnitude / n_regions as f64 > 0.05,
        "generator deltas are too small for the check to mean anything"
    );
}

#[test]
fn margins_can_write_every_artifact_kind() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config_path = synth(dir.path(), &["--seed", "2", "--regions", "6", "--years", "4"]);
    run_ok(&["ingest", "--config", &config_path]);
    run_ok(&["fit", "--config", &config_path]);

    // Widen the margins section of the generated config: trace both moment
    // columns, a joint direction, a contour pair, and SVG companions.
    let text = fs::read_to_string(&config_path)
        .expect("config")
        .replace("varied = [0]", "varied = [0, 1]\ndirection = [1.0, 1.0]\ncontour = [0, 1]")
        .replace("svg = false", "svg = true");
    let wide = dir.path().join("config_margins.toml");
    fs::write(&wide, text).expect("write config");
    run_ok(&["margins", "--config", wide.to_str().expect("utf8")]);

    for name in [
        "margins_m1.csv",
        "margins_m2.csv",
        "interaction.csv",
        "contour.csv",
        "margins_m1.svg",
        "margins_m2.svg",
        "interaction.svg",
        "manifest_margins.json",
    ] {
        assert!(dir.path().join(name).is_file(), "{name} was not written");
    }
    let margins = fs::read_to_string(dir.path().join("margins_m1.csv")).expect("margins");
    assert_eq!(margins.lines().next(), Some("grid_value,fit,lower,upper"));
    let contour = fs::read_to_string(dir.path().join("contour.csv")).expect("contour");
    assert_eq!(contour.lines().next(), Some("x_i,x_j,fit"));
}

#[test]
fn seed_override_changes_manifest_config_hash() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = synth(
        dir.path(),
        &["--kind", "slfn", "--regions", "5", "--years", "3", "--seed", "1"],
    );
    run_ok(&["ingest", "--config", &config]);
    run_ok(&["fit", "--config", &config]);
    let baseline: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("manifest_fit.json")).expect("manifest"),
    )
    .expect("manifest parses");
    run_ok(&["fit", "--config", &config, "--seed", "99"]);
    let reseeded: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("manifest_fit.json")).expect("manifest"),
    )
    .expect("manifest parses");
    assert_eq!(baseline["command"], "fit");
    assert_ne!(
        baseline["config_hash"], reseeded["config_hash"],
        "seed override must be part of the hashed effective config"
    );
    assert_eq!(baseline["inputs"], reseeded["inputs"]);
}
