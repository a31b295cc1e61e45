//! End-to-end tests of the `kpcert` binary: exit codes, report documents,
//! batch semantics, instance assembly, and determinism under seeds.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn kpcert() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kpcert"))
}

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn run(args: &[&str]) -> Output {
    kpcert().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

#[test]
fn robust_fixture_exits_zero() {
    let path = fixtures_dir().join("instances/robust_3x3.json");
    let out = run(&["verify", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let report = stdout_json(&out);
    assert_eq!(report["status"], "robust");
    assert_eq!(report["schema_version"], 1);
}

#[test]
fn fragile_fixture_exits_one_with_witness() {
    let path = fixtures_dir().join("instances/fragile_3x3.json");
    let out = run(&["verify", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let report = stdout_json(&out);
    assert_eq!(report["status"], "unknown");
    let cex = &report["counterexample"];
    assert_eq!(cex["validated"], true);
    assert_eq!(cex["violated_facets"][0], 1);
    assert_eq!(cex["deviation"].as_array().unwrap().len(), 4);
}

#[test]
fn truncated_json_exits_64_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let src = std::fs::read_to_string(fixtures_dir().join("instances/robust_3x3.json")).unwrap();
    let path = dir.path().join("cut.json");
    std::fs::write(&path, &src[..src.len() / 2]).unwrap();
    let out = run(&["verify", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(64));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line"), "stderr: {stderr}");
}

#[test]
fn unknown_keys_rejected_strict_accepted_lenient() {
    let dir = tempfile::tempdir().unwrap();
    let src = std::fs::read_to_string(fixtures_dir().join("instances/robust_3x3.json")).unwrap();
    let path = dir.path().join("extra.json");
    std::fs::write(&path, src.replacen("\"h\":", "\"bogus\": 1, \"h\":", 1)).unwrap();
    let strict = run(&["verify", path.to_str().unwrap()]);
    assert_eq!(strict.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&strict.stderr).contains("bogus"));
    let lenient = run(&["verify", path.to_str().unwrap(), "--lenient"]);
    assert_eq!(lenient.status.code(), Some(0));
    let report = stdout_json(&lenient);
    assert!(report["warnings"][0]
        .as_str()
        .unwrap()
        .contains("$.bogus"));
}

#[test]
fn missing_file_exits_64() {
    let out = run(&["verify", "/nonexistent/instance.json"]);
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn bad_usage_exits_64_and_help_exits_zero() {
    let out = run(&["verify"]);
    assert_eq!(out.status.code(), Some(64));
    let help = run(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&help.stdout);
    for sub in ["verify", "batch", "make-instance", "oracle", "export-lp"] {
        assert!(stdout.contains(sub), "help misses {sub}");
    }
}

#[test]
fn verify_with_no_prune_agrees() {
    for (fixture, code) in [("robust_3x3.json", 0), ("fragile_3x3.json", 1)] {
        let path = fixtures_dir().join("instances").join(fixture);
        let out = run(&["verify", path.to_str().unwrap(), "--no-prune"]);
        assert_eq!(out.status.code(), Some(code), "{fixture}");
    }
}

#[test]
fn oracle_cross_check_is_embedded() {
    let path = fixtures_dir().join("instances/fragile_3x3.json");
    let out = run(&[
        "verify",
        path.to_str().unwrap(),
        "--oracle",
        "enum",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let report = stdout_json(&out);
    assert_eq!(report["oracle"]["outcome"], "counterexample-found");
    assert!(report.get("oracle_disagrees").is_none());
}

#[test]
fn oracle_subcommand_exit_codes() {
    let robust = fixtures_dir().join("instances/robust_3x3.json");
    let out = run(&["oracle", robust.to_str().unwrap(), "--method", "enum"]);
    assert_eq!(out.status.code(), Some(0));
    let fragile = fixtures_dir().join("instances/fragile_3x3.json");
    let out = run(&["oracle", fragile.to_str().unwrap(), "--method", "sample", "--n", "200"]);
    assert_eq!(out.status.code(), Some(1));
    let report = stdout_json(&out);
    assert_eq!(report["method"], "sampling");
    assert_eq!(report["seed"], 0);
}

#[test]
fn seeded_verify_reports_are_reproducible() {
    let path = fixtures_dir().join("instances/fragile_3x3.json");
    let args = [
        "verify",
        path.to_str().unwrap(),
        "--oracle",
        "sample",
        "--seed",
        "42",
    ];
    let mut a = stdout_json(&run(&args));
    let mut b = stdout_json(&run(&args));
    // Wall time is the only nondeterministic field.
    a["stats"]["wall_time_s"] = 0.into();
    b["stats"]["wall_time_s"] = 0.into();
    assert_eq!(a, b);
}

#[test]
fn batch_reports_rates_and_isolates_errors() {
    let dir = tempfile::tempdir().unwrap();
    for fixture in ["robust_3x3.json", "fragile_3x3.json"] {
        std::fs::copy(
            fixtures_dir().join("instances").join(fixture),
            dir.path().join(fixture),
        )
        .unwrap();
    }
    std::fs::write(dir.path().join("broken.json"), "{ not json").unwrap();
    let out = run(&[
        "batch",
        dir.path().to_str().unwrap(),
        "--empirical-n",
        "200",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let report = stdout_json(&out);
    let rows = report["instances"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    // Sorted by file name: broken, fragile, robust.
    assert!(rows[0]["error"].as_str().is_some());
    assert_eq!(rows[1]["status"], "unknown");
    assert_eq!(rows[2]["status"], "robust");
    assert_eq!(report["verified_rate"]["numerator"], 1);
    assert_eq!(report["verified_rate"]["denominator"], 2);
    assert_eq!(report["empirical_verified_rate"]["numerator"], 1);
    let verified = report["verified_rate"]["rate"].as_f64().unwrap();
    let empirical = report["empirical_verified_rate"]["rate"].as_f64().unwrap();
    assert!(empirical >= verified);
}

#[test]
fn batch_is_deterministic_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    for fixture in ["robust_3x3.json", "fragile_3x3.json", "tiny_pair.json"] {
        std::fs::copy(
            fixtures_dir().join("instances").join(fixture),
            dir.path().join(fixture),
        )
        .unwrap();
    }
    let strip_times = |mut v: serde_json::Value| {
        for row in v["instances"].as_array_mut().unwrap() {
            row["wall_time_s"] = 0.into();
        }
        v["wall_time_mean_s"] = 0.into();
        v["wall_time_std_s"] = 0.into();
        v
    };
    let base = [
        "batch",
        dir.path().to_str().unwrap(),
        "--seed",
        "7",
        "--empirical-n",
        "50",
    ];
    let one = strip_times(stdout_json(&run(&base)));
    let mut with_jobs: Vec<&str> = base.to_vec();
    with_jobs.extend(["--jobs", "3"]);
    let three = strip_times(stdout_json(&run(&with_jobs)));
    assert_eq!(one, three);
}

#[test]
fn empty_batch_directory_exits_64() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["batch", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn make_instance_is_byte_stable_and_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a.json");
    let out_b = dir.path().join("b.json");
    let fx = fixtures_dir();
    for out in [&out_a, &out_b] {
        let res = run(&[
            "make-instance",
            fx.join("tiny_net.json").to_str().unwrap(),
            fx.join("deviation_spec.json").to_str().unwrap(),
            fx.join("seed.img.json").to_str().unwrap(),
            fx.join("perturbed.img.json").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(res.status.code(), Some(0));
    }
    let a = std::fs::read(&out_a).unwrap();
    let b = std::fs::read(&out_b).unwrap();
    assert_eq!(a, b, "instance files are not byte-stable");
    // The assembled instance matches the checked-in fixture byte for byte.
    let checked_in = std::fs::read(fx.join("instances/tiny_pair.json")).unwrap();
    assert_eq!(a, checked_in);
    let verdict = run(&["verify", out_a.to_str().unwrap()]);
    assert_eq!(verdict.status.code(), Some(0));
}

#[test]
fn make_instance_interval_mode_assembles_a_sound_instance() {
    // Both propagation modes must produce instances whose reachable sets
    // contain the concrete heatmaps of convex combinations of the images.
    let dir = tempfile::tempdir().unwrap();
    let fx = fixtures_dir();
    for mode in ["zonotope", "interval"] {
        let out = dir.path().join(format!("{mode}.json"));
        let res = run(&[
            "make-instance",
            fx.join("tiny_net.json").to_str().unwrap(),
            fx.join("deviation_spec.json").to_str().unwrap(),
            fx.join("seed.img.json").to_str().unwrap(),
            fx.join("perturbed.img.json").to_str().unwrap(),
            "--reach",
            mode,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(res.status.code(), Some(0), "{mode}");
        let inst = kpcert_core::fileio::load_instance(&out, true).unwrap().0;
        let bounds = inst.reach_set().bounds();
        let net = kpcert_core::fileio::load_network(&fx.join("tiny_net.json")).unwrap();
        let seed = kpcert_core::fileio::load_image(&fx.join("seed.img.json")).unwrap();
        let pert = kpcert_core::fileio::load_image(&fx.join("perturbed.img.json")).unwrap();
        for step in 0..=10 {
            let w = step as f64 / 10.0;
            let combo: Vec<f64> = seed
                .data
                .iter()
                .zip(&pert.data)
                .map(|(a, b)| (1.0 - w) * a + w * b)
                .collect();
            let (_, y) = kpcert_core::reach::forward(
                &net,
                kpcert_core::reach::Shape::Spatial(4, 4, 1),
                &combo,
            )
            .unwrap();
            let heat = kpcert_core::geometry::Heatmap::new(3, 3, 2, y).unwrap();
            assert!(
                bounds.contains(&heat, 1e-9),
                "{mode}: combination w={w} escapes the assembled set"
            );
        }
    }
}

#[test]
fn make_instance_rejects_mismatched_images() {
    let dir = tempfile::tempdir().unwrap();
    let small = dir.path().join("small.img.json");
    std::fs::write(&small, r#"{"h": 2, "w": 2, "c": 1, "data": [0.0, 0.1, 0.2, 0.3]}"#).unwrap();
    let fx = fixtures_dir();
    let out = run(&[
        "make-instance",
        fx.join("tiny_net.json").to_str().unwrap(),
        fx.join("deviation_spec.json").to_str().unwrap(),
        fx.join("seed.img.json").to_str().unwrap(),
        small.to_str().unwrap(),
        "--out",
        dir.path().join("x.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn export_lp_is_stable_and_reflects_pruning() {
    let path = fixtures_dir().join("instances/robust_3x3.json");
    let a = run(&["export-lp", path.to_str().unwrap()]);
    let b = run(&["export-lp", path.to_str().unwrap()]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8_lossy(&a.stdout);
    assert!(text.starts_with("kpcert-milp v1\n"));
    let unpruned = run(&["export-lp", path.to_str().unwrap(), "--no-prune"]);
    assert!(
        unpruned.stdout.len() > a.stdout.len(),
        "unpruned dump must be larger"
    );
}
