use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use simprune::{fixtures, load_model, save_model, PruningPlan};

fn simprune(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simprune"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["--help"][..], &["--version"], &["prune", "--help"]] {
        assert_eq!(simprune(dir.path(), args).status.code(), Some(0));
    }
}

#[test]
fn unknown_flag_prints_usage_and_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = simprune(dir.path(), &["flops", "--model", "m.json", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(simprune(dir.path(), &[]).status.code(), Some(1));
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = simprune(dir.path(), &["flops", "--model", "missing.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.json"));

    save_model(
        &fixtures::duplicate_channel_model(),
        dir.path().join("dup.json"),
    )
    .unwrap();
    let o = simprune(
        dir.path(),
        &[
            "prune",
            "--model",
            "dup.json",
            "--threshold",
            "-1",
            "--out",
            "o.json",
            "--plan",
            "p.json",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("o.json").exists());

    let o = simprune(dir.path(), &["verify", "prop1", "--model", "dup.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn prune_at_zero_threshold_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let spec = fixtures::RandomModelSpec {
        with_head: true,
        ..Default::default()
    };
    let model = fixtures::random_model(&spec, 5);
    save_model(&model, dir.path().join("net.json")).unwrap();
    let o = simprune(
        dir.path(),
        &[
            "prune",
            "--model",
            "net.json",
            "--threshold",
            "0",
            "--out",
            "out.json",
            "--plan",
            "plan.json",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(load_model(dir.path().join("out.json")).unwrap(), model);
    let plan =
        PruningPlan::from_json(&fs::read_to_string(dir.path().join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan.removed_count(), 0);
}

#[test]
fn prune_duplicate_fixture_removes_one_channel() {
    let dir = tempfile::tempdir().unwrap();
    let o = simprune(dir.path(), &["fixture", "duplicate", "--out", "dup.json"]);
    assert!(o.status.success());
    let o = simprune(
        dir.path(),
        &[
            "prune",
            "--model",
            "dup.json",
            "--threshold",
            "0.1",
            "--out",
            "out.json",
            "--plan",
            "plan.json",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let plan =
        PruningPlan::from_json(&fs::read_to_string(dir.path().join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan.removed_count(), 1);
    assert_eq!(
        load_model(dir.path().join("out.json"))
            .unwrap()
            .channel_counts(),
        [3, 2]
    );
    assert!(stdout(&o).contains("removed 1 channels"));
}

#[test]
fn flops_on_vgg_fixture() {
    let dir = tempfile::tempdir().unwrap();
    assert!(
        simprune(dir.path(), &["fixture", "vgg16", "--out", "vgg.json"])
            .status
            .success()
    );
    let o = simprune(dir.path(), &["flops", "--model", "vgg.json"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("total: 627357696 (627.36M)"), "{text}");
    assert!(text.contains("batch norm: 2 per activation"));

    let o = simprune(
        dir.path(),
        &["flops", "--model", "vgg.json", "--batch", "2", "--json"],
    );
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["total"], 2 * 627_357_696u64);
}

#[test]
fn prune_then_flops_ratio_matches() {
    let dir = tempfile::tempdir().unwrap();
    assert!(simprune(
        dir.path(),
        &["fixture", "random", "--seed", "2", "--out", "net.json"]
    )
    .status
    .success());
    let o = simprune(
        dir.path(),
        &[
            "prune",
            "--model",
            "net.json",
            "--threshold",
            "0.4",
            "--out",
            "p.json",
            "--plan",
            "plan.json",
        ],
    );
    assert!(o.status.success());
    let o = simprune(
        dir.path(),
        &[
            "flops",
            "--model",
            "p.json",
            "--baseline",
            "net.json",
            "--json",
        ],
    );
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let base = simprune::flops_count(&load_model(dir.path().join("net.json")).unwrap(), 1).unwrap();
    let pruned = simprune::flops_count(&load_model(dir.path().join("p.json")).unwrap(), 1).unwrap();
    assert_eq!(v["baseline_total"], base.total);
    assert_eq!(v["total"], pruned.total);
    let ratio = v["pruned_ratio"].as_f64().unwrap();
    assert!((ratio - (1.0 - pruned.total as f64 / base.total as f64)).abs() < 1e-15);
}

#[test]
fn report_writes_matrix_triples() {
    let dir = tempfile::tempdir().unwrap();
    save_model(
        &fixtures::duplicate_channel_model(),
        dir.path().join("dup.json"),
    )
    .unwrap();
    let o = simprune(
        dir.path(),
        &[
            "report",
            "--model",
            "dup.json",
            "--seed",
            "4",
            "--trials",
            "2",
            "--batch",
            "8",
            "--out-dir",
            "r",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for l in 0..2 {
        for name in [
            format!("dup_empirical-layer{l}_4.csv"),
            format!("dup_probabilistic-layer{l}.csv"),
            format!("dup_difference-layer{l}_4.csv"),
        ] {
            assert!(dir.path().join("r").join(&name).exists(), "{name}");
        }
    }
    let csv = fs::read_to_string(dir.path().join("r/dup_probabilistic-layer0.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("r/dup_report_4.json")).unwrap())
            .unwrap();
    assert_eq!(v["layers"].as_array().unwrap().len(), 2);
}

#[test]
fn verify_checks_pass_and_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    for (args, file) in [
        (
            &[
                "verify",
                "prop1",
                "--seed",
                "1",
                "--trials",
                "2",
                "--out-dir",
                "o",
            ][..],
            "gaussian_prop1_1.json",
        ),
        (
            &[
                "verify",
                "prop2",
                "--seed",
                "1",
                "--trials",
                "20",
                "--out-dir",
                "o",
            ],
            "random_prop2_1.json",
        ),
        (
            &[
                "verify",
                "activation",
                "--seed",
                "1",
                "--trials",
                "1000",
                "--out-dir",
                "o",
            ],
            "uniform_activation_1.json",
        ),
    ] {
        let o = simprune(dir.path(), args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stdout(&o));
        assert!(dir.path().join("o").join(file).exists(), "{file}");
    }
}

#[test]
fn shift_bound_on_identity_model_needs_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let spec = fixtures::RandomModelSpec {
        act: simprune::ActivationKind::Identity,
        ..Default::default()
    };
    save_model(
        &fixtures::random_model(&spec, 1),
        dir.path().join("lin.json"),
    )
    .unwrap();
    let base = ["verify", "prop2", "--model", "lin.json", "--trials", "2"];
    assert_eq!(simprune(dir.path(), &base).status.code(), Some(1));
    let mut allowed = base.to_vec();
    allowed.push("--allow-identity");
    assert_eq!(simprune(dir.path(), &allowed).status.code(), Some(0));
}

#[test]
fn thread_cap_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_simprune"))
        .current_dir(dir.path())
        .env("SIMPRUNE_THREADS", "zero")
        .args(["verify", "activation", "--trials", "10"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("SIMPRUNE_THREADS"));
}

// A single trial per size is noisy enough that the error can rise from one
// size to the next; seed 3 is such a case, which must surface as exit code 2.
#[test]
fn failed_check_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = simprune(dir.path(), &["verify", "prop1", "--trials", "1", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    assert!(stdout(&o).contains("FAILED"));
}
