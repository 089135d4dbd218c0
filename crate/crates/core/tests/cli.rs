//! End-to-end runs of the `cdii` binary. Runs are serialised because the
//! pipeline test times its inversion.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::serial;

fn cdii(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdii"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cdii-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn assert_clean_exit(out: &Output, code: i32) {
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(code), "stderr: {stderr}");
    assert!(!stderr.contains("panicked"), "stderr: {stderr}");
}

#[test]
fn bad_flag_value_is_a_usage_error() {
    let _g = serial();
    assert_clean_exit(&cdii(&["invert", "--pair", ".", "--gap-tol", "banana"]), 2);
    assert_clean_exit(&cdii(&["phantom", "--n", "2"]), 2);
    assert_clean_exit(&cdii(&["no-such-command"]), 2);
}

#[test]
fn missing_input_is_a_usage_error() {
    let _g = serial();
    let dir = scratch("missing");
    let out = cdii(&["invert", "--pair", s(&dir.join("absent"))]);
    assert_clean_exit(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--pair"));
}

#[test]
fn malformed_input_fails_without_panicking() {
    let _g = serial();
    let dir = scratch("malformed");
    let pair = dir.join("pair");
    assert_clean_exit(
        &cdii(&[
            "phantom",
            "--preset",
            "no-inclusion",
            "--n",
            "21",
            "--out",
            s(&pair),
        ]),
        0,
    );
    fs::write(pair.join("a.cdf"), "cdf1 21 21 0.05 0 0\n1 2 3\n").unwrap();
    assert_clean_exit(
        &cdii(&["invert", "--pair", s(&pair), "--out", s(&dir.join("inv"))]),
        1,
    );
}

#[test]
fn phantom_then_invert() {
    let _g = serial();
    let dir = scratch("chain");
    let pair = dir.join("pair");
    assert_clean_exit(
        &cdii(&[
            "phantom",
            "--preset",
            "disk-example",
            "--n",
            "51",
            "--out",
            s(&pair),
        ]),
        0,
    );
    for f in [
        "a.cdf",
        "geometry.cdf",
        "f.csv",
        "sigma_true.cdf",
        "u_true.cdf",
    ] {
        assert!(pair.join(f).is_file(), "{f} missing");
    }
    let inv = dir.join("inv");
    assert_clean_exit(&cdii(&["invert", "--pair", s(&pair), "--out", s(&inv)]), 0);
    for f in ["u.cdf", "sigma.cdf", "components.cdf", "diagnostics.txt"] {
        assert!(inv.join(f).is_file(), "{f} missing");
    }
    let diag = fs::read_to_string(inv.join("diagnostics.txt")).unwrap();
    assert!(diag.contains("converged=true"), "{diag}");
    assert!(diag.contains("label=perfect"), "{diag}");

    let out = cdii(&[
        "verify",
        "coarea",
        "--u",
        s(&inv.join("u.cdf")),
        "--a",
        s(&pair.join("a.cdf")),
    ]);
    assert_clean_exit(&out, 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("coarea_residual="));

    let cls = dir.join("cls");
    let out = cdii(&[
        "classify",
        "--pair",
        s(&pair),
        "--u",
        s(&inv.join("u.cdf")),
        "--out",
        s(&cls),
    ]);
    assert_clean_exit(&out, 0);
    assert!(cls.join("components.cdf").is_file());
}

#[test]
fn forward_in_the_limit_writes_a_potential() {
    let _g = serial();
    let dir = scratch("forward");
    let pair = dir.join("pair");
    assert_clean_exit(
        &cdii(&[
            "phantom",
            "--preset",
            "two-inclusions",
            "--n",
            "31",
            "--out",
            s(&pair),
        ]),
        0,
    );
    let fwd = dir.join("fwd");
    let out = cdii(&[
        "forward",
        "--geometry",
        s(&pair.join("geometry.cdf")),
        "--sigma",
        s(&pair.join("sigma_true.cdf")),
        "--f",
        s(&pair.join("f.csv")),
        "--K",
        "inf",
        "--out",
        s(&fwd),
    ]);
    assert_clean_exit(&out, 0);
    let u = cdii::io::read_field(&fwd.join("u.cdf")).unwrap();
    assert!(u.defined.iter().any(|d| *d));
}

#[test]
fn outputs_are_deterministic() {
    let _g = serial();
    let dir = scratch("determinism");
    let pair = dir.join("pair");
    assert_clean_exit(
        &cdii(&[
            "phantom",
            "--preset",
            "two-inclusions",
            "--n",
            "31",
            "--out",
            s(&pair),
        ]),
        0,
    );
    let run = |name: &str| {
        let out = dir.join(name);
        assert_clean_exit(
            &cdii(&[
                "invert",
                "--pair",
                s(&pair),
                "--seed",
                "7",
                "--out",
                s(&out),
            ]),
            0,
        );
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["u.cdf", "sigma.cdf", "components.cdf", "diagnostics.txt"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn unconverged_inversion_leaves_only_partial_files() {
    let _g = serial();
    let dir = scratch("partial");
    let pair = dir.join("pair");
    assert_clean_exit(
        &cdii(&[
            "phantom",
            "--preset",
            "disk-example",
            "--n",
            "51",
            "--out",
            s(&pair),
        ]),
        0,
    );
    let inv = dir.join("inv");
    assert_clean_exit(
        &cdii(&[
            "invert",
            "--pair",
            s(&pair),
            "--max-iters",
            "10",
            "--out",
            s(&inv),
        ]),
        1,
    );
    assert!(!inv.join("u.cdf").exists());
    assert!(inv.join("u.cdf.partial").exists());
}

#[test]
fn config_file_sets_defaults_and_flags_win() {
    let _g = serial();
    let dir = scratch("config");
    let cfg = dir.join("run.conf");
    fs::write(&cfg, "# phantom settings\npreset = no-inclusion\nn = 15\n").unwrap();
    let out = dir.join("out");
    assert_clean_exit(
        &cdii(&["phantom", "--config", s(&cfg), "--out", s(&out)]),
        0,
    );
    let a = cdii::io::read_field(&out.join("a.cdf")).unwrap();
    assert_eq!((a.grid.nx, a.grid.ny), (15, 15));

    let out2 = dir.join("out2");
    assert_clean_exit(
        &cdii(&[
            "phantom",
            "--config",
            s(&cfg),
            "--n",
            "17",
            "--out",
            s(&out2),
        ]),
        0,
    );
    assert_eq!(
        cdii::io::read_field(&out2.join("a.cdf")).unwrap().grid.nx,
        17
    );

    fs::write(&cfg, "colour = blue\n").unwrap();
    assert_clean_exit(
        &cdii(&["phantom", "--config", s(&cfg), "--out", s(&out)]),
        2,
    );
}

#[test]
fn disc_example_pipeline_passes() {
    let _g = serial();
    let dir = scratch("pipeline");
    let out = cdii(&[
        "pipeline",
        "--preset",
        "disk-example",
        "--n",
        "201",
        "--out",
        s(&dir),
    ]);
    let report = fs::read_to_string(dir.join("report.txt")).unwrap_or_default();
    assert_clean_exit(&out, 0);
    assert!(report.contains("sigma_rel_err<=0.10: PASS"), "{report}");
    assert!(!report.contains("FAIL"), "{report}");
}
