//! End-to-end runs of the command-line binary.

use std::fs;
use std::path::Path;
use std::process::Command;

use queue_bounds::cli::config::EXAMPLE1;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_queue-bounds"))
}

fn exit_code(cmd: &mut Command) -> i32 {
    cmd.output().unwrap().status.code().unwrap()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn reproduce_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        assert_eq!(exit_code(bin().args(["reproduce", "1", "--out"]).arg(dir.path())), 0);
    }
    let (fa, fb) = (read_dir_sorted(a.path()), read_dir_sorted(b.path()));
    assert!(fa.len() >= 10);
    assert_eq!(fa, fb);
    let summary = String::from_utf8(fa.iter().find(|f| f.0 == "summary.csv").unwrap().1.clone()).unwrap();
    assert!(summary.starts_with("check,lhs,rhs,pass\n"));
    assert!(summary.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn solve_writes_one_file_per_characteristic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("example1.cfg");
    fs::write(&cfg, EXAMPLE1).unwrap();
    let out = dir.path().join("out");
    assert_eq!(exit_code(bin().arg("solve").arg("--config").arg(&cfg).arg("--out").arg(&out)), 0);
    for c in ["empty_prob", "mean", "r"] {
        let transient = fs::read_to_string(out.join(format!("{c}_transient.csv"))).unwrap();
        let limit = fs::read_to_string(out.join(format!("{c}_limit.csv"))).unwrap();
        assert_eq!(transient.lines().next().unwrap(), format!("t,{c}"));
        assert!(transient.lines().nth(1).unwrap().starts_with("0.00000000000e0,"));
        assert!(transient.lines().last().unwrap().starts_with("1.90000000000e1,"));
        assert!(limit.lines().nth(1).unwrap().starts_with("1.90000000000e1,"));
        assert!(limit.lines().last().unwrap().starts_with("2.00000000000e1,"));
    }
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, EXAMPLE1.replace("horizon = 20.0", "horizon = 10.0")).unwrap();
    assert_eq!(exit_code(bin().arg("bounds").arg("--config").arg(&cfg).arg("--out").arg(dir.path())), 2);
    assert_eq!(exit_code(bin().args(["reproduce", "1", "--step", "0.5", "--out"]).arg(dir.path())), 2);
}

#[test]
fn missing_certificate_exits_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("none.cfg");
    let text = EXAMPLE1
        .replace("a0 = 2.0\nharmonics = [{ j = 1, sin = 0.0, cos = 0.5 }]", "a0 = 0.0")
        .replace("kind = \"geometric\"\neps = 0.05", "kind = \"geometric\"\neps = 0.0");
    assert!(text.contains("[model.gammas.tail]\na0 = 0.0"));
    fs::write(&cfg, text).unwrap();
    let output = bin().arg("bounds").arg("--config").arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    let consts = fs::read_to_string(dir.path().join("constants.csv")).unwrap();
    assert!(consts.contains("verdict_gamma_star,FAILS"));
    assert!(consts.contains("verdict_gamma_double_star,FAILS"));
}

#[test]
fn unwritable_output_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    // a regular file in the way of the output directory
    assert_eq!(exit_code(bin().args(["reproduce", "2", "--out"]).arg(blocker.join("out"))), 3);
}
