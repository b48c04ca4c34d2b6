use std::path::Path;
use std::process::{Command, Output};

fn rfnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfnn")).args(args).output().expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn data_rows(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

const SMALL: [&str; 10] = [
    "--override", "M=30", "--override", "burn_in=5", "--override", "N=300", "--override", "N_test=200", "--override",
    "L=2",
];

#[test]
fn preset_reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let mut args = vec!["train", "preset:multiscale", "--seed", "7", "--out", dir.path().to_str().unwrap()];
        args.extend(SMALL);
        let out = rfnn(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let log = String::from_utf8(out.stdout).unwrap();
        assert_eq!(log.lines().filter(|l| l.starts_with("block ")).count(), 2);
    }
    for name in ["convergence.csv", "trace.csv", "histogram.csv", "predictions.csv", "network.toml"] {
        let text = read(a.path(), name);
        assert!(text.starts_with("# rfnn "), "{name}");
        assert!(text.contains("# seed = 7\n"), "{name}");
        assert_eq!(text, read(b.path(), name), "{name}");
    }
    // Every CSV field parses, floats carry 17 significant digits.
    let conv = read(a.path(), "convergence.csv");
    let first = data_rows(&conv)[0];
    let mantissa = first.split(',').nth(2).unwrap().split('e').next().unwrap().replace(['.', '-'], "");
    assert_eq!(mantissa.len(), 17);
}

#[test]
fn single_block_config_reports_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("one.toml");
    std::fs::write(&cfg, "[experiment]\nN = 100\nN_test = 50\n[target]\nname = \"stairstep\"\n[train]\nL = 1\nM = 20\nW = 3\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = rfnn(&["train", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(data_rows(&read(&out_dir, "convergence.csv")).len(), 1);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = rfnn(&["train", "preset:multiscale", "--override", "lambda=-1", "--out", out_dir]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error: kind=invalid_config field=lambda "), "{err}");
    for args in [
        vec!["train", "preset:nope", "--out", out_dir],
        vec!["train", "/nonexistent/config.toml", "--out", out_dir],
        vec!["train", "preset:multiscale", "--override", "bogus=1", "--out", out_dir],
        vec!["train", "preset:multiscale", "--jobs", "0", "--out", out_dir],
        vec!["oracle", "preset:sine3d", "--out", out_dir],
    ] {
        assert_eq!(rfnn(&args).status.code(), Some(2), "{args:?}");
    }
    // Usage errors are config errors too.
    assert_eq!(rfnn(&["train"]).status.code(), Some(2));
}

#[test]
fn oracle_reports_and_fails_on_empty_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let out = rfnn(&["oracle", "preset:multiscale", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read(dir.path(), "oracle_report.csv");
    for (check, omega) in [("spectrum_peak_1", 4.0), ("spectrum_peak_2", 70.0), ("spectrum_peak_3", 150.0)] {
        let row = data_rows(&report).into_iter().find(|l| l.starts_with(check)).unwrap().to_string();
        assert_eq!(row.split(',').nth(1).unwrap().parse::<f64>().unwrap(), omega);
    }
    assert!(!report.contains(",fail"));

    let out = rfnn(&["oracle", "preset:multiscale", "--override", "target.name=zero", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("kind=empty_spectrum"));
}

#[test]
fn compare_and_jobs_produce_joined_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["compare", "preset:stairstep", "--jobs", "2", "--out", dir.path().to_str().unwrap()];
    args.extend(SMALL);
    let out = rfnn(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let merged = read(dir.path(), "merged_compare.csv");
    let rows = data_rows(&merged);
    assert_eq!(rows.len(), 4);
    let header = merged.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(
        header,
        "job,seed,block,method1_WL,method1_train_mse,method1_test_mse,method2_WL,method2_train_mse,method2_test_mse"
    );
    assert!(rows[0].starts_with("0,0,1,6,"));
    assert!(dir.path().join("job_1").join("compare.csv").exists());
}
