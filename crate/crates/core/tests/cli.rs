use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_glocal-ib"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Tiny synthetic dataset plus a config for a short run in `dir/run`.
fn setup(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data.csv");
    ok(&[
        "synth",
        "--vars",
        "3",
        "--steps",
        "300",
        "--seed",
        "4",
        "--out",
        s(&data),
    ]);
    let cfg = dir.join("run.conf");
    std::fs::write(
        &cfg,
        format!(
            "data.source = {}\nwindow.length = 24\nmodel.d_model = 8\ntrain.epochs = 3\n\
             train.batch_size = 8\noutput_dir = {}\n",
            s(&data),
            s(&dir.join("run"))
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn synth_writes_header_plus_rows_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        ok(&[
            "synth",
            "--vars",
            "7",
            "--steps",
            "2000",
            "--seed",
            "1",
            "--out",
            s(p),
        ]);
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 2001);
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let side = std::fs::read_to_string(dir.path().join("a.csv.provenance")).unwrap();
    assert!(side.contains("seed = 1"));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "synth",
        "--vars",
        "0",
        "--steps",
        "10",
        "--out",
        s(&dir.path().join("x.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(&["train", "--config", s(&dir.path().join("missing.conf"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.conf"));

    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));

    let cfg = setup(dir.path());
    let out = run(&["train", "--config", s(&cfg), "--override", "train.epochs=0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_eval_export_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let run_dir = dir.path().join("run");

    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--override",
        "train.weights.alpha=0",
    ]);
    for f in [
        "model.ckpt",
        "training_log.csv",
        "history.csv",
        "config.resolved",
    ] {
        assert!(run_dir.join(f).is_file(), "{f} missing");
    }
    let resolved = std::fs::read_to_string(run_dir.join("config.resolved")).unwrap();
    assert!(resolved.contains("train.weights.alpha = 0\n"));
    let log = std::fs::read_to_string(run_dir.join("training_log.csv")).unwrap();
    assert!(log.starts_with("epoch,step,reg,loc,glo,total\n"));

    ok(&[
        "eval",
        "--config",
        s(&cfg),
        "--rates",
        "0.1,0.3,0.5,0.7,0.9",
    ]);
    let report = std::fs::read_to_string(run_dir.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 6);
    assert!(report.starts_with("pattern,rate,mae,mse,n_points\n"));

    // Second full train + eval into another directory gives identical reports.
    let other = dir.path().join("again");
    let over = format!("output_dir={}", s(&other));
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--override",
        "train.weights.alpha=0",
        "--override",
        &over,
    ]);
    ok(&[
        "eval",
        "--config",
        s(&cfg),
        "--rates",
        "0.1,0.3,0.5,0.7,0.9",
        "--override",
        &over,
    ]);
    assert_eq!(
        std::fs::read(run_dir.join("report.csv")).unwrap(),
        std::fs::read(other.join("report.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(run_dir.join("model.ckpt")).unwrap(),
        std::fs::read(other.join("model.ckpt")).unwrap()
    );

    ok(&["export-latents", "--config", s(&cfg)]);
    let lat = std::fs::read_to_string(run_dir.join("latents.csv")).unwrap();
    // 60 test rows / 24 = 2 windows, 3 variables, 2 branches
    assert_eq!(lat.lines().count(), 1 + 2 * 2 * 3);

    // Model dimensions that disagree with the checkpoint.
    let out = run(&[
        "eval",
        "--config",
        s(&cfg),
        "--override",
        "model.d_model=16",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match"));
}

#[test]
fn impute_fills_gaps_and_passes_observed_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    ok(&["train", "--config", s(&cfg)]);
    let ckpt = dir.path().join("run/model.ckpt");
    let data = dir.path().join("data.csv");

    let full_out = dir.path().join("full_out.csv");
    ok(&[
        "impute",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&data),
        "--output",
        s(&full_out),
    ]);
    assert_eq!(
        std::fs::read(&data).unwrap(),
        std::fs::read(&full_out).unwrap()
    );

    let original = std::fs::read_to_string(&data).unwrap();
    let holed: String = original
        .lines()
        .enumerate()
        .map(|(i, line)| {
            if i > 0 && i % 7 == 0 {
                let mut cells: Vec<&str> = line.split(',').collect();
                cells[i % 3] = "";
                cells.join(",") + "\n"
            } else {
                format!("{line}\n")
            }
        })
        .collect();
    let holed_path = dir.path().join("holed.csv");
    std::fs::write(&holed_path, &holed).unwrap();
    let filled_path = dir.path().join("filled.csv");
    ok(&[
        "impute",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&holed_path),
        "--output",
        s(&filled_path),
    ]);
    let filled = std::fs::read_to_string(&filled_path).unwrap();
    assert_eq!(filled.lines().count(), holed.lines().count());
    assert_eq!(filled.lines().next(), holed.lines().next());
    for (a, b) in filled.lines().zip(holed.lines()).skip(1) {
        let (fa, fb): (Vec<&str>, Vec<&str>) = (a.split(',').collect(), b.split(',').collect());
        assert_eq!(fa.len(), fb.len());
        for (x, y) in fa.iter().zip(&fb) {
            assert!(!x.is_empty());
            if !y.is_empty() {
                assert_eq!(x, y);
            } else {
                assert!(x.parse::<f64>().unwrap().is_finite());
            }
        }
    }
}

#[test]
fn ablate_prints_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = ok(&[
        "--threads",
        "2",
        "ablate",
        "--config",
        s(&cfg),
        "--rates",
        "0.5",
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("rate 0.5"));
    assert!(stdout.contains("only_loc"));
    let grid = std::fs::read_to_string(dir.path().join("run/ablation.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 4);
}
