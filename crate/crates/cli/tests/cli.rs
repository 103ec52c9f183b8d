//! End-to-end tests of the `lgsa` binary: exit codes, dry-run idempotence,
//! deterministic data generation, and cross-command consistency.

use std::path::Path;
use std::process::{Command, Output};

fn lgsa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lgsa"))
        .args(args)
        .output()
        .expect("failed to spawn lgsa")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn dir_snapshot(path: &Path) -> Vec<String> {
    if !path.exists() {
        return vec![];
    }
    let mut names: Vec<String> = walk(path)
        .into_iter()
        .map(|p| p.strip_prefix(path).unwrap().display().to_string())
        .collect();
    names.sort();
    names
}

fn walk(path: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    if let Ok(entries) = std::fs::read_dir(path) {
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
    }
    out
}

#[test]
fn unknown_subcommand_and_flag_exit_one_with_usage() {
    let out = lgsa(&["frobnicate"]);
    assert_exit(&out, 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unknown subcommand"));
    assert!(err.contains("usage:"));

    let out = lgsa(&["train", "--no-such-flag", "4"]);
    assert_exit(&out, 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key `no-such-flag`"));
}

#[test]
fn dry_run_prints_config_and_touches_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("never");
    let out = lgsa(&[
        "gen-data",
        "--out",
        out_dir.to_str().unwrap(),
        "--volumes",
        "2",
        "--dry-run",
    ]);
    assert_exit(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("subcommand = gen-data"));
    assert!(stdout.contains("volumes = 2"));
    assert!(!out_dir.exists(), "dry-run must not create the out dir");
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out_dir in [&a, &b] {
        let out = lgsa(&[
            "gen-data",
            "--volumes",
            "3",
            "--depth",
            "4",
            "--size",
            "16",
            "--seed",
            "7",
            "--data_seed",
            "7",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_exit(&out, 0);
    }
    let names = dir_snapshot(&a);
    assert_eq!(names.iter().filter(|n| n.ends_with(".lgsv")).count(), 3);
    assert_eq!(names, dir_snapshot(&b));
    for name in names.iter().filter(|n| n.ends_with(".lgsv")) {
        let fa = std::fs::read(a.join(name)).unwrap();
        let fb = std::fs::read(b.join(name)).unwrap();
        assert_eq!(fa, fb, "{name} differs between identical runs");
    }
}

#[test]
fn config_file_loads_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "volumes = 5\nsize = 16\n# comment\ndepth = 4\n").unwrap();
    let out = lgsa(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--volumes",
        "2",
        "--dry-run",
    ]);
    assert_exit(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("volumes = 2"), "flag must override file");
    assert!(stdout.contains("size = 16"), "file value must load");

    std::fs::write(&cfg, "volume_count = 5\n").unwrap();
    let out = lgsa(&["gen-data", "--config", cfg.to_str().unwrap()]);
    assert_exit(&out, 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key `volume_count`"));
}

// Full pipeline at miniature scale: train -> eval -> export-masks, with the
// export DSC matching eval output for the same volume.
#[test]
fn train_eval_export_pipeline_is_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let run_dir = dir.path().join("run");
    let eval_dir = dir.path().join("eval");
    let masks_dir = dir.path().join("masks");

    // Tiny corpus: 5 volumes of 5 slices at 16x16.
    let common = [
        "--volumes",
        "5",
        "--depth",
        "5",
        "--size",
        "16",
        "--data_seed",
        "3",
    ];
    let mut args = vec!["gen-data", "--out", data_dir.to_str().unwrap()];
    args.extend_from_slice(&common);
    assert_exit(&lgsa(&args), 0);

    // Train a tiny plain UNet for 2 epochs on that corpus.
    let mut args = vec![
        "train",
        "--model",
        "unet",
        "--net_depth",
        "3",
        "--base_channels",
        "4",
        "--epochs",
        "2",
        "--patience",
        "1",
        "--batch_size",
        "2",
        "--data_dir",
        data_dir.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ];
    args.extend_from_slice(&common);
    let out = lgsa(&args);
    assert_exit(&out, 0);

    // Locate the run directory and its artifacts.
    let runs: Vec<_> = std::fs::read_dir(run_dir.join("runs"))
        .unwrap()
        .flatten()
        .map(|e| e.path())
        .collect();
    assert_eq!(runs.len(), 1);
    let run = &runs[0];
    for artifact in ["config.txt", "curve.csv", "best.ckpt", "metrics.csv", "table3.csv", "record.txt"] {
        assert!(run.join(artifact).exists(), "missing {artifact}");
    }
    let ckpt = run.join("best.ckpt");

    // Evaluate the checkpoint on the same corpus/split.
    let mut args = vec![
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data_dir",
        data_dir.to_str().unwrap(),
        "--batch_size",
        "2",
        "--out",
        eval_dir.to_str().unwrap(),
    ];
    args.extend_from_slice(&common);
    let out = lgsa(&args);
    assert_exit(&out, 0);
    let metrics = std::fs::read_to_string(eval_dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("volume,slice,class,seed,dsc,hd95,f1,precision,recall,empty_flag"));

    // Export masks for one test volume; D=5 -> 3 interior slices.
    let volume_file = data_dir.join("volume_0000.lgsv");
    let out = lgsa(&[
        "export-masks",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--volume",
        volume_file.to_str().unwrap(),
        "--out",
        masks_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let files = dir_snapshot(&masks_dir);
    let preds: Vec<_> = files.iter().filter(|f| f.ends_with("_pred.pgm")).collect();
    let inputs: Vec<_> = files.iter().filter(|f| f.ends_with("_input.pgm")).collect();
    assert_eq!(preds.len(), 3, "D=5 volume must yield 3 prediction masks");
    assert_eq!(inputs.len(), 3);
    // PGM dimensions match the volume.
    let pgm = std::fs::read(masks_dir.join(preds[0])).unwrap();
    assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
    assert_eq!(pgm.len(), 13 + 256);

    // Cross-command consistency: export DSC equals eval DSC for the same
    // volume and slices.
    let dsc_csv = std::fs::read_to_string(masks_dir.join("dsc.csv")).unwrap();
    let eval_csv = std::fs::read_to_string(eval_dir.join("metrics.csv")).unwrap();
    let parse = |text: &str| -> Vec<(u32, usize, f64)> {
        text.lines()
            .skip(1)
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                (f[0].parse().unwrap(), f[1].parse().unwrap(), f[4].parse().unwrap())
            })
            .collect()
    };
    let exported = parse(&dsc_csv);
    let evaluated = parse(&eval_csv);
    let mut compared = 0;
    for (vol, slice, dsc) in &exported {
        for (evol, eslice, edsc) in &evaluated {
            if evol == vol && eslice == slice {
                assert!(
                    (dsc - edsc).abs() < 1e-9,
                    "volume {vol} slice {slice}: export {dsc} vs eval {edsc}"
                );
                compared += 1;
            }
        }
    }
    // Volume 0 may or may not land in the test split; when it does the
    // records must agree. Either way the export itself produced 3 slices.
    assert_eq!(exported.len(), 3);
    if compared > 0 {
        assert_eq!(compared, 3);
    }
}

// Tiny ablation: table4 over one seed at miniature scale produces the
// 4-row CSV with the published reference column.
#[test]
fn ablate_smoke_emits_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("ab");
    let out = lgsa(&[
        "ablate",
        "--grid",
        "table4",
        "--seeds",
        "0",
        "--volumes",
        "4",
        "--depth",
        "4",
        "--size",
        "16",
        "--net_depth",
        "3",
        "--base_channels",
        "2",
        "--sa_count",
        "2",
        "--lg_enabled",
        "1,1,1",
        "--epochs",
        "2",
        "--patience",
        "1",
        "--batch_size",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let csv = std::fs::read_to_string(out_dir.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5, "header + 4 rows:\n{csv}");
    assert!(lines[0].starts_with("grid,config,paper_ref_dsc,mean_dsc"));
    for (row, name, reference) in [
        (1, "unet", "90"),
        (2, "unet+lg", "91.16"),
        (3, "unet+sa", "91.7"),
        (4, "unet+lg+sa", "92.22"),
    ] {
        assert!(lines[row].contains(name), "row {row}: {}", lines[row]);
        assert!(lines[row].contains(reference), "row {row}: {}", lines[row]);
    }
    assert!(out_dir.join("boxdata.csv").exists());
    // Re-running reuses the cached runs and reproduces the same CSV.
    let before = std::fs::read_to_string(out_dir.join("ablation.csv")).unwrap();
    let out = lgsa(&[
        "ablate",
        "--grid",
        "table4",
        "--seeds",
        "0",
        "--volumes",
        "4",
        "--depth",
        "4",
        "--size",
        "16",
        "--net_depth",
        "3",
        "--base_channels",
        "2",
        "--sa_count",
        "2",
        "--lg_enabled",
        "1,1,1",
        "--epochs",
        "2",
        "--patience",
        "1",
        "--batch_size",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    assert_eq!(
        before,
        std::fs::read_to_string(out_dir.join("ablation.csv")).unwrap()
    );
}

#[test]
fn gradcheck_scale_validation() {
    let out = lgsa(&["gradcheck", "--scale", "huge"]);
    assert_exit(&out, 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown scale"));
}
