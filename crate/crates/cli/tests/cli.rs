//! Runs the `hebbnet` binary end to end on synthetic data.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CONV_SPEC: &str = "input 3x32x32
seed 3
conv 4 5x5 stride 2x2 hpca-relu
relu
maxpool 2
flatten
dense 6 hpca-relu
relu
probe 4
";

fn hebbnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hebbnet"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

/// Trains the linear dense reference on the 1x3x3 Gaussian set.
fn train_dense(dir: &Path, tag: &str, extra: &[&str]) -> (PathBuf, PathBuf) {
    let (ckpt, report) = (
        path(dir, &format!("{tag}.ckpt")),
        path(dir, &format!("{tag}.txt")),
    );
    let mut args = vec![
        "train",
        "--dataset",
        "synthetic",
        "--limit",
        "300,60,60",
        "--spec",
        "reference-dense",
        "--epochs",
        "3",
        "--out",
        &ckpt,
        "--report",
        &report,
    ];
    args.extend_from_slice(extra);
    let out = hebbnet(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    (ckpt.into(), report.into())
}

fn train_conv(dir: &Path) -> PathBuf {
    let spec = path(dir, "conv.spec");
    fs::write(&spec, CONV_SPEC).unwrap();
    let ckpt = path(dir, "conv.ckpt");
    let out = hebbnet(&[
        "train",
        "--dataset",
        "synthetic-images",
        "--limit",
        "16,8,8",
        "--spec",
        &spec,
        "--epochs",
        "1",
        "--batch-size",
        "8",
        "--out",
        &ckpt,
        "--report",
        &path(dir, "conv.txt"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    ckpt.into()
}

#[test]
fn train_report_echoes_defaults_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out = hebbnet(&[
        "train",
        "--dataset",
        "synthetic",
        "--limit",
        "100,20,20",
        "--spec",
        "reference-dense",
        "--out",
        &path(dir.path(), "d.ckpt"),
        "--report",
        &path(dir.path(), "d.txt"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("d.txt")).unwrap();
    for line in [
        "config.epochs=20",
        "config.batch_size=64",
        "config.eta_hebbian=1e-3",
        "config.early_stopping=true",
    ] {
        assert!(
            text.lines().any(|l| l == line),
            "missing `{line}` in\n{text}"
        );
    }
    assert!(text.contains("\n[deviations]\nprobe_optimizer="));
    assert!(text.contains("alignment.min="));

    let (c1, r1) = train_dense(dir.path(), "a", &[]);
    let (c2, r2) = train_dense(dir.path(), "b", &["--sequential"]);
    assert_eq!(fs::read(&r1).unwrap(), fs::read(&r2).unwrap());
    assert_eq!(fs::read(&c1).unwrap(), fs::read(&c2).unwrap());
}

#[test]
fn retrain_from_layer_zero_reproduces_the_trained_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, _) = train_dense(dir.path(), "t", &[]);
    let again = path(dir.path(), "r.ckpt");
    let out = hebbnet(&[
        "retrain",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--from-layer",
        "0",
        "--dataset",
        "synthetic",
        "--limit",
        "300,60,60",
        "--epochs",
        "3",
        "--out",
        &again,
        "--report",
        &path(dir.path(), "r.txt"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(&again).unwrap());
    let report = fs::read_to_string(dir.path().join("r.txt")).unwrap();
    assert!(report.starts_with("command=retrain\nfrom_layer=0\n"));

    let out = hebbnet(&[
        "retrain",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--from-layer",
        "1",
        "--dataset",
        "synthetic",
        "--out",
        &again,
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn probe_all_writes_one_row_per_tap() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_conv(dir.path());
    let report = path(dir.path(), "p.txt");
    let out = hebbnet(&[
        "probe",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--dataset",
        "synthetic-images",
        "--limit",
        "16,8,8",
        "--probe-epochs",
        "2",
        "--report",
        &report,
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(&report).unwrap();
    let table: Vec<&str> = text
        .split("\n[layers]\n")
        .nth(1)
        .unwrap()
        .lines()
        .take_while(|l| !l.is_empty())
        .collect();
    assert_eq!(
        table[0],
        "layer,name,feat_dim,chosen_epoch,val_accuracy,test_accuracy"
    );
    assert_eq!(table.len(), 3);
    // conv 5x5 stride 2 on 32x32 gives 14x14, pooled to 7x7
    assert!(
        table[1].starts_with(&format!("1,conv1,{},", 4 * 7 * 7)),
        "{}",
        table[1]
    );
    assert!(table[2].starts_with("2,dense2,6,"), "{}", table[2]);
    assert!(text.contains("checkpoint.checksum="));
    assert!(text.contains("\n[epochs.layer2]\n"));

    let input = hebbnet(&[
        "probe",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--layer",
        "0",
        "--dataset",
        "synthetic-images",
        "--limit",
        "16,8,8",
        "--probe-epochs",
        "1",
    ]);
    assert_eq!(code(&input), 0, "{}", stderr(&input));
    assert!(String::from_utf8_lossy(&input.stdout).contains("\n0,input,3072,"));
    let out = hebbnet(&[
        "probe",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--layer",
        "3",
        "--dataset",
        "synthetic-images",
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    // dataset shape does not match the checkpoint
    let out = hebbnet(&[
        "probe",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--dataset",
        "synthetic",
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn inspect_writes_one_image_per_filter() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_conv(dir.path());
    let out_dir = dir.path().join("filters");
    let out = hebbnet(&[
        "inspect",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--layer",
        "1",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut names: Vec<String> = fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "filter_000.ppm",
            "filter_001.ppm",
            "filter_002.ppm",
            "filter_003.ppm"
        ]
    );
    let bytes = fs::read(out_dir.join("filter_000.ppm")).unwrap();
    let header = b"P6\n5 5\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(bytes.len(), header.len() + 5 * 5 * 3);
    assert!(bytes[header.len()..].contains(&0) && bytes[header.len()..].contains(&255));

    let dense = hebbnet(&[
        "inspect",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--layer",
        "2",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&dense), 2);
    let none = hebbnet(&[
        "inspect",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--layer",
        "0",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&none), 2);
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = path(dir.path(), "x.ckpt");

    assert_eq!(
        code(&hebbnet(&["train", "--dataset", "cifar10", "--out", &ckpt])),
        2
    );
    assert_eq!(
        code(&hebbnet(&[
            "train",
            "--dataset",
            "synthetic",
            "--bogus",
            "--out",
            &ckpt
        ])),
        2
    );
    assert_eq!(
        code(&hebbnet(&[
            "train",
            "--dataset",
            "synthetic",
            "--limit",
            "1,x",
            "--out",
            &ckpt
        ])),
        2
    );
    assert_eq!(
        code(&hebbnet(&[
            "train",
            "--dataset",
            "synthetic",
            "--batch-size",
            "0",
            "--out",
            &ckpt
        ])),
        2
    );

    let missing = dir.path().join("missing");
    let out = hebbnet(&[
        "train",
        "--dataset",
        "mnist",
        "--data-dir",
        missing.to_str().unwrap(),
        "--out",
        &ckpt,
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    let out = hebbnet(&["probe", "--checkpoint", &ckpt, "--dataset", "synthetic"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    fs::write(&ckpt, b"HEBBNET1 but not really").unwrap();
    let out = hebbnet(&["probe", "--checkpoint", &ckpt, "--dataset", "synthetic"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));

    let out = hebbnet(&[
        "train",
        "--dataset",
        "synthetic",
        "--limit",
        "64,8,8",
        "--spec",
        "reference-dense",
        "--eta",
        "1e6",
        "--out",
        &ckpt,
    ]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}
