use std::path::Path;

use spherical_cli::config::ExperimentConfig;
use spherical_cli::{bound_eval, gradcheck};

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("spherical").chain(args.iter().copied());
    let code = spherical_cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn synthetic_args<'a>(out_dir: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "train",
        "--out-dir",
        out_dir,
        "--set",
        "dataset=synthetic",
        "--set",
        "synthetic_classes=5",
        "--set",
        "synthetic_input_dim=4",
        "--set",
        "synthetic_n=600",
        "--set",
        "separation=3",
        "--set",
        "train_n=400",
        "--set",
        "valid_n=100",
        "--set",
        "test_n=100",
        "--set",
        "hidden=8",
        "--set",
        "batch_size=20",
        "--set",
        "max_epochs=3",
    ];
    v.extend_from_slice(extra);
    v
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]).0, 0);
    assert_eq!(run(&["--version"]).0, 0);
    assert_eq!(run(&["train", "--help"]).0, 0);
}

#[test]
fn bad_flags_exit_two() {
    assert_eq!(run(&["no-such-command"]).0, 2);
    assert_eq!(run(&["gradcheck", "--trials", "many"]).0, 2);
}

#[test]
fn unknown_loss_exits_two() {
    let (code, _, err) = run(&["gradcheck", "--loss", "log_cosine"]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("log_cosine"), "{err}");
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let (code, _, _) = run(&synthetic_args(d, &["--set", "loss=log_cosine"]));
    assert_eq!(code, 2);
}

#[test]
fn unknown_config_key_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(run(&synthetic_args(d, &["--set", "learning_rate=0.1"])).0, 2);
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, "loss=log_softmax\nloss=log_taylor\n").unwrap();
    assert_eq!(run(&["train", "--config", path.to_str().unwrap()]).0, 2);
}

#[test]
fn missing_dataset_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("nothing-here");
    let set = format!("data_dir={}", empty.display());
    let (code, _, err) = run(&["train", "--out-dir", dir.path().to_str().unwrap(), "--set", &set]);
    assert_eq!(code, 2);
    assert!(err.contains("train-images-idx3-ubyte"), "{err}");
}

#[test]
fn divergent_lr_exits_one_and_writes_abort_record() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let (code, _, err) = run(&synthetic_args(d, &["--set", "loss=mse", "--set", "lr=100"]));
    assert_eq!(code, 1, "{err}");
    assert!(err.contains("diverged"), "{err}");
    let abort = std::fs::read_to_string(dir.path().join("mse-lr100-seed0.abort.txt")).unwrap();
    assert!(abort.starts_with("status=diverged\n"), "{abort}");
}

#[test]
fn synthetic_training_writes_logs_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let (code, out, err) = run(&synthetic_args(
        d,
        &["--set", "loss=log_softmax,log_taylor", "--set", "lr=0.05", "--seeds", "2"],
    ));
    assert_eq!(code, 0, "{err}");
    assert!(out.lines().next().unwrap().contains("loss function"), "{out}");
    assert!(out.contains("log_taylor") && out.contains("log_softmax"), "{out}");
    for stem in ["log_softmax-lr0.05-seed0", "log_taylor-lr0.05-seed1"] {
        let epochs = std::fs::read_to_string(dir.path().join(format!("{stem}.epochs.csv"))).unwrap();
        assert_eq!(epochs.lines().next(), Some("epoch,lr,train_loss,valid_loss,valid_error"));
        assert_eq!(epochs.lines().count(), 4);
        let metrics = std::fs::read_to_string(dir.path().join(format!("{stem}.metrics.txt"))).unwrap();
        assert!(metrics.lines().any(|l| l.starts_with("test_error=")), "{metrics}");
    }
    let effective = std::fs::read_to_string(dir.path().join("effective.cfg")).unwrap();
    let cfg = ExperimentConfig::parse(&effective).unwrap();
    assert_eq!(cfg.seeds, 2);
    assert_eq!(cfg.synthetic_classes, 5);
}

#[test]
fn config_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.set("loss", "log_taylor,log_spherical").unwrap();
    cfg.set("lr", "0.1,0.02").unwrap();
    cfg.set("hidden", "32,16").unwrap();
    cfg.set("output_layer", "factored").unwrap();
    let path = dir.path().join("exp.cfg");
    std::fs::write(&path, cfg.to_text()).unwrap();
    let back = ExperimentConfig::parse(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back, cfg);
}

fn csv_header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn csv_outputs_have_fixed_headers() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.csv");
    let (code, _, err) = run(&["gradcheck", "--dims", "2,5", "--trials", "3", "--out", g.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(csv_header(&g), gradcheck::CSV_HEADER);
    // Six losses plus three spherical eps values, 2 dims, 3 trials.
    assert_eq!(std::fs::read_to_string(&g).unwrap().lines().count(), 1 + 9 * 2 * 3);

    let b = dir.path().join("b.csv");
    let (code, _, err) = run(&["bound-eval", "--samples", "5", "--dims", "3,7", "--out", b.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(csv_header(&b), bound_eval::CSV_HEADER);
    assert!(err.contains("mean gap optimized"), "{err}");

    let t = dir.path().join("t.csv");
    let (code, _, err) = run(&["bench", "--D-list", "10,20", "--d", "4", "--steps", "3", "--out", t.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let text = std::fs::read_to_string(&t).unwrap();
    assert_eq!(text.lines().next(), Some("impl,D,d,step_us_p50,step_us_p90,steps"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn bound_eval_probe_reports_negll() {
    let (code, _, err) = run(&["bound-eval", "--samples", "2", "--dims", "3", "--train-probe"]);
    assert_eq!(code, 0, "{err}");
    for key in ["probe_initial_negll=", "probe_final_negll=", "probe_final_bound="] {
        assert!(err.contains(key), "{err}");
    }
}
