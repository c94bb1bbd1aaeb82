//! Smoke tests of the `sslkd` binary itself: verbs, stdout shape and the
//! documented exit codes (0 success, 2 config error, 3 runtime failure).

use std::fs;
use std::path::Path;
use std::process::Command;

fn sslkd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sslkd"))
}

fn tiny_config_toml(dir: &Path) -> String {
    format!(
        r#"
seed = 3

[dataset]
source = "synthetic"
root = "{root}/data"
n_scenes = 14
n_labelled = 2
unlabelled_ratio = 4
n_val = 2

[dataset.scene]
image_size = 32

[models.teacher1]
family = "dilated_pyramid"
backbone_depth = "deep"
base_channels = 8
n_classes = 2
feature_tap_channels = 32
input_size = 32

[models.teacher2]
family = "pool_index"
backbone_depth = "deep"
base_channels = 8
n_classes = 2
feature_tap_channels = 32
input_size = 32

[models.student]
family = "dilated_pyramid"
backbone_depth = "shallow"
base_channels = 8
n_classes = 2
feature_tap_channels = 32
input_size = 32

[stages.teacher_supervised]
max_iters = 2
distill_warmup_iters = 0

[stages.cross_model]
max_iters = 2
distill_warmup_iters = 0

[stages.student_supervised]
max_iters = 2
distill_warmup_iters = 0

[stages.sslkd]
max_iters = 2
distill_warmup_iters = 1

[output]
run_dir = "{root}/run"
"#,
        root = dir.display()
    )
}

#[test]
fn run_report_eval_and_gen_data_verbs_work() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("exp.toml");
    fs::write(&config_path, tiny_config_toml(dir.path())).unwrap();

    // run
    let out = sslkd().arg("run").arg(&config_path).output().unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Student (SSLKD)"), "{stdout}");

    // report re-emits the table
    let out = sslkd()
        .arg("report")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("Teacher #1"));

    // gen-data materializes PNGs under dataset.root
    let out = sslkd().arg("gen-data").arg(&config_path).output().unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        fs::read_dir(dir.path().join("data/images"))
            .unwrap()
            .count(),
        14
    );
    assert_eq!(
        fs::read_dir(dir.path().join("data/masks")).unwrap().count(),
        14
    );

    // eval scores a checkpoint over that directory
    let ckpt = dir.path().join("run/checkpoints/student_sslkd.ckpt");
    let out = sslkd()
        .arg("eval")
        .arg(&ckpt)
        .arg(dir.path().join("data"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("IoU"));

    // resume over the finished run retrains nothing
    let out = sslkd()
        .arg("resume")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[resume]"));
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("bad.toml");
    fs::write(&config_path, "seed = \"not a number\"\n").unwrap();
    let out = sslkd().arg("run").arg(&config_path).output().unwrap();
    assert_eq!(
        out.status.code(),
        Some(2),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    // a validating-but-impossible config also exits 2
    let mut text = tiny_config_toml(dir.path());
    text = text.replace("n_scenes = 14", "n_scenes = 5");
    fs::write(&config_path, text).unwrap();
    let out = sslkd().arg("run").arg(&config_path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    // eval on a file that is not a checkpoint
    let fake = dir.path().join("fake.ckpt");
    fs::write(&fake, b"junk").unwrap();
    let out = sslkd()
        .arg("eval")
        .arg(&fake)
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    // report on a directory without a manifest
    let out = sslkd().arg("report").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}
