use std::path::Path;
use std::process::{Command, Output};

fn sbvr(run_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbvr"))
        .args(args)
        .env("SBVR_RUN_DIR", run_dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = r#"
seed = 5

[data]
frame_size = 32
appearance_twin_clips = 4
motion_twin_clips = 4

[model]
convs = [[4, 3, 2], [8, 3, 2]]
hidden = 16
embedding_dim = 8
relation_hidden = [8]

[train]
epochs = 2
triplets_per_page = 1
batch = 8
mil_epochs = 1
mil_rounds = 1

[retrieval]
train_split = "all"
eval_split = "all"
"#;

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = sbvr(
        &dir.path().join("run"),
        &["generate", "--config", "/nonexistent/cfg.toml", "--out", "x"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("cannot read config"));
}

#[test]
fn unknown_arguments_and_missing_subcommand_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(sbvr(dir.path(), &["generate", "--bogus"]).status.code(), Some(2));
    assert_eq!(sbvr(dir.path(), &[]).status.code(), Some(2));
    assert_eq!(sbvr(dir.path(), &["evaluate", "--dataset", "d", "--mode", "nope"]).status.code(), Some(2));
}

#[test]
fn evaluate_without_a_run_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = sbvr(&dir.path().join("empty"), &["evaluate", "--dataset", "d"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("config.toml"));
}

#[test]
fn invalid_config_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[retrieval]\nlambda2 = 3.0\n").unwrap();
    let o = sbvr(
        &dir.path().join("run"),
        &["generate", "--config", cfg.to_str().unwrap(), "--out", "x"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let nowhere = dir.path().join("nowhere");
    let o = sbvr(
        &dir.path().join("run"),
        &["train", "--dataset", nowhere.to_str().unwrap(), "--config", cfg.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn full_pipeline_on_a_tiny_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let (cfg_s, data_s) = (cfg.to_str().unwrap(), data.to_str().unwrap());

    let o = sbvr(&run, &["generate", "--config", cfg_s, "--out", data_s]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("clips: 8"), "{out}");
    assert!(out.contains("manifest digest: "));
    // Regeneration is deterministic.
    let again = sbvr(&run, &["generate", "--config", cfg_s, "--out", dir.path().join("data2").to_str().unwrap()]);
    let digest = |s: &str| s.lines().find(|l| l.starts_with("manifest digest")).unwrap().to_string();
    assert_eq!(digest(&out), digest(&stdout(&again)));

    let o = sbvr(&run, &["train", "--dataset", data_s, "--config", cfg_s, "--stream", "both"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("appearance: 2 epochs"), "{}", stdout(&o));
    assert!(run.join("config.toml").exists());
    assert!(run.join("strong").join("motion.ckpt").exists());
    let log = std::fs::read_to_string(run.join("strong").join("appearance_log.csv")).unwrap();
    assert!(log.starts_with("iteration,stream,L_t,L_r,total,wall_ms"));

    // A second train with a different config into the same run directory is refused.
    let other = dir.path().join("other.toml");
    std::fs::write(&other, TINY.replace("seed = 5", "seed = 6")).unwrap();
    let o = sbvr(&run, &["train", "--dataset", data_s, "--config", other.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = sbvr(&run, &["evaluate", "--dataset", data_s, "--mode", "all", "--k", "1,5,10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    for mode in ["app", "motion", "rankfuse", "concat"] {
        assert!(out.contains(&format!("{mode}: acc@1")), "{out}");
        assert!(run.join("strong").join(format!("results_{mode}.csv")).exists());
    }
    let results = std::fs::read_to_string(run.join("strong").join("results_concat.csv")).unwrap();
    assert!(results.starts_with("query_id,rank,clip_id,distance,mode"));
    assert_eq!(results.lines().count(), 1 + 8 * 8);

    let o = sbvr(&run, &["detect", "--dataset", data_s, "--mode", "concat"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("within 5 frames"));
    assert_eq!(sbvr(&run, &["detect", "--dataset", data_s, "--mode", "rankfuse"]).status.code(), Some(2));

    // Evaluating a variant that was never trained names the missing checkpoint.
    let o = sbvr(&run, &["evaluate", "--dataset", data_s, "--supervision", "weak"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing checkpoint"));

    let o = sbvr(&run, &["train", "--dataset", data_s, "--supervision", "weak", "--no-relation"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("MIL round"), "{}", stdout(&o));
    assert!(run.join("weak-norel").join("motion_mil.json").exists());
    let o = sbvr(&run, &["evaluate", "--dataset", data_s, "--supervision", "weak", "--no-relation"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let o = sbvr(&run, &["report"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = stdout(&o);
    assert!(report.contains("| strong | concat |"));
    assert!(report.contains("| weak | app | absent"), "{report}");
    assert!(run.join("report.csv").exists());
}

#[test]
fn resume_of_a_finished_run_keeps_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let (cfg_s, data_s) = (cfg.to_str().unwrap(), data.to_str().unwrap());
    assert!(sbvr(&run, &["generate", "--config", cfg_s, "--out", data_s]).status.success());

    let o = sbvr(&run, &["train", "--dataset", data_s, "--config", cfg_s, "--stream", "appearance"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = run.join("strong").join("appearance.ckpt");
    let before = std::fs::read(&ckpt).unwrap();
    let o = sbvr(&run, &["train", "--dataset", data_s, "--stream", "appearance", "--resume"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(&ckpt).unwrap(), before);

    // A checkpoint from another config is refused on resume.
    let other = dir.path().join("other");
    std::fs::create_dir_all(other.join("strong")).unwrap();
    std::fs::write(other.join("config.toml"), TINY.replace("epochs = 2", "epochs = 3")).unwrap();
    std::fs::copy(&ckpt, other.join("strong").join("appearance.ckpt")).unwrap();
    let o = sbvr(&other, &["train", "--dataset", data_s, "--stream", "appearance", "--resume"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("written under config"));
}
