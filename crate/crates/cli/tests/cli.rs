use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;
use valvenet::synth::{generate_phantom_sequence, PhantomConfig};
use valvenet::{
    save_sequence, Image2D, LandmarkSet, LandmarkSource, SequenceRecord, Spacing, ViewLabel,
};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_valvenet"))
        .args(args)
        .env_remove("VALVENET_DATA")
        .env_remove("VALVENET_OUT")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn phantom_file(dir: &Path, name: &str, cfg: &PhantomConfig) -> PathBuf {
    let rec = generate_phantom_sequence(cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let path = dir.join(name);
    save_sequence(&rec, &path).unwrap();
    path
}

fn synth(dir: &Path, subjects: &str) {
    let out = run(&[
        "synth",
        "--subjects",
        subjects,
        "--seed",
        "3",
        "--out",
        p(dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

/// Untrained tiny checkpoint from a two-subject dataset.
fn untrained_model(tmp: &Path) -> PathBuf {
    let data = tmp.join("data");
    synth(&data, "2");
    let run_dir = tmp.join("run");
    let out = run(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&run_dir),
        "--iterations",
        "0",
        "--model",
        "tiny",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    run_dir.join("model_final.vnck")
}

#[test]
fn help_lists_every_subcommand() {
    let text = stdout(&run(&["--help"]));
    for cmd in ["synth", "train", "eval", "predict", "metrics", "track"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn synth_without_out_is_usage_error() {
    assert_eq!(code(&run(&["synth", "--subjects", "2"])), 2);
}

#[test]
fn synth_is_deterministic_and_echoes_config() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, "2");
    synth(&b, "2");
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() > 100);
    for n in &names {
        assert_eq!(
            fs::read(a.join(n)).unwrap(),
            fs::read(b.join(n)).unwrap(),
            "{n:?} differs"
        );
    }
    let cfg: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(cfg["command"], "synth");
    assert_eq!(cfg["config"]["n_subjects"], 2);
    assert_eq!(cfg["config"]["seed"], 3);
}

#[test]
fn synth_output_from_env() {
    let tmp = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_valvenet"))
        .args(["synth", "--subjects", "2"])
        .env("VALVENET_DATA", tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(tmp.path().join("manifest.json").exists());
}

#[test]
fn zero_learning_rate_is_config_error() {
    let tmp = TempDir::new().unwrap();
    let out = run(&[
        "train",
        "--data",
        p(tmp.path()),
        "--out",
        p(&tmp.path().join("r")),
        "--learning-rate",
        "0",
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"train": {"iterations": 5, "learnign_rate": 0.1}}"#,
    )
    .unwrap();
    assert_eq!(code(&run(&["train", "--config", p(&cfg)])), 2);
    let toml = tmp.path().join("cfg.toml");
    fs::write(&toml, "[synth]\nsubjects = 3\n").unwrap();
    assert_eq!(
        code(&run(&[
            "synth",
            "--config",
            p(&toml),
            "--out",
            p(tmp.path())
        ])),
        2
    );
}

#[test]
fn toml_config_is_read() {
    let tmp = TempDir::new().unwrap();
    let toml = tmp.path().join("cfg.toml");
    fs::write(&toml, "[synth]\nn_subjects = 2\nseed = 11\n").unwrap();
    let out_dir = tmp.path().join("d");
    assert_eq!(
        code(&run(&["synth", "--config", p(&toml), "--out", p(&out_dir)])),
        0
    );
    let cfg: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("run_config.json")).unwrap())
            .unwrap();
    assert_eq!(cfg["config"]["seed"], 11);
}

#[test]
fn zero_iterations_writes_untrained_checkpoint_and_predicts_deterministically() {
    let tmp = TempDir::new().unwrap();
    let model = untrained_model(tmp.path());
    assert!(model.exists());
    assert!(tmp.path().join("run/run_config.json").exists());

    let input = tmp.path().join("data/subj-0000_CH2.json");
    let (o1, o2) = (tmp.path().join("p1"), tmp.path().join("p2"));
    for o in [&o1, &o2] {
        let out = run(&[
            "predict",
            "--model",
            p(&model),
            "--input",
            p(&input),
            "--out",
            p(o),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = fs::read(o1.join("subj-0000_CH2_pred.json")).unwrap();
    assert_eq!(a, fs::read(o2.join("subj-0000_CH2_pred.json")).unwrap());
    let rec: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(rec["source"], "predicted");
}

#[test]
fn predict_rejects_non_square_frames() {
    let tmp = TempDir::new().unwrap();
    let model = untrained_model(tmp.path());
    let frame = Image2D::zeros(48, 32, Spacing::isotropic(1.0));
    let rec = SequenceRecord {
        subject_id: "odd".into(),
        view: ViewLabel::Ch2,
        source: LandmarkSource::Predicted,
        frames: vec![frame],
        landmarks: vec![LandmarkSet::empty()],
        apex: None,
        ed_frame: 0,
        es_frame: None,
    };
    let path = tmp.path().join("odd.json");
    save_sequence(&rec, &path).unwrap();
    let out = run(&[
        "predict",
        "--model",
        p(&model),
        "--input",
        p(&path),
        "--out",
        p(&tmp.path().join("o")),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("shape"));
}

#[test]
fn eval_of_identical_annotations_is_zero() {
    let tmp = TempDir::new().unwrap();
    let seq = phantom_file(
        tmp.path(),
        "s.json",
        &PhantomConfig::for_view(ViewLabel::Ch4),
    );
    let out_dir = tmp.path().join("eval");
    let out = run(&[
        "eval",
        "--gt",
        p(&seq),
        "--pred",
        p(&seq),
        "--out",
        p(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("errors.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for r in rows {
        let f: Vec<&str> = r.split(',').collect();
        assert_eq!(f[0], "network");
        assert_eq!(f[3].parse::<f64>().unwrap(), 0.0);
        assert_eq!(f[4].parse::<f64>().unwrap(), 0.0);
    }
    assert!(out_dir.join("run_config.json").exists());
}

#[test]
fn inter_observer_label() {
    let tmp = TempDir::new().unwrap();
    let seq = phantom_file(
        tmp.path(),
        "s.json",
        &PhantomConfig::for_view(ViewLabel::Ch2),
    );
    let out = run(&[
        "eval",
        "--gt",
        p(&seq),
        "--pred",
        p(&seq),
        "--inter-observer",
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("inter-observer"));
}

#[test]
fn eval_dataset_directories_with_tracker_column() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "2");
    let out = run(&[
        "eval",
        "--gt",
        p(&data),
        "--pred",
        p(&data),
        "--with-tracker",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("network") && text.contains("tracker"));
    assert!(text.contains("network: mean of landmark means 0.000 px"));
}

#[test]
fn metrics_csv_columns_and_wrong_view() {
    let tmp = TempDir::new().unwrap();
    let ch2 = phantom_file(
        tmp.path(),
        "ch2.json",
        &PhantomConfig::for_view(ViewLabel::Ch2),
    );
    let out = run(&["metrics", "--input", p(&ch2), "--mapse"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("CH4"));

    let ch4 = phantom_file(
        tmp.path(),
        "ch4.json",
        &PhantomConfig::for_view(ViewLabel::Ch4),
    );
    let out = run(&["metrics", "--input", p(&ch4), "--mapse"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "subject,view,frame,strain_mitral,strain_aortic,strain_tricuspid,mapse_mm,tapse_mm"
    );
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first.len(), 8);
    assert_eq!(first[3].parse::<f64>().unwrap(), 0.0);
    assert!(first[4].is_empty());
    assert!((first[6].parse::<f64>().unwrap() - 12.0).abs() < 0.5);
}

#[test]
fn track_static_phantom_has_zero_error() {
    let tmp = TempDir::new().unwrap();
    let seq = phantom_file(
        tmp.path(),
        "still.json",
        &PhantomConfig::static_view(ViewLabel::Ch4),
    );
    let out_dir = tmp.path().join("t");
    let out = run(&[
        "track",
        "--input",
        p(&seq),
        "--init",
        "gt",
        "--out",
        p(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("tracking_errors.csv")).unwrap();
    for r in csv.lines().skip(1) {
        assert_eq!(
            r.split(',').nth(3).unwrap().parse::<f64>().unwrap(),
            0.0,
            "{r}"
        );
    }
    assert!(out_dir.join("still_tracked.json").exists());
}

#[test]
fn track_init_is_required() {
    let tmp = TempDir::new().unwrap();
    let seq = phantom_file(
        tmp.path(),
        "s.json",
        &PhantomConfig::static_view(ViewLabel::Ch2),
    );
    assert_eq!(
        code(&run(&["track", "--input", p(&seq), "--out", p(tmp.path())])),
        2
    );
    assert_eq!(
        code(&run(&[
            "track",
            "--input",
            p(&seq),
            "--init",
            "predicted",
            "--out",
            p(tmp.path())
        ])),
        2
    );
}
