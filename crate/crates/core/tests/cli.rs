use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
experiment_id = "small"

[dgp]
d = 5
n = 250
test_n = 200
seed = 3

[ebm]
k = 2
b = 3
hidden = [8, 8]
epochs = 3

[learners]
kinds = ["t", "x", "dr", "r"]
base = "ridge"

[eval]
runs = 2
"#;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cate-ebm"))
        .args(args)
        .env("CATE_EBM_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes the config and returns (config path, out root).
fn setup(dir: &Path, toml: &str) -> (PathBuf, PathBuf) {
    let cfg = dir.join("cfg.toml");
    fs::write(&cfg, toml).unwrap();
    (cfg, dir.join("out"))
}

fn only_subdir(root: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

fn line_count(p: &Path) -> usize {
    fs::read_to_string(p).unwrap().lines().count()
}

#[test]
fn gen_data_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let (cfg, _) = setup(t.path(), SMALL);
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&b)]);
    let (da, db) = (only_subdir(&a), only_subdir(&b));
    assert!(da.file_name().unwrap().to_str().unwrap().starts_with("small-"));
    for f in ["train.csv", "test.csv", "config.toml"] {
        assert_eq!(fs::read(da.join(f)).unwrap(), fs::read(db.join(f)).unwrap(), "{f}");
    }
    assert_eq!(line_count(&da.join("train.csv")), 251);
    assert_eq!(line_count(&da.join("test.csv")), 201);

    ok(&["gen-data", "--config", s(&cfg), "--out", s(&b), "--seed", "4"]);
    assert_eq!(fs::read_dir(&b).unwrap().count(), 2);
}

#[test]
fn invalid_inputs_exit_2() {
    let t = tempfile::tempdir().unwrap();
    let (cfg, out) = setup(t.path(), &SMALL.replace("n = 250", "n = 1"));
    let r = cli(&["gen-data", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&r), 2, "{}", stderr(&r));

    let (cfg, out) = setup(t.path(), &SMALL.replace("epochs = 3", "epochs = 3\nwidth = 4"));
    let r = cli(&["gen-data", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("width"), "{}", stderr(&r));

    let r = cli(&["pipeline", "--preset", "no_such_preset"]);
    assert_eq!(code(&r), 2);

    let r = cli(&["transform", "--model", s(&t.path().join("missing.preb")), "--data", s(&cfg)]);
    assert_eq!(code(&r), 2);
}

#[test]
fn fit_transform_and_cate_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let (cfg, out) = setup(t.path(), SMALL);
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&out)]);
    let exp = only_subdir(&out);
    let (train, test) = (exp.join("train.csv"), exp.join("test.csv"));

    let msg = ok(&["fit-ebm", "--config", s(&cfg), "--out", s(&out), "--train", s(&train)]);
    assert!(msg.contains("chance level 1.386294"), "{msg}");
    let model = exp.join("model.preb");
    assert!(model.is_file());
    let log = fs::read_to_string(exp.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 5);
    assert!(log.lines().nth(1).unwrap().starts_with("0,,"), "{log}");

    let repr = t.path().join("repr.csv");
    ok(&["transform", "--model", s(&model), "--data", s(&train), "--out", s(&repr), "--config", s(&cfg)]);
    let rows: Vec<Vec<f64>> = fs::read_to_string(&repr)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 250);
    for c in 0..2 {
        let m = rows.iter().map(|r| r[c]).sum::<f64>() / rows.len() as f64;
        assert!(m.abs() < 1e-9, "column {c} mean {m}");
    }
    let test_repr = t.path().join("test_repr.csv");
    ok(&["transform", "--model", s(&model), "--data", s(&test), "--out", s(&test_repr)]);

    // a config with other hyperparameters is refused
    fs::create_dir_all(t.path().join("y")).unwrap();
    let other = t.path().join("y/cfg.toml");
    fs::write(&other, SMALL.replace("b = 3", "b = 4")).unwrap();
    let r = cli(&["transform", "--model", s(&model), "--data", s(&train), "--config", s(&other)]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("fingerprint"), "{}", stderr(&r));

    let wide = t.path().join("wide.csv");
    fs::write(&wide, "a,b,c\n1,2,3\n4,5,6\n").unwrap();
    let r = cli(&["transform", "--model", s(&model), "--data", s(&wide)]);
    assert_eq!(code(&r), 2, "{}", stderr(&r));

    let text = ok(&[
        "fit-cate", "--config", s(&cfg), "--out", s(&out), "--features", s(&repr), "--data", s(&train),
        "--predict", s(&test_repr), "--truth", s(&test),
    ]);
    assert_eq!(text.matches("root_pehe").count(), 4, "{text}");
    for k in ["t", "x", "dr", "r"] {
        let p = exp.join(format!("pred_test_repr_{k}.csv"));
        assert_eq!(line_count(&p), 201, "{}", p.display());
    }

    let r = cli(&[
        "fit-cate", "--config", s(&cfg), "--out", s(&out), "--features", s(&repr), "--data", s(&train),
        "--learners", "t,s",
    ]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("t, x, dr, r"), "{}", stderr(&r));
}

#[test]
fn corrupted_csv_names_the_row() {
    let t = tempfile::tempdir().unwrap();
    let (cfg, out) = setup(t.path(), SMALL);
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&out)]);
    let train = only_subdir(&out).join("train.csv");
    let text = fs::read_to_string(&train).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[7] = lines[7].replacen(|c: char| c.is_ascii_digit(), "q", 1);
    let bad = t.path().join("bad.csv");
    fs::write(&bad, lines.join("\n")).unwrap();
    let r = cli(&["fit-cate", "--config", s(&cfg), "--out", s(&out), "--features", s(&bad), "--data", s(&bad)]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("row 8"), "{}", stderr(&r));

    fs::write(&bad, "").unwrap();
    let r = cli(&["fit-ebm", "--config", s(&cfg), "--out", s(&out), "--train", s(&bad)]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("empty"), "{}", stderr(&r));
}

#[test]
fn empty_treatment_arm_is_a_numeric_failure() {
    let t = tempfile::tempdir().unwrap();
    let (cfg, out) = setup(t.path(), SMALL);
    let data = t.path().join("treated.csv");
    let mut text = String::from("x0,x1,a,y\n");
    for i in 0..40 {
        text += &format!("{},{},1,{}\n", i as f64 * 0.1, (i % 7) as f64, i % 5);
    }
    fs::write(&data, text).unwrap();
    let r = cli(&["fit-cate", "--config", s(&cfg), "--out", s(&out), "--features", s(&data), "--data", s(&data), "--learners", "t"]);
    assert_eq!(code(&r), 3, "{}", stderr(&r));
    assert!(stderr(&r).contains("empty"), "{}", stderr(&r));
}

#[test]
fn mcc_between_saved_models() {
    let t = tempfile::tempdir().unwrap();
    let (cfg, out) = setup(t.path(), SMALL);
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&out)]);
    let exp = only_subdir(&out);
    let train = exp.join("train.csv");
    ok(&["fit-ebm", "--config", s(&cfg), "--out", s(&out), "--train", s(&train)]);
    let model = exp.join("model.preb");
    let copy = t.path().join("copy.preb");
    fs::copy(&model, &copy).unwrap();
    let text = ok(&["mcc", "--models", s(&model), s(&copy), "--data", s(&train), "--out", s(t.path())]);
    assert!(text.contains("mean MCC 1.000000"), "{text}");
    assert!(t.path().join("mcc.csv").is_file());

    let other = t.path().join("other");
    fs::create_dir_all(&other).unwrap();
    let ocfg = other.join("cfg.toml");
    fs::write(&ocfg, SMALL.replace("epochs = 3", "epochs = 3\nb_seed = 99")).unwrap();
    ok(&["fit-ebm", "--config", s(&ocfg), "--out", s(&other.join("out")), "--train", s(&train)]);
    let foreign = only_subdir(&other.join("out")).join("model.preb");
    let r = cli(&["mcc", "--models", s(&model), s(&foreign), "--data", s(&train)]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("fingerprint"), "{}", stderr(&r));
}

#[test]
fn pipeline_writes_report_and_refuses_changed_config() {
    let t = tempfile::tempdir().unwrap();
    let (cfg, out) = setup(t.path(), SMALL);
    let text = ok(&["pipeline", "--config", s(&cfg), "--out", s(&out), "--mcc"]);
    assert!(text.to_lowercase().contains("mcc"), "{text}");
    let exp = only_subdir(&out);
    assert!(exp.join("report.txt").is_file());
    assert!(exp.join("mcc_pairs.csv").is_file());
    for run in 0..2 {
        let d = exp.join(format!("run-{run}"));
        assert!(d.join("model.preb").is_file());
        assert!(d.join("pred_ebm_r.csv").is_file());
        assert!(d.join("pred_raw_t.csv").is_file());
    }

    // same directory name, edited stamp
    let stamp = exp.join("config.toml");
    let edited = fs::read_to_string(&stamp).unwrap().replace("epochs = 3", "epochs = 4");
    fs::write(&stamp, edited).unwrap();
    let r = cli(&["pipeline", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("fingerprint"), "{}", stderr(&r));
}
