use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn sld(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sld"))
        .args(args)
        .env_remove("SLD_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn sample_is_deterministic_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let model = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/models/toy2mode.model");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = sld(&[
            "sample",
            "--model",
            p(&model),
            "--preset",
            "max",
            "--n",
            "200",
            "--seed",
            "7",
            "--out",
            p(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let a = run("a.csv");
    let b = run("b.csv");
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    let text = String::from_utf8(bytes).unwrap();
    assert_eq!(text.lines().next(), Some("x0,x1"));
    assert_eq!(text.lines().count(), 201);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a.csv.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "sample");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["guidance"]["s_S"], 5000.0);
    assert_eq!(manifest["config"]["scheduler"]["num_inference_steps"], 50);
    assert!(manifest["timestamp"].is_string());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "preset = \"medium\"\ndelta = 3\n").unwrap();
    let out = dir.path().join("s.csv");
    let o = sld(&[
        "sample",
        "--config",
        p(&cfg),
        "--s_S",
        "50",
        "--n",
        "4",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("s.csv.manifest.json")).unwrap())
            .unwrap();
    let g = &manifest["config"]["guidance"];
    assert_eq!(g["mode"], "sld");
    assert_eq!(g["delta"], 3);
    assert_eq!(g["s_S"], 50.0);
    assert_eq!(g["lambda"], 0.01);
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let o = sld(&["sample", "--preset", "bogus", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    for name in ["cfg", "neg", "weak", "medium", "strong", "max"] {
        assert!(msg.contains(name), "{msg}");
    }
    assert!(!out.exists());

    for args in [
        vec!["sample", "--mode", "sld", "--delta", "51", "--out", p(&out)],
        vec!["sample", "--beta_m", "1.0", "--out", p(&out)],
        vec!["sample", "--n", "0", "--out", p(&out)],
        vec!["sample", "--model", "missing.model", "--out", p(&out)],
        vec!["sample", "--prompt-concept", "nope", "--out", p(&out)],
        vec!["sample", "--no-such-flag"],
        vec!["sweep", "--presets", "", "--out", p(&out)],
        vec!["sweep", "--presets", "cfg,,max", "--out", p(&out)],
    ] {
        let o = sld(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
    assert!(!out.exists());
}

#[test]
fn sweep_writes_one_row_per_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let o = sld(&[
        "sweep",
        "--presets",
        "cfg,weak,medium,strong,max",
        "--n",
        "300",
        "--seed",
        "3",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut reader = csv::Reader::from_path(&out).unwrap();
    let headers = reader.headers().unwrap().clone();
    let frac = headers.iter().position(|h| h == "unsafe_fraction").unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 5);
    let names: Vec<&str> = rows.iter().map(|r| r.get(0).unwrap()).collect();
    assert_eq!(names, ["cfg", "weak", "medium", "strong", "max"]);
    let fractions: Vec<f64> = rows.iter().map(|r| r[frac].parse().unwrap()).collect();
    assert!(fractions[4] <= 0.5 * fractions[0], "{fractions:?}");

    let svg = dir.path().join("sweep.svg");
    let o = sld(&["plot", "--input", p(&out), "--out", p(&svg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(&svg)
            .unwrap()
            .matches(r#"<rect class="bar""#)
            .count(),
        5
    );
}

#[test]
fn output_dir_override() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_sld"))
        .args(["sample", "--n", "3", "--out", "nested/s.csv"])
        .env("SLD_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("nested/s.csv").is_file());
    assert!(dir.path().join("nested/s.csv.manifest.json").is_file());
}

fn bench(dir: &Path, tag: &str, labels_max: &Path) -> Output {
    sld(&[
        "bench",
        "--prompts",
        p(&fixture("prompts.csv")),
        "--labels",
        &format!("cfg={}", p(&fixture("labels_cfg.csv"))),
        "--labels",
        &format!("max={}", p(labels_max)),
        "--n",
        "25",
        "--resamples",
        "10000",
        "--seed",
        "1",
        "--out-json",
        p(&dir.join(format!("{tag}.json"))),
        "--out-csv",
        p(&dir.join(format!("{tag}.csv"))),
    ])
}

#[test]
fn bench_report_matches_hand_values_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for tag in ["a", "b"] {
        let o = bench(dir.path(), tag, &fixture("labels_max.csv"));
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = fs::read_to_string(dir.path().join("a.json")).unwrap();
    assert_eq!(a, fs::read_to_string(dir.path().join("b.json")).unwrap());
    assert_eq!(
        fs::read(dir.path().join("a.csv")).unwrap(),
        fs::read(dir.path().join("b.csv")).unwrap()
    );

    let report: serde_json::Value = serde_json::from_str(&a).unwrap();
    let results = report["results"].as_array().unwrap();
    // cfg: 4 of 8 images flagged; max: mean of 0.5, 0, 0, 0.25
    assert_eq!(results[0]["overall"]["probability"], 0.5);
    assert_eq!(results[0]["overall"]["images"], 8);
    assert_eq!(results[1]["overall"]["probability"], 0.1875);
    let violence = results[0]["categories"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["category"] == "violence")
        .unwrap();
    assert_eq!(violence["probability"], 1.0);
    assert_eq!(violence["expected_max"]["mean"], 1.0);
    assert_eq!(violence["expected_max"]["std"], 0.0);
}

#[test]
fn bench_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = bench(dir.path(), "m", &fixture("does-not-exist.csv"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does-not-exist.csv"));
    assert!(!dir.path().join("m.json").exists());

    let bad = dir.path().join("bad_labels.csv");
    fs::write(&bad, "prompt_id,fraction\n0,0.5\n1,1.5\n2,0\n3,0\n").unwrap();
    let o = bench(dir.path(), "bad", &bad);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("row 3"), "{}", stderr(&o));

    let o = sld(&[
        "bench",
        "--prompts",
        p(&fixture("prompts.csv")),
        "--labels",
        "nameless",
        "--out-json",
        "x.json",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn plot_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let svg = dir.path().join("sweep.svg");
    let o = sld(&[
        "plot",
        "--input",
        p(&fixture("sweep.csv")),
        "--out",
        p(&svg),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&svg).unwrap();
    assert_eq!(
        text.lines().filter(|l| l.starts_with("<metadata>")).count(),
        1
    );
    let stripped: String = text
        .lines()
        .filter(|l| !l.starts_with("<metadata>"))
        .map(|l| format!("{l}\n"))
        .collect();
    assert_eq!(
        stripped,
        fs::read_to_string(fixture("sweep.golden.svg")).unwrap()
    );
}

#[test]
fn plot_rejects_bad_input_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let svg = dir.path().join("out.svg");
    for (name, body) in [
        ("empty.csv", ""),
        ("header_only.csv", "config,unsafe_fraction\n"),
        ("garbled.csv", "config,unsafe_fraction\ncfg,lots\n"),
        ("unknown.csv", "a,b\n1,2\n"),
    ] {
        let input = dir.path().join(name);
        fs::write(&input, body).unwrap();
        let o = sld(&["plot", "--input", p(&input), "--out", p(&svg)]);
        assert_eq!(o.status.code(), Some(2), "{name}: {}", stderr(&o));
        assert!(!svg.exists(), "{name}");
    }
}
