use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cats_core::harness::weight_file;
use serde_json::Value;
use tempfile::TempDir;

const TOY_MODEL: &str = r#"{"vocab":256,"d":64,"m":172,"layers":4,"heads":4,"max_seq":64,"seed":11}"#;

fn cats(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cats")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = cats(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn validate(schema: &str, path: &Path) -> Value {
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../docs/schemas")
        .join(schema);
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(schema_path).unwrap()).unwrap();
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let v = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = v.iter_errors(&doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{schema}: {errors:?}");
    doc
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("model.json"), TOY_MODEL).unwrap();
        let f = Fixture { dir };
        ok(&[
            "gen-data",
            "--n",
            "30",
            "--len",
            "8",
            "--seed",
            "2",
            "--out",
            &f.s("data.txt"),
        ]);
        f
    }

    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.p(name).to_string_lossy().into_owned()
    }

    fn calibrate(&self, mode: &str, out: &str) {
        ok(&[
            "calibrate",
            "--model",
            &self.s("model.json"),
            "--data",
            &self.s("data.txt"),
            "--k",
            "0.5",
            "--mode",
            mode,
            "--out",
            &self.s(out),
        ]);
    }
}

#[test]
fn gen_weights_file_round_trips_byte_for_byte() {
    let f = Fixture::new();
    ok(&[
        "gen-weights",
        "--d",
        "8",
        "--m",
        "20",
        "--seed",
        "4",
        "--out",
        &f.s("w.bin"),
    ]);
    let bytes = std::fs::read(f.p("w.bin")).unwrap();
    let w = weight_file::decode(&bytes).unwrap();
    assert_eq!((w.d(), w.m()), (8, 20));
    assert_eq!(weight_file::encode(&w), bytes);
    assert_eq!(&bytes[..6], b"CATSW1");
}

#[test]
fn calibrate_emits_one_threshold_per_layer() {
    let f = Fixture::new();
    f.calibrate("mlp", "cal.json");
    let doc = validate("calibration.schema.json", &f.p("cal.json"));
    let sites = doc["sites"].as_array().unwrap();
    assert_eq!(sites.len(), 4);
    for (i, s) in sites.iter().enumerate() {
        assert_eq!(s["layer"], i);
        assert_eq!(s["site"], "mlp");
        assert!(s["threshold"]["t"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn attention_mode_calibrates_three_sites_per_layer() {
    let f = Fixture::new();
    f.calibrate("mlp+attention", "cal.json");
    let doc = validate("calibration.schema.json", &f.p("cal.json"));
    assert_eq!(doc["sites"].as_array().unwrap().len(), 12);
}

#[test]
fn sparsity_report_prints_and_writes_the_same_json() {
    let f = Fixture::new();
    f.calibrate("mlp", "cal.json");
    let out = ok(&[
        "sparsity-report",
        "--model",
        &f.s("model.json"),
        "--data",
        &f.s("data.txt"),
        "--thresholds",
        &f.s("cal.json"),
        "--out",
        &f.s("sp.json"),
    ]);
    let doc = validate("sparsity.schema.json", &f.p("sp.json"));
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        std::fs::read_to_string(f.p("sp.json")).unwrap()
    );
    // Same data the thresholds were fitted on.
    assert!((doc["mlp_mean"].as_f64().unwrap() - 0.5).abs() < 0.01);
}

#[test]
fn run_generates_the_requested_number_of_tokens() {
    let f = Fixture::new();
    std::fs::write(f.p("prompt.txt"), "1 2 3 4\n").unwrap();
    let out = ok(&[
        "run",
        "--model",
        &f.s("model.json"),
        "--prompt",
        &f.s("prompt.txt"),
        "--n-tokens",
        "6",
    ]);
    let line = String::from_utf8(out.stdout).unwrap();
    let toks: Vec<u32> = line.split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert_eq!(toks.len(), 6);
    assert!(toks.iter().all(|&t| t < 256));

    f.calibrate("mlp", "cal.json");
    let zero = std::fs::read_to_string(f.p("cal.json")).unwrap();
    let mut doc: Value = serde_json::from_str(&zero).unwrap();
    for s in doc["sites"].as_array_mut().unwrap() {
        s["threshold"]["t"] = 0.0.into();
    }
    std::fs::write(f.p("zero.json"), doc.to_string()).unwrap();
    let sparse = ok(&[
        "run",
        "--model",
        &f.s("model.json"),
        "--prompt",
        &f.s("prompt.txt"),
        "--n-tokens",
        "6",
        "--mode",
        "mlp",
        "--thresholds",
        &f.s("zero.json"),
    ]);
    assert_eq!(String::from_utf8(sparse.stdout).unwrap(), line);
}

#[test]
fn run_without_thresholds_in_sparse_mode_is_a_validation_error() {
    let f = Fixture::new();
    std::fs::write(f.p("prompt.txt"), "1 2 3\n").unwrap();
    let out = cats(&[
        "run",
        "--model",
        &f.s("model.json"),
        "--prompt",
        &f.s("prompt.txt"),
        "--n-tokens",
        "2",
        "--mode",
        "mlp",
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn hist_writes_two_numeric_columns() {
    let f = Fixture::new();
    ok(&[
        "hist",
        "--model",
        &f.s("model.json"),
        "--data",
        &f.s("data.txt"),
        "--layer",
        "2",
        "--bins",
        "16",
        "--out",
        &f.s("h.tsv"),
    ]);
    let text = std::fs::read_to_string(f.p("h.tsv")).unwrap();
    let rows: Vec<(f64, u64)> = text
        .lines()
        .map(|l| {
            let cols: Vec<&str> = l.split('\t').collect();
            assert_eq!(cols.len(), 2, "{l}");
            (cols[0].parse().unwrap(), cols[1].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 17);
    assert!(rows.windows(2).all(|w| w[0].0 < w[1].0));
    let total: u64 = rows.iter().map(|r| r.1).sum();
    assert_eq!(total, 30 * 8 * 172);
}

#[test]
fn dense_only_bench_has_unit_speedup() {
    let f = Fixture::new();
    ok(&[
        "bench-mlp",
        "--d",
        "16",
        "--m",
        "40",
        "--variants",
        "dense",
        "--warmups",
        "1",
        "--repeats",
        "3",
        "--out",
        &f.s("b.json"),
    ]);
    let doc = validate("bench.schema.json", &f.p("b.json"));
    let cells = doc["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 3);
    assert!(cells.iter().all(|c| c["variant"] == "dense" && c["speedup"] == 1.0));
}

#[test]
fn bench_accepts_a_weight_file() {
    let f = Fixture::new();
    ok(&["gen-weights", "--d", "16", "--m", "40", "--out", &f.s("w.bin")]);
    ok(&[
        "bench-mlp",
        "--weights",
        &f.s("w.bin"),
        "--variants",
        "cats-masked,cats-compacted,optimal",
        "--sparsity",
        "0.5",
        "--warmups",
        "0",
        "--repeats",
        "2",
        "--out",
        &f.s("b.json"),
    ]);
    let doc = validate("bench.schema.json", &f.p("b.json"));
    assert_eq!(doc["cells"].as_array().unwrap().len(), 4);
    assert_eq!(doc["d"], 16);
}

#[test]
fn bench_gen_reports_every_mode() {
    let f = Fixture::new();
    let cfg = r#"{"model":{"vocab":64,"d":32,"m":86,"layers":2,"heads":2,"max_seq":32,"seed":1},
        "sparsities":[0.5,0.9],"samples":2,"prompt_len":4,"gen_len":4,"calibration_inputs":8,"calibration_len":8,"seed":3}"#;
    std::fs::write(f.p("gen.json"), cfg).unwrap();
    ok(&["bench-gen", "--config", &f.s("gen.json"), "--out", &f.s("g.json")]);
    let doc = validate("gen.schema.json", &f.p("g.json"));
    let results = doc["results"].as_array().unwrap();
    assert_eq!(results.len(), 3);
    assert_eq!(results[0]["speedup"], 1.0);
}

#[test]
fn corrupted_magic_exits_with_validation_code_and_writes_nothing() {
    let f = Fixture::new();
    ok(&["gen-weights", "--d", "4", "--m", "8", "--out", &f.s("w.bin")]);
    let mut bytes = std::fs::read(f.p("w.bin")).unwrap();
    bytes[2] ^= 0xff;
    std::fs::write(f.p("w.bin"), bytes).unwrap();
    let out = cats(&["bench-mlp", "--weights", &f.s("w.bin"), "--out", &f.s("b.json")]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte 2"));
    assert!(!f.p("b.json").exists());
}

#[test]
fn usage_errors_exit_with_code_two() {
    assert_eq!(cats(&["calibrate", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(cats(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(cats(&["run", "--mode", "sideways"]).status.code(), Some(2));
}

#[test]
fn missing_input_file_exits_with_io_code() {
    let f = Fixture::new();
    let out = cats(&[
        "calibrate",
        "--model",
        &f.s("nope.json"),
        "--data",
        &f.s("data.txt"),
        "--k",
        "0.5",
        "--out",
        &f.s("c.json"),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!f.p("c.json").exists());
}

#[test]
fn malformed_inputs_exit_with_validation_code() {
    let f = Fixture::new();
    std::fs::write(f.p("bad.txt"), "1 2 x\n").unwrap();
    let bad_data = cats(&[
        "calibrate",
        "--model",
        &f.s("model.json"),
        "--data",
        &f.s("bad.txt"),
        "--k",
        "0.5",
        "--out",
        &f.s("c.json"),
    ]);
    assert_eq!(bad_data.status.code(), Some(4));
    let bad_k = cats(&[
        "calibrate",
        "--model",
        &f.s("model.json"),
        "--data",
        &f.s("data.txt"),
        "--k",
        "1.5",
        "--out",
        &f.s("c.json"),
    ]);
    assert_eq!(bad_k.status.code(), Some(4));
    std::fs::write(f.p("m.json"), "{\"vocab\": 4,").unwrap();
    let bad_json = cats(&[
        "calibrate",
        "--model",
        &f.s("m.json"),
        "--data",
        &f.s("data.txt"),
        "--k",
        "0.5",
        "--out",
        &f.s("c.json"),
    ]);
    assert_eq!(bad_json.status.code(), Some(4));
    assert!(!f.p("c.json").exists());
}
