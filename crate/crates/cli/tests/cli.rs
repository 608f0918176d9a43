//! End-to-end runs of the `edgesplit` binary.

mod support;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use edgesplit::cost::{evaluate_mapping, Profile};
use edgesplit::model::load_model;
use edgesplit::pipeline::compile;
use edgesplit::runtime::{decode_f32s, infer_reference, launch, read_raw_tensor};
use edgesplit::specio::ResourceKey;
use edgesplit::{zoo, Objectives};
use edgesplit_cli::fixtures::{self, FixtureKind};
use edgesplit_cli::input::encode_pgm;
use edgesplit_cli::manifest::{FileRecord, RunManifest};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use support::{fixtures_root, launch_options, BIN};

fn edgesplit(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).args(args).current_dir(dir).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(&o));
    o
}

const DEPLOY: [&str; 8] = [
    "--model",
    "model.json",
    "--weights",
    "weights.bin",
    "--platform",
    "platform.txt",
    "--mapping",
    "mapping.json",
];

/// A temp dir holding a copy of a committed fixture set.
fn fixture_copy(name: &str) -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    for e in fs::read_dir(fixtures_root().join(name)).unwrap() {
        let p = e.unwrap().path();
        if p.is_file() {
            fs::copy(&p, tmp.path().join(p.file_name().unwrap())).unwrap();
        }
    }
    tmp
}

fn package(dir: &Path) {
    let mut args = vec!["package"];
    args.extend(DEPLOY);
    args.extend(["--out", "pkgs"]);
    ok(edgesplit(dir, &args));
}

fn results(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn outputs(v: &Value) -> Vec<Vec<f32>> {
    serde_json::from_value(v["outputs"].clone()).unwrap()
}

#[test]
fn package_writes_packages_and_a_checked_manifest() {
    let tmp = fixture_copy("diamond");
    package(tmp.path());
    for r in 0..3 {
        assert!(tmp.path().join(format!("pkgs/package_{r}/plan.json")).is_file());
    }
    let m = RunManifest::read(&tmp.path().join("pkgs/manifest.json")).unwrap();
    assert_eq!(m.command, "package");
    assert!(m.wall_time_ms > 0.0);
    assert_eq!(m.inputs.len(), 4);
    assert!(m.outputs.len() >= 3 * 5);
    for f in m.inputs.iter().chain(&m.outputs) {
        let now = FileRecord::of(&tmp.path().join(&f.path)).unwrap();
        assert_eq!((now.bytes, &now.sha256), (f.bytes, &f.sha256), "{} changed", f.path.display());
    }
}

#[test]
fn diamond_run_repeats_identically() {
    let tmp = fixture_copy("diamond");
    package(tmp.path());
    ok(edgesplit(tmp.path(), &["run", "--packages", "pkgs", "--input", "input.bin", "--repeat", "20"]));
    let v = results(&tmp.path().join("pkgs/results.json"));
    assert!(v["throughput_fps"].as_f64().unwrap() > 0.0);
    let outs = outputs(&v);
    assert_eq!(outs.len(), 20);
    let golden = decode_f32s(&fs::read(fixtures_root().join("diamond/expected/output.bin")).unwrap()).unwrap();
    for o in &outs {
        assert_eq!(o.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), golden.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
    let m = RunManifest::read(&tmp.path().join("pkgs/results.manifest.json")).unwrap();
    assert!(m.inputs.iter().any(|f| f.path.ends_with("input.bin")));
}

#[test]
fn single_rank_run_equals_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let mut set = fixtures::build(FixtureKind::Toy, 4);
    set.mapping = zoo::contiguous_mapping(&set.model, &[ResourceKey::cpu("dev0", "arm", 0..4)]);
    fixtures::write(&set, tmp.path()).unwrap();
    package(tmp.path());
    ok(edgesplit(tmp.path(), &["run", "--packages", "pkgs", "--input", "input.bin"]));
    let v = results(&tmp.path().join("pkgs/results.json"));
    assert!(v["throughput_fps"].as_f64().unwrap() > 0.0);
    let want = infer_reference(&set.model, &set.input).unwrap();
    assert_eq!(outputs(&v), [want.data]);
}

#[test]
fn pgm_input_is_accepted() {
    let tmp = fixture_copy("toy");
    package(tmp.path());
    let pixels: Vec<u8> = (0..16 * 16).map(|i| (i * 7 % 256) as u8).collect();
    fs::write(tmp.path().join("img.pgm"), encode_pgm(16, 16, &pixels)).unwrap();
    ok(edgesplit(tmp.path(), &["run", "--packages", "pkgs", "--input", "img.pgm"]));
    let v = results(&tmp.path().join("pkgs/results.json"));
    let sum: f32 = outputs(&v)[0].iter().sum();
    assert!((sum - 1.0).abs() < 1e-4, "softmax output sums to {sum}");
}

#[test]
fn truncated_submodel_fails_with_runtime_code() {
    let tmp = fixture_copy("diamond");
    package(tmp.path());
    let bin = tmp.path().join("pkgs/package_1/submodel.bin");
    let bytes = fs::read(&bin).unwrap();
    fs::write(&bin, &bytes[..bytes.len() / 2]).unwrap();
    let o = edgesplit(tmp.path(), &["run", "--packages", "pkgs"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("rank 1"), "{}", stderr(&o));
}

#[test]
fn killed_rank_does_not_hang_the_mesh() {
    let tmp = fixture_copy("diamond");
    package(tmp.path());
    let t = Instant::now();
    let o = edgesplit(
        tmp.path(),
        &["run", "--packages", "pkgs", "--repeat", "5", "--timeout", "20", "--fault-rank", "0", "--fault-after", "6"],
    );
    assert!(t.elapsed() < Duration::from_secs(15), "took {:?}", t.elapsed());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("rank 0"), "{err}");
    assert!(!err.contains("timed out"), "{err}");
}

#[test]
fn launch_without_input_fails_fast() {
    let m = zoo::toy_cnn(2);
    let ms = zoo::random_mapping(&m, &zoo::uniform_platform(3, 2, false), 3, &mut ChaCha8Rng::seed_from_u64(9));
    let tmp = tempfile::tempdir().unwrap();
    let pkgs = compile(&m, &ms).unwrap().write_packages(tmp.path()).unwrap();
    let t = Instant::now();
    let e = launch(&pkgs, &launch_options(&tmp.path().join("run"), 1, Duration::from_secs(30))).unwrap_err();
    assert!(e.to_string().contains("no input"), "{e}");
    assert!(t.elapsed() < Duration::from_secs(3), "took {:?}", t.elapsed());
}

#[test]
fn unknown_layer_in_mapping_is_a_validation_error() {
    let tmp = fixture_copy("diamond");
    fs::write(tmp.path().join("mapping.json"), r#"{"edge01_arm123": ["Conv1", "Bogus"]}"#).unwrap();
    let mut args = vec!["validate"];
    args.extend(DEPLOY);
    let o = edgesplit(tmp.path(), &args);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Bogus"), "{}", stderr(&o));
}

#[test]
fn missing_file_is_an_io_error() {
    let tmp = fixture_copy("diamond");
    fs::remove_file(tmp.path().join("weights.bin")).unwrap();
    let mut args = vec!["package"];
    args.extend(DEPLOY);
    args.extend(["--out", "pkgs"]);
    let o = edgesplit(tmp.path(), &args);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("weights.bin"));
}

#[test]
fn validate_reports_and_stages_write_their_files() {
    let tmp = fixture_copy("diamond");
    let mut args = vec!["validate"];
    args.extend(DEPLOY);
    let o = ok(edgesplit(tmp.path(), &args));
    assert!(!o.stdout.is_empty());
    for (stage, file) in [("split", "cuts.json"), ("commgen", "rankfile.txt"), ("plan", "plans.txt")] {
        let mut args = vec![stage];
        args.extend(DEPLOY);
        args.extend(["--out", stage]);
        ok(edgesplit(tmp.path(), &args));
        assert!(tmp.path().join(stage).join(file).is_file(), "{stage} did not write {file}");
    }
    let sent = fs::read_to_string(tmp.path().join("commgen/sender.json")).unwrap();
    assert_eq!(sent, fs::read_to_string(fixtures_root().join("diamond/expected/sender.json")).unwrap());
}

fn dse_setup() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let set = fixtures::build(FixtureKind::Chain, 0);
    fixtures::write(&set, tmp.path()).unwrap();
    let mut p = zoo::random_profile(&set.model, &["cpu1", "cpu4", "gpu"], &mut ChaCha8Rng::seed_from_u64(1));
    for c in p.layers.values_mut() {
        c.latency_ms.values_mut().for_each(|v| *v += 0.1);
    }
    p.write(&tmp.path().join("profile.json")).unwrap();
    tmp
}

const DSE: [&str; 9] = [
    "dse",
    "--model",
    "model.json",
    "--weights",
    "weights.bin",
    "--platform",
    "platform.txt",
    "--profile",
    "profile.json",
];

#[test]
fn dse_defaults_are_echoed() {
    let tmp = dse_setup();
    let mut args = DSE.to_vec();
    args.extend(["--out", "dse"]);
    let o = ok(edgesplit(tmp.path(), &args));
    let first: Value = serde_json::from_str(String::from_utf8_lossy(&o.stdout).lines().next().unwrap()).unwrap();
    let want = serde_json::json!({
        "population_size": 100, "mutation_prob": 0.1, "crossover_prob": 0.5, "generations": 400, "seed": 0
    });
    assert_eq!(first["config"], want);
    let stats = fs::read_to_string(tmp.path().join("dse/stats.jsonl")).unwrap();
    let header: Value = serde_json::from_str(stats.lines().next().unwrap()).unwrap();
    assert_eq!(header["config"], want);
    assert_eq!(stats.lines().count(), 1 + 401);
    let csv = fs::read_to_string(tmp.path().join("dse/pareto.csv")).unwrap();
    for row in csv.lines().skip(1) {
        let mapping = row.rsplit(',').next().unwrap();
        assert!(tmp.path().join("dse").join(mapping).is_file(), "{mapping}");
    }
}

#[test]
fn dse_with_zero_generations_keeps_the_initial_front() {
    let tmp = dse_setup();
    let mut args = DSE.to_vec();
    args.extend(["--out", "dse", "--generations", "0", "--population", "12"]);
    ok(edgesplit(tmp.path(), &args));
    let csv = fs::read_to_string(tmp.path().join("dse/pareto.csv")).unwrap();
    let rows = csv.lines().count() - 1;
    assert!((1..=12).contains(&rows), "{rows} rows");
}

#[test]
fn dse_rejects_bad_probabilities() {
    let tmp = dse_setup();
    let mut args = DSE.to_vec();
    args.extend(["--out", "dse", "--mutation", "2"]);
    let o = edgesplit(tmp.path(), &args);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(!tmp.path().join("dse/pareto.csv").exists());
}

#[test]
fn profile_predicts_single_rank_throughput() {
    let tmp = fixture_copy("toy");
    ok(edgesplit(
        tmp.path(),
        &["profile", "--model", "model.json", "--weights", "weights.bin", "--platform", "platform.txt", "--out", "profile.json"],
    ));
    let dir = tmp.path();
    let m = load_model(&dir.join("model.json"), &dir.join("weights.bin")).unwrap();
    let p = Profile::read(&dir.join("profile.json")).unwrap();
    let key = ResourceKey::cpu("dev0", "arm", [0]);
    let ms = zoo::contiguous_mapping(&m, std::slice::from_ref(&key));
    let predicted: Objectives = evaluate_mapping(&m, &ms, &p).unwrap();

    let pkgs = compile(&m, &ms).unwrap().write_packages(&dir.join("one")).unwrap();
    let mut opts = launch_options(&dir.join("one/run"), 20, Duration::from_secs(60));
    let spec = m.shape(&m.input_layer().name).unwrap();
    opts.input = Some(read_raw_tensor(&dir.join("input.bin"), spec).unwrap());
    let measured = launch(&pkgs, &opts).unwrap().throughput_fps;
    let ratio = predicted.throughput_fps / measured;
    assert!((0.5..=2.0).contains(&ratio), "predicted {} fps, measured {measured} fps", predicted.throughput_fps);
}
