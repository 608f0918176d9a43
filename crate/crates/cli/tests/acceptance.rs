//! Acceptance suite. Runs every criterion in order and prints one
//! `PASS`/`FAIL` line each; exits non-zero if any criterion fails.
//!
//! Pass words as arguments to run a subset, e.g.
//! `cargo test -p edgesplit-cli --test acceptance -- 2 dse`.

mod support;

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use edgesplit::comm::{RecvEntry, SendEntry, SlotBinding};
use edgesplit::cost::{evaluate_mapping, LinkCost, ObjectiveVector, Profile};
use edgesplit::dse::{crowding_distance, dominates, exhaustive_pareto, nondominated_sort, run_nsga2, GAConfig};
use edgesplit::model::{load_model, Op, WeightStore};
use edgesplit::pipeline::compile;
use edgesplit::plan::{check_plan, ExecutionPlan, PlanAction};
use edgesplit::runtime::{infer_reference, launch};
use edgesplit::specio::{parse_mapping, parse_platform, resource_options, MappingSpec, OptionPolicy, PlatformSpec, ResourceKey};
use edgesplit::split::{cut_edges, BufferId};
use edgesplit::{zoo, ExactRational, Objectives};
use edgesplit_cli::commands::{cmd_package, DeployArgs, ModelArgs, StageArgs};
use edgesplit_cli::fixtures::{self, FixtureKind};
use edgesplit_cli::manifest::RunManifest;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{input_for, launch_options, oracle, BIN};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn deploy_args(dir: &Path, out: &Path) -> StageArgs {
    StageArgs {
        deploy: DeployArgs {
            model: ModelArgs {
                model: dir.join("model.json"),
                weights: dir.join("weights.bin"),
            },
            platform: dir.join("platform.txt"),
            mapping: dir.join("mapping.json"),
        },
        out: out.to_path_buf(),
    }
}

fn diamond_golden() -> Outcome {
    let dir = support::fixtures_root().join("diamond");
    let m = load_model(&dir.join("model.json"), &dir.join("weights.bin")).map_err(err)?;
    let platform = parse_platform(&dir.join("platform.txt")).map_err(err)?;
    let ms = parse_mapping(&dir.join("mapping.json"), &m, &platform).map_err(err)?;
    let c = compile(&m, &ms).map_err(err)?;
    ensure!(c.submodels.len() == 3, "{} sub-models", c.submodels.len());

    let send = |b: u32, to: &[usize]| SendEntry {
        buffer: BufferId(b),
        to: to.to_vec(),
    };
    let recv = |b: u32, from: usize| RecvEntry {
        buffer: BufferId(b),
        from,
    };
    ensure!(
        c.senders.for_rank(0) == [send(1, &[1, 2]), send(4, &[2])],
        "rank 0 sends {:?}",
        c.senders.for_rank(0)
    );
    ensure!(
        c.receivers.for_rank(2) == [recv(1, 0), recv(4, 0)],
        "rank 2 receives {:?}",
        c.receivers.for_rank(2)
    );
    let rf = &c.rankfile.entries;
    ensure!(rf.len() == 3, "{} rankfile entries", rf.len());
    let devices: Vec<&str> = rf.iter().map(|e| e.device.as_str()).collect();
    ensure!(devices == ["edge01", "edge01", "edge04"], "rank devices {devices:?}");
    ensure!(
        rf[0].slots == SlotBinding::Cores(BTreeSet::from([1, 2, 3])),
        "rank 0 slots {:?}",
        rf[0].slots
    );
    Ok("3 sub-models, tables and rankfile match".into())
}

fn toy_mapping(m: &edgesplit::model::Model, seed: u64, ranks: usize) -> MappingSpec {
    let platform = zoo::uniform_platform(4, 4, true);
    zoo::random_mapping(m, &platform, ranks, &mut rng(seed))
}

fn functional_equivalence() -> Outcome {
    let m = zoo::toy_cnn(7);
    let ops: BTreeSet<Op> = m.layers().iter().map(|l| l.op).collect();
    for op in [Op::Conv2D, Op::MaxPool2D, Op::Add, Op::Concat, Op::FullyConnected, Op::BatchNorm, Op::ReLU, Op::Softmax] {
        ensure!(ops.contains(&op), "toy model lacks {op}");
    }
    ensure!(m.hidden_layers().count() >= 8, "toy model too small");
    let tmp = tempfile::tempdir().map_err(err)?;
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let ranks = 2 + (seed as usize % 3);
        let ms = toy_mapping(&m, seed, ranks);
        let x = input_for(&m, seed);
        let reference = infer_reference(&m, &x).map_err(err)?;
        let naive = oracle::infer(&m, &x.data);
        ensure!(naive.dims == reference.dims(), "oracle shape {:?}", naive.dims);

        let dir = tmp.path().join(format!("m{seed}"));
        let pkgs = compile(&m, &ms).map_err(err)?.write_packages(&dir).map_err(err)?;
        let mut opts = launch_options(&dir.join("run"), 2, Duration::from_secs(30));
        opts.input = Some(x.clone());
        let res = launch(&pkgs, &opts).map_err(|e| format!("mapping {seed}: {e}"))?;
        ensure!(res.outputs.len() == 2, "mapping {seed}: {} outputs", res.outputs.len());
        for y in &res.outputs {
            ensure!(y.bits_eq(&reference), "mapping {seed}: output differs from reference\n{}", ms.format());
            let e = oracle::rel_error(&y.data, &naive.data);
            ensure!(e <= 1e-4, "mapping {seed}: relative error {e:e} against the naive oracle");
            worst = worst.max(e);
        }
    }
    Ok(format!("20 launches bit-identical, worst naive-oracle error {worst:.2e}"))
}

fn structural_invariants() -> Outcome {
    let mut cases = 0;
    for seed in 0..100u64 {
        let m = if seed % 2 == 0 { zoo::toy_cnn(seed) } else { zoo::random_model(seed, 12) };
        let ranks = (1 + seed as usize % 4).min(m.hidden_layers().count());
        let ms = toy_mapping(&m, seed, ranks);
        let c = compile(&m, &ms).map_err(err)?;
        let keys: BTreeSet<_> = ms.keys().collect();
        ensure!(c.submodels.len() == keys.len(), "seed {seed}: {} sub-models for {} keys", c.submodels.len(), keys.len());

        let mut seen = BTreeSet::new();
        for sm in &c.submodels {
            for l in sm.layers.iter().filter(|l| l.op.is_hidden()) {
                ensure!(seen.insert(l.name.clone()), "seed {seed}: {} on two ranks", l.name);
            }
        }
        let hidden: BTreeSet<String> = m.hidden_layers().map(|l| l.name.clone()).collect();
        ensure!(seen == hidden, "seed {seed}: partitions do not cover the model");

        let cuts: BTreeSet<_> = cut_edges(&m, &ms).iter().map(|e| (e.src_rank, e.buffer, e.dst_rank)).collect();
        ensure!(c.senders.triples() == cuts, "seed {seed}: sender table disagrees with cut edges");
        ensure!(c.receivers.triples() == cuts, "seed {seed}: receiver table disagrees with cut edges");

        let bytes: usize = c.submodels.iter().map(|s| s.weights.total_bytes()).sum();
        ensure!(bytes == m.weights().total_bytes(), "seed {seed}: weight bytes {bytes} != {}", m.weights().total_bytes());
        cases += 1;
    }
    Ok(format!("{cases} mappings"))
}

fn deadlock_freedom() -> Outcome {
    let m = zoo::toy_cnn(11);
    let tmp = tempfile::tempdir().map_err(err)?;
    let limit = Duration::from_secs(30);
    let mut slowest = Duration::ZERO;
    for seed in 0..100u64 {
        let ranks = 2 + (seed as usize % 3);
        let ms = toy_mapping(&m, 1000 + seed, ranks);
        let dir = tmp.path().join(format!("m{seed}"));
        let pkgs = compile(&m, &ms).map_err(err)?.write_packages(&dir).map_err(err)?;
        let mut opts = launch_options(&dir.join("run"), 1, limit);
        opts.input = Some(input_for(&m, seed));
        let t = Instant::now();
        launch(&pkgs, &opts).map_err(|e| format!("mapping {seed}: {e}"))?;
        let took = t.elapsed();
        ensure!(took < limit, "mapping {seed} took {took:?}");
        slowest = slowest.max(took);
        let _ = fs::remove_dir_all(&dir);
    }

    let ms = toy_mapping(&m, 5, 3);
    let c = compile(&m, &ms).map_err(err)?;
    let (rank, i) = c
        .plans
        .iter()
        .find_map(|p| {
            let i = p.actions.iter().position(|a| matches!(a, PlanAction::RegisterRecv { .. }))?;
            Some((p.rank, i))
        })
        .ok_or("no rank receives anything")?;
    let mut bad: ExecutionPlan = c.plans[rank].clone();
    bad.actions.remove(i);
    let why = match check_plan(&bad, &c.submodels[rank]) {
        Ok(()) => return Err("corrupted plan passed the static check".into()),
        Err(e) => e.to_string(),
    };
    let dir = tmp.path().join("corrupt");
    let pkgs = c.write_packages(&dir).map_err(err)?;
    fs::write(pkgs[rank].join("plan.json"), bad.to_json()).map_err(err)?;
    let mut opts = launch_options(&dir.join("run"), 1, limit);
    opts.input = Some(input_for(&m, 5));
    let t = Instant::now();
    ensure!(
        launch(&pkgs, &opts).is_err(),
        "corrupted package launched successfully"
    );
    ensure!(t.elapsed() < Duration::from_secs(5), "corrupted package took {:?} to fail", t.elapsed());
    Ok(format!("100 launches, slowest {:.2} s; corrupted plan rejected: {why}", slowest.as_secs_f64()))
}

fn rat(n: i64, d: i64) -> ExactRational {
    ExactRational::new(n.into(), d.into())
}

fn balanced_chain() -> (edgesplit::model::Model, Vec<ResourceKey>) {
    let m = zoo::conv_chain(4, 2, 4, 1);
    let keys = (0..4).map(|d| ResourceKey::cpu(format!("dev{d}"), "x", [0])).collect();
    (m, keys)
}

fn pipeline_throughput() -> Outcome {
    let (m, keys) = balanced_chain();
    let mut p = Profile::uniform(&m, &["cpu1"], 10.0, 1.0);
    let split = zoo::contiguous_mapping(&m, &keys);
    let single = zoo::contiguous_mapping(&m, &keys[..1]);
    let a: ObjectiveVector<ExactRational> = evaluate_mapping(&m, &split, &p).map_err(err)?;
    let b: ObjectiveVector<ExactRational> = evaluate_mapping(&m, &single, &p).map_err(err)?;
    let speedup = a.throughput_fps.clone() / b.throughput_fps.clone();
    ensure!(speedup == rat(4, 1), "speedup {speedup}");
    p.link = LinkCost {
        bytes_per_ms: None,
        latency_ms: 2.0,
        energy_mj_per_kb: 0.0,
    };
    let c: ObjectiveVector<ExactRational> = evaluate_mapping(&m, &split, &p).map_err(err)?;
    ensure!(c.throughput_fps == rat(1000, 12), "with 2 ms hops: {} fps", c.throughput_fps);
    let f: Objectives = evaluate_mapping(&m, &split, &p).map_err(err)?;
    ensure!(
        (f.throughput_fps - 1000.0 / 12.0).abs() <= 1e-9 * f.throughput_fps,
        "f64 path: {} fps",
        f.throughput_fps
    );

    // Live counterpart: report only.
    let live = live_speedup();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let live = match live {
        Ok(s) => format!(
            "live 4-rank/1-rank = {s:.2}x on {cores} core(s) ({})",
            if s >= 1.2 { "meets 1.2x" } else { "below 1.2x, soft" }
        ),
        Err(e) => format!("live run failed ({e}), soft"),
    };
    Ok(format!("exact 4x and 1000/12 fps; {live}"))
}

fn live_speedup() -> Result<f64, String> {
    let m = zoo::conv_chain(8, 16, 24, 3);
    let keys: Vec<ResourceKey> = (0..4).map(|d| ResourceKey::cpu(format!("dev{d}"), "arm", [0])).collect();
    let tmp = tempfile::tempdir().map_err(err)?;
    let x = input_for(&m, 3);
    let mut fps = Vec::new();
    for n in [1, 4] {
        let ms = zoo::contiguous_mapping(&m, &keys[..n]);
        let dir = tmp.path().join(format!("r{n}"));
        let pkgs = compile(&m, &ms).map_err(err)?.write_packages(&dir).map_err(err)?;
        let mut opts = launch_options(&dir.join("run"), 20, Duration::from_secs(60));
        opts.input = Some(x.clone());
        fps.push(launch(&pkgs, &opts).map_err(err)?.throughput_fps);
    }
    Ok(fps[1] / fps[0])
}

/// Chain fixture model with a seeded random profile over its option kinds.
fn dse_instance(seed: u64) -> (edgesplit::model::Model, PlatformSpec, Profile) {
    let set = fixtures::build(FixtureKind::Chain, 0);
    let mut p = zoo::random_profile(&set.model, &["cpu1", "cpu4", "gpu"], &mut rng(seed));
    for c in p.layers.values_mut() {
        c.latency_ms.values_mut().for_each(|v| *v += 0.1);
    }
    (set.model, set.platform, p)
}

fn dse_oracle() -> Outcome {
    let (m, platform, p) = dse_instance(42);
    let options = resource_options(&platform, OptionPolicy::SingleAllGpu);
    ensure!(m.hidden_layers().count() == 4, "{} hidden layers", m.hidden_layers().count());
    ensure!(options.len() == 6, "{} options per layer", options.len());
    let truth = exhaustive_pareto(&m, &options, &p, 1296).map_err(err)?;
    let truth_set = truth.objective_set();
    let mut report = Vec::new();
    for seed in 0..5 {
        let cfg = GAConfig { seed, ..GAConfig::default() };
        ensure!(
            (cfg.population_size, cfg.mutation_prob, cfg.crossover_prob, cfg.generations) == (100, 0.1, 0.5, 400),
            "defaults changed: {cfg:?}"
        );
        let got = run_nsga2(&m, &platform, &p, &cfg).map_err(err)?;
        let got_set = got.objective_set();
        for o in &got_set {
            ensure!(truth_set.contains(o), "seed {seed}: {o:?} is not on the true front");
        }
        let covered = got_set.len();
        ensure!(covered * 10 >= truth_set.len() * 9, "seed {seed}: covers {covered}/{}", truth_set.len());
        report.push(format!("{covered}/{}", truth_set.len()));
    }
    Ok(format!("1296 mappings, coverage per seed {}", report.join(" ")))
}

/// Ranks by repeatedly peeling off the points nobody remaining dominates.
fn naive_fronts(points: &[Objectives]) -> Vec<Vec<usize>> {
    let mut left: Vec<usize> = (0..points.len()).collect();
    let mut fronts = Vec::new();
    while !left.is_empty() {
        let front: Vec<usize> = left
            .iter()
            .copied()
            .filter(|&i| !left.iter().any(|&j| dominates(&points[j], &points[i])))
            .collect();
        left.retain(|i| !front.contains(i));
        fronts.push(front);
    }
    fronts
}

fn nsga2_internals() -> Outcome {
    let mut r = rng(7);
    let points: Vec<Objectives> = (0..200)
        .map(|_| ObjectiveVector {
            max_device_energy_mj: r.random_range(0..20) as f64,
            throughput_fps: r.random_range(0..20) as f64,
            max_device_memory_mb: r.random_range(0..20) as f64,
        })
        .collect();
    let fronts = nondominated_sort(&points);
    ensure!(fronts == naive_fronts(&points), "fronts differ from the dominance oracle");
    for (k, front) in fronts.iter().enumerate() {
        let objs: Vec<Objectives> = front.iter().map(|&i| points[i].clone()).collect();
        let d = crowding_distance(&objs);
        for axis in 0..3 {
            let v = |i: usize| objs[i].minimized()[axis];
            let lo = (0..objs.len()).map(v).fold(f64::INFINITY, f64::min);
            let hi = (0..objs.len()).map(v).fold(f64::NEG_INFINITY, f64::max);
            let lo_inf = (0..objs.len()).any(|i| v(i) == lo && d[i].is_infinite());
            let hi_inf = (0..objs.len()).any(|i| v(i) == hi && d[i].is_infinite());
            ensure!(lo_inf && hi_inf, "front {k}: axis {axis} boundary is finite");
        }
    }

    let tmp = tempfile::tempdir().map_err(err)?;
    let (m, platform, p) = dse_instance(3);
    let set = fixtures::FixtureSet {
        model: m,
        platform,
        ..fixtures::build(FixtureKind::Chain, 0)
    };
    fixtures::write(&set, tmp.path()).map_err(err)?;
    p.write(&tmp.path().join("profile.json")).map_err(err)?;
    let run = |out: &str| -> Result<Vec<u8>, String> {
        let status = std::process::Command::new(BIN)
            .args(["dse", "--model", "model.json", "--weights", "weights.bin", "--platform", "platform.txt"])
            .args(["--profile", "profile.json", "--seed", "5", "--out", out])
            .current_dir(tmp.path())
            .stdout(std::process::Stdio::null())
            .status()
            .map_err(err)?;
        ensure!(status.success(), "dse exited with {status}");
        fs::read(tmp.path().join(out).join("pareto.csv")).map_err(err)
    };
    let (a, b) = (run("a")?, run("b")?);
    ensure!(a == b, "pareto.csv differs between runs");
    Ok(format!("{} fronts match the oracle; pareto.csv identical ({} bytes)", fronts.len(), a.len()))
}

fn toolchain_speed() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let set = fixtures::build(FixtureKind::Deep, 0);
    let hidden = set.model.hidden_layers().count();
    let params = set.model.weights().param_count();
    ensure!(hidden >= 900, "{hidden} layers");
    ensure!(params >= 8_000_000, "{params} parameters");
    fixtures::write(&set, tmp.path()).map_err(err)?;
    let out = tmp.path().join("packages");
    let t = Instant::now();
    let outcome = cmd_package(&deploy_args(tmp.path(), &out)).map_err(err)?;
    let total = t.elapsed();
    ensure!(outcome.packages.len() == 24, "{} partitions", outcome.packages.len());
    let manifest = RunManifest::read(&outcome.manifest).map_err(err)?;
    ensure!(manifest.wall_time_ms > 0.0, "manifest wall time {}", manifest.wall_time_ms);
    ensure!(manifest.wall_time_ms < 60_000.0, "front-end + back-end took {} ms", manifest.wall_time_ms);
    Ok(format!(
        "{hidden} layers, {params} parameters, 24 partitions in {:.0} ms (manifest), {:.1} s including hashing",
        manifest.wall_time_ms,
        total.as_secs_f64()
    ))
}

fn round_trips() -> Outcome {
    const CASES: u32 = 500;
    let runner = || {
        TestRunner::new(Config {
            cases: CASES,
            failure_persistence: None,
            ..Config::default()
        })
    };
    let check = |name: &str, r: Result<(), proptest::test_runner::TestError<u64>>| r.map_err(|e| format!("{name}: {e}"));

    check(
        "model",
        runner().run(&any::<u64>(), |seed| {
            let m = zoo::random_model(seed, 12);
            let text = m.graph_json();
            let g = edgesplit::model::parse_graph(&text).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&g, &m.to_graph());
            let again = edgesplit::model::Model::from_graph(g, m.weights().clone()).unwrap();
            prop_assert_eq!(again.graph_json(), text);
            Ok(())
        }),
    )?;
    check(
        "weights",
        runner().run(&any::<u64>(), |seed| {
            let store = zoo::random_model(seed, 8).weights().clone();
            let bytes = store.encode();
            let back = WeightStore::decode(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&back, &store);
            prop_assert_eq!(back.encode(), bytes);
            Ok(())
        }),
    )?;
    check(
        "mapping",
        runner().run(&any::<u64>(), |seed| {
            let m = zoo::random_model(seed, 12);
            let ranks = (1 + seed as usize % 5).min(m.hidden_layers().count());
            let ms = zoo::random_mapping(&m, &zoo::uniform_platform(3, 4, true), ranks, &mut rng(seed));
            let text = ms.format();
            let back = MappingSpec::parse(&text).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&back, &ms);
            prop_assert_eq!(back.format(), text);
            Ok(())
        }),
    )?;
    check(
        "platform",
        runner().run(&any::<u64>(), |seed| {
            let p = zoo::random_platform(&mut rng(seed));
            let text = p.format();
            let back = PlatformSpec::parse(&text).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&back, &p);
            prop_assert_eq!(back.format(), text);
            Ok(())
        }),
    )?;
    check(
        "plan",
        runner().run(&any::<u64>(), |seed| {
            let m = zoo::random_model(seed, 12);
            let ranks = (1 + seed as usize % 4).min(m.hidden_layers().count());
            let ms = zoo::random_mapping(&m, &zoo::uniform_platform(4, 4, true), ranks, &mut rng(seed));
            let c = compile(&m, &ms).unwrap();
            for p in &c.plans {
                let text = p.to_json();
                let back = ExecutionPlan::from_json(&text).map_err(|e| TestCaseError::fail(e.to_string()))?;
                prop_assert_eq!(&back, p);
                prop_assert_eq!(back.to_json(), text);
            }
            Ok(())
        }),
    )?;
    check(
        "profile",
        runner().run(&any::<u64>(), |seed| {
            let m = zoo::random_model(seed, 10);
            let p = zoo::random_profile(&m, &["cpu1", "cpu4", "gpu", "dev0/cpu1"], &mut rng(seed));
            let text = p.format();
            let back = Profile::parse(&text).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&back, &p);
            prop_assert_eq!(back.format(), text);
            Ok(())
        }),
    )?;
    Ok(format!("{CASES} cases each for model, weights, mapping, platform, plan, profile"))
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() {
    let secs = |s: u64| Some(Duration::from_secs(s));
    let all = [
        Criterion { id: 1, name: "diamond golden", limit: secs(1), run: diamond_golden },
        Criterion { id: 2, name: "functional equivalence", limit: secs(120), run: functional_equivalence },
        Criterion { id: 3, name: "structural invariants", limit: secs(30), run: structural_invariants },
        Criterion { id: 4, name: "deadlock freedom", limit: None, run: deadlock_freedom },
        Criterion { id: 5, name: "pipeline throughput", limit: None, run: pipeline_throughput },
        Criterion { id: 6, name: "dse oracle", limit: secs(120), run: dse_oracle },
        Criterion { id: 7, name: "nsga2 internals", limit: None, run: nsga2_internals },
        Criterion { id: 8, name: "toolchain speed", limit: None, run: toolchain_speed },
        Criterion { id: 9, name: "format round trips", limit: None, run: round_trips },
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<&Criterion> = all
        .iter()
        .filter(|c| filters.is_empty() || filters.iter().any(|f| *f == c.id.to_string() || c.name.contains(f.as_str())))
        .collect();

    let mut failed = 0;
    for c in &selected {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = t.elapsed();
        let result = match (result, c.limit) {
            (Ok(_), Some(limit)) if took > limit => Err(format!("took {:.1} s, limit {} s", took.as_secs_f64(), limit.as_secs())),
            (r, _) => r,
        };
        let (word, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {} [{}]: {word} ({:.2} s) {detail}", c.id, c.name, took.as_secs_f64());
        failed += result.is_err() as usize;
    }
    println!("acceptance: {} passed, {failed} failed", selected.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
