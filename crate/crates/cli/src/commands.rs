use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Args;
use edgesplit::cost::{profile_layers, Profile, ProfileOptions};
use edgesplit::dse::{decode, run_nsga2_with, write_pareto_csv, write_stats_jsonl, GAConfig, PARETO_HEADER};
use edgesplit::model::{load_model, Model, OpParams, TensorSpec};
use edgesplit::pipeline::{compile, Compiled};
use edgesplit::plan::{render_pseudo_cpp, DeploymentPackage};
use edgesplit::runtime::{launch, run_worker, LaunchOptions, RankResult, WorkerArgs, WorkerCommand};
use edgesplit::specio::{parse_mapping, parse_platform, resource_options, MappingSpec, OptionPolicy, PlatformSpec};
use edgesplit::split::cut_edges;
use edgesplit::{zoo, Tensor32};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::fixtures::{self, FixtureKind};
use crate::input::read_input;
use crate::manifest::{files_under, ManifestBuilder};
use crate::CliError;

/// Model graph JSON plus its weight file.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Layer graph: JSON `{"name", "layers": [{"name", "op", "inputs", "attrs", "weights"}]}`.
    #[arg(long)]
    pub model: PathBuf,
    /// Weight store: `ADCE` magic, version, then named little-endian float32 tensors.
    #[arg(long)]
    pub weights: PathBuf,
}

/// Everything the front end reads.
#[derive(Debug, Clone, Args)]
pub struct DeployArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Platform: one `name cpu=<arch> slots=<a>-<b> [gpu=<arch> api=<api>]` line per device.
    #[arg(long)]
    pub platform: PathBuf,
    /// Mapping: JSON object from resource key (`edge01_arm123`, `edge01_gpu`) to layer names.
    #[arg(long)]
    pub mapping: PathBuf,
}

pub struct Loaded {
    pub model: Model,
    pub platform: PlatformSpec,
    pub mapping: MappingSpec,
}

impl ModelArgs {
    pub fn load(&self) -> Result<Model, CliError> {
        Ok(load_model(&self.model, &self.weights)?)
    }

    fn paths(&self) -> [&Path; 2] {
        [&self.model, &self.weights]
    }
}

impl DeployArgs {
    pub fn load(&self) -> Result<Loaded, CliError> {
        let model = self.model.load()?;
        let platform = parse_platform(&self.platform)?;
        let mapping = parse_mapping(&self.mapping, &model, &platform)?;
        Ok(Loaded {
            model,
            platform,
            mapping,
        })
    }

    fn paths(&self) -> Vec<&Path> {
        let [m, w] = self.model.paths();
        vec![m, w, &self.platform, &self.mapping]
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Also check this platform file.
    #[arg(long)]
    pub platform: Option<PathBuf>,
    /// Also check this mapping against the model and platform (needs --platform).
    #[arg(long, requires = "platform")]
    pub mapping: Option<PathBuf>,
}

pub fn cmd_validate(a: &ValidateArgs) -> Result<String, CliError> {
    let m = a.model.load()?;
    let mut report = format!(
        "model {}: {} layers, {} parameters, {} weight bytes\n",
        m.name(),
        m.layers().len(),
        m.weights().param_count(),
        m.weights().total_bytes()
    );
    if let Some(p) = &a.platform {
        let platform = parse_platform(p)?;
        report += &format!("platform: {} devices\n", platform.devices.len());
        if let Some(ms) = &a.mapping {
            let ms = parse_mapping(ms, &m, &platform)?;
            report += &format!("mapping: {} ranks, {} cut edges\n", ms.len(), cut_edges(&m, &ms).len());
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Args)]
pub struct StageArgs {
    #[command(flatten)]
    pub deploy: DeployArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Writes `submodel_<rank>/` directories and `cuts.json`.
pub fn cmd_split(a: &StageArgs) -> Result<Vec<PathBuf>, CliError> {
    let l = a.deploy.load()?;
    let subs = edgesplit::split::split_model(&l.model, &l.mapping)?;
    create_dir(&a.out)?;
    let mut out = Vec::new();
    for sm in &subs {
        let dir = a.out.join(format!("submodel_{}", sm.rank));
        create_dir(&dir)?;
        let (g, w) = sm.save(&dir)?;
        out.extend([g, w]);
    }
    let cuts: Vec<_> = cut_edges(&l.model, &l.mapping)
        .iter()
        .map(|c| json!({ "buffer": c.buffer.to_string(), "producer": c.src_layer, "consumer": c.dst_layer, "src": c.src_rank, "dst": c.dst_rank, "shape": c.shape.dims }))
        .collect();
    out.push(write_text(&a.out.join("cuts.json"), serde_json::to_string_pretty(&cuts).unwrap())?);
    Ok(out)
}

/// Writes the sender and receiver tables and the rankfile.
pub fn cmd_commgen(a: &StageArgs) -> Result<Vec<PathBuf>, CliError> {
    let l = a.deploy.load()?;
    let c = compile(&l.model, &l.mapping)?;
    create_dir(&a.out)?;
    Ok(vec![
        write_text(&a.out.join("sender.json"), c.senders.to_json())?,
        write_text(&a.out.join("receiver.json"), c.receivers.to_json())?,
        write_text(&a.out.join("rankfile.txt"), c.rankfile.format())?,
    ])
}

/// Writes `plan_<rank>.json` per rank and a readable `plans.txt`.
pub fn cmd_plan(a: &StageArgs) -> Result<Vec<PathBuf>, CliError> {
    let l = a.deploy.load()?;
    let c = compile(&l.model, &l.mapping)?;
    create_dir(&a.out)?;
    let mut out = Vec::new();
    for p in &c.plans {
        out.push(write_text(&a.out.join(format!("plan_{}.json", p.rank)), p.to_json())?);
    }
    out.push(write_text(&a.out.join("plans.txt"), render_pseudo_cpp(&c.plans))?);
    Ok(out)
}

pub struct PackageOutcome {
    pub packages: Vec<PathBuf>,
    pub manifest: PathBuf,
    pub wall_time_ms: f64,
}

/// Front end and back end: packages plus `manifest.json`.
pub fn cmd_package(a: &StageArgs) -> Result<PackageOutcome, CliError> {
    let build = ManifestBuilder::start("package", &a.deploy.paths());
    let l = a.deploy.load()?;
    let c: Compiled = compile(&l.model, &l.mapping)?;
    create_dir(&a.out)?;
    let packages = c.write_packages(&a.out)?;
    let mut outputs = Vec::new();
    for p in &packages {
        outputs.extend(files_under(p)?);
    }
    let details = json!({
        "ranks": packages.len(),
        "layers": l.model.layers().len(),
        "parameters": l.model.weights().param_count(),
        "cut_edges": c.senders.triples().len(),
    });
    let manifest = build.finish(&outputs, details)?;
    let path = a.out.join("manifest.json");
    manifest.write(&path)?;
    Ok(PackageOutcome {
        packages,
        manifest: path,
        wall_time_ms: manifest.wall_time_ms,
    })
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Directory holding `package_<rank>/` directories.
    #[arg(long)]
    pub packages: PathBuf,
    /// Input image: 8-bit binary PGM (scaled to [0,1]) or raw little-endian
    /// float32 of the Input shape. A seeded random input is used when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Inferences to pipeline through the mesh.
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
    /// Seconds before an unresponsive launch is killed.
    #[arg(long, default_value_t = 30.0)]
    pub timeout: f64,
    /// Results file; defaults to `<packages>/results.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed of the random input.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker executable; defaults to this binary.
    #[arg(long, hide = true)]
    pub worker: Option<PathBuf>,
    /// Make this rank exit abruptly (with --fault-after).
    #[arg(long, hide = true, requires = "fault_after")]
    pub fault_rank: Option<usize>,
    #[arg(long, hide = true)]
    pub fault_after: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunResults {
    pub repeat: usize,
    pub throughput_fps: f64,
    pub output_shape: Vec<usize>,
    pub outputs: Vec<Vec<f32>>,
    pub ranks: Vec<RankResult>,
}

/// `package_<n>` directories under `dir`, ordered by `n`.
pub fn package_dirs(dir: &Path) -> Result<Vec<(usize, PathBuf)>, CliError> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let p = e.map_err(|e| CliError::io(dir, e))?.path();
        let rank = p
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("package_"))
            .and_then(|n| n.parse::<usize>().ok());
        if let (Some(r), true) = (rank, p.is_dir()) {
            out.push((r, p));
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(CliError::validation(format!("{}: no package_<rank> directories", dir.display())));
    }
    Ok(out)
}

fn input_spec(pkgs: &[DeploymentPackage]) -> Option<TensorSpec> {
    pkgs.iter().flat_map(|p| &p.submodel.layers).find_map(|l| match l.params() {
        Ok(OpParams::Input { shape }) => Some(TensorSpec::new(shape)),
        _ => None,
    })
}

pub fn cmd_run(a: &RunArgs) -> Result<RunResults, CliError> {
    let dirs = package_dirs(&a.packages)?;
    let pkgs = dirs
        .iter()
        .map(|(r, d)| DeploymentPackage::load(d).map_err(|e| CliError::runtime(format!("rank {r}: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = input_spec(&pkgs).ok_or_else(|| CliError::validation("no package owns the Input layer"))?;
    let input = match &a.input {
        Some(p) => read_input(p, &spec)?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let data = (0..spec.numel()).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            Tensor32::new(spec, data).expect("random input fills shape")
        }
    };
    let mut inputs: Vec<&Path> = dirs.iter().map(|(_, d)| d.as_path()).collect();
    if let Some(p) = &a.input {
        inputs.push(p);
    }
    let build = ManifestBuilder::start("run", &[]);
    let program = match &a.worker {
        Some(w) => w.clone(),
        None => std::env::current_exe().map_err(|e| CliError::runtime(format!("locating the worker binary: {e}")))?,
    };
    let mut opts = LaunchOptions::new(
        WorkerCommand {
            program,
            args: vec!["rank".into()],
        },
        a.packages.join("run"),
    );
    opts.repeat = a.repeat;
    opts.input = Some(input);
    opts.timeout = Duration::from_secs_f64(a.timeout);
    opts.fault = a.fault_rank.zip(a.fault_after);
    let paths: Vec<PathBuf> = dirs.iter().map(|(_, d)| d.clone()).collect();
    let res = launch(&paths, &opts)?;

    let results = RunResults {
        repeat: a.repeat,
        throughput_fps: res.throughput_fps,
        output_shape: res.outputs.first().map(|o| o.spec.dims.clone()).unwrap_or_default(),
        outputs: res.outputs.iter().map(|o| o.data.clone()).collect(),
        ranks: res.ranks,
    };
    let out = a.out.clone().unwrap_or_else(|| a.packages.join("results.json"));
    write_text(&out, serde_json::to_string_pretty(&results).unwrap() + "\n")?;
    let mut manifest = build.finish(std::slice::from_ref(&out), json!({ "throughput_fps": results.throughput_fps, "random_input_seed": a.input.is_none().then_some(a.seed) }))?;
    for d in inputs {
        if d.is_dir() {
            manifest.inputs.extend(files_under(d)?.iter().map(|f| crate::manifest::FileRecord::of(f)).collect::<Result<Vec<_>, _>>()?);
        } else {
            manifest.inputs.push(crate::manifest::FileRecord::of(d)?);
        }
    }
    manifest.write(&out.with_extension("manifest.json"))?;
    Ok(results)
}

#[derive(Debug, Clone, Args)]
pub struct WorkerCliArgs {
    #[arg(long)]
    pub package: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
    #[arg(long, default_value_t = 30.0)]
    pub timeout: f64,
    #[arg(long)]
    pub input: Option<PathBuf>,
}

/// One rank under the launcher's handshake.
pub fn cmd_rank(a: &WorkerCliArgs) -> Result<(), CliError> {
    run_worker(&WorkerArgs {
        package: a.package.clone(),
        out_dir: a.out.clone(),
        repeat: a.repeat,
        timeout: Duration::from_secs_f64(a.timeout),
        input: a.input.clone(),
    })?;
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Platform whose resource kinds get profiled.
    #[arg(long)]
    pub platform: PathBuf,
    /// Profile JSON to write: per-layer latency (ms) and energy (mJ) by kind, plus link costs.
    #[arg(long)]
    pub out: PathBuf,
    /// Timed runs per layer and kind; the median is recorded.
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Leave GPUs out of the resource options.
    #[arg(long)]
    pub cpu_only: bool,
    /// Skip the loopback link benchmark and record free links.
    #[arg(long)]
    pub no_link: bool,
}

fn policy(cpu_only: bool) -> OptionPolicy {
    if cpu_only {
        OptionPolicy::CpuOnly
    } else {
        OptionPolicy::SingleAllGpu
    }
}

pub fn cmd_profile(a: &ProfileArgs) -> Result<Profile, CliError> {
    let m = a.model.load()?;
    let platform = parse_platform(&a.platform)?;
    let opts = ProfileOptions {
        repeats: a.repeats,
        seed: a.seed,
        measure_link: !a.no_link,
        ..ProfileOptions::for_platform(&platform, policy(a.cpu_only))
    };
    let p = profile_layers(&m, &opts)?;
    p.write(&a.out)?;
    Ok(p)
}

#[derive(Debug, Clone, Args)]
pub struct DseArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub platform: PathBuf,
    /// Profile JSON as written by `profile`.
    #[arg(long)]
    pub profile: PathBuf,
    /// Directory for pareto.csv, mappings/ and stats.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub population: usize,
    #[arg(long, default_value_t = 400)]
    pub generations: usize,
    #[arg(long, default_value_t = 0.1)]
    pub mutation: f64,
    #[arg(long, default_value_t = 0.5)]
    pub crossover: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub cpu_only: bool,
    /// Launch every Pareto mapping for this many inferences and write
    /// measured throughput to measured.csv. Slow; timings are not reproducible.
    #[arg(long)]
    pub measure: Option<usize>,
    #[arg(long, hide = true)]
    pub worker: Option<PathBuf>,
}

pub struct DseOutcome {
    pub config: GAConfig,
    pub pareto_csv: PathBuf,
    pub points: usize,
}

pub fn cmd_dse(a: &DseArgs) -> Result<DseOutcome, CliError> {
    let cfg = GAConfig {
        population_size: a.population,
        generations: a.generations,
        mutation_prob: a.mutation,
        crossover_prob: a.crossover,
        seed: a.seed,
    };
    cfg.validate()?;
    let m = a.model.load()?;
    let platform = parse_platform(&a.platform)?;
    let prof = Profile::read(&a.profile)?;
    prof.check_against(&m)?;
    let options = resource_options(&platform, policy(a.cpu_only));
    create_dir(&a.out)?;
    let build = ManifestBuilder::start("dse", &[&a.model.model, &a.model.weights, &a.platform, &a.profile]);
    let mut stats = Vec::new();
    let archive = run_nsga2_with(&m, &options, &prof, &cfg, |s| {
        log::info!(
            "generation {}: {} evaluated, archive {}",
            s.generation,
            s.evaluations,
            s.archive_size
        );
        stats.push(s.clone());
    })?;
    let csv = write_pareto_csv(&archive, &m, &options, &a.out)?;
    let stats_path = a.out.join("stats.jsonl");
    write_stats_jsonl(&stats_path, &cfg, &options, &stats)?;
    let mut outputs = vec![csv.clone(), stats_path];
    outputs.extend(files_under(&a.out.join("mappings"))?);

    if let Some(repeat) = a.measure {
        let program = match &a.worker {
            Some(w) => w.clone(),
            None => std::env::current_exe().map_err(|e| CliError::runtime(e.to_string()))?,
        };
        let mut text = format!("{PARETO_HEADER},measured_fps\n");
        let rows = fs::read_to_string(&csv).map_err(|e| CliError::io(&csv, e))?;
        let spec = m.shape(&m.input_layer().name).expect("input shape").clone();
        let input = Tensor32::new(spec, zoo::random_input(&m, a.seed)).expect("input fills shape");
        for ((c, _), row) in archive.sorted().iter().zip(rows.lines().skip(1)) {
            let ms = decode(c, &options, &m);
            let dir = a.out.join("measured").join(format!("point_{}", row.split(',').next().unwrap_or("x")));
            let pkgs = compile(&m, &ms)?.write_packages(&dir)?;
            let mut opts = LaunchOptions::new(
                WorkerCommand {
                    program: program.clone(),
                    args: vec!["rank".into()],
                },
                dir.join("run"),
            );
            opts.repeat = repeat;
            opts.input = Some(input.clone());
            let fps = launch(&pkgs, &opts)?.throughput_fps;
            text += &format!("{row},{fps}\n");
        }
        outputs.push(write_text(&a.out.join("measured.csv"), text)?);
    }

    let details = json!({ "config": cfg, "points": archive.len() });
    build.finish(&outputs, details)?.write(&a.out.join("manifest.json"))?;
    Ok(DseOutcome {
        config: cfg,
        pareto_csv: csv,
        points: archive.len(),
    })
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    /// Fixture set to generate.
    #[arg(value_enum)]
    pub kind: FixtureKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Writes a fixture set: model.json, weights.bin, platform.txt, mapping.json, input.bin.
pub fn cmd_gen(a: &GenArgs) -> Result<Vec<PathBuf>, CliError> {
    fixtures::write(&fixtures::build(a.kind, a.seed), &a.out)
}
