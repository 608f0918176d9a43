//! Multi-process launcher and the worker side of its handshake.
//!
//! The launcher spawns one process per package with `RANK` and the endpoints
//! path in the environment. Each worker binds its mesh connections, prints
//! `READY` on stdout and waits for `GO` on stdin, so measured time covers
//! inference only. Results come back as `result_<rank>.json` plus, for the
//! rank owning the Output layer, `output_<rank>.bin` holding every
//! iteration's output back to back.

use std::env;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::model::{OpParams, TensorSpec};
use crate::plan::{check_plan, DeploymentPackage};

use super::{
    decode_f32s, encode_f32s, read_raw_tensor, write_raw_tensor, RankEndpoints, RankOptions, RankResult, RankRuntime,
    RuntimeError, Tensor,
};

pub const RANK_ENV: &str = "RANK";
pub const ENDPOINTS_ENV: &str = "EDGESPLIT_ENDPOINTS";
/// Number of plan actions after which the worker exits abruptly.
pub const FAULT_ENV: &str = "EDGESPLIT_FAULT_EXIT_AFTER";

/// Program that runs one rank. The launcher appends
/// `--package <dir> --out <dir> --repeat <n> --timeout <secs> [--input <file>]`.
#[derive(Debug, Clone)]
pub struct WorkerCommand {
    pub program: PathBuf,
    pub args: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct LaunchOptions {
    pub repeat: usize,
    pub worker: WorkerCommand,
    pub input: Option<Tensor<f32>>,
    /// Bound on the whole launch; also the per-wait bound inside ranks.
    pub timeout: Duration,
    /// Scratch directory for the endpoints file, input and results.
    pub work_dir: PathBuf,
    /// `(rank, actions)`: make that rank exit after that many actions.
    pub fault: Option<(usize, usize)>,
}

impl LaunchOptions {
    pub fn new(worker: WorkerCommand, work_dir: impl Into<PathBuf>) -> LaunchOptions {
        LaunchOptions {
            repeat: 1,
            worker,
            input: None,
            timeout: Duration::from_secs(30),
            work_dir: work_dir.into(),
            fault: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InferenceResult {
    /// One output per iteration.
    pub outputs: Vec<Tensor<f32>>,
    /// Inferences per second over the slowest rank's run time.
    pub throughput_fps: f64,
    pub ranks: Vec<RankResult>,
}

/// Kills every child still running when dropped.
struct Children(Vec<Option<Child>>);

impl Drop for Children {
    fn drop(&mut self) {
        for c in self.0.iter_mut().flatten() {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

enum Event {
    Line(usize, String),
    Eof(usize),
}

fn tail(s: &Mutex<String>) -> String {
    let s = s.lock().unwrap();
    s.lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("")
        .trim()
        .to_string()
}

pub fn launch(packages: &[PathBuf], opts: &LaunchOptions) -> Result<InferenceResult, RuntimeError> {
    if packages.is_empty() {
        return Err(RuntimeError::Config("no packages to launch".into()));
    }
    if opts.repeat == 0 {
        return Err(RuntimeError::Config("repeat must be positive".into()));
    }
    let mut pkgs = packages
        .iter()
        .map(|p| DeploymentPackage::load(p).map_err(RuntimeError::from))
        .collect::<Result<Vec<_>, _>>()?;
    pkgs.sort_by_key(|p| p.rank());
    if pkgs.iter().map(|p| p.rank()).ne(0..pkgs.len()) {
        return Err(RuntimeError::Config("package ranks are not 0..n".into()));
    }
    if let Some(p) = pkgs.iter().find(|p| p.rankfile_text != pkgs[0].rankfile_text) {
        return Err(RuntimeError::Config(format!(
            "{} carries a different rankfile than {}",
            p.dir.display(),
            pkgs[0].dir.display()
        )));
    }
    if pkgs[0].rankfile.len() != pkgs.len() {
        return Err(RuntimeError::Config(format!(
            "rankfile lists {} ranks, {} packages given",
            pkgs[0].rankfile.len(),
            pkgs.len()
        )));
    }
    for p in &pkgs {
        check_plan(&p.plan, &p.submodel)?;
    }

    let work = &opts.work_dir;
    fs::create_dir_all(work).map_err(|e| RuntimeError::io(work, e))?;
    let eps_path = work.join("endpoints.json");
    RankEndpoints::loopback(pkgs.len())?.write(&eps_path)?;
    let input_path = match &opts.input {
        Some(t) => {
            let p = work.join("input.bin");
            write_raw_tensor(&p, t)?;
            Some(p)
        }
        None => None,
    };

    let n = pkgs.len();
    let (tx, rx) = mpsc::channel::<Event>();
    let mut children = Children(Vec::with_capacity(n));
    let mut stdins: Vec<Option<ChildStdin>> = Vec::with_capacity(n);
    let mut stderrs: Vec<Arc<Mutex<String>>> = Vec::with_capacity(n);
    for p in &pkgs {
        let rank = p.rank();
        let mut cmd = Command::new(&opts.worker.program);
        cmd.args(&opts.worker.args)
            .arg("--package")
            .arg(&p.dir)
            .arg("--out")
            .arg(work)
            .arg("--repeat")
            .arg(opts.repeat.to_string())
            .arg("--timeout")
            .arg(opts.timeout.as_secs_f64().to_string())
            .env(RANK_ENV, rank.to_string())
            .env(ENDPOINTS_ENV, &eps_path)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        if let Some(i) = &input_path {
            cmd.arg("--input").arg(i);
        }
        match opts.fault {
            Some((r, after)) if r == rank => {
                cmd.env(FAULT_ENV, after.to_string());
            }
            _ => {
                cmd.env_remove(FAULT_ENV);
            }
        }
        let mut child = cmd.spawn().map_err(|e| RuntimeError::Spawn {
            rank,
            reason: format!("{}: {e}", opts.worker.program.display()),
        })?;
        stdins.push(child.stdin.take());
        let out = child.stdout.take().expect("piped stdout");
        let tx = tx.clone();
        thread::spawn(move || {
            for line in BufReader::new(out).lines().map_while(Result::ok) {
                let _ = tx.send(Event::Line(rank, line));
            }
            let _ = tx.send(Event::Eof(rank));
        });
        let buf = Arc::new(Mutex::new(String::new()));
        let mut err = child.stderr.take().expect("piped stderr");
        let b = buf.clone();
        thread::spawn(move || {
            let mut chunk = [0u8; 4096];
            while let Ok(k) = err.read(&mut chunk) {
                if k == 0 {
                    break;
                }
                let mut s = b.lock().unwrap();
                s.push_str(&String::from_utf8_lossy(&chunk[..k]));
                if s.len() > 1 << 16 {
                    let cut = s.len() - (1 << 15);
                    let cut = (cut..s.len()).find(|&i| s.is_char_boundary(i)).unwrap_or(s.len());
                    s.drain(..cut);
                }
            }
        });
        stderrs.push(buf);
        children.0.push(Some(child));
    }
    drop(tx);

    let deadline = Instant::now() + opts.timeout;
    let mut ready = vec![false; n];
    let mut failures: Vec<(usize, String)> = Vec::new();
    while ready.iter().any(|r| !r) && failures.is_empty() {
        let left = deadline.saturating_duration_since(Instant::now());
        match rx.recv_timeout(left) {
            Ok(Event::Line(r, l)) if l.trim() == "READY" => ready[r] = true,
            Ok(Event::Line(r, l)) => log::debug!("rank {r}: {l}"),
            Ok(Event::Eof(r)) => failures.push((r, "exited before the start barrier".into())),
            Err(_) => {
                for r in (0..n).filter(|&r| !ready[r]) {
                    failures.push((r, "not ready before the launch timeout".into()));
                }
            }
        }
    }
    if failures.is_empty() {
        for (r, s) in stdins.iter_mut().enumerate() {
            let ok = s
                .as_mut()
                .map(|s| s.write_all(b"GO\n").and_then(|_| s.flush()).is_ok())
                .unwrap_or(false);
            if !ok {
                failures.push((r, "start barrier write failed".into()));
            }
        }
    }
    stdins.clear();

    // Nobody has started yet, so there is no cascade to wait for. Peers may
    // still be retrying connections to the failed rank.
    if !failures.is_empty() {
        for (r, c) in children.0.iter_mut().enumerate() {
            let Some(c) = c.as_mut() else { continue };
            if matches!(c.try_wait(), Ok(None)) {
                let _ = c.kill();
                let _ = c.wait();
                if !failures.iter().any(|(fr, _)| *fr == r) {
                    failures.push((r, "stopped before start: a peer failed".into()));
                }
            }
        }
    }

    // Once a rank fails, peers notice through their sockets; the grace
    // period only bounds how long the launcher waits for that cascade.
    let grace = Duration::from_secs(5);
    let mut first_failure: Option<Instant> = (!failures.is_empty()).then(Instant::now);
    let mut status: Vec<Option<std::process::ExitStatus>> = vec![None; n];
    loop {
        for r in 0..n {
            if status[r].is_some() {
                continue;
            }
            if let Some(c) = children.0[r].as_mut() {
                if let Ok(Some(s)) = c.try_wait() {
                    status[r] = Some(s);
                    if !s.success() {
                        first_failure.get_or_insert_with(Instant::now);
                    }
                }
            }
        }
        if status.iter().all(Option::is_some) {
            break;
        }
        let now = Instant::now();
        let give_up = now >= deadline || first_failure.is_some_and(|t| now - t >= grace);
        if give_up {
            for r in 0..n {
                if status[r].is_none() {
                    if let Some(c) = children.0[r].as_mut() {
                        let _ = c.kill();
                        status[r] = c.wait().ok();
                    }
                    let why = if now >= deadline { "timed out (suspected deadlock)" } else { "killed after a peer failed" };
                    failures.push((r, why.into()));
                }
            }
            break;
        }
        thread::sleep(Duration::from_millis(2));
    }
    // Drain stdout threads so stderr tails are complete.
    while rx.recv_timeout(Duration::from_millis(50)).is_ok() {}

    for (r, s) in status.iter().enumerate() {
        if let Some(s) = s {
            if !s.success() && !failures.iter().any(|(fr, _)| *fr == r) {
                let t = tail(&stderrs[r]);
                failures.push((r, if t.is_empty() { format!("exited with {s}") } else { format!("exited with {s}: {t}") }));
            }
        }
    }
    if !failures.is_empty() {
        failures.sort_by_key(|(r, _)| *r);
        for (r, msg) in failures.iter_mut() {
            let t = tail(&stderrs[*r]);
            if !t.is_empty() && !msg.contains(&t) {
                msg.push_str(": ");
                msg.push_str(&t);
            }
        }
        return Err(RuntimeError::Ranks(failures));
    }

    let mut ranks = Vec::with_capacity(n);
    let mut outputs = Vec::new();
    for p in &pkgs {
        let rank = p.rank();
        let path = work.join(format!("result_{rank}.json"));
        let text = fs::read_to_string(&path).map_err(|e| RuntimeError::io(&path, e))?;
        let res: RankResult = serde_json::from_str(&text)
            .map_err(|e| RuntimeError::Protocol(format!("{}: {e}", path.display())))?;
        if p.submodel.owns_output() {
            let spec = output_spec(p)?;
            let path = work.join(format!("output_{rank}.bin"));
            let bytes = fs::read(&path).map_err(|e| RuntimeError::io(&path, e))?;
            let values = decode_f32s(&bytes)
                .filter(|v| v.len() == spec.numel() * opts.repeat)
                .ok_or_else(|| RuntimeError::Protocol(format!("{}: unexpected size", path.display())))?;
            for chunk in values.chunks(spec.numel()) {
                outputs.push(Tensor::new(spec.clone(), chunk.to_vec())?);
            }
        }
        ranks.push(res);
    }
    let slowest = ranks.iter().map(|r| r.elapsed_ms).fold(0.0, f64::max).max(1e-6);
    Ok(InferenceResult {
        outputs,
        throughput_fps: opts.repeat as f64 * 1000.0 / slowest,
        ranks,
    })
}

fn output_spec(p: &DeploymentPackage) -> Result<TensorSpec, RuntimeError> {
    let out = p
        .submodel
        .layers
        .iter()
        .find(|l| l.op == crate::model::Op::Output)
        .expect("owns output");
    shape_of_local(p, &out.name).ok_or_else(|| RuntimeError::Config(format!("cannot infer the shape of {}", out.name)))
}

/// Shape of a local layer, inferred from the sub-model's own graph.
fn shape_of_local(p: &DeploymentPackage, name: &str) -> Option<TensorSpec> {
    let sm = &p.submodel;
    let mut shapes: std::collections::HashMap<String, TensorSpec> = sm
        .input_buffers
        .iter()
        .map(|b| (b.layer.clone(), b.shape.clone()))
        .collect();
    for l in &sm.layers {
        let spec = match l.params().ok()? {
            OpParams::Input { shape } => TensorSpec::new(shape),
            _ => {
                let ins: Vec<&TensorSpec> = l.inputs.iter().map(|i| shapes.get(i)).collect::<Option<_>>()?;
                crate::model::output_shape(l, &ins).ok()?
            }
        };
        shapes.insert(l.name.clone(), spec);
    }
    shapes.remove(name)
}

#[derive(Debug, Clone)]
pub struct WorkerArgs {
    pub package: PathBuf,
    pub out_dir: PathBuf,
    pub repeat: usize,
    pub timeout: Duration,
    pub input: Option<PathBuf>,
}

fn env_var(name: &str) -> Result<String, RuntimeError> {
    env::var(name).map_err(|_| RuntimeError::Config(format!("environment variable {name} is not set")))
}

/// Worker entry point: runs one rank under the launcher's handshake.
pub fn run_worker(args: &WorkerArgs) -> Result<RankResult, RuntimeError> {
    let pkg = DeploymentPackage::load(&args.package)?;
    let rank: usize = env_var(RANK_ENV)?
        .parse()
        .map_err(|_| RuntimeError::Config(format!("{RANK_ENV} is not a rank index")))?;
    if rank != pkg.rank() {
        return Err(RuntimeError::Config(format!(
            "{RANK_ENV}={rank} but {} is rank {}",
            args.package.display(),
            pkg.rank()
        )));
    }
    check_plan(&pkg.plan, &pkg.submodel)?;
    let endpoints = RankEndpoints::read(Path::new(&env_var(ENDPOINTS_ENV)?))?;
    let input = if pkg.submodel.owns_input() {
        let path = args
            .input
            .as_ref()
            .ok_or_else(|| RuntimeError::Config(format!("rank {rank} owns the Input layer but no input was given")))?;
        let shape = pkg
            .submodel
            .layers
            .iter()
            .find_map(|l| match l.params() {
                Ok(OpParams::Input { shape }) => Some(shape),
                _ => None,
            })
            .expect("owns input");
        Some(read_raw_tensor(path, &TensorSpec::new(shape))?)
    } else {
        None
    };
    let fault_exit_after = match env::var(FAULT_ENV) {
        Ok(v) => Some(v.parse().map_err(|_| RuntimeError::Config(format!("{FAULT_ENV}={v:?}")))?),
        Err(_) => None,
    };
    let opts = RankOptions {
        repeat: args.repeat,
        timeout: args.timeout,
        connect_timeout: args.timeout,
        fault_exit_after,
    };
    let rt = RankRuntime::bind(pkg.plan.clone(), pkg.submodel.clone(), &endpoints, opts)?;

    let mut stdout = std::io::stdout();
    writeln!(stdout, "READY")
        .and_then(|_| stdout.flush())
        .map_err(|e| RuntimeError::Config(format!("stdout: {e}")))?;
    let mut line = String::new();
    std::io::stdin()
        .read_line(&mut line)
        .map_err(|e| RuntimeError::Config(format!("stdin: {e}")))?;
    if line.trim() != "GO" {
        return Err(RuntimeError::Config("launcher did not release the start barrier".into()));
    }

    let res = rt.run(input.as_ref())?;
    fs::create_dir_all(&args.out_dir).map_err(|e| RuntimeError::io(&args.out_dir, e))?;
    if pkg.submodel.owns_output() {
        let path = args.out_dir.join(format!("output_{rank}.bin"));
        let mut bytes = Vec::new();
        for o in &res.outputs {
            bytes.extend(encode_f32s(&o.data));
        }
        fs::write(&path, bytes).map_err(|e| RuntimeError::io(&path, e))?;
    }
    let path = args.out_dir.join(format!("result_{rank}.json"));
    fs::write(&path, serde_json::to_string_pretty(&res).unwrap()).map_err(|e| RuntimeError::io(&path, e))?;
    Ok(res)
}
