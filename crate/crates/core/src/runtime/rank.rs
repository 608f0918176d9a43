use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::model::Op;
use crate::plan::{ExecutionPlan, PlanAction};
use crate::split::{BufferId, SubModel};

use super::mesh::{Inbox, Outbox, RankEndpoints};
use super::wire::Message;
use super::{Executor, RuntimeError, Tensor, RUNTIME_OVERHEAD_BYTES};

#[derive(Debug, Clone)]
pub struct RankOptions {
    /// Inferences to run back to back.
    pub repeat: usize,
    /// Bound on any single wait; exceeding it is reported as a suspected deadlock.
    pub timeout: Duration,
    pub connect_timeout: Duration,
    /// Exit the process after this many actions of the first iteration.
    /// Fault injection for tests; never set in normal runs.
    pub fault_exit_after: Option<usize>,
}

impl Default for RankOptions {
    fn default() -> Self {
        RankOptions {
            repeat: 1,
            timeout: Duration::from_secs(30),
            connect_timeout: Duration::from_secs(10),
            fault_exit_after: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    pub rank: usize,
    /// One tensor per iteration if this rank owns the Output layer.
    #[serde(skip)]
    pub outputs: Vec<Tensor<f32>>,
    pub iteration_ms: Vec<f64>,
    pub elapsed_ms: f64,
    pub peak_memory_estimate: usize,
    pub measured_rss_bytes: Option<u64>,
    /// Frames consumed per registered receive, summed over iterations.
    pub frames_received: usize,
}

/// Weight bytes + boundary buffer bytes + fixed overhead.
pub fn peak_memory_estimate(sm: &SubModel) -> usize {
    sm.weights.total_bytes() + sm.buffer_bytes() + RUNTIME_OVERHEAD_BYTES
}

/// Peak resident set size of this process, where the host reports it.
fn measured_rss() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// A rank with its mesh connections established, ready to run.
pub struct RankRuntime {
    plan: ExecutionPlan,
    sm: SubModel,
    opts: RankOptions,
    exec: Executor,
    inbox: Inbox,
    outbox: Outbox,
    sources: BTreeMap<BufferId, usize>,
}

impl RankRuntime {
    /// Listens on this rank's endpoint and connects to every send
    /// destination in the plan. Blocks until all expected inbound peers
    /// have connected too.
    pub fn bind(
        plan: ExecutionPlan,
        sm: SubModel,
        endpoints: &RankEndpoints,
        opts: RankOptions,
    ) -> Result<RankRuntime, RuntimeError> {
        let rank = plan.rank;
        if sm.rank != rank {
            return Err(RuntimeError::Config(format!("plan rank {rank} with sub-model rank {}", sm.rank)));
        }
        if opts.repeat == 0 {
            return Err(RuntimeError::Config("repeat must be positive".into()));
        }
        let mut sources = BTreeMap::new();
        let mut dsts = BTreeSet::new();
        for a in &plan.actions {
            match a {
                PlanAction::RegisterRecv { buffer, src } => {
                    sources.insert(*buffer, *src);
                }
                PlanAction::Send { dst, .. } => dsts.extend(dst.iter().copied()),
                _ => {}
            }
        }
        let exec = Executor::new(plan.num_threads)?;
        let inbox = Inbox::bind(rank, endpoints.addr(rank)?)?;
        let outbox = Outbox::connect(rank, &dsts, endpoints, opts.connect_timeout)?;
        let srcs: BTreeSet<usize> = sources.values().copied().collect();
        inbox
            .mailbox
            .wait_connected(rank, &srcs, Instant::now() + opts.connect_timeout)?;
        Ok(RankRuntime {
            plan,
            sm,
            opts,
            exec,
            inbox,
            outbox,
            sources,
        })
    }

    pub fn rank(&self) -> usize {
        self.plan.rank
    }

    pub fn run(self, input: Option<&Tensor<f32>>) -> Result<RankResult, RuntimeError> {
        let rank = self.rank();
        let start = Instant::now();
        let mut outputs = Vec::new();
        let mut iteration_ms = Vec::with_capacity(self.opts.repeat);
        let mut frames_received = 0;
        for iter in 0..self.opts.repeat {
            let t0 = Instant::now();
            let (out, frames) = self.iteration(iter as u32, input)?;
            iteration_ms.push(t0.elapsed().as_secs_f64() * 1e3);
            frames_received += frames;
            outputs.extend(out);
        }
        let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
        log::debug!("rank {rank}: {} iterations in {elapsed_ms:.2} ms", self.opts.repeat);
        Ok(RankResult {
            rank,
            outputs,
            iteration_ms,
            elapsed_ms,
            peak_memory_estimate: peak_memory_estimate(&self.sm),
            measured_rss_bytes: measured_rss(),
            frames_received,
        })
    }

    fn iteration(&self, seq: u32, input: Option<&Tensor<f32>>) -> Result<(Option<Tensor<f32>>, usize), RuntimeError> {
        let rank = self.rank();
        let sm = &self.sm;
        let mut values: HashMap<&str, Tensor<f32>> = HashMap::new();
        let mut output = None;
        let mut frames = 0;
        for (i, action) in self.plan.actions.iter().enumerate() {
            if seq == 0 && self.opts.fault_exit_after == Some(i) {
                log::warn!("rank {rank}: injected fault, exiting after {i} actions");
                std::process::exit(86);
            }
            let deadline = Instant::now() + self.opts.timeout;
            match action {
                PlanAction::RegisterRecv { .. } => {}
                PlanAction::ReadInput => {
                    let layer = sm
                        .layers
                        .iter()
                        .find(|l| l.op == Op::Input)
                        .ok_or_else(|| RuntimeError::Config("ReadInput without an Input layer".into()))?;
                    let x = input.ok_or_else(|| RuntimeError::Config(format!("rank {rank} needs an input tensor")))?;
                    let expected = layer.params().ok().and_then(|p| match p {
                        crate::model::OpParams::Input { shape } => Some(shape),
                        _ => None,
                    });
                    if expected.as_deref() != Some(x.dims()) {
                        return Err(RuntimeError::Shape {
                            layer: layer.name.clone(),
                            reason: format!("input is {}, expected {:?}", x.spec, expected.unwrap_or_default()),
                        });
                    }
                    values.insert(layer.name.as_str(), x.clone());
                }
                PlanAction::WaitRecv { buffer } => {
                    let src = *self
                        .sources
                        .get(buffer)
                        .ok_or_else(|| RuntimeError::Protocol(format!("wait on unregistered {buffer}")))?;
                    let ib = sm
                        .input_buffers
                        .iter()
                        .find(|b| b.buffer == *buffer)
                        .ok_or_else(|| RuntimeError::Protocol(format!("{buffer} is not an input buffer")))?;
                    let msg = self.inbox.mailbox.take(rank, buffer.0, seq, src, deadline)?;
                    if msg.dims != ib.shape.dims {
                        return Err(RuntimeError::Protocol(format!(
                            "{buffer} arrived with dims {:?}, expected {}",
                            msg.dims, ib.shape
                        )));
                    }
                    values.insert(ib.layer.as_str(), msg.into_tensor()?);
                    frames += 1;
                }
                PlanAction::Compute { layer } => {
                    let l = sm
                        .layer(layer)
                        .ok_or_else(|| RuntimeError::Config(format!("plan computes unknown layer {layer}")))?;
                    let inputs = l
                        .inputs
                        .iter()
                        .map(|n| {
                            values.get(n.as_str()).ok_or_else(|| RuntimeError::Shape {
                                layer: l.name.clone(),
                                reason: format!("input {n} is not available"),
                            })
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    let out = self.exec.execute_layer(l, &inputs, &sm.weights)?;
                    values.insert(l.name.as_str(), out);
                }
                PlanAction::Send { buffer, dst } => {
                    let ob = sm
                        .output_buffers
                        .iter()
                        .find(|b| b.buffer == *buffer)
                        .ok_or_else(|| RuntimeError::Protocol(format!("{buffer} is not an output buffer")))?;
                    let t = values.get(ob.layer.as_str()).ok_or_else(|| {
                        RuntimeError::Protocol(format!("{buffer} sent before {} was computed", ob.layer))
                    })?;
                    for &d in dst {
                        self.outbox.send(d, Message::data(rank, d, *buffer, seq, t).encode())?;
                    }
                }
                PlanAction::WriteOutput => {
                    let l = sm
                        .layers
                        .iter()
                        .find(|l| l.op == Op::Output)
                        .ok_or_else(|| RuntimeError::Config("WriteOutput without an Output layer".into()))?;
                    let src = l.inputs[0].as_str();
                    output = Some(values.get(src).cloned().ok_or_else(|| RuntimeError::Shape {
                        layer: l.name.clone(),
                        reason: format!("input {src} is not available"),
                    })?);
                }
                PlanAction::WaitSendAll => self.outbox.flush(deadline)?,
            }
        }
        Ok((output, frames))
    }
}

/// Binds the rank to the mesh and runs its plan `opts.repeat` times.
pub fn run_rank(
    plan: ExecutionPlan,
    sm: SubModel,
    endpoints: &RankEndpoints,
    input: Option<&Tensor<f32>>,
    opts: RankOptions,
) -> Result<RankResult, RuntimeError> {
    RankRuntime::bind(plan, sm, endpoints, opts)?.run(input)
}

/// Runs every rank on its own thread of this process over loopback TCP.
/// Results are indexed by rank.
pub fn run_threads(
    plans: Vec<ExecutionPlan>,
    submodels: Vec<SubModel>,
    input: &Tensor<f32>,
    opts: RankOptions,
) -> Vec<Result<RankResult, RuntimeError>> {
    let eps = match RankEndpoints::loopback(plans.len()) {
        Ok(e) => e,
        Err(e) => return vec![Err(e)],
    };
    let handles: Vec<_> = plans
        .into_iter()
        .zip(submodels)
        .map(|(p, sm)| {
            let (eps, opts) = (eps.clone(), opts.clone());
            let x = sm.owns_input().then(|| input.clone());
            thread::spawn(move || run_rank(p, sm, &eps, x.as_ref(), opts))
        })
        .collect();
    handles
        .into_iter()
        .map(|h| h.join().unwrap_or_else(|_| Err(RuntimeError::Protocol("rank thread panicked".into()))))
        .collect()
}
