//! Local stand-in for on-board measurements.
//!
//! CPU kinds (`cpu<n>`) are timed with an `n`-thread kernel pool. There is
//! no GPU backend, so the `gpu` kind is the widest CPU timing divided by a
//! configurable speedup. Energy is latency × an assumed power draw.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::Instant;

use crate::model::{Model, Op};
use crate::runtime::{Executor, Tensor, RUNTIME_OVERHEAD_BYTES};
use crate::specio::{resource_options, OptionPolicy, PlatformSpec};
use crate::zoo;

use super::{CostError, LayerCost, LinkCost, Profile};

#[derive(Debug, Clone)]
pub struct ProfileOptions {
    /// Timed runs per layer per kind; the median is kept.
    pub repeats: usize,
    /// Kinds to record, e.g. `cpu1`, `cpu4`, `gpu`.
    pub kinds: Vec<String>,
    pub cpu_core_power_w: f64,
    pub gpu_power_w: f64,
    /// How much faster the emulated GPU is than the widest CPU kind.
    pub gpu_speedup: f64,
    /// Run the loopback bandwidth benchmark; otherwise links are free.
    pub measure_link: bool,
    pub link_energy_mj_per_kb: f64,
    /// Seed of the random input used for timing.
    pub seed: u64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        let all = thread::available_parallelism().map_or(1, |n| n.get());
        let mut kinds = vec!["cpu1".to_string()];
        if all > 1 {
            kinds.push(format!("cpu{all}"));
        }
        ProfileOptions {
            repeats: 5,
            kinds,
            cpu_core_power_w: 1.0,
            gpu_power_w: 5.0,
            gpu_speedup: 4.0,
            measure_link: true,
            link_energy_mj_per_kb: 0.05,
            seed: 0,
        }
    }
}

impl ProfileOptions {
    /// Records exactly the kinds the DSE will ask for on `platform`.
    pub fn for_platform(platform: &PlatformSpec, policy: OptionPolicy) -> ProfileOptions {
        let mut kinds: Vec<String> = resource_options(platform, policy).iter().map(|k| k.profile_kind()).collect();
        kinds.sort();
        kinds.dedup();
        ProfileOptions {
            kinds,
            ..ProfileOptions::default()
        }
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn cpu_threads(kind: &str) -> Option<usize> {
    kind.strip_prefix("cpu")?.parse().ok().filter(|&n| n > 0)
}

/// Times every hidden layer on every requested kind.
pub fn profile_layers(m: &Model, opts: &ProfileOptions) -> Result<Profile, CostError> {
    if opts.repeats == 0 {
        return Err(CostError::Degenerate("repeats must be positive".into()));
    }
    let mut cpu_kinds: Vec<(String, usize)> = Vec::new();
    let mut want_gpu = false;
    for k in &opts.kinds {
        match (k.as_str(), cpu_threads(k)) {
            ("gpu", _) => want_gpu = true,
            (_, Some(n)) => cpu_kinds.push((k.clone(), n)),
            _ => return Err(CostError::Parse(format!("unknown resource kind {k:?}"))),
        }
    }
    if want_gpu && cpu_kinds.is_empty() {
        cpu_kinds.push(("cpu1".into(), 1));
    }
    let widest = cpu_kinds.iter().max_by_key(|(_, n)| *n).map(|(k, _)| k.clone());

    // Activations from one serial pass feed every timed run.
    let input_spec = m.shape(&m.input_layer().name).unwrap().clone();
    let x = Tensor::new(input_spec, zoo::random_input(m, opts.seed)).expect("input matches its shape");
    let serial = Executor::serial();
    let mut values: HashMap<&str, Tensor<f32>> = HashMap::new();
    values.insert(m.input_layer().name.as_str(), x);
    let hidden: Vec<_> = m.hidden_layers().collect();
    for l in &hidden {
        let ins: Vec<&Tensor<f32>> = l.inputs.iter().map(|i| &values[i.as_str()]).collect();
        let out = serial
            .execute_layer(l, &ins, m.weights())
            .map_err(|e| CostError::Degenerate(e.to_string()))?;
        values.insert(l.name.as_str(), out);
    }

    let mut latency: BTreeMap<&str, BTreeMap<String, f64>> = BTreeMap::new();
    for (kind, threads) in &cpu_kinds {
        let exec = Executor::new(*threads).map_err(|e| CostError::Degenerate(e.to_string()))?;
        for l in &hidden {
            let ins: Vec<&Tensor<f32>> = l.inputs.iter().map(|i| &values[i.as_str()]).collect();
            let mut runs = Vec::with_capacity(opts.repeats);
            for _ in 0..opts.repeats {
                let t0 = Instant::now();
                let out = exec
                    .execute_layer(l, &ins, m.weights())
                    .map_err(|e| CostError::Degenerate(e.to_string()))?;
                runs.push(t0.elapsed().as_secs_f64() * 1e3);
                drop(out);
            }
            let (lo, hi) = runs.iter().fold((f64::MAX, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
            let med = median(runs).max(1e-6);
            if opts.repeats >= 3 && hi - lo > med {
                log::warn!("{} on {kind}: high timing variance ({lo:.4}..{hi:.4} ms)", l.name);
            }
            latency.entry(l.name.as_str()).or_default().insert(kind.clone(), med);
        }
    }

    let mut layers = BTreeMap::new();
    for l in &hidden {
        let mut lat = latency.remove(l.name.as_str()).unwrap_or_default();
        if want_gpu {
            let base = lat[widest.as_deref().unwrap()];
            lat.insert("gpu".into(), base / opts.gpu_speedup);
        }
        lat.retain(|k, _| opts.kinds.contains(k));
        let energy = lat
            .iter()
            .map(|(k, v)| {
                let w = cpu_threads(k).map_or(opts.gpu_power_w, |n| n as f64 * opts.cpu_core_power_w);
                (k.clone(), v * w)
            })
            .collect();
        debug_assert!(l.op != Op::Input && l.op != Op::Output);
        layers.insert(
            l.name.clone(),
            LayerCost {
                latency_ms: lat,
                energy_mj: energy,
                weight_bytes: m.layer_weight_bytes(&l.name) as u64,
                output_bytes: m.shape(&l.name).unwrap().byte_len() as u64,
            },
        );
    }

    let link = if opts.measure_link {
        match loopback_link() {
            Ok((bytes_per_ms, latency_ms)) => LinkCost {
                bytes_per_ms: Some(bytes_per_ms),
                latency_ms,
                energy_mj_per_kb: opts.link_energy_mj_per_kb,
            },
            Err(e) => {
                log::warn!("loopback benchmark failed ({e}); using a free link");
                LinkCost::free()
            }
        }
    } else {
        LinkCost::free()
    };
    Ok(Profile {
        layers,
        intra_device: link.clone(),
        link,
        rank_overhead_bytes: RUNTIME_OVERHEAD_BYTES as u64,
    })
}

/// Bandwidth (bytes/ms) and one-way latency (ms) over TCP loopback.
fn loopback_link() -> std::io::Result<(f64, f64)> {
    const BULK: usize = 4 << 20;
    const ROUNDS: usize = 3;
    const PINGS: usize = 20;
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let echo = thread::spawn(move || -> std::io::Result<()> {
        let (mut s, _) = listener.accept()?;
        s.set_nodelay(true)?;
        let mut buf = vec![0u8; 1 << 16];
        let mut left = BULK * ROUNDS;
        while left > 0 {
            let n = s.read(&mut buf[..left.min(1 << 16)])?;
            if n == 0 {
                return Ok(());
            }
            left -= n;
        }
        s.write_all(&[1])?;
        let mut b = [0u8; 1];
        for _ in 0..PINGS {
            s.read_exact(&mut b)?;
            s.write_all(&b)?;
        }
        Ok(())
    });
    let mut s = TcpStream::connect(addr)?;
    s.set_nodelay(true)?;
    let chunk = vec![0xa5u8; BULK];
    let t0 = Instant::now();
    for _ in 0..ROUNDS {
        s.write_all(&chunk)?;
    }
    let mut ack = [0u8; 1];
    s.read_exact(&mut ack)?;
    let bulk_ms = t0.elapsed().as_secs_f64() * 1e3;
    let mut rtts = Vec::with_capacity(PINGS);
    for _ in 0..PINGS {
        let t = Instant::now();
        s.write_all(&[7])?;
        s.read_exact(&mut ack)?;
        rtts.push(t.elapsed().as_secs_f64() * 1e3);
    }
    echo.join().expect("echo thread")?;
    Ok(((BULK * ROUNDS) as f64 / bulk_ms.max(1e-6), median(rtts) / 2.0))
}
