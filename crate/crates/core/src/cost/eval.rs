use std::collections::{BTreeMap, BTreeSet};

use crate::model::Model;
use crate::scalar::{max_of, CostScalar};
use crate::specio::{MappingSpec, ResourceKey};
use crate::split::cut_edges;

use super::{CostError, ObjectiveVector, Profile};

const BYTES_PER_MB: u64 = 1_000_000;

fn scalar<T: CostScalar>(v: f64) -> T {
    T::from_f64(v).expect("profile values are finite")
}

struct RankCosts<T> {
    stage: Vec<T>,
    energy: Vec<T>,
    memory_bytes: Vec<u64>,
}

fn rank_costs<T: CostScalar>(m: &Model, ms: &MappingSpec, p: &Profile) -> Result<RankCosts<T>, CostError> {
    ms.validate_layers(m)?;
    let place = ms.placement(m);
    let keys: Vec<&ResourceKey> = ms.keys().collect();
    let n = keys.len();
    let mut stage = vec![T::zero(); n];
    let mut energy = vec![T::zero(); n];
    let mut weight_bytes = vec![0u64; n];
    let mut buffer_bytes = vec![0u64; n];

    for l in m.hidden_layers() {
        let r = place[&l.name];
        let key = keys[r];
        let missing = |what| CostError::MissingProfileEntry {
            layer: l.name.clone(),
            kind: key.profile_kind(),
            what,
        };
        let c = p.layers.get(&l.name).ok_or_else(|| missing("entry"))?;
        let lat = Profile::lookup(&c.latency_ms, key).ok_or_else(|| missing("latency"))?;
        let en = Profile::lookup(&c.energy_mj, key).ok_or_else(|| missing("energy"))?;
        stage[r] = stage[r].clone() + scalar(*lat);
        energy[r] = energy[r].clone() + scalar(*en);
        weight_bytes[r] += m.layer_weight_bytes(&l.name) as u64;
    }

    // One hop per (buffer, receiving rank); its time lands on the receiver's
    // stage, its energy on both ends.
    let mut sent = BTreeSet::new();
    let mut hops = BTreeSet::new();
    for e in cut_edges(m, ms) {
        let bytes = e.shape.byte_len() as u64;
        if sent.insert(e.buffer) {
            buffer_bytes[e.src_rank] += bytes;
        }
        if !hops.insert((e.buffer, e.dst_rank)) {
            continue;
        }
        buffer_bytes[e.dst_rank] += bytes;
        let link = if keys[e.src_rank].device == keys[e.dst_rank].device {
            &p.intra_device
        } else {
            &p.link
        };
        let b = T::from_u64(bytes).unwrap();
        let mut t = scalar::<T>(link.latency_ms);
        if let Some(bw) = link.bytes_per_ms {
            t = t + b.clone() / scalar(bw);
        }
        stage[e.dst_rank] = stage[e.dst_rank].clone() + t;
        let e_mj = b / T::from_u64(1024).unwrap() * scalar(link.energy_mj_per_kb);
        energy[e.src_rank] = energy[e.src_rank].clone() + e_mj.clone();
        energy[e.dst_rank] = energy[e.dst_rank].clone() + e_mj;
    }

    let memory_bytes = (0..n)
        .map(|r| {
            let copies = if keys[r].is_gpu() { 2 } else { 1 };
            copies * weight_bytes[r] + buffer_bytes[r] + p.rank_overhead_bytes
        })
        .collect();
    Ok(RankCosts {
        stage,
        energy,
        memory_bytes,
    })
}

/// Per-rank stage time in ms: compute plus inbound transfers.
pub fn stage_times<T: CostScalar>(m: &Model, ms: &MappingSpec, p: &Profile) -> Result<Vec<T>, CostError> {
    Ok(rank_costs(m, ms, p)?.stage)
}

/// Scores a mapping.
///
/// * Throughput is `1000 / bottleneck` fps. A rank's load is its stage time
///   plus the stage times of every rank sharing cores (or the GPU) with it.
/// * Device energy sums layer and transfer energies of its ranks.
/// * Device memory sums, per rank, weights (twice on a GPU), boundary
///   buffers and the fixed rank overhead; reported in MB of 10^6 bytes.
pub fn evaluate_mapping<T: CostScalar>(m: &Model, ms: &MappingSpec, p: &Profile) -> Result<ObjectiveVector<T>, CostError> {
    let costs = rank_costs::<T>(m, ms, p)?;
    let keys: Vec<&ResourceKey> = ms.keys().collect();
    let n = keys.len();
    let loads = (0..n).map(|r| {
        (0..n)
            .filter(|&s| s == r || keys[s].shares_hardware(keys[r]))
            .fold(T::zero(), |acc, s| acc + costs.stage[s].clone())
    });
    let bottleneck = max_of(loads).ok_or_else(|| CostError::Degenerate("mapping has no ranks".into()))?;
    if bottleneck <= T::zero() {
        return Err(CostError::Degenerate("every stage takes zero time".into()));
    }

    let mut devices: BTreeMap<&str, (T, u64)> = BTreeMap::new();
    for r in 0..n {
        let d = devices.entry(keys[r].device.as_str()).or_insert((T::zero(), 0));
        d.0 = d.0.clone() + costs.energy[r].clone();
        d.1 += costs.memory_bytes[r];
    }
    let energy = max_of(devices.values().map(|d| d.0.clone())).unwrap();
    let memory = devices.values().map(|d| d.1).max().unwrap();
    Ok(ObjectiveVector {
        max_device_energy_mj: energy,
        throughput_fps: T::from_u64(1000).unwrap() / bottleneck,
        max_device_memory_mb: T::from_u64(memory).unwrap() / T::from_u64(BYTES_PER_MB).unwrap(),
    })
}
