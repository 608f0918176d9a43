//! Sender/receiver tables and the rankfile.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::specio::{MappingSpec, ResourceKind};
use crate::split::{BufferId, CutEdge};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SendEntry {
    pub buffer: BufferId,
    pub to: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankSends {
    pub rank: usize,
    pub sends: Vec<SendEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecvEntry {
    pub buffer: BufferId,
    pub from: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankRecvs {
    pub rank: usize,
    pub recvs: Vec<RecvEntry>,
}

/// Per source rank: which buffers go to which ranks (`sender.json`).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SenderTable(pub Vec<RankSends>);

/// Per destination rank: which buffers arrive from which rank (`receiver.json`).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReceiverTable(pub Vec<RankRecvs>);

impl SenderTable {
    pub fn for_rank(&self, rank: usize) -> &[SendEntry] {
        self.0
            .iter()
            .find(|r| r.rank == rank)
            .map_or(&[], |r| r.sends.as_slice())
    }

    /// Flattened `(src, buffer, dst)` triples.
    pub fn triples(&self) -> BTreeSet<(usize, BufferId, usize)> {
        self.0
            .iter()
            .flat_map(|r| {
                r.sends
                    .iter()
                    .flat_map(move |s| s.to.iter().map(move |&d| (r.rank, s.buffer, d)))
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap()
    }
}

impl ReceiverTable {
    pub fn for_rank(&self, rank: usize) -> &[RecvEntry] {
        self.0
            .iter()
            .find(|r| r.rank == rank)
            .map_or(&[], |r| r.recvs.as_slice())
    }

    /// Flattened `(src, buffer, dst)` triples, same orientation as the sender side.
    pub fn triples(&self) -> BTreeSet<(usize, BufferId, usize)> {
        self.0
            .iter()
            .flat_map(|r| r.recvs.iter().map(move |e| (e.from, e.buffer, r.rank)))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap()
    }
}

/// Builds both tables from the cut edges. Ranks appear in ascending order
/// and entries within a rank in buffer order; ranks with nothing to send
/// (or receive) are omitted.
pub fn gen_comm_tables(cuts: &[CutEdge]) -> (SenderTable, ReceiverTable) {
    let mut sends: BTreeMap<usize, BTreeMap<BufferId, BTreeSet<usize>>> = BTreeMap::new();
    let mut recvs: BTreeMap<usize, BTreeMap<BufferId, usize>> = BTreeMap::new();
    for c in cuts {
        debug_assert_ne!(c.src_rank, c.dst_rank);
        sends
            .entry(c.src_rank)
            .or_default()
            .entry(c.buffer)
            .or_default()
            .insert(c.dst_rank);
        recvs.entry(c.dst_rank).or_default().insert(c.buffer, c.src_rank);
    }
    let sender = SenderTable(
        sends
            .into_iter()
            .map(|(rank, bufs)| RankSends {
                rank,
                sends: bufs
                    .into_iter()
                    .map(|(buffer, to)| SendEntry {
                        buffer,
                        to: to.into_iter().collect(),
                    })
                    .collect(),
            })
            .collect(),
    );
    let receiver = ReceiverTable(
        recvs
            .into_iter()
            .map(|(rank, bufs)| RankRecvs {
                rank,
                recvs: bufs
                    .into_iter()
                    .map(|(buffer, from)| RecvEntry { buffer, from })
                    .collect(),
            })
            .collect(),
    );
    (sender, receiver)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlotBinding {
    Cores(BTreeSet<u8>),
    Gpu,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankfileEntry {
    pub rank: usize,
    pub device: String,
    pub slots: SlotBinding,
}

/// Placement of every rank on a device, modeled on Open MPI rankfiles:
/// `rank <i>=<device> slot=<a>[,<b>...]` or `rank <i>=<device> slot=gpu`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Rankfile {
    pub entries: Vec<RankfileEntry>,
}

#[derive(Debug, thiserror::Error)]
#[error("rankfile line {line}: {msg}")]
pub struct RankfileError {
    pub line: usize,
    pub msg: String,
}

impl Rankfile {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn format(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            write!(out, "rank {}={} slot=", e.rank, e.device).unwrap();
            match &e.slots {
                SlotBinding::Gpu => out.push_str("gpu"),
                SlotBinding::Cores(s) => {
                    let list: Vec<String> = s.iter().map(u8::to_string).collect();
                    out.push_str(&list.join(","));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Rankfile, RankfileError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: &str| RankfileError {
                line: i + 1,
                msg: msg.to_string(),
            };
            let rest = line.strip_prefix("rank ").ok_or_else(|| err("expected 'rank '"))?;
            let (rank, rest) = rest.split_once('=').ok_or_else(|| err("expected '='"))?;
            let rank: usize = rank.trim().parse().map_err(|_| err("bad rank number"))?;
            let (device, slot) = rest.split_once(" slot=").ok_or_else(|| err("expected ' slot='"))?;
            let slots = if slot == "gpu" {
                SlotBinding::Gpu
            } else {
                let set = slot
                    .split(',')
                    .map(|s| s.parse::<u8>())
                    .collect::<Result<BTreeSet<u8>, _>>()
                    .map_err(|_| err("bad slot list"))?;
                SlotBinding::Cores(set)
            };
            if rank != entries.len() {
                return Err(err("ranks must be listed in order from 0"));
            }
            entries.push(RankfileEntry {
                rank,
                device: device.to_string(),
                slots,
            });
        }
        Ok(Rankfile { entries })
    }
}

/// One rankfile entry per mapping key, in key order.
pub fn gen_rankfile(mapping: &MappingSpec) -> Rankfile {
    Rankfile {
        entries: mapping
            .assignments
            .iter()
            .enumerate()
            .map(|(rank, a)| RankfileEntry {
                rank,
                device: a.key.device.clone(),
                slots: match &a.key.kind {
                    ResourceKind::Gpu => SlotBinding::Gpu,
                    ResourceKind::Cpu { slots, .. } => SlotBinding::Cores(slots.clone()),
                },
            })
            .collect(),
    }
}
