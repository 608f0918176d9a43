//! Per-rank execution plans: the ordered message and compute actions each
//! rank performs, plus deployment packaging.
//!
//! A plan registers every receive up front, then walks its layers in
//! topological order. A foreign input is waited on just before the first
//! layer that consumes it, and a produced buffer is sent right after the
//! layer that produces it. The plan ends by waiting for all sends to flush.

mod check;
mod package;
mod pretty;

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::comm::{ReceiverTable, SenderTable};
use crate::model::Op;
use crate::split::{BufferId, SubModel};

pub use check::check_plan;
pub use package::{gen_package, DeploymentPackage, PACKAGE_FILES};
pub use pretty::render_pseudo_cpp;

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("rank {rank}: layer {layer} consumes {buffer}, which has no registered receive")]
    UnregisteredBuffer {
        rank: usize,
        layer: String,
        buffer: String,
    },
    #[error("rank {rank}: buffer {buffer} has no sender table entry")]
    MissingSend { rank: usize, buffer: BufferId },
    #[error("rank {rank}: unsafe plan at action {index}: {msg}")]
    Unsafe { rank: usize, index: usize, msg: String },
    #[error("package error: {0}")]
    Package(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum PlanAction {
    RegisterRecv { buffer: BufferId, src: usize },
    ReadInput,
    WaitRecv { buffer: BufferId },
    Compute { layer: String },
    Send { buffer: BufferId, dst: Vec<usize> },
    WriteOutput,
    WaitSendAll,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub rank: usize,
    pub num_threads: usize,
    pub actions: Vec<PlanAction>,
}

impl ExecutionPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap()
    }

    pub fn from_json(text: &str) -> Result<ExecutionPlan, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Number of message receives the plan registers.
    pub fn recv_count(&self) -> usize {
        self.actions
            .iter()
            .filter(|a| matches!(a, PlanAction::RegisterRecv { .. }))
            .count()
    }
}

/// Compiles one sub-model into its execution plan.
pub fn gen_plan(sm: &SubModel, senders: &SenderTable, receivers: &ReceiverTable) -> Result<ExecutionPlan, PlanError> {
    let rank = sm.rank;
    let registered = receivers.for_rank(rank);
    let mut actions: Vec<PlanAction> = registered
        .iter()
        .map(|r| PlanAction::RegisterRecv {
            buffer: r.buffer,
            src: r.from,
        })
        .collect();

    let send_after = |layer: &str, actions: &mut Vec<PlanAction>| -> Result<(), PlanError> {
        if let Some(out) = sm.output_buffer_for(layer) {
            let entry = senders
                .for_rank(rank)
                .iter()
                .find(|s| s.buffer == out.buffer)
                .ok_or(PlanError::MissingSend {
                    rank,
                    buffer: out.buffer,
                })?;
            actions.push(PlanAction::Send {
                buffer: out.buffer,
                dst: entry.to.clone(),
            });
        }
        Ok(())
    };

    let mut waited: BTreeSet<BufferId> = BTreeSet::new();
    let mut wait_inputs = |layer_name: &str, inputs: &[String], actions: &mut Vec<PlanAction>| -> Result<(), PlanError> {
        for input in inputs {
            if sm.layer(input).is_some() {
                continue;
            }
            let unregistered = || PlanError::UnregisteredBuffer {
                rank,
                layer: layer_name.to_string(),
                buffer: input.clone(),
            };
            let buf = sm.input_buffer_for(input).ok_or_else(unregistered)?;
            if !registered.iter().any(|r| r.buffer == buf.buffer && r.from == buf.from) {
                return Err(PlanError::UnregisteredBuffer {
                    rank,
                    layer: layer_name.to_string(),
                    buffer: buf.buffer.to_string(),
                });
            }
            if waited.insert(buf.buffer) {
                actions.push(PlanAction::WaitRecv { buffer: buf.buffer });
            }
        }
        Ok(())
    };

    for layer in &sm.layers {
        match layer.op {
            Op::Input => {
                actions.push(PlanAction::ReadInput);
                send_after(&layer.name, &mut actions)?;
            }
            Op::Output => {
                wait_inputs(&layer.name, &layer.inputs, &mut actions)?;
                actions.push(PlanAction::WriteOutput);
            }
            _ => {
                wait_inputs(&layer.name, &layer.inputs, &mut actions)?;
                actions.push(PlanAction::Compute {
                    layer: layer.name.clone(),
                });
                send_after(&layer.name, &mut actions)?;
            }
        }
    }
    actions.push(PlanAction::WaitSendAll);

    Ok(ExecutionPlan {
        rank,
        num_threads: sm.key.num_threads(),
        actions,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::comm::gen_comm_tables;
    use crate::specio::MappingSpec;
    use crate::split::{cut_edges, split_model};
    use crate::zoo;

    pub(crate) fn diamond_plans() -> (Vec<SubModel>, Vec<ExecutionPlan>) {
        let m = zoo::diamond_model();
        let ms = MappingSpec::parse(zoo::DIAMOND_MAPPING).unwrap();
        let subs = split_model(&m, &ms).unwrap();
        let (s, r) = gen_comm_tables(&cut_edges(&m, &ms));
        let plans = subs.iter().map(|sm| gen_plan(sm, &s, &r).unwrap()).collect();
        (subs, plans)
    }

    #[test]
    fn diamond_rank0_plan() {
        use PlanAction::*;
        let (_, plans) = diamond_plans();
        let p = &plans[0];
        assert_eq!(p.num_threads, 3);
        assert_eq!(
            p.actions,
            [
                RegisterRecv { buffer: BufferId(2), src: 2 },
                RegisterRecv { buffer: BufferId(3), src: 1 },
                ReadInput,
                Compute { layer: "MaxPool1".into() },
                Send { buffer: BufferId(1), dst: vec![1, 2] },
                WaitRecv { buffer: BufferId(2) },
                WaitRecv { buffer: BufferId(3) },
                Compute { layer: "Add1".into() },
                Send { buffer: BufferId(4), dst: vec![2] },
                WaitSendAll,
            ]
        );
    }

    #[test]
    fn diamond_rank2_plan_writes_output() {
        use PlanAction::*;
        let (_, plans) = diamond_plans();
        assert_eq!(plans[1].num_threads, 1);
        assert_eq!(
            plans[2].actions,
            [
                RegisterRecv { buffer: BufferId(1), src: 0 },
                RegisterRecv { buffer: BufferId(4), src: 0 },
                WaitRecv { buffer: BufferId(1) },
                Compute { layer: "Conv1".into() },
                Send { buffer: BufferId(2), dst: vec![0] },
                WaitRecv { buffer: BufferId(4) },
                Compute { layer: "Relu1".into() },
                WriteOutput,
                WaitSendAll,
            ]
        );
    }

    #[test]
    fn unsplit_plan_has_no_messaging() {
        let m = zoo::toy_cnn(1);
        let keys = [crate::specio::ResourceKey::cpu("dev0", "arm", [0, 1])];
        let ms = zoo::contiguous_mapping(&m, &keys);
        let subs = split_model(&m, &ms).unwrap();
        let (s, r) = gen_comm_tables(&cut_edges(&m, &ms));
        let plan = gen_plan(&subs[0], &s, &r).unwrap();
        assert_eq!(plan.actions.first(), Some(&PlanAction::ReadInput));
        assert_eq!(plan.actions[plan.actions.len() - 2], PlanAction::WriteOutput);
        assert_eq!(plan.actions.last(), Some(&PlanAction::WaitSendAll));
        assert!(!plan.actions.iter().any(|a| matches!(
            a,
            PlanAction::RegisterRecv { .. } | PlanAction::WaitRecv { .. } | PlanAction::Send { .. }
        )));
        assert_eq!(
            plan.actions.iter().filter(|a| matches!(a, PlanAction::Compute { .. })).count(),
            m.hidden_layers().count()
        );
    }

    #[test]
    fn missing_receive_is_a_plan_error() {
        let m = zoo::diamond_model();
        let ms = MappingSpec::parse(zoo::DIAMOND_MAPPING).unwrap();
        let subs = split_model(&m, &ms).unwrap();
        let (s, mut r) = gen_comm_tables(&cut_edges(&m, &ms));
        r.0[2].recvs.retain(|e| e.buffer != BufferId(4));
        assert!(matches!(
            gen_plan(&subs[2], &s, &r),
            Err(PlanError::UnregisteredBuffer { rank: 2, .. })
        ));
    }

    #[test]
    fn plan_json_shape() {
        let (_, plans) = diamond_plans();
        let v: serde_json::Value = serde_json::from_str(&plans[0].to_json()).unwrap();
        assert_eq!(v["rank"], 0);
        assert_eq!(v["num_threads"], 3);
        assert_eq!(v["actions"][0], serde_json::json!({"kind": "RegisterRecv", "buffer": "Buff2", "src": 2}));
        assert_eq!(v["actions"][9], serde_json::json!({"kind": "WaitSendAll"}));
        assert_eq!(ExecutionPlan::from_json(&plans[0].to_json()).unwrap(), plans[0]);
    }
}
