use std::collections::{BTreeMap, BTreeSet};

use super::{ExecutionPlan, PlanAction, PlanError};
use crate::model::Op;
use crate::split::{BufferId, SubModel};

/// Single-pass static safety check of a plan against its sub-model.
///
/// Rejects plans where a foreign buffer is consumed without a prior
/// registered receive and wait, a buffer is sent before it is produced,
/// a receive is never waited on, a layer is skipped or run twice, or the
/// plan does not end with `WaitSendAll`.
pub fn check_plan(plan: &ExecutionPlan, sm: &SubModel) -> Result<(), PlanError> {
    let rank = plan.rank;
    let unsafe_at = |index: usize, msg: String| PlanError::Unsafe { rank, index, msg };

    if plan.rank != sm.rank {
        return Err(unsafe_at(0, format!("plan is for rank {}, sub-model is rank {}", plan.rank, sm.rank)));
    }
    if plan.num_threads == 0 {
        return Err(unsafe_at(0, "num_threads must be positive".into()));
    }

    let foreign: BTreeMap<&str, (BufferId, usize)> = sm
        .input_buffers
        .iter()
        .map(|b| (b.layer.as_str(), (b.buffer, b.from)))
        .collect();
    let produced_by: BTreeMap<BufferId, &str> = sm
        .output_buffers
        .iter()
        .map(|b| (b.buffer, b.layer.as_str()))
        .collect();

    let mut registered: BTreeMap<BufferId, usize> = BTreeMap::new();
    let mut waited: BTreeSet<BufferId> = BTreeSet::new();
    let mut available: BTreeSet<&str> = BTreeSet::new();
    let mut sent: BTreeSet<BufferId> = BTreeSet::new();
    let mut in_prologue = true;
    let (mut read_input, mut wrote_output) = (false, false);

    let ready = |name: &str, available: &BTreeSet<&str>, waited: &BTreeSet<BufferId>| -> Result<(), String> {
        if available.contains(name) {
            return Ok(());
        }
        match foreign.get(name) {
            Some((buf, _)) if waited.contains(buf) => Ok(()),
            Some((buf, _)) => Err(format!("{name} arrives in {buf}, which was not waited on")),
            None => Err(format!("{name} has not been computed yet")),
        }
    };

    let last = plan.actions.len().saturating_sub(1);
    for (i, action) in plan.actions.iter().enumerate() {
        if !matches!(action, PlanAction::RegisterRecv { .. }) {
            in_prologue = false;
        }
        match action {
            PlanAction::RegisterRecv { buffer, src } => {
                if !in_prologue {
                    return Err(unsafe_at(i, format!("receive of {buffer} registered after the prologue")));
                }
                if *src == rank {
                    return Err(unsafe_at(i, format!("receive of {buffer} from self")));
                }
                if registered.insert(*buffer, *src).is_some() {
                    return Err(unsafe_at(i, format!("receive of {buffer} registered twice")));
                }
                if !foreign.values().any(|(b, s)| b == buffer && s == src) {
                    return Err(unsafe_at(i, format!("sub-model does not expect {buffer} from rank {src}")));
                }
            }
            PlanAction::WaitRecv { buffer } => {
                if !registered.contains_key(buffer) {
                    return Err(unsafe_at(i, format!("wait on {buffer} without a registered receive")));
                }
                if !waited.insert(*buffer) {
                    return Err(unsafe_at(i, format!("{buffer} waited on twice")));
                }
            }
            PlanAction::ReadInput => {
                let input = sm
                    .layers
                    .iter()
                    .find(|l| l.op == Op::Input)
                    .ok_or_else(|| unsafe_at(i, "ReadInput on a rank without the Input layer".into()))?;
                if read_input {
                    return Err(unsafe_at(i, "input read twice".into()));
                }
                read_input = true;
                available.insert(input.name.as_str());
            }
            PlanAction::Compute { layer } => {
                let l = sm
                    .layer(layer)
                    .filter(|l| l.op.is_hidden())
                    .ok_or_else(|| unsafe_at(i, format!("{layer} is not a hidden layer of this sub-model")))?;
                for input in &l.inputs {
                    ready(input, &available, &waited).map_err(|m| unsafe_at(i, format!("{layer}: {m}")))?;
                }
                if !available.insert(l.name.as_str()) {
                    return Err(unsafe_at(i, format!("{layer} computed twice")));
                }
            }
            PlanAction::Send { buffer, dst } => {
                let src = produced_by
                    .get(buffer)
                    .ok_or_else(|| unsafe_at(i, format!("{buffer} is not an output buffer")))?;
                if !available.contains(src) {
                    return Err(unsafe_at(i, format!("{buffer} sent before {src} produced it")));
                }
                if dst.is_empty() || dst.contains(&rank) {
                    return Err(unsafe_at(i, format!("{buffer} has an empty or self destination list")));
                }
                if !sent.insert(*buffer) {
                    return Err(unsafe_at(i, format!("{buffer} sent twice")));
                }
            }
            PlanAction::WriteOutput => {
                let out = sm
                    .layers
                    .iter()
                    .find(|l| l.op == Op::Output)
                    .ok_or_else(|| unsafe_at(i, "WriteOutput on a rank without the Output layer".into()))?;
                ready(&out.inputs[0], &available, &waited).map_err(|m| unsafe_at(i, m))?;
                wrote_output = true;
            }
            PlanAction::WaitSendAll => {
                if i != last {
                    return Err(unsafe_at(i, "WaitSendAll must be the final action".into()));
                }
            }
        }
    }

    if plan.actions.last() != Some(&PlanAction::WaitSendAll) {
        return Err(unsafe_at(last, "plan does not end with WaitSendAll".into()));
    }
    if let Some(b) = registered.keys().find(|b| !waited.contains(b)) {
        return Err(unsafe_at(last, format!("receive of {b} is never waited on")));
    }
    if let Some((b, _)) = foreign.values().find(|(b, _)| !registered.contains_key(b)) {
        return Err(unsafe_at(last, format!("expected buffer {b} is never received")));
    }
    if let Some(l) = sm.layers.iter().find(|l| l.op.is_hidden() && !available.contains(l.name.as_str())) {
        return Err(unsafe_at(last, format!("layer {} is never computed", l.name)));
    }
    if let Some(b) = produced_by.keys().find(|b| !sent.contains(b)) {
        return Err(unsafe_at(last, format!("output buffer {b} is never sent")));
    }
    if sm.owns_input() != read_input || sm.owns_output() != wrote_output {
        return Err(unsafe_at(last, "input/output actions do not match the sub-model".into()));
    }
    Ok(())
}
