//! Front end and back end in one call: split, derive the message tables and
//! rankfile, compile plans, and optionally write the packages.

use std::path::{Path, PathBuf};

use crate::comm::{gen_comm_tables, gen_rankfile, Rankfile, ReceiverTable, SenderTable};
use crate::model::Model;
use crate::plan::{check_plan, gen_package, gen_plan, ExecutionPlan, PlanError};
use crate::specio::MappingSpec;
use crate::split::{cut_edges, split_model, SplitError, SubModel};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Every artefact derived from one model and mapping.
#[derive(Debug, Clone)]
pub struct Compiled {
    pub submodels: Vec<SubModel>,
    pub senders: SenderTable,
    pub receivers: ReceiverTable,
    pub rankfile: Rankfile,
    pub plans: Vec<ExecutionPlan>,
}

/// Splits `model` under `mapping` and compiles a checked plan per rank.
pub fn compile(model: &Model, mapping: &MappingSpec) -> Result<Compiled, PipelineError> {
    let submodels = split_model(model, mapping)?;
    let (senders, receivers) = gen_comm_tables(&cut_edges(model, mapping));
    let rankfile = gen_rankfile(mapping);
    let plans = submodels
        .iter()
        .map(|sm| {
            let p = gen_plan(sm, &senders, &receivers)?;
            check_plan(&p, sm)?;
            Ok(p)
        })
        .collect::<Result<Vec<_>, PlanError>>()?;
    Ok(Compiled {
        submodels,
        senders,
        receivers,
        rankfile,
        plans,
    })
}

impl Compiled {
    /// Writes `package_<rank>/` directories under `out_dir`.
    pub fn write_packages(&self, out_dir: &Path) -> Result<Vec<PathBuf>, PlanError> {
        gen_package(
            &self.plans,
            &self.submodels,
            &self.rankfile,
            &self.senders,
            &self.receivers,
            out_dir,
        )
    }
}
