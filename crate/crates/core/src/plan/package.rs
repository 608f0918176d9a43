use std::fs;
use std::path::{Path, PathBuf};

use super::{ExecutionPlan, PlanError};
use crate::comm::{Rankfile, ReceiverTable, SenderTable};
use crate::split::SubModel;

/// Files written into every `package_<rank>` directory.
pub const PACKAGE_FILES: [&str; 6] = [
    "plan.json",
    "submodel.json",
    "submodel.bin",
    "rankfile.txt",
    "sender.json",
    "receiver.json",
];

/// Everything one rank needs to run.
#[derive(Debug, Clone)]
pub struct DeploymentPackage {
    pub dir: PathBuf,
    pub plan: ExecutionPlan,
    pub submodel: SubModel,
    pub rankfile_text: String,
    pub rankfile: Rankfile,
    pub senders: SenderTable,
    pub receivers: ReceiverTable,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PlanError + '_ {
    move |source| PlanError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<(), PlanError> {
    fs::write(&path, contents).map_err(io(&path))
}

/// Writes `package_<rank>/` for every rank under `out_dir`. Every package
/// carries the same rankfile and tables; plans and sub-models differ.
pub fn gen_package(
    plans: &[ExecutionPlan],
    submodels: &[SubModel],
    rankfile: &Rankfile,
    senders: &SenderTable,
    receivers: &ReceiverTable,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, PlanError> {
    if plans.len() != submodels.len() || rankfile.len() != submodels.len() {
        return Err(PlanError::Package(format!(
            "{} plans, {} sub-models and {} rankfile entries do not line up",
            plans.len(),
            submodels.len(),
            rankfile.len()
        )));
    }
    let rankfile_text = rankfile.format();
    let (send_json, recv_json) = (senders.to_json(), receivers.to_json());
    let mut dirs = Vec::with_capacity(plans.len());
    for (plan, sm) in plans.iter().zip(submodels) {
        if plan.rank != sm.rank {
            return Err(PlanError::Package(format!("plan {} paired with sub-model {}", plan.rank, sm.rank)));
        }
        let dir = out_dir.join(format!("package_{}", sm.rank));
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        write(dir.join("plan.json"), plan.to_json())?;
        sm.save(&dir).map_err(|e| PlanError::Package(e.to_string()))?;
        write(dir.join("rankfile.txt"), &rankfile_text)?;
        write(dir.join("sender.json"), &send_json)?;
        write(dir.join("receiver.json"), &recv_json)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

impl DeploymentPackage {
    pub fn load(dir: &Path) -> Result<DeploymentPackage, PlanError> {
        let read = |name: &str| -> Result<String, PlanError> {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(io(&p))
        };
        let bad = |name: &str, e: &dyn std::fmt::Display| {
            PlanError::Package(format!("{}: {e}", dir.join(name).display()))
        };
        let plan = ExecutionPlan::from_json(&read("plan.json")?).map_err(|e| bad("plan.json", &e))?;
        let submodel = SubModel::load(dir).map_err(|e| bad("submodel", &e))?;
        let rankfile_text = read("rankfile.txt")?;
        let rankfile = Rankfile::parse(&rankfile_text).map_err(|e| bad("rankfile.txt", &e))?;
        let senders = serde_json::from_str(&read("sender.json")?).map_err(|e| bad("sender.json", &e))?;
        let receivers = serde_json::from_str(&read("receiver.json")?).map_err(|e| bad("receiver.json", &e))?;
        if plan.rank != submodel.rank {
            return Err(PlanError::Package(format!(
                "{}: plan rank {} differs from sub-model rank {}",
                dir.display(),
                plan.rank,
                submodel.rank
            )));
        }
        Ok(DeploymentPackage {
            dir: dir.to_path_buf(),
            plan,
            submodel,
            rankfile_text,
            rankfile,
            senders,
            receivers,
        })
    }

    pub fn rank(&self) -> usize {
        self.plan.rank
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::{gen_comm_tables, gen_rankfile};
    use crate::plan::gen_plan;
    use crate::specio::MappingSpec;
    use crate::split::{cut_edges, split_model};
    use crate::zoo;

    #[test]
    fn diamond_packages() {
        let m = zoo::diamond_model();
        let ms = MappingSpec::parse(zoo::DIAMOND_MAPPING).unwrap();
        let subs = split_model(&m, &ms).unwrap();
        let (s, r) = gen_comm_tables(&cut_edges(&m, &ms));
        let plans: Vec<_> = subs.iter().map(|sm| gen_plan(sm, &s, &r).unwrap()).collect();
        let rf = gen_rankfile(&ms);
        let out = tempfile::tempdir().unwrap();
        let dirs = gen_package(&plans, &subs, &rf, &s, &r, out.path()).unwrap();
        assert_eq!(dirs.len(), 3);
        let first = fs::read(dirs[0].join("rankfile.txt")).unwrap();
        for (i, d) in dirs.iter().enumerate() {
            assert!(d.ends_with(format!("package_{i}")));
            for f in PACKAGE_FILES {
                assert!(d.join(f).is_file(), "{f} missing in {}", d.display());
            }
            assert_eq!(fs::read(d.join("rankfile.txt")).unwrap(), first);
            let pkg = DeploymentPackage::load(d).unwrap();
            assert_eq!(pkg.rankfile.len(), 3);
            assert_eq!(pkg.plan, plans[i]);
            assert_eq!(pkg.submodel, subs[i]);
        }
        let total: u64 = dirs.iter().map(|d| fs::metadata(d.join("submodel.bin")).unwrap().len()).sum();
        let payload: usize = subs.iter().map(|s| s.weights.total_bytes()).sum();
        assert_eq!(payload, m.weights().total_bytes());
        assert!(total as usize >= payload);
    }
}
