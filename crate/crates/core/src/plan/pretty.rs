use std::fmt::Write as _;

use super::{ExecutionPlan, PlanAction};

/// Renders all plans as one SPMD-style pseudo C++ listing, one `if (rank == i)`
/// block per rank. Documentation only; nothing consumes this output.
pub fn render_pseudo_cpp(plans: &[ExecutionPlan]) -> String {
    let mut out = String::new();
    for plan in plans {
        writeln!(out, "if (rank == {}) {{", plan.rank).unwrap();
        writeln!(out, "    num_threads = {};", plan.num_threads).unwrap();
        let recvs: Vec<String> = plan
            .actions
            .iter()
            .filter_map(|a| match a {
                PlanAction::RegisterRecv { buffer, src } => Some(format!("MPI_Irecv({buffer}, {src})")),
                _ => None,
            })
            .collect();
        if !recvs.is_empty() {
            writeln!(out, "    {};", recvs.join("; ")).unwrap();
        }
        for a in &plan.actions {
            let line = match a {
                PlanAction::RegisterRecv { .. } => continue,
                PlanAction::ReadInput => "input = read_image();".to_string(),
                PlanAction::WaitRecv { buffer } => format!("MPI_Wait({buffer});"),
                PlanAction::Compute { layer } => format!("{layer}.forward(num_threads);"),
                PlanAction::Send { buffer, dst } => {
                    let d: Vec<String> = dst.iter().map(ToString::to_string).collect();
                    format!("MPI_Isend({buffer}, {{{}}});", d.join(", "))
                }
                PlanAction::WriteOutput => "write_output();".to_string(),
                PlanAction::WaitSendAll => "MPI_Waitall(sends);".to_string(),
            };
            writeln!(out, "    {line}").unwrap();
        }
        out.push_str("}\n");
    }
    out
}
