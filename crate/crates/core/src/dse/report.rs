use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::model::Model;
use crate::specio::ResourceKey;

use super::{decode, DseError, GAConfig, GenerationStats, ParetoArchive};

pub const PARETO_HEADER: &str = "index,max_device_energy_mj,throughput_fps,max_device_memory_mb,genes,mapping";

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> DseError + '_ {
    move |source| DseError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `pareto.csv` and one mapping file per archive point under
/// `out_dir/mappings/`. Rows are ordered by objectives.
pub fn write_pareto_csv(
    archive: &ParetoArchive,
    m: &Model,
    options: &[ResourceKey],
    out_dir: &Path,
) -> Result<PathBuf, DseError> {
    let maps = out_dir.join("mappings");
    fs::create_dir_all(&maps).map_err(io(&maps))?;
    let mut csv = String::from(PARETO_HEADER);
    csv.push('\n');
    for (i, (c, o)) in archive.sorted().iter().enumerate() {
        let rel = format!("mappings/pareto_{i:03}.json");
        let path = out_dir.join(&rel);
        fs::write(&path, decode(c, options, m).format()).map_err(io(&path))?;
        let genes: Vec<String> = c.genes.iter().map(ToString::to_string).collect();
        writeln!(
            csv,
            "{i},{},{},{},{},{rel}",
            o.max_device_energy_mj,
            o.throughput_fps,
            o.max_device_memory_mb,
            genes.join("-")
        )
        .unwrap();
    }
    let path = out_dir.join("pareto.csv");
    fs::write(&path, csv).map_err(io(&path))?;
    Ok(path)
}

/// Header line with the configuration and option list, then one line per
/// generation.
pub fn write_stats_jsonl(
    path: &Path,
    cfg: &GAConfig,
    options: &[ResourceKey],
    stats: &[GenerationStats],
) -> Result<(), DseError> {
    let opts: Vec<String> = options.iter().map(ToString::to_string).collect();
    let mut out = json!({ "config": cfg, "options": opts }).to_string();
    out.push('\n');
    for s in stats {
        out.push_str(&serde_json::to_string(s).unwrap());
        out.push('\n');
    }
    fs::write(path, out).map_err(io(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::Profile;
    use crate::dse::run_nsga2_with;
    use crate::specio::{resource_options, MappingSpec, OptionPolicy};
    use crate::zoo;

    #[test]
    fn csv_rows_and_mapping_files() {
        let m = zoo::conv_chain(3, 2, 4, 0);
        let options = resource_options(&zoo::uniform_platform(2, 2, true), OptionPolicy::SingleAllGpu);
        let mut p = Profile::uniform(&m, &["cpu1", "cpu2", "gpu"], 1.0, 1.0);
        p.layers.values_mut().for_each(|c| {
            c.latency_ms.insert("gpu".into(), 0.5);
            c.energy_mj.insert("gpu".into(), 3.0);
        });
        let cfg = GAConfig {
            population_size: 10,
            generations: 3,
            ..GAConfig::default()
        };
        let mut stats = Vec::new();
        let archive = run_nsga2_with(&m, &options, &p, &cfg, |s| stats.push(s.clone())).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let csv = write_pareto_csv(&archive, &m, &options, dir.path()).unwrap();
        let text = fs::read_to_string(csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(PARETO_HEADER));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), archive.len());
        for r in rows {
            let rel = r.rsplit(',').next().unwrap();
            MappingSpec::parse(&fs::read_to_string(dir.path().join(rel)).unwrap())
                .unwrap()
                .validate_layers(&m)
                .unwrap();
        }
        let sp = dir.path().join("stats.jsonl");
        write_stats_jsonl(&sp, &cfg, &options, &stats).unwrap();
        let text = fs::read_to_string(sp).unwrap();
        let header: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(header["config"]["population_size"], 10);
        assert_eq!(text.lines().count(), 1 + 4);
    }
}
