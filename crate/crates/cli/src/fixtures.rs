//! Generated fixture sets: a model, its weights, a platform, a mapping and
//! a seeded input, written as ordinary tool inputs.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use edgesplit::model::Model;
use edgesplit::runtime::write_raw_tensor;
use edgesplit::specio::{MappingSpec, PlatformSpec, ResourceKey};
use edgesplit::{zoo, Tensor32};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FixtureKind {
    /// Five-layer example network on four edge boards, three ranks.
    Diamond,
    /// Toy CNN covering every operator, random three-rank mapping.
    Toy,
    /// Four-convolution chain on two GPU devices (1296 mappings).
    Chain,
    /// 900 hidden layers, about 8.25 M parameters, 24 single-core partitions.
    Deep,
}

pub struct FixtureSet {
    pub model: Model,
    pub platform: PlatformSpec,
    pub mapping: MappingSpec,
    pub input: Tensor32,
}

pub const FIXTURE_FILES: [&str; 5] = ["model.json", "weights.bin", "platform.txt", "mapping.json", "input.bin"];

pub fn build(kind: FixtureKind, seed: u64) -> FixtureSet {
    let (model, platform, mapping) = match kind {
        FixtureKind::Diamond => (
            zoo::diamond_model(),
            PlatformSpec::parse(zoo::DIAMOND_PLATFORM).expect("diamond platform"),
            MappingSpec::parse(zoo::DIAMOND_MAPPING).expect("diamond mapping"),
        ),
        FixtureKind::Toy => {
            let m = zoo::toy_cnn(seed);
            let p = zoo::uniform_platform(3, 4, false);
            let ms = zoo::random_mapping(&m, &p, 3, &mut ChaCha8Rng::seed_from_u64(seed));
            (m, p, ms)
        }
        FixtureKind::Chain => {
            let m = zoo::conv_chain(4, 4, 8, seed);
            let p = zoo::uniform_platform(2, 4, true);
            let keys = [ResourceKey::cpu("dev0", "arm", 0..4), ResourceKey::gpu("dev1")];
            let ms = zoo::contiguous_mapping(&m, &keys);
            (m, p, ms)
        }
        FixtureKind::Deep => {
            let m = zoo::synthetic_deep(300, 55, 8, seed);
            let p = zoo::uniform_platform(3, 8, false);
            let keys: Vec<ResourceKey> = (0..3)
                .flat_map(|d| (0..8u8).map(move |c| ResourceKey::cpu(format!("dev{d}"), "arm", [c])))
                .collect();
            let ms = zoo::contiguous_mapping(&m, &keys);
            (m, p, ms)
        }
    };
    let spec = model.shape(&model.input_layer().name).expect("input shape").clone();
    let input = Tensor32::new(spec, zoo::random_input(&model, seed)).expect("input fills shape");
    FixtureSet {
        model,
        platform,
        mapping,
        input,
    }
}

/// Writes the set's files into `dir` and returns their paths.
pub fn write(set: &FixtureSet, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let paths: Vec<PathBuf> = FIXTURE_FILES.iter().map(|f| dir.join(f)).collect();
    set.model.save(&paths[0], &paths[1])?;
    let text = |p: &PathBuf, s: String| fs::write(p, s).map_err(|e| CliError::io(p, e));
    text(&paths[2], set.platform.format())?;
    text(&paths[3], set.mapping.format())?;
    write_raw_tensor(&paths[4], &set.input).map_err(|e| CliError::io_msg(&paths[4], e))?;
    Ok(paths)
}
