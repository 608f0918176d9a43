use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::Profile;
use crate::model::Model;
use crate::specio::{resource_options, OptionPolicy, PlatformSpec, ResourceKey};
use crate::Objectives;

use super::{crowding_distance, evaluate, nondominated_sort, Chromosome, DseError, GAConfig, ParetoArchive};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    /// Distinct chromosomes scored so far.
    pub evaluations: usize,
    pub archive_size: usize,
    pub front0_size: usize,
    pub best_energy_mj: f64,
    pub best_throughput_fps: f64,
    pub best_memory_mb: f64,
}

/// NSGA-II over the default resource options of `platform`.
pub fn run_nsga2(m: &Model, platform: &PlatformSpec, prof: &Profile, cfg: &GAConfig) -> Result<ParetoArchive, DseError> {
    let options = resource_options(platform, OptionPolicy::SingleAllGpu);
    run_nsga2_with(m, &options, prof, cfg, |_| {})
}

struct Evaluator<'a> {
    m: &'a Model,
    options: &'a [ResourceKey],
    prof: &'a Profile,
    cache: HashMap<Vec<usize>, Objectives>,
}

impl Evaluator<'_> {
    /// Scores a batch. Results depend only on the chromosomes, so the
    /// parallel fan-out cannot affect determinism.
    fn batch(&mut self, pop: &[Chromosome]) -> Result<Vec<Objectives>, DseError> {
        let mut fresh: Vec<&Chromosome> = pop.iter().filter(|c| !self.cache.contains_key(&c.genes)).collect();
        fresh.sort();
        fresh.dedup();
        let (m, options, prof) = (self.m, self.options, self.prof);
        let scored = fresh
            .par_iter()
            .map(|c| evaluate(c, options, m, prof).map(|o| (c.genes.clone(), o)))
            .collect::<Result<Vec<_>, _>>()?;
        self.cache.extend(scored);
        Ok(pop.iter().map(|c| self.cache[&c.genes].clone()).collect())
    }
}

fn stats(generation: usize, evaluations: usize, archive: &ParetoArchive, objs: &[Objectives], front0: usize) -> GenerationStats {
    let all = archive.members.iter().map(|(_, o)| o).chain(objs);
    let (mut e, mut t, mut mem) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY);
    for o in all {
        e = e.min(o.max_device_energy_mj);
        t = t.max(o.throughput_fps);
        mem = mem.min(o.max_device_memory_mb);
    }
    GenerationStats {
        generation,
        evaluations,
        archive_size: archive.len(),
        front0_size: front0,
        best_energy_mj: e,
        best_throughput_fps: t,
        best_memory_mb: mem,
    }
}

/// Ranks and crowding distances of a population.
fn rank_and_crowd(objs: &[Objectives]) -> (Vec<usize>, Vec<f64>, Vec<Vec<usize>>) {
    let fronts = nondominated_sort(objs);
    let mut rank = vec![0; objs.len()];
    let mut crowd = vec![0.0; objs.len()];
    for (r, f) in fronts.iter().enumerate() {
        let pts: Vec<Objectives> = f.iter().map(|&i| objs[i].clone()).collect();
        for (&i, d) in f.iter().zip(crowding_distance(&pts)) {
            rank[i] = r;
            crowd[i] = d;
        }
    }
    (rank, crowd, fronts)
}

/// Elitist truncation to `size`. Points repeating an earlier objective
/// vector are ranked behind every distinct one, otherwise copies of a few
/// good mappings crowd the population.
fn survivors(objs: &[Objectives], size: usize) -> Vec<usize> {
    let mut seen = HashSet::new();
    let (distinct, repeats): (Vec<usize>, Vec<usize>) =
        (0..objs.len()).partition(|&i| seen.insert(objs[i].minimized().map(f64::to_bits)));
    let mut keep = Vec::with_capacity(size);
    for group in [distinct, repeats] {
        let sub: Vec<Objectives> = group.iter().map(|&i| objs[i].clone()).collect();
        let (_, crowd, fronts) = rank_and_crowd(&sub);
        for f in &fronts {
            if keep.len() == size {
                return keep;
            }
            let mut f = f.clone();
            if keep.len() + f.len() > size {
                f.sort_by(|&a, &b| crowd[b].total_cmp(&crowd[a]).then(a.cmp(&b)));
                f.truncate(size - keep.len());
            }
            keep.extend(f.iter().map(|&i| group[i]));
        }
    }
    keep
}

/// Seeded NSGA-II: random initial population, binary tournaments on
/// (rank, crowding), uniform crossover, per-gene reset mutation, elitist
/// survival over parents and offspring. Every scored point is offered to
/// an external archive, which is returned. `on_generation` sees generation
/// 0 (the initial population) and every later generation.
pub fn run_nsga2_with(
    m: &Model,
    options: &[ResourceKey],
    prof: &Profile,
    cfg: &GAConfig,
    mut on_generation: impl FnMut(&GenerationStats),
) -> Result<ParetoArchive, DseError> {
    cfg.validate()?;
    if options.is_empty() {
        return Err(DseError::Config("no resource options to map onto".into()));
    }
    let n_genes = m.hidden_layers().count();
    let n_opts = options.len();
    let size = cfg.population_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut eval = Evaluator {
        m,
        options,
        prof,
        cache: HashMap::new(),
    };
    let mut archive = ParetoArchive::default();

    let mut pop: Vec<Chromosome> = (0..size)
        .map(|_| Chromosome {
            genes: (0..n_genes).map(|_| rng.random_range(0..n_opts)).collect(),
        })
        .collect();
    let mut objs = eval.batch(&pop)?;
    for (c, o) in pop.iter().zip(&objs) {
        archive.insert(c, o);
    }
    let (mut rank, mut crowd, fronts) = rank_and_crowd(&objs);
    on_generation(&stats(0, eval.cache.len(), &archive, &objs, fronts[0].len()));

    for generation in 1..=cfg.generations {
        let tournament = |rng: &mut ChaCha8Rng| {
            let (a, b) = (rng.random_range(0..size), rng.random_range(0..size));
            if rank[b] < rank[a] || (rank[b] == rank[a] && crowd[b] > crowd[a]) {
                b
            } else {
                a
            }
        };
        let mut offspring = Vec::with_capacity(size);
        while offspring.len() < size {
            let (pa, pb) = (tournament(&mut rng), tournament(&mut rng));
            let (mut c1, mut c2) = (pop[pa].clone(), pop[pb].clone());
            if rng.random::<f64>() < cfg.crossover_prob {
                for g in 0..n_genes {
                    if rng.random::<bool>() {
                        std::mem::swap(&mut c1.genes[g], &mut c2.genes[g]);
                    }
                }
            }
            for c in [&mut c1, &mut c2] {
                for g in c.genes.iter_mut() {
                    if rng.random::<f64>() < cfg.mutation_prob {
                        *g = rng.random_range(0..n_opts);
                    }
                }
            }
            offspring.push(c1);
            if offspring.len() < size {
                offspring.push(c2);
            }
        }
        let off_objs = eval.batch(&offspring)?;
        for (c, o) in offspring.iter().zip(&off_objs) {
            archive.insert(c, o);
        }

        pop.extend(offspring);
        objs.extend(off_objs);
        let keep = survivors(&objs, size);
        pop = keep.iter().map(|&i| pop[i].clone()).collect();
        objs = keep.iter().map(|&i| objs[i].clone()).collect();
        let (r, c, fronts) = rank_and_crowd(&objs);
        rank = r;
        crowd = c;
        on_generation(&stats(generation, eval.cache.len(), &archive, &objs, fronts[0].len()));
    }
    Ok(archive)
}
