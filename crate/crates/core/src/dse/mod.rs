//! Multi-objective mapping search.
//!
//! A chromosome holds one gene per hidden layer (topological order); each
//! gene indexes the list of resource options. All objectives are minimized
//! internally as `[energy, memory, -throughput]`.

mod nsga2;
mod report;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::cost::{evaluate_mapping, CostError, Profile};
use crate::model::Model;
use crate::specio::{Assignment, MappingSpec, ResourceKey};
use crate::Objectives;

pub use nsga2::{run_nsga2, run_nsga2_with, GenerationStats};
pub use report::{write_pareto_csv, write_stats_jsonl, PARETO_HEADER};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Chromosome {
    pub genes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GAConfig {
    pub population_size: usize,
    pub mutation_prob: f64,
    pub crossover_prob: f64,
    pub generations: usize,
    pub seed: u64,
}

impl Default for GAConfig {
    fn default() -> Self {
        GAConfig {
            population_size: 100,
            mutation_prob: 0.1,
            crossover_prob: 0.5,
            generations: 400,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DseError {
    #[error("invalid GA configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GAConfig {
    pub fn validate(&self) -> Result<(), DseError> {
        for (name, p) in [("mutation_prob", self.mutation_prob), ("crossover_prob", self.crossover_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DseError::Config(format!("{name} = {p} is outside [0, 1]")));
            }
        }
        if self.population_size < 2 {
            return Err(DseError::Config("population_size must be at least 2".into()));
        }
        Ok(())
    }
}

/// Groups hidden layers by gene value. Keys appear in first-use order, so
/// the result always passes mapping validation.
pub fn decode(c: &Chromosome, options: &[ResourceKey], m: &Model) -> MappingSpec {
    let mut assignments: Vec<Assignment> = Vec::new();
    let mut slot_of: Vec<Option<usize>> = vec![None; options.len()];
    for (layer, &g) in m.hidden_layers().zip(&c.genes) {
        let i = *slot_of[g].get_or_insert_with(|| {
            assignments.push(Assignment {
                key: options[g].clone(),
                layers: Vec::new(),
            });
            assignments.len() - 1
        });
        assignments[i].layers.push(layer.name.clone());
    }
    MappingSpec::new(assignments)
}

/// Decodes and scores one chromosome.
pub fn evaluate(c: &Chromosome, options: &[ResourceKey], m: &Model, p: &Profile) -> Result<Objectives, CostError> {
    evaluate_mapping(m, &decode(c, options, m), p)
}

/// `a` dominates `b` when it is no worse in every objective and strictly
/// better in one.
pub fn dominates(a: &Objectives, b: &Objectives) -> bool {
    let (a, b) = (a.minimized(), b.minimized());
    a.iter().zip(&b).all(|(x, y)| x <= y) && a.iter().zip(&b).any(|(x, y)| x < y)
}

/// Fast non-dominated sort. Front 0 is the non-dominated set; indices
/// within a front are ascending.
pub fn nondominated_sort(points: &[Objectives]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by = vec![0usize; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if dominates(&points[i], &points[j]) {
                dominates_list[i].push(j);
                dominated_by[j] += 1;
            } else if dominates(&points[j], &points[i]) {
                dominates_list[j].push(i);
                dominated_by[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominates_list[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// NSGA-II crowding distance. Per objective, the extreme points get
/// infinity and interior points add their neighbours' normalized gap.
pub fn crowding_distance(front: &[Objectives]) -> Vec<f64> {
    let n = front.len();
    let mut d = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let vals: Vec<[f64; 3]> = front.iter().map(Objectives::minimized).collect();
    for k in 0..3 {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| vals[a][k].total_cmp(&vals[b][k]).then(a.cmp(&b)));
        let (lo, hi) = (vals[idx[0]][k], vals[idx[n - 1]][k]);
        d[idx[0]] = f64::INFINITY;
        d[idx[n - 1]] = f64::INFINITY;
        let span = hi - lo;
        if span <= 0.0 {
            continue;
        }
        for w in 1..n - 1 {
            let i = idx[w];
            if d[i].is_finite() {
                d[i] += (vals[idx[w + 1]][k] - vals[idx[w - 1]][k]) / span;
            }
        }
    }
    d
}

/// Mutually non-dominated points seen so far. Points with an objective
/// vector already present are not added again.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParetoArchive {
    pub members: Vec<(Chromosome, Objectives)>,
}

impl ParetoArchive {
    /// Offers a point; returns whether it was added.
    pub fn insert(&mut self, c: &Chromosome, o: &Objectives) -> bool {
        if self
            .members
            .iter()
            .any(|(_, m)| dominates(m, o) || m.minimized() == o.minimized())
        {
            return false;
        }
        self.members.retain(|(_, m)| !dominates(o, m));
        self.members.push((c.clone(), o.clone()));
        true
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Members ordered by objectives, then genes.
    pub fn sorted(&self) -> Vec<(Chromosome, Objectives)> {
        let mut v = self.members.clone();
        v.sort_by(|(ca, a), (cb, b)| cmp_objectives(a, b).then_with(|| ca.cmp(cb)));
        v
    }

    pub fn objective_set(&self) -> Vec<[f64; 3]> {
        self.sorted().iter().map(|(_, o)| o.minimized()).collect()
    }
}

fn cmp_objectives(a: &Objectives, b: &Objectives) -> Ordering {
    let (a, b) = (a.minimized(), b.minimized());
    a.iter()
        .zip(&b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Evaluates every chromosome in the search space and returns its Pareto
/// set. Refuses spaces larger than `limit`.
pub fn exhaustive_pareto(
    m: &Model,
    options: &[ResourceKey],
    p: &Profile,
    limit: usize,
) -> Result<ParetoArchive, DseError> {
    let genes = m.hidden_layers().count();
    let total = options
        .len()
        .checked_pow(genes as u32)
        .filter(|&t| t <= limit)
        .ok_or_else(|| DseError::Config(format!("{}^{genes} mappings exceed the limit of {limit}", options.len())))?;
    let mut archive = ParetoArchive::default();
    let mut c = Chromosome { genes: vec![0; genes] };
    for _ in 0..total {
        let o = evaluate(&c, options, m, p)?;
        archive.insert(&c, &o);
        for g in c.genes.iter_mut().rev() {
            *g += 1;
            if *g < options.len() {
                break;
            }
            *g = 0;
        }
    }
    Ok(archive)
}
