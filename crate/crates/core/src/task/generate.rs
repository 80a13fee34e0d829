use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::templates::{render_description, SlotValues};
use super::{instruction_text, response_text, solve, Element, NodeAttrs, TaskError, TaskInstance, TaskKind};
use crate::graph::{Graph, Side};

const FIRST_NAMES_F: &[&str] = &[
    "Wilma", "Cornelia", "Grace", "Nora", "Alice", "Maya", "Elena", "Ruth", "Iris", "Hazel", "Clara", "Vera",
];
const FIRST_NAMES_M: &[&str] = &[
    "Manuel", "Travis", "Adam", "Oscar", "Felix", "Henry", "Leo", "Samuel", "Victor", "Arthur", "Hugo", "Simon",
];
const LAST_NAMES: &[&str] = &[
    "Lyons", "Brooks", "Cornelius", "Lamarr", "Wight", "Fisher", "Hayes", "Porter", "Marsh", "Keller", "Dalton",
    "Reyes", "Holt", "Sutton", "Moreno", "Quinn",
];
const GALAXIES: &[&str] = &[
    "ARP 188",
    "Horsehead Nebula",
    "Large Magellanic Cloud",
    "Pelican Nebula",
    "Needle Galaxy",
    "Andromeda",
    "Triangulum",
    "Whirlpool Galaxy",
    "Sombrero Galaxy",
    "Pinwheel Galaxy",
    "Cartwheel Galaxy",
    "Black Eye Galaxy",
    "Sunflower Galaxy",
    "Cigar Galaxy",
    "Tadpole Galaxy",
    "Eagle Nebula",
];
const ROLES: &[&str] = &[
    "urban planner",
    "software engineer",
    "nurse",
    "data analyst",
    "chef",
    "graphic designer",
    "teacher",
    "accountant",
    "electrician",
    "pharmacist",
    "architect",
    "journalist",
    "mechanic",
    "librarian",
    "photographer",
    "civil engineer",
];

/// Generation settings for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub task: TaskKind,
    pub n_min: usize,
    pub n_max: usize,
    /// Expected edges divided by node count.
    pub edges_per_node: f64,
    /// Reject instances whose answer exceeds this value.
    pub max_answer: Option<i64>,
    /// Sampling weights for C, O, N, H, S.
    pub atom_weights: [f64; 5],
    pub max_attempts: usize,
}

impl GenConfig {
    /// Fixed `avg_n` nodes with the reference edge density for `task`.
    pub fn new(task: TaskKind, avg_n: usize) -> Self {
        let (n, m) = task.reference_stats();
        Self {
            task,
            n_min: avg_n,
            n_max: avg_n,
            edges_per_node: m / n as f64,
            max_answer: None,
            atom_weights: [0.3, 0.25, 0.15, 0.15, 0.15],
            max_attempts: 10_000,
        }
    }

    /// Reference node count and density.
    pub fn reference(task: TaskKind) -> Self {
        Self::new(task, task.reference_stats().0)
    }

    fn check(&self) -> Result<(), TaskError> {
        if self.n_min < 4 || self.n_max < self.n_min {
            return Err(TaskError::Config(format!(
                "node range {}..={} must start at 4 or more",
                self.n_min, self.n_max
            )));
        }
        if self.edges_per_node.is_nan() || self.edges_per_node <= 0.0 || self.atom_weights.iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(TaskError::Config("densities and weights must be positive".into()));
        }
        if self.max_attempts == 0 {
            return Err(TaskError::Config("max_attempts must be positive".into()));
        }
        Ok(())
    }

    /// Generate instances `offset..offset + count`.
    pub fn generate_range(&self, offset: u64, count: usize, seed: u64) -> Result<Vec<TaskInstance>, TaskError> {
        self.check()?;
        (0..count as u64)
            .into_par_iter()
            .map(|i| generate_one(self, seed, offset + i))
            .collect()
    }
}

/// Train/validation/test sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 2000,
            val: 2000,
            test: 6000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<TaskInstance>,
    pub val: Vec<TaskInstance>,
    pub test: Vec<TaskInstance>,
}

/// Splits use consecutive, disjoint index ranges under the same base seed.
pub fn generate_splits(cfg: &GenConfig, sizes: SplitSizes, seed: u64) -> Result<Splits, TaskError> {
    let (a, b) = (sizes.train as u64, sizes.val as u64);
    Ok(Splits {
        train: cfg.generate_range(0, sizes.train, seed)?,
        val: cfg.generate_range(a, sizes.val, seed)?,
        test: cfg.generate_range(a + b, sizes.test, seed)?,
    })
}

/// `count` instances of `task` on `avg_n` nodes at the reference density.
pub fn generate(task: TaskKind, count: usize, avg_n: usize, seed: u64) -> Result<Vec<TaskInstance>, TaskError> {
    if count == 0 {
        return Err(TaskError::Config("count must be at least 1".into()));
    }
    GenConfig::new(task, avg_n).generate_range(0, count, seed)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of instance `index` of `task` under base `seed`.
pub fn child_seed(seed: u64, task: TaskKind, index: u64) -> u64 {
    let tag = TaskKind::ALL.iter().position(|&t| t == task).unwrap() as u64;
    splitmix64(seed ^ splitmix64((tag << 48) ^ index))
}

fn sample_graph(cfg: &GenConfig, n: usize, rng: &mut ChaCha8Rng) -> Result<Graph, TaskError> {
    let target = cfg.edges_per_node * n as f64;
    if cfg.task == TaskKind::BipartiteMatching {
        let left = n / 2;
        let p = (target / (left * (n - left)) as f64).min(1.0);
        let mut edges = Vec::new();
        for a in 0..left {
            for b in left..n {
                if rng.random_bool(p) {
                    edges.push((a, b));
                }
            }
        }
        let part = (0..n).map(|i| if i < left { Side::Left } else { Side::Right }).collect();
        return Ok(Graph::new(n, edges, Some(part))?);
    }
    let p = (target / (n * (n - 1) / 2) as f64).min(1.0);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(p) {
                edges.push((a, b));
            }
        }
    }
    Ok(Graph::new(n, edges, None)?)
}

fn sample_attrs(cfg: &GenConfig, n: usize, rng: &mut ChaCha8Rng) -> NodeAttrs {
    match cfg.task {
        TaskKind::SubstructureCounting => {
            let dist = WeightedIndex::new(cfg.atom_weights).expect("checked weights");
            NodeAttrs::Atoms((0..n).map(|_| Element::ALL[dist.sample(rng)]).collect())
        }
        TaskKind::MaximumTripletSum => NodeAttrs::Ages((0..n).map(|_| 10 * rng.random_range(2..=7)).collect()),
        TaskKind::ShortestPath => NodeAttrs::Costs((0..n).map(|_| 10 * rng.random_range(1..=5)).collect()),
        TaskKind::BipartiteMatching => {
            NodeAttrs::Roles((0..n).map(|_| ROLES.choose(rng).unwrap().to_string()).collect())
        }
    }
}

/// Anchors for the instance, or the name of the violated constraint.
fn sample_anchors(task: TaskKind, graph: &Graph, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, &'static str> {
    let n = graph.n();
    match task {
        TaskKind::SubstructureCounting => Ok(vec![rng.random_range(0..n)]),
        TaskKind::MaximumTripletSum => {
            let valid: Vec<usize> = (0..n)
                .filter(|&v| graph.neighbors(v).iter().any(|&f| graph.degree(f) >= 2))
                .collect();
            valid.choose(rng).map(|&v| vec![v]).ok_or("anchor has a valid triplet")
        }
        TaskKind::ShortestPath => {
            if !graph.is_connected() {
                return Err("graph is connected");
            }
            let s = rng.random_range(0..n);
            let t = (s + rng.random_range(1..n)) % n;
            Ok(vec![s, t])
        }
        TaskKind::BipartiteMatching => Ok(vec![]),
    }
}

fn pronouns(values: &mut SlotValues, female: bool) {
    let (a, b, c, d) = if female { ("She", "she", "Her", "her") } else { ("He", "he", "His", "his") };
    values.insert("Pron", a.into());
    values.insert("pron", b.into());
    values.insert("Poss", c.into());
    values.insert("poss", d.into());
    values.insert("obj", (if female { "her" } else { "him" }).into());
}

fn person(values: &mut SlotValues, rng: &mut ChaCha8Rng) {
    let female = rng.random_bool(0.5);
    let first = if female { FIRST_NAMES_F } else { FIRST_NAMES_M }.choose(rng).unwrap();
    let last = LAST_NAMES.choose(rng).unwrap();
    values.insert("person", format!("{first} {last}"));
    pronouns(values, female);
}

fn slot_values(task: TaskKind, attrs: &NodeAttrs, graph: &Graph, i: usize, rng: &mut ChaCha8Rng) -> SlotValues {
    let mut v = SlotValues::new();
    match attrs {
        NodeAttrs::Atoms(labels) => {
            let e = labels[i];
            v.insert("name", e.name().into());
            v.insert("symbol", e.symbol().into());
            v.insert("number", e.atomic_number().to_string());
            v.insert("en", format!("{:.2}", rng.random_range(1.8..3.8)));
            v.insert("radius", rng.random_range(30..=110).to_string());
        }
        NodeAttrs::Ages(ages) => {
            person(&mut v, rng);
            v.insert("age", ages[i].to_string());
        }
        NodeAttrs::Costs(costs) => {
            v.insert("idx", (i + 1).to_string());
            v.insert("galaxy", GALAXIES.choose(rng).unwrap().to_string());
            v.insert("dist", rng.random_range(300..10_000).to_string());
            v.insert("cost", costs[i].to_string());
        }
        NodeAttrs::Roles(roles) => {
            v.insert("role", roles[i].clone());
            if graph.partition().map(|p| p[i]) == Some(Side::Right) {
                v.insert("salary", format!("{}.{}", rng.random_range(30_000..90_000), rng.random_range(0..10)));
                v.insert("hours", rng.random_range(20..=48).to_string());
            } else {
                person(&mut v, rng);
                v.insert("age", rng.random_range(18..=65).to_string());
            }
        }
    }
    debug_assert!(task == TaskKind::BipartiteMatching || graph.partition().is_none());
    v
}

/// Instance `index` under base `seed`; reproducible from `(task, seed, index)`.
pub fn generate_one(cfg: &GenConfig, seed: u64, index: u64) -> Result<TaskInstance, TaskError> {
    let inst_seed = child_seed(seed, cfg.task, index);
    let mut rng = ChaCha8Rng::seed_from_u64(inst_seed);
    let mut last_failure = "graph sampling";
    for _ in 0..cfg.max_attempts {
        let n = rng.random_range(cfg.n_min..=cfg.n_max);
        let graph = sample_graph(cfg, n, &mut rng)?;
        let attrs = sample_attrs(cfg, n, &mut rng);
        let anchors = match sample_anchors(cfg.task, &graph, &mut rng) {
            Ok(a) => a,
            Err(why) => {
                last_failure = why;
                continue;
            }
        };
        let answer = solve(cfg.task, &graph, &attrs, &anchors)?;
        if cfg.max_answer.is_some_and(|cap| answer > cap) {
            last_failure = "answer within the configured maximum";
            continue;
        }
        let descriptions = (0..n)
            .map(|i| {
                let values = slot_values(cfg.task, &attrs, &graph, i, &mut rng);
                let right = graph.partition().is_some_and(|p| p[i] == Side::Right);
                render_description(cfg.task, right, &values, &mut rng)
            })
            .collect::<Result<Vec<_>, _>>()?;
        return Ok(TaskInstance {
            task: cfg.task,
            instruction: instruction_text(cfg.task, &anchors),
            response: response_text(cfg.task, answer),
            graph,
            descriptions,
            attrs,
            anchors,
            answer,
            seed: inst_seed,
        });
    }
    Err(TaskError::Unsatisfiable(last_failure, cfg.max_attempts))
}
