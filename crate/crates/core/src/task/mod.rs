//! The four graph-reasoning tasks: instance types, exact solvers, templated
//! node descriptions, seeded generation and JSONL storage.

mod generate;
mod jsonl;
mod oracle;
mod templates;

pub use generate::{child_seed, generate, generate_one, generate_splits, GenConfig, SplitSizes, Splits};
pub use jsonl::{emit_jsonl, from_jsonl_str, load_jsonl, to_jsonl_string};
pub use oracle::{
    oracle_bipartite_matching, oracle_shortest_path, oracle_substructure, oracle_triplet_sum,
};
pub use templates::{render_description, template_for, DescriptionTemplate, SlotValues};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TaskError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("anchor {anchor} is not a node of a {n}-node graph")]
    InvalidAnchor { anchor: usize, n: usize },
    #[error("{task} expects {expected} anchors, got {got}")]
    AnchorCount { task: TaskKind, expected: usize, got: usize },
    #[error("{0} attributes given for {1} nodes")]
    AttrLength(usize, usize),
    #[error("attributes do not belong to task {0}")]
    AttrKind(TaskKind),
    #[error("unknown attribute value {0:?}")]
    BadAttr(String),
    #[error("node {0} has no valid triplet")]
    NoValidTriplet(usize),
    #[error("node {target} is unreachable from node {from}")]
    Unreachable { from: usize, target: usize },
    #[error("bipartite matching needs a partition")]
    MissingPartition,
    #[error("template slot {{{0}}} has no value")]
    MissingSlot(String),
    #[error("description of {got} tokens falls outside {min}..={max}")]
    DescriptionLength { got: usize, min: usize, max: usize },
    #[error("could not satisfy constraint `{0}` after {1} attempts")]
    Unsatisfiable(&'static str, usize),
    #[error("invalid generation settings: {0}")]
    Config(String),
    #[error("stored answer {stored} disagrees with recomputed {computed}")]
    AnswerMismatch { stored: i64, computed: i64 },
    #[error("line {line}: {msg}")]
    Jsonl { line: usize, msg: String },
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SubstructureCounting,
    MaximumTripletSum,
    ShortestPath,
    BipartiteMatching,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::SubstructureCounting,
        TaskKind::MaximumTripletSum,
        TaskKind::ShortestPath,
        TaskKind::BipartiteMatching,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::SubstructureCounting => "substructure_counting",
            TaskKind::MaximumTripletSum => "maximum_triplet_sum",
            TaskKind::ShortestPath => "shortest_path",
            TaskKind::BipartiteMatching => "bipartite_matching",
        }
    }

    pub fn anchor_count(self) -> usize {
        match self {
            TaskKind::SubstructureCounting | TaskKind::MaximumTripletSum => 1,
            TaskKind::ShortestPath => 2,
            TaskKind::BipartiteMatching => 0,
        }
    }

    /// Graph-level tasks pool over all nodes; the others over their anchors.
    pub fn default_pooling(self) -> Pooling {
        match self {
            TaskKind::BipartiteMatching => Pooling::Mean,
            _ => Pooling::Anchor,
        }
    }

    /// Sentence that precedes the integer in every response.
    pub fn response_stem(self) -> &'static str {
        match self {
            TaskKind::SubstructureCounting => "The number of C-C-O triangles is",
            TaskKind::MaximumTripletSum => "The maximum sum is",
            TaskKind::ShortestPath => "The minimum amount of dark matter is",
            TaskKind::BipartiteMatching => "The maximum number of matched applicants is",
        }
    }

    /// Reference averages: nodes and edges per graph.
    pub fn reference_stats(self) -> (usize, f64) {
        match self {
            TaskKind::SubstructureCounting => (15, 22.3),
            TaskKind::MaximumTripletSum => (15, 26.6),
            TaskKind::ShortestPath => (20, 32.4),
            TaskKind::BipartiteMatching => (20, 14.0),
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown task {s:?}"))
    }
}

/// How node representations collapse into one graph representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Mean over the anchor nodes.
    Anchor,
    /// Mean over every node.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    C,
    O,
    N,
    H,
    S,
}

impl Element {
    pub const ALL: [Element; 5] = [Element::C, Element::O, Element::N, Element::H, Element::S];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::C => "C",
            Element::O => "O",
            Element::N => "N",
            Element::H => "H",
            Element::S => "S",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Element::C => "Carbon",
            Element::O => "Oxygen",
            Element::N => "Nitrogen",
            Element::H => "Hydrogen",
            Element::S => "Sulfur",
        }
    }

    pub fn atomic_number(self) -> u32 {
        match self {
            Element::C => 6,
            Element::O => 8,
            Element::N => 7,
            Element::H => 1,
            Element::S => 16,
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        Element::ALL.into_iter().find(|e| e.symbol() == s)
    }
}

/// Per-node task attribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeAttrs {
    Atoms(Vec<Element>),
    Ages(Vec<u32>),
    Costs(Vec<u32>),
    /// Applicant occupations followed by job titles.
    Roles(Vec<String>),
}

impl NodeAttrs {
    pub fn len(&self) -> usize {
        match self {
            NodeAttrs::Atoms(v) => v.len(),
            NodeAttrs::Ages(v) | NodeAttrs::Costs(v) => v.len(),
            NodeAttrs::Roles(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_strings(&self) -> Vec<String> {
        match self {
            NodeAttrs::Atoms(v) => v.iter().map(|e| e.symbol().to_string()).collect(),
            NodeAttrs::Ages(v) | NodeAttrs::Costs(v) => v.iter().map(u32::to_string).collect(),
            NodeAttrs::Roles(v) => v.clone(),
        }
    }

    pub fn parse(task: TaskKind, raw: &[String]) -> Result<Self, TaskError> {
        let num = |s: &String| s.parse::<u32>().map_err(|_| TaskError::BadAttr(s.clone()));
        Ok(match task {
            TaskKind::SubstructureCounting => NodeAttrs::Atoms(
                raw.iter()
                    .map(|s| Element::from_symbol(s).ok_or_else(|| TaskError::BadAttr(s.clone())))
                    .collect::<Result<_, _>>()?,
            ),
            TaskKind::MaximumTripletSum => NodeAttrs::Ages(raw.iter().map(num).collect::<Result<_, _>>()?),
            TaskKind::ShortestPath => NodeAttrs::Costs(raw.iter().map(num).collect::<Result<_, _>>()?),
            TaskKind::BipartiteMatching => NodeAttrs::Roles(raw.to_vec()),
        })
    }

    fn matches(&self, task: TaskKind) -> bool {
        matches!(
            (self, task),
            (NodeAttrs::Atoms(_), TaskKind::SubstructureCounting)
                | (NodeAttrs::Ages(_), TaskKind::MaximumTripletSum)
                | (NodeAttrs::Costs(_), TaskKind::ShortestPath)
                | (NodeAttrs::Roles(_), TaskKind::BipartiteMatching)
        )
    }
}

/// One described graph with its instruction, response and answer.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub task: TaskKind,
    pub graph: Graph,
    pub descriptions: Vec<String>,
    pub attrs: NodeAttrs,
    pub anchors: Vec<usize>,
    pub instruction: String,
    pub response: String,
    pub answer: i64,
    pub seed: u64,
}

impl TaskInstance {
    /// Run the task's solver on this instance's graph, attributes and anchors.
    pub fn recompute_answer(&self) -> Result<i64, TaskError> {
        solve(self.task, &self.graph, &self.attrs, &self.anchors)
    }

    /// Check structural consistency and that the stored answer is correct.
    pub fn validate(&self) -> Result<(), TaskError> {
        let n = self.graph.n();
        if self.descriptions.len() != n {
            return Err(TaskError::AttrLength(self.descriptions.len(), n));
        }
        let computed = self.recompute_answer()?;
        if computed != self.answer {
            return Err(TaskError::AnswerMismatch {
                stored: self.answer,
                computed,
            });
        }
        Ok(())
    }

    pub fn pooling(&self) -> Pooling {
        self.task.default_pooling()
    }
}

/// Dispatch to the solver for `task`.
pub fn solve(task: TaskKind, graph: &Graph, attrs: &NodeAttrs, anchors: &[usize]) -> Result<i64, TaskError> {
    let n = graph.n();
    if attrs.len() != n {
        return Err(TaskError::AttrLength(attrs.len(), n));
    }
    if !attrs.matches(task) {
        return Err(TaskError::AttrKind(task));
    }
    if anchors.len() != task.anchor_count() {
        return Err(TaskError::AnchorCount {
            task,
            expected: task.anchor_count(),
            got: anchors.len(),
        });
    }
    match attrs {
        NodeAttrs::Atoms(labels) => oracle_substructure(graph, labels, anchors[0]),
        NodeAttrs::Ages(ages) => oracle_triplet_sum(graph, ages, anchors[0]),
        NodeAttrs::Costs(costs) => oracle_shortest_path(graph, costs, anchors[0], anchors[1]),
        NodeAttrs::Roles(_) => oracle_bipartite_matching(graph),
    }
}

/// Instruction text; node numbers are shown 1-based.
pub fn instruction_text(task: TaskKind, anchors: &[usize]) -> String {
    match task {
        TaskKind::SubstructureCounting => format!(
            "How many carbon-carbon-oxygen triangles containing Atom {} are in the molecule?",
            anchors[0] + 1
        ),
        TaskKind::MaximumTripletSum => format!(
            "Question: What is the maximum sum of age of a triplet composed of Person {}, their friends and friends of friends?",
            anchors[0] + 1
        ),
        TaskKind::ShortestPath => format!(
            "Question: Starting from wormhole {}, How much dark matter we'll need at the minimum to reach Wormhole {}?",
            anchors[0] + 1,
            anchors[1] + 1
        ),
        TaskKind::BipartiteMatching => "Each job can only accept one applicant and a job applicant can be appointed for only one job. For most how many applicants can find the job they are interested in?".to_string(),
    }
}

pub fn response_text(task: TaskKind, answer: i64) -> String {
    format!("{} {}", task.response_stem(), answer)
}
