//! Graph2Text baselines: graphs written out as text (adjacency lists or a
//! shuffled edge list), zero-shot, one-shot and chain-of-thought prompts,
//! and context-length accounting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{Graph, Side};
use crate::task::{instruction_text, response_text, solve, Element, NodeAttrs, TaskInstance, TaskKind};
use crate::tokenizer::count_tokens;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("{0} prompts need an exemplar")]
    MissingExemplar(PromptMode),
    #[error("exemplar is for {exemplar}, query is {query}")]
    ExemplarTask { exemplar: TaskKind, query: TaskKind },
    #[error("cannot parse structure line {0:?}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GraphTextFormat {
    AdjacencyList,
    /// Each edge once, order shuffled by the seed.
    EdgeListRandom { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PromptMode {
    ZeroShot,
    FewShot,
    FewShotCot,
}

impl std::fmt::Display for PromptMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PromptMode::ZeroShot => "zero_shot",
            PromptMode::FewShot => "few_shot",
            PromptMode::FewShotCot => "few_shot_cot",
        })
    }
}

/// A solved instance with a written-out reasoning chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub instance: TaskInstance,
    pub chain: String,
}

const EDGE_DASH: &str = " \u{2014} ";

/// Display name of node `i`, numbered from 1 within its group.
fn node_name(task: TaskKind, graph: &Graph, i: usize) -> String {
    match task {
        TaskKind::SubstructureCounting => format!("Atom {}", i + 1),
        TaskKind::MaximumTripletSum => format!("Person {}", i + 1),
        TaskKind::ShortestPath => format!("Wormhole {}", i + 1),
        TaskKind::BipartiteMatching => {
            let left = left_count(graph);
            if i < left {
                format!("Applicant {}", i + 1)
            } else {
                format!("Job {}", i - left + 1)
            }
        }
    }
}

fn left_count(graph: &Graph) -> usize {
    graph
        .partition()
        .map_or(graph.n(), |p| p.iter().filter(|&&s| s == Side::Left).count())
}

fn descriptions_block(inst: &TaskInstance) -> String {
    let g = &inst.graph;
    let n = g.n();
    let mut out = String::new();
    let line = |out: &mut String, label: Option<String>, text: &str| {
        match label {
            Some(l) => out.push_str(&format!("{l}: {text}\n\n")),
            None => out.push_str(&format!("{text}\n\n")),
        };
    };
    match inst.task {
        TaskKind::SubstructureCounting => {
            out.push_str(&format!("Here are the descriptions of {n} atoms in a molecule.\n\n"));
            for i in 0..n {
                line(&mut out, Some(node_name(inst.task, g, i)), &inst.descriptions[i]);
            }
        }
        TaskKind::MaximumTripletSum => {
            out.push_str(&format!("Here are the descriptions of {n} people.\n\n"));
            for i in 0..n {
                line(&mut out, Some(node_name(inst.task, g, i)), &inst.descriptions[i]);
            }
        }
        TaskKind::ShortestPath => {
            out.push_str(&format!("Here are the descriptions of {n} wormholes.\n\n"));
            for d in &inst.descriptions {
                line(&mut out, None, d);
            }
        }
        TaskKind::BipartiteMatching => {
            let left = left_count(g);
            out.push_str(&format!("Here are the descriptions of {left} job applicants.\n\n"));
            for i in 0..left {
                line(&mut out, Some(node_name(inst.task, g, i)), &inst.descriptions[i]);
            }
            out.push_str(&format!("Here are the descriptions of {} jobs.\n\n", n - left));
            for i in left..n {
                line(&mut out, Some(node_name(inst.task, g, i)), &inst.descriptions[i]);
            }
        }
    }
    out
}

fn structure_header(task: TaskKind) -> &'static str {
    match task {
        TaskKind::SubstructureCounting => "These atoms are connected as the following undirected graph to form the molecule:",
        TaskKind::MaximumTripletSum => "The relationship between them can be described as the following undirected graph:",
        TaskKind::ShortestPath => "These wormholes are connected as the following undirected graph:",
        TaskKind::BipartiteMatching => {
            "Each applicant is interested in some of the jobs, and the relationship can be described as the following graph."
        }
    }
}

fn verb(task: TaskKind) -> &'static str {
    match task {
        TaskKind::BipartiteMatching => "is interested in",
        _ => "is connected with",
    }
}

/// Structure lines only, without header or blank lines.
pub fn structure_lines(inst: &TaskInstance, format: GraphTextFormat) -> Vec<String> {
    let g = &inst.graph;
    let task = inst.task;
    match format {
        GraphTextFormat::AdjacencyList => {
            let listed = if task == TaskKind::BipartiteMatching { left_count(g) } else { g.n() };
            (0..listed)
                .map(|i| {
                    let nb: Vec<String> = g.neighbors(i).iter().map(|&j| node_name(task, g, j)).collect();
                    let list = if nb.is_empty() { "none".to_string() } else { nb.join(", ") };
                    format!("{} {}: {list}.", node_name(task, g, i), verb(task))
                })
                .collect()
        }
        GraphTextFormat::EdgeListRandom { seed } => {
            let mut edges = g.edges().to_vec();
            edges.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            edges
                .into_iter()
                .map(|(a, b)| format!("{}{EDGE_DASH}{}", node_name(task, g, a), node_name(task, g, b)))
                .collect()
        }
    }
}

/// Descriptions, then structure, then the instruction.
pub fn serialize_graph(inst: &TaskInstance, format: GraphTextFormat) -> String {
    let mut out = descriptions_block(inst);
    out.push_str(structure_header(inst.task));
    out.push_str("\n\n");
    for line in structure_lines(inst, format) {
        out.push_str(&line);
        out.push_str("\n\n");
    }
    out.push_str(&inst.instruction);
    out
}

/// Recover the edge set from serialized text in either format.
pub fn parse_structure(text: &str, task: TaskKind, n_left: Option<usize>) -> Result<Vec<(usize, usize)>, PromptError> {
    let parse_name = |s: &str| -> Result<usize, PromptError> {
        let s = s.trim().trim_end_matches('.');
        let (kind, num) = s.rsplit_once(' ').ok_or_else(|| PromptError::Parse(s.to_string()))?;
        let num: usize = num.parse().map_err(|_| PromptError::Parse(s.to_string()))?;
        if num == 0 {
            return Err(PromptError::Parse(s.to_string()));
        }
        Ok(match (kind, n_left) {
            ("Job", Some(left)) => left + num - 1,
            _ => num - 1,
        })
    };
    let marker = format!(" {}: ", verb(task));
    let mut edges = std::collections::BTreeSet::new();
    for line in text.lines() {
        if let Some((head, rest)) = line.split_once(&marker) {
            let a = parse_name(head)?;
            if rest.trim() == "none." {
                continue;
            }
            for part in rest.trim_end_matches('.').split(", ") {
                let b = parse_name(part)?;
                edges.insert((a.min(b), a.max(b)));
            }
        } else if let Some((x, y)) = line.split_once(EDGE_DASH) {
            let (a, b) = (parse_name(x)?, parse_name(y)?);
            edges.insert((a.min(b), a.max(b)));
        }
    }
    Ok(edges.into_iter().collect())
}

/// Assemble a baseline prompt. Few-shot modes place exactly one solved
/// exemplar before the query, which always comes last and unanswered.
pub fn build_prompt(
    inst: &TaskInstance,
    format: GraphTextFormat,
    mode: PromptMode,
    exemplar: Option<&Exemplar>,
) -> Result<String, PromptError> {
    let query = serialize_graph(inst, format);
    if mode == PromptMode::ZeroShot {
        return Ok(query);
    }
    let ex = exemplar.ok_or(PromptError::MissingExemplar(mode))?;
    if ex.instance.task != inst.task {
        return Err(PromptError::ExemplarTask {
            exemplar: ex.instance.task,
            query: inst.task,
        });
    }
    let shown = serialize_graph(&ex.instance, format);
    let answer = match mode {
        PromptMode::FewShotCot => format!("Let's think step by step. {} {}", ex.chain, ex.instance.response),
        _ => ex.instance.response.clone(),
    };
    Ok(format!("{shown}\nAnswer: {answer}\n\n{query}"))
}

/// Context tokens of a prompt under the repository tokenizer.
pub fn count_context_tokens(text: &str) -> usize {
    count_tokens(text)
}

/// GraphLLM's context: the instruction plus `prefix_len` prefix slots.
pub fn graphllm_context_tokens(inst: &TaskInstance, prefix_len: usize) -> usize {
    count_tokens(&inst.instruction) + prefix_len
}

fn exemplar_instance(
    task: TaskKind,
    graph: Graph,
    descriptions: &[&str],
    attrs: NodeAttrs,
    anchors: Vec<usize>,
) -> TaskInstance {
    let answer = solve(task, &graph, &attrs, &anchors).expect("exemplar is well-formed");
    TaskInstance {
        task,
        instruction: instruction_text(task, &anchors),
        response: response_text(task, answer),
        graph,
        descriptions: descriptions.iter().map(|s| s.to_string()).collect(),
        attrs,
        anchors,
        answer,
        seed: 0,
    }
}

/// The shipped one-shot exemplar for each task.
pub fn default_exemplar(task: TaskKind) -> Exemplar {
    use Element::*;
    match task {
        TaskKind::SubstructureCounting => Exemplar {
            instance: exemplar_instance(
                task,
                Graph::new(4, [(0, 1), (0, 2), (1, 2), (2, 3)], None).unwrap(),
                &[
                    "The Carbon atom has an atomic number of 6, denoted as \"C\".",
                    "The Carbon atom has an atomic number of 6, denoted as \"C\".",
                    "The Oxygen atom has an atomic number of 8, denoted as \"O\".",
                    "The Hydrogen atom has an atomic number of 1, denoted as \"H\".",
                ],
                NodeAttrs::Atoms(vec![C, C, O, H]),
                vec![0],
            ),
            chain: "Atom 1 is carbon. Its neighbors are Atom 2 (carbon) and Atom 3 (oxygen). \
                    Atom 2 and Atom 3 are connected, so Atom 1, Atom 2 and Atom 3 form a carbon-carbon-oxygen triangle. \
                    No other pair of neighbors of Atom 1 exists."
                .to_string(),
        },
        TaskKind::MaximumTripletSum => Exemplar {
            instance: exemplar_instance(
                task,
                Graph::new(4, [(0, 1), (1, 2), (1, 3)], None).unwrap(),
                &[
                    "She is Grace Porter, and she is 30 years old.",
                    "Meet Oscar Hayes, who is 50 years of age.",
                    "This is Iris Quinn, 60 years old this year.",
                    "Felix Marsh is a person aged 20.",
                ],
                NodeAttrs::Ages(vec![30, 50, 60, 20]),
                vec![0],
            ),
            chain: "Person 1 is 30. The only friend of Person 1 is Person 2, who is 50. \
                    The friends of Person 2 other than Person 1 are Person 3 (60) and Person 4 (20). \
                    The best choice is Person 3, giving 30 + 50 + 60 = 140."
                .to_string(),
        },
        TaskKind::ShortestPath => Exemplar {
            instance: exemplar_instance(
                task,
                Graph::new(4, [(0, 1), (1, 3), (0, 2), (2, 3)], None).unwrap(),
                &[
                    "It is wormhole 1, and it requires 10 pounds of dark matter to activate.",
                    "It is wormhole 2, and it requires 40 pounds of dark matter to activate.",
                    "It is wormhole 3, and it requires 20 pounds of dark matter to activate.",
                    "It is wormhole 4, and it requires 30 pounds of dark matter to activate.",
                ],
                NodeAttrs::Costs(vec![10, 40, 20, 30]),
                vec![0, 3],
            ),
            chain: "Every wormhole on the route must be activated, including the first one. \
                    The route through Wormhole 2 costs 10 + 40 + 30 = 80. \
                    The route through Wormhole 3 costs 10 + 20 + 30 = 60, which is cheaper."
                .to_string(),
        },
        TaskKind::BipartiteMatching => {
            let part = vec![Side::Left, Side::Left, Side::Left, Side::Right, Side::Right];
            Exemplar {
                instance: exemplar_instance(
                    task,
                    Graph::new(5, [(0, 3), (1, 3), (2, 3), (2, 4)], Some(part)).unwrap(),
                    &[
                        "He is Adam Fisher, and he is 34 years old. He works as a nurse.",
                        "She is Nora Keller, and she is 28 years old. She works as a nurse.",
                        "He is Leo Sutton, and he is 45 years old. He works as a chef.",
                        "This job is for a nurse.",
                        "This job is for a chef.",
                    ],
                    NodeAttrs::Roles(vec![
                        "nurse".into(),
                        "nurse".into(),
                        "chef".into(),
                        "nurse".into(),
                        "chef".into(),
                    ]),
                    vec![],
                ),
                chain: "Job 1 can take only one of Applicant 1, Applicant 2 and Applicant 3. \
                        Applicant 3 can instead take Job 2, so Applicant 1 gets Job 1 and Applicant 3 gets Job 2. \
                        Applicant 2 is left without a job because Job 1 is already taken."
                    .to_string(),
            }
        }
    }
}
