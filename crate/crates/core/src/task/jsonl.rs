use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NodeAttrs, TaskError, TaskInstance, TaskKind};
use crate::graph::{Graph, Side};

/// On-disk record. Field order is the serialized key order.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    task: TaskKind,
    nodes: Vec<String>,
    edges: Vec<[usize; 2]>,
    attrs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    partition: Option<Vec<u8>>,
    anchors: Vec<usize>,
    instruction: String,
    response: String,
    answer: i64,
    seed: u64,
}

impl From<&TaskInstance> for Record {
    fn from(t: &TaskInstance) -> Self {
        Record {
            task: t.task,
            nodes: t.descriptions.clone(),
            edges: t.graph.edges().iter().map(|&(a, b)| [a, b]).collect(),
            attrs: t.attrs.to_strings(),
            partition: t
                .graph
                .partition()
                .map(|p| p.iter().map(|s| u8::from(*s == Side::Right)).collect()),
            anchors: t.anchors.clone(),
            instruction: t.instruction.clone(),
            response: t.response.clone(),
            answer: t.answer,
            seed: t.seed,
        }
    }
}

impl Record {
    fn into_instance(self) -> Result<TaskInstance, TaskError> {
        let partition = match self.partition {
            None => None,
            Some(p) => Some(
                p.into_iter()
                    .map(|s| match s {
                        0 => Ok(Side::Left),
                        1 => Ok(Side::Right),
                        other => Err(TaskError::BadAttr(format!("partition label {other}"))),
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        let graph = Graph::new(
            self.nodes.len(),
            self.edges.iter().map(|e| (e[0], e[1])),
            partition,
        )?;
        let inst = TaskInstance {
            task: self.task,
            graph,
            descriptions: self.nodes,
            attrs: NodeAttrs::parse(self.task, &self.attrs)?,
            anchors: self.anchors,
            instruction: self.instruction,
            response: self.response,
            answer: self.answer,
            seed: self.seed,
        };
        inst.validate()?;
        Ok(inst)
    }
}

pub fn to_jsonl_string(instances: &[TaskInstance]) -> String {
    let mut out = String::new();
    for t in instances {
        out.push_str(&serde_json::to_string(&Record::from(t)).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Parse JSONL text; every answer is re-checked against its solver.
pub fn from_jsonl_str(text: &str) -> Result<Vec<TaskInstance>, TaskError> {
    parse_lines(text.lines().map(|l| Ok(l.to_string())))
}

fn parse_lines(lines: impl Iterator<Item = std::io::Result<String>>) -> Result<Vec<TaskInstance>, TaskError> {
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| TaskError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let wrap = |msg: String| TaskError::Jsonl { line: i + 1, msg };
        let rec: Record = serde_json::from_str(&line).map_err(|e| wrap(e.to_string()))?;
        out.push(rec.into_instance().map_err(|e| wrap(e.to_string()))?);
    }
    Ok(out)
}

pub fn emit_jsonl(instances: &[TaskInstance], path: &Path) -> Result<(), TaskError> {
    let io = |e: std::io::Error| TaskError::Io(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(io)?);
    w.write_all(to_jsonl_string(instances).as_bytes()).map_err(io)?;
    w.flush().map_err(io)
}

pub fn load_jsonl(path: &Path) -> Result<Vec<TaskInstance>, TaskError> {
    let f = std::fs::File::open(path).map_err(|e| TaskError::Io(format!("{}: {e}", path.display())))?;
    parse_lines(BufReader::new(f).lines())
}
