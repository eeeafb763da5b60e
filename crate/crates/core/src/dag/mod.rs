//! Causal DAGs with latent nodes, d-separation and backdoor adjustment checks.
//!
//! Text format, one statement per line:
//!
//! ```text
//! # comment
//! latent H
//! node Z
//! edge H -> Q
//! ```
//!
//! Nodes named in an `edge` are declared observed unless a `latent` line says
//! otherwise.

mod paths;

use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use paths::{
    backdoor_paths, d_separated, is_valid_adjustment, minimal_adjustment_sets, AdjustmentReport, Estimand, PathReport,
};

#[derive(Debug, Error, PartialEq)]
pub enum DagError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("self-loop on `{0}`")]
    SelfLoop(String),
    #[error("cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("{0}")]
    InvalidQuery(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observability {
    Observed,
    Latent,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CausalDag {
    nodes: IndexMap<String, Observability>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl CausalDag {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a node, or updates its observability.
    pub fn add_node(&mut self, name: &str, obs: Observability) -> usize {
        if let Some(i) = self.nodes.get_index_of(name) {
            self.nodes[i] = obs;
            return i;
        }
        self.nodes.insert(name.to_string(), obs);
        self.parents.push(Vec::new());
        self.children.push(Vec::new());
        self.nodes.len() - 1
    }

    /// Adds `from -> to`, declaring unseen endpoints as observed. Duplicate
    /// edges are ignored.
    pub fn add_edge(&mut self, from: &str, to: &str) -> Result<(), DagError> {
        if from == to {
            return Err(DagError::SelfLoop(from.to_string()));
        }
        let a = self.index(from).unwrap_or_else(|_| self.add_node(from, Observability::Observed));
        let b = self.index(to).unwrap_or_else(|_| self.add_node(to, Observability::Observed));
        if !self.children[a].contains(&b) {
            self.children[a].push(b);
            self.parents[b].push(a);
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, DagError> {
        let mut dag = CausalDag::new();
        let mut latent = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: &str| DagError::Parse {
                line: i + 1,
                message: message.to_string(),
            };
            let (keyword, rest) = line.split_once(char::is_whitespace).ok_or_else(|| err("expected a statement"))?;
            let rest = rest.trim();
            match keyword {
                "edge" => {
                    let (from, to) = rest.split_once("->").ok_or_else(|| err("expected `edge FROM -> TO`"))?;
                    let (from, to) = (from.trim(), to.trim());
                    if from.is_empty() || to.is_empty() || from.contains(char::is_whitespace) || to.contains(char::is_whitespace) {
                        return Err(err("node names must be single words"));
                    }
                    dag.add_edge(from, to)?;
                }
                "latent" | "node" if !rest.is_empty() && !rest.contains(char::is_whitespace) => {
                    if keyword == "latent" {
                        latent.push(rest.to_string());
                    }
                    dag.add_node(rest, Observability::Observed);
                }
                "latent" | "node" => return Err(err("expected a single node name")),
                other => return Err(err(&format!("unknown statement `{other}`"))),
            }
        }
        for name in latent {
            dag.add_node(&name, Observability::Latent);
        }
        Ok(dag)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, obs) in &self.nodes {
            let kw = match obs {
                Observability::Latent => "latent",
                Observability::Observed => "node",
            };
            let _ = writeln!(out, "{kw} {name}");
        }
        for (a, b) in self.edges() {
            let _ = writeln!(out, "edge {a} -> {b}");
        }
        out
    }

    /// Checks acyclicity; a cycle is reported as its node sequence.
    pub fn validate(&self) -> Result<(), DagError> {
        // 0 = unvisited, 1 = on stack, 2 = done
        let n = self.len();
        let mut state = vec![0u8; n];
        for root in 0..n {
            if state[root] != 0 {
                continue;
            }
            let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
            state[root] = 1;
            while let Some(&mut (v, ref mut next)) = stack.last_mut() {
                if let Some(&c) = self.children[v].get(*next) {
                    *next += 1;
                    match state[c] {
                        0 => {
                            state[c] = 1;
                            stack.push((c, 0));
                        }
                        1 => {
                            let start = stack.iter().position(|&(u, _)| u == c).unwrap();
                            return Err(DagError::Cycle(stack[start..].iter().map(|&(u, _)| self.name(u).to_string()).collect()));
                        }
                        _ => {}
                    }
                } else {
                    state[v] = 2;
                    stack.pop();
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index(&self, name: &str) -> Result<usize, DagError> {
        self.nodes
            .get_index_of(name)
            .ok_or_else(|| DagError::UnknownNode(name.to_string()))
    }

    pub fn name(&self, i: usize) -> &str {
        self.nodes.get_index(i).unwrap().0
    }

    pub fn node_names(&self) -> Vec<&str> {
        self.nodes.keys().map(String::as_str).collect()
    }

    pub fn is_latent(&self, i: usize) -> bool {
        self.nodes[i] == Observability::Latent
    }

    pub fn edges(&self) -> Vec<(&str, &str)> {
        (0..self.len())
            .flat_map(|a| self.children[a].iter().map(move |&b| (self.name(a), self.name(b))))
            .collect()
    }

    pub fn parents(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.children[a].contains(&b)
    }

    /// `i` and everything reachable from it along directed edges.
    pub fn descendants(&self, i: usize) -> Vec<bool> {
        self.closure(&[i], |v| &self.children[v])
    }

    /// Every node with a directed path into a member of `set`, members included.
    pub fn ancestors_of(&self, set: &[usize]) -> Vec<bool> {
        self.closure(set, |v| &self.parents[v])
    }

    fn closure<'a>(&'a self, start: &[usize], step: impl Fn(usize) -> &'a Vec<usize>) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        let mut stack = start.to_vec();
        while let Some(v) = stack.pop() {
            if !seen[v] {
                seen[v] = true;
                stack.extend(step(v).iter().copied());
            }
        }
        seen
    }

    pub(crate) fn indices(&self, names: &[&str]) -> Result<Vec<usize>, DagError> {
        names.iter().map(|n| self.index(n)).collect()
    }
}
