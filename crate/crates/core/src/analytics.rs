//! Label statistics over a fully labeled corpus: per-label counts, adjacent
//! turn transitions and position-indexed flows from a root label, plus
//! Sankey and DOT exports of the flows.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::labeling::{LabelKind, LabelTaxonomy};

pub const DEFAULT_ROOTS: [&str; 4] = ["Joyful", "Surprised", "Sad", "Angry"];
pub const DEFAULT_FLOW_DEPTH: usize = 4;
pub const DEFAULT_LAYER_TOP_N: usize = 10;

/// One dialogue's turn labels, oldest first. `None` marks an unlabeled turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDialogue {
    pub dialogue_id: String,
    pub labels: Vec<Option<String>>,
}

impl LabeledDialogue {
    pub fn new<S: Into<String>>(dialogue_id: impl Into<String>, labels: impl IntoIterator<Item = S>) -> Self {
        Self { dialogue_id: dialogue_id.into(), labels: labels.into_iter().map(|l| Some(l.into())).collect() }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AnalyticsError {
    #[error("dialogue {dialogue_id} turn {turn_index} has no label")]
    Unlabeled { dialogue_id: String, turn_index: usize },
    #[error("dialogue {dialogue_id} uses label {label} which is not in the taxonomy")]
    UnknownLabel { dialogue_id: String, label: String },
    #[error("root label {0} is not in the taxonomy")]
    UnknownRoot(String),
}

/// Label ids per turn, failing on the first unlabeled or unknown turn.
fn label_ids(d: &LabeledDialogue, taxonomy: &LabelTaxonomy) -> Result<Vec<usize>, AnalyticsError> {
    d.labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let l = l.as_ref().ok_or_else(|| AnalyticsError::Unlabeled { dialogue_id: d.dialogue_id.clone(), turn_index: i })?;
            taxonomy.id(l).ok_or_else(|| AnalyticsError::UnknownLabel { dialogue_id: d.dialogue_id.clone(), label: l.clone() })
        })
        .collect()
}

fn encode_all(corpus: &[LabeledDialogue], taxonomy: &LabelTaxonomy) -> Result<Vec<Vec<usize>>, AnalyticsError> {
    corpus.par_iter().map(|d| label_ids(d, taxonomy)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub label: String,
    pub kind: LabelKind,
    pub count: u64,
    /// `None` for a zero count.
    pub log10_count: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    /// Taxonomy order.
    pub rows: Vec<DistributionRow>,
    pub total: u64,
}

impl LabelDistribution {
    pub fn count(&self, label: &str) -> u64 {
        self.rows.iter().find(|r| r.label == label).map_or(0, |r| r.count)
    }

    /// `label<TAB>kind<TAB>count<TAB>log10_count`, zero counts logged as `-`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("label\tkind\tcount\tlog10_count\n");
        for r in &self.rows {
            let kind = match r.kind {
                LabelKind::Emotion => "emotion",
                LabelKind::Intent => "intent",
            };
            let log = r.log10_count.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
            writeln!(out, "{}\t{kind}\t{}\t{log}", r.label, r.count).unwrap();
        }
        out
    }
}

pub fn label_distribution(corpus: &[LabeledDialogue], taxonomy: &LabelTaxonomy) -> Result<LabelDistribution, AnalyticsError> {
    let encoded = encode_all(corpus, taxonomy)?;
    let counts = encoded
        .par_iter()
        .fold(
            || vec![0u64; taxonomy.len()],
            |mut acc, ids| {
                for &i in ids {
                    acc[i] += 1;
                }
                acc
            },
        )
        .reduce(|| vec![0u64; taxonomy.len()], |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect());
    let rows = counts
        .iter()
        .enumerate()
        .map(|(i, &count)| DistributionRow {
            label: taxonomy.name(i).to_string(),
            kind: taxonomy.kind(i),
            count,
            log10_count: (count > 0).then(|| (count as f64).log10()),
        })
        .collect();
    Ok(LabelDistribution { rows, total: counts.iter().sum() })
}

/// Square count matrix over the taxonomy, row = earlier turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub labels: Vec<String>,
    counts: Vec<u64>,
}

impl TransitionMatrix {
    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, from: usize, to: usize) -> u64 {
        self.counts[from * self.size() + to]
    }

    pub fn count(&self, from: &str, to: &str) -> u64 {
        let pos = |l: &str| self.labels.iter().position(|x| x == l);
        match (pos(from), pos(to)) {
            (Some(a), Some(b)) => self.get(a, b),
            _ => 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, from: usize) -> u64 {
        let n = self.size();
        self.counts[from * n..(from + 1) * n].iter().sum()
    }

    /// Nonzero cells as (from, to, count), row-major.
    pub fn nonzero(&self) -> Vec<(&str, &str, u64)> {
        let n = self.size();
        (0..n * n)
            .filter(|&k| self.counts[k] > 0)
            .map(|k| (self.labels[k / n].as_str(), self.labels[k % n].as_str(), self.counts[k]))
            .collect()
    }

    /// Full matrix with a header row of target labels.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("from");
        for l in &self.labels {
            write!(out, "\t{l}").unwrap();
        }
        out.push('\n');
        for (i, l) in self.labels.iter().enumerate() {
            out.push_str(l);
            for j in 0..self.size() {
                write!(out, "\t{}", self.get(i, j)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

pub fn transition_matrix(corpus: &[LabeledDialogue], taxonomy: &LabelTaxonomy) -> Result<TransitionMatrix, AnalyticsError> {
    let n = taxonomy.len();
    let encoded = encode_all(corpus, taxonomy)?;
    let counts = encoded
        .par_iter()
        .fold(
            || vec![0u64; n * n],
            |mut acc, ids| {
                for w in ids.windows(2) {
                    acc[w[0] * n + w[1]] += 1;
                }
                acc
            },
        )
        .reduce(|| vec![0u64; n * n], |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect());
    Ok(TransitionMatrix { labels: taxonomy.names().into_iter().map(str::to_string).collect(), counts })
}

/// A label at a 1-based turn position.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowNode {
    pub position: usize,
    pub label: String,
}

impl FlowNode {
    pub fn key(&self) -> String {
        format!("p{}:{}", self.position, self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowGraph {
    pub root: String,
    pub max_depth: usize,
    /// Dialogues whose first turn carries the root label.
    pub dialogues: usize,
    pub nodes: BTreeMap<FlowNode, u64>,
    pub edges: BTreeMap<(FlowNode, FlowNode), u64>,
}

impl FlowGraph {
    pub fn empty(root: &str, max_depth: usize) -> Self {
        Self { root: root.to_string(), max_depth, dialogues: 0, nodes: BTreeMap::new(), edges: BTreeMap::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Sum of edge counts leaving `position`.
    pub fn outgoing(&self, position: usize) -> u64 {
        self.edges.iter().filter(|((a, _), _)| a.position == position).map(|(_, c)| c).sum()
    }

    /// Sum of node counts at `position`.
    pub fn layer_total(&self, position: usize) -> u64 {
        self.nodes.iter().filter(|(n, _)| n.position == position).map(|(_, c)| c).sum()
    }

    /// Keeps the `top_n` labels per layer by count (ties by name) and folds
    /// the rest into an `Other` node, so layer and edge totals are unchanged.
    pub fn truncate_layers(&self, top_n: usize) -> FlowGraph {
        let mut keep: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
        for p in 1..=self.max_depth {
            let mut layer: Vec<(&str, u64)> =
                self.nodes.iter().filter(|(n, _)| n.position == p).map(|(n, c)| (n.label.as_str(), *c)).collect();
            layer.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
            keep.insert(p, layer.into_iter().take(top_n).map(|(l, _)| l).collect());
        }
        let map = |n: &FlowNode| -> FlowNode {
            if keep.get(&n.position).is_some_and(|k| k.contains(&n.label.as_str())) {
                n.clone()
            } else {
                FlowNode { position: n.position, label: "Other".to_string() }
            }
        };
        let mut out = FlowGraph::empty(&self.root, self.max_depth);
        out.dialogues = self.dialogues;
        for (n, c) in &self.nodes {
            *out.nodes.entry(map(n)).or_default() += c;
        }
        for ((a, b), c) in &self.edges {
            *out.edges.entry((map(a), map(b))).or_default() += c;
        }
        out
    }
}

/// Flows over the first `max_depth` turns of dialogues that open with `root`.
pub fn flow_paths(
    corpus: &[LabeledDialogue],
    taxonomy: &LabelTaxonomy,
    root: &str,
    max_depth: usize,
) -> Result<FlowGraph, AnalyticsError> {
    let root_id = taxonomy.id(root).ok_or_else(|| AnalyticsError::UnknownRoot(root.to_string()))?;
    let encoded = encode_all(corpus, taxonomy)?;
    let mut g = FlowGraph::empty(root, max_depth);
    let node = |p: usize, id: usize| FlowNode { position: p + 1, label: taxonomy.name(id).to_string() };
    for ids in encoded.iter().filter(|ids| ids.first() == Some(&root_id)) {
        g.dialogues += 1;
        let path = &ids[..ids.len().min(max_depth)];
        for (p, &id) in path.iter().enumerate() {
            *g.nodes.entry(node(p, id)).or_default() += 1;
        }
        for (p, w) in path.windows(2).enumerate() {
            *g.edges.entry((node(p, w[0]), node(p + 1, w[1]))).or_default() += 1;
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowFormat {
    /// `source<TAB>target<TAB>value` rows under a header line.
    SankeyRecords,
    Dot,
}

impl std::str::FromStr for FlowFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sankey" | "sankey_records" | "tsv" => Ok(Self::SankeyRecords),
            "dot" => Ok(Self::Dot),
            other => Err(format!("unknown flow format {other}; expected sankey or dot")),
        }
    }
}

pub fn export_flow(graph: &FlowGraph, format: FlowFormat) -> String {
    match format {
        FlowFormat::SankeyRecords => {
            let mut out = String::from("source\ttarget\tvalue\n");
            for ((a, b), c) in &graph.edges {
                writeln!(out, "{}\t{}\t{c}", a.key(), b.key()).unwrap();
            }
            out
        }
        FlowFormat::Dot => {
            let mut out = String::from("digraph flow {\n");
            if !graph.is_empty() {
                out.push_str("  rankdir=LR;\n");
            }
            for (n, c) in &graph.nodes {
                writeln!(out, "  \"{}\" [label=\"{} ({c})\"];", n.key(), n.label).unwrap();
            }
            for ((a, b), c) in &graph.edges {
                writeln!(out, "  \"{}\" -> \"{}\" [label=\"{c}\", penwidth={:.3}];", a.key(), b.key(), 1.0 + (*c as f64).ln()).unwrap();
            }
            out.push_str("}\n");
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tax() -> LabelTaxonomy {
        LabelTaxonomy::default()
    }

    #[test]
    fn distribution_counts() {
        let c = [LabeledDialogue::new("d", ["Afraid", "Questioning"])];
        let d = label_distribution(&c, &tax()).unwrap();
        assert_eq!(d.count("Afraid"), 1);
        assert_eq!(d.count("Questioning"), 1);
        assert_eq!(d.total, 2);
        assert_eq!(d.rows.len(), 41);
        assert!(d.to_tsv().contains("Afraid\temotion\t1\t0.000000\n"));
    }

    #[test]
    fn unlabeled_turn_names_dialogue() {
        let c = [LabeledDialogue { dialogue_id: "x/0001".into(), labels: vec![Some("Sad".into()), None] }];
        assert_eq!(label_distribution(&c, &tax()), Err(AnalyticsError::Unlabeled { dialogue_id: "x/0001".into(), turn_index: 1 }));
        let c = [LabeledDialogue::new("y", ["Bored"])];
        assert!(matches!(transition_matrix(&c, &tax()), Err(AnalyticsError::UnknownLabel { .. })));
    }

    #[test]
    fn transitions() {
        let m = transition_matrix(&[LabeledDialogue::new("d", ["Angry", "Sad", "Angry"])], &tax()).unwrap();
        assert_eq!(m.count("Angry", "Sad"), 1);
        assert_eq!(m.count("Sad", "Angry"), 1);
        assert_eq!(m.total(), 2);
        assert_eq!(m.nonzero().len(), 2);
        let single = transition_matrix(&[LabeledDialogue::new("d", ["Angry"])], &tax()).unwrap();
        assert_eq!(single.total(), 0);
    }

    #[test]
    fn flows() {
        let t = tax();
        let one = [LabeledDialogue::new("d", ["Sad", "Questioning", "Sad", "Sympathizing"])];
        let g = flow_paths(&one, &t, "Sad", 4).unwrap();
        assert_eq!(g.nodes.len(), 4);
        assert_eq!(g.edges.len(), 3);
        assert!(g.edges.values().all(|&c| c == 1));
        assert!(flow_paths(&one, &t, "Joyful", 4).unwrap().is_empty());
        assert_eq!(flow_paths(&one, &t, "Nope", 4), Err(AnalyticsError::UnknownRoot("Nope".into())));

        let six = [LabeledDialogue::new("d", ["Sad", "Angry", "Sad", "Angry", "Sad", "Angry"])];
        let g = flow_paths(&six, &t, "Sad", 4).unwrap();
        assert_eq!(g.edges.values().sum::<u64>(), 3);
        assert!(g.nodes.keys().all(|n| n.position <= 4));
    }

    #[test]
    fn exports() {
        let t = tax();
        let empty = FlowGraph::empty("Sad", 4);
        assert_eq!(export_flow(&empty, FlowFormat::SankeyRecords), "source\ttarget\tvalue\n");
        assert_eq!(export_flow(&empty, FlowFormat::Dot), "digraph flow {\n}\n");
        let g = flow_paths(&[LabeledDialogue::new("d", ["Sad", "Questioning"])], &t, "Sad", 4).unwrap();
        assert_eq!(export_flow(&g, FlowFormat::SankeyRecords), "source\ttarget\tvalue\np1:Sad\tp2:Questioning\t1\n");
        assert!(export_flow(&g, FlowFormat::Dot).contains("\"p1:Sad\" -> \"p2:Questioning\""));
    }

    #[test]
    fn truncation_preserves_totals() {
        let t = tax();
        let seconds = ["Angry", "Sad", "Joyful", "Proud", "Questioning"];
        let c: Vec<LabeledDialogue> = (0..20).map(|i| LabeledDialogue::new(format!("d{i}"), ["Sad", seconds[i % 5], "Sad"])).collect();
        let g = flow_paths(&c, &t, "Sad", 4).unwrap();
        let cut = g.truncate_layers(2);
        assert_eq!(cut.nodes.keys().filter(|n| n.position == 2).count(), 3);
        for p in 1..=3 {
            assert_eq!(cut.layer_total(p), g.layer_total(p));
            assert_eq!(cut.outgoing(p), g.outgoing(p));
        }
    }

    fn corpus() -> impl Strategy<Value = Vec<LabeledDialogue>> {
        let names: Vec<String> = tax().names().into_iter().map(str::to_string).collect();
        prop::collection::vec(prop::collection::vec(prop::sample::select(names), 1..8), 0..30).prop_map(|ds| {
            ds.into_iter().enumerate().map(|(i, l)| LabeledDialogue::new(format!("d{i}"), l)).collect()
        })
    }

    proptest! {
        #[test]
        fn conservation(c in corpus()) {
            let t = tax();
            let turns: usize = c.iter().map(|d| d.labels.len()).sum();
            prop_assert_eq!(label_distribution(&c, &t).unwrap().total as usize, turns);
            let m = transition_matrix(&c, &t).unwrap();
            prop_assert_eq!(m.total() as usize, c.iter().map(|d| d.labels.len() - 1).sum::<usize>());
            // Row sums equal label counts over non-final turns.
            for i in 0..t.len() {
                let nonfinal = c.iter().flat_map(|d| &d.labels[..d.labels.len() - 1]).filter(|l| l.as_deref() == Some(t.name(i))).count();
                prop_assert_eq!(m.row_sum(i) as usize, nonfinal);
            }
            for root in DEFAULT_ROOTS {
                let g = flow_paths(&c, &t, root, 4).unwrap();
                prop_assert_eq!(g.layer_total(1) as usize, g.dialogues);
                for p in 1..4 {
                    let longer = c.iter().filter(|d| d.labels[0].as_deref() == Some(root) && d.labels.len() > p).count();
                    prop_assert_eq!(g.outgoing(p) as usize, longer);
                    prop_assert!(g.outgoing(p) <= g.layer_total(p));
                }
            }
        }
    }
}
