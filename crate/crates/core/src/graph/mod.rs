//! Anatomical knowledge graph: organs, typed spatial relations between them,
//! and the constraint matrix those relations induce.
//!
//! Node ids are label indices of the probability maps the graph is applied to;
//! label 0 is background and never carries a node. Each directed edge
//! `(source, target)` states where the source organ is expected to lie
//! relative to the target organ.

mod affine;
pub mod distance;
mod raster;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::LabelMatrix;

pub use affine::{estimate_affine, match_landmarks, AffineFit, AffineTransform};
pub use raster::{
    membership, rasterize_expected_region, rasterize_relation, MIN_CONDITIONING_MASS,
};

/// Closed set of spatial relation predicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
    AdjacentTo,
    Inside,
    DisjointFrom,
}

impl Relation {
    pub const ALL: [Relation; 7] = [
        Relation::LeftOf,
        Relation::RightOf,
        Relation::Above,
        Relation::Below,
        Relation::AdjacentTo,
        Relation::Inside,
        Relation::DisjointFrom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Relation::LeftOf => "left_of",
            Relation::RightOf => "right_of",
            Relation::Above => "above",
            Relation::Below => "below",
            Relation::AdjacentTo => "adjacent_to",
            Relation::Inside => "inside",
            Relation::DisjointFrom => "disjoint_from",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnatomyNode {
    pub id: usize,
    pub name: String,
    /// Intrinsic properties, e.g. expected area fraction and atlas centroid.
    #[serde(default)]
    pub features: Vec<f64>,
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnatomyEdge {
    pub source: usize,
    pub target: usize,
    pub relation: Relation,
    #[serde(default = "default_weight")]
    pub weight: f64,
    /// Relation slack in atlas units.
    #[serde(default)]
    pub margin: f64,
}

/// Named point; `x` is the column axis and `y` the row axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub name: String,
    pub x: f64,
    pub y: f64,
}

/// Target relation-satisfaction degrees `A[o1][o2]`: 1 where an edge exists.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMatrix(LabelMatrix<f64>);

impl ConstraintMatrix {
    /// Synthesizes the matrix of a `k`-label edge list.
    pub fn from_edges(k: usize, edges: &[AnatomyEdge]) -> Self {
        let mut m = LabelMatrix::zeros(k);
        for e in edges {
            m.set(e.source, e.target, 1.0);
        }
        Self(m)
    }

    pub fn new(m: LabelMatrix<f64>) -> Result<Self> {
        for a in 0..m.size() {
            if m.get(a, a) != 0.0 {
                return Err(Error::Schema(format!("constraint diagonal [{a}][{a}] must be 0")));
            }
            for b in 0..m.size() {
                let v = m.get(a, b);
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Schema(format!(
                        "constraint entry [{a}][{b}] = {v} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.0.get(a, b)
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.0.size()
    }

    pub fn matrix(&self) -> &LabelMatrix<f64> {
        &self.0
    }

    /// Zero-padded copy for a map with `k` labels.
    pub fn resized(&self, k: usize) -> Self {
        Self(self.0.resized(k))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphDocument {
    #[serde(default)]
    num_labels: Option<usize>,
    nodes: Vec<AnatomyNode>,
    #[serde(default)]
    edges: Vec<AnatomyEdge>,
    #[serde(default)]
    atlas_landmarks: Vec<Landmark>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    constraint: Option<Vec<Vec<f64>>>,
}

/// Validated knowledge graph.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    nodes: Vec<AnatomyNode>,
    edges: Vec<AnatomyEdge>,
    constraint: ConstraintMatrix,
    atlas_landmarks: Vec<Landmark>,
}

impl KnowledgeGraph {
    /// Validates nodes and edges and synthesizes the constraint matrix.
    ///
    /// The matrix spans `max(node id) + 1` labels.
    pub fn new(
        nodes: Vec<AnatomyNode>,
        edges: Vec<AnatomyEdge>,
        atlas_landmarks: Vec<Landmark>,
    ) -> Result<Self> {
        Self::build(nodes, edges, atlas_landmarks, None, None)
    }

    /// A graph with no nodes or edges.
    pub fn empty() -> Self {
        Self {
            nodes: Vec::new(),
            edges: Vec::new(),
            constraint: ConstraintMatrix(LabelMatrix::zeros(1)),
            atlas_landmarks: Vec::new(),
        }
    }

    fn build(
        nodes: Vec<AnatomyNode>,
        edges: Vec<AnatomyEdge>,
        atlas_landmarks: Vec<Landmark>,
        num_labels: Option<usize>,
        explicit: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for n in &nodes {
            if n.id == 0 {
                return Err(Error::Schema(format!(
                    "node '{}' uses id 0, which is reserved for background",
                    n.name
                )));
            }
            if !ids.insert(n.id) {
                return Err(Error::Schema(format!("duplicate node id {}", n.id)));
            }
            if n.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("node {} has non-finite features", n.id)));
            }
        }
        let max_id = ids.iter().next_back().copied().unwrap_or(0);
        let k = match num_labels {
            Some(k) if k <= max_id => {
                return Err(Error::Schema(format!(
                    "num_labels {k} does not cover node id {max_id}"
                )))
            }
            Some(k) => k,
            None => max_id + 1,
        };

        let mut pairs = BTreeSet::new();
        for (i, e) in edges.iter().enumerate() {
            for end in [e.source, e.target] {
                if !ids.contains(&end) {
                    return Err(Error::Schema(format!(
                        "edge {i} ({} -> {}) references missing node {end}",
                        e.source, e.target
                    )));
                }
            }
            if e.source == e.target {
                return Err(Error::Schema(format!("edge {i} is a self-loop on {}", e.source)));
            }
            if !e.weight.is_finite() || e.weight < 0.0 {
                return Err(Error::Schema(format!(
                    "edge {i} weight {} must be finite and >= 0",
                    e.weight
                )));
            }
            if !e.margin.is_finite() || e.margin < 0.0 {
                return Err(Error::Schema(format!(
                    "edge {i} margin {} must be finite and >= 0",
                    e.margin
                )));
            }
            if !pairs.insert((e.source, e.target)) {
                return Err(Error::Schema(format!(
                    "more than one edge from {} to {}",
                    e.source, e.target
                )));
            }
        }

        let synthesized = ConstraintMatrix::from_edges(k, &edges);
        let constraint = match explicit {
            None => synthesized,
            Some(rows) => {
                let m = LabelMatrix::from_rows(&rows)
                    .map_err(|e| Error::Schema(format!("constraint matrix: {e}")))?;
                if m.size() != k {
                    return Err(Error::Schema(format!(
                        "constraint matrix is {0}x{0}, graph spans {k} labels",
                        m.size()
                    )));
                }
                let m = ConstraintMatrix::new(m)?;
                for a in 0..k {
                    for b in 0..k {
                        let has_edge = pairs.contains(&(a, b));
                        if (m.get(a, b) != 0.0) != has_edge {
                            return Err(Error::Schema(format!(
                                "constraint cell [{a}][{b}] = {} contradicts edge list ({})",
                                m.get(a, b),
                                if has_edge { "edge present" } else { "no edge" }
                            )));
                        }
                    }
                }
                m
            }
        };

        let mut names = BTreeSet::new();
        for l in &atlas_landmarks {
            if !l.x.is_finite() || !l.y.is_finite() {
                return Err(Error::Schema(format!("landmark '{}' is not finite", l.name)));
            }
            if !names.insert(l.name.as_str()) {
                return Err(Error::Schema(format!("duplicate landmark '{}'", l.name)));
            }
        }

        Ok(Self {
            nodes,
            edges,
            constraint,
            atlas_landmarks,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GraphDocument =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        Self::build(
            doc.nodes,
            doc.edges,
            doc.atlas_landmarks,
            doc.num_labels,
            doc.constraint,
        )
    }

    /// JSON document in the load schema (constraint matrix left implicit).
    pub fn to_json(&self) -> String {
        let doc = GraphDocument {
            num_labels: Some(self.num_labels()),
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
            atlas_landmarks: self.atlas_landmarks.clone(),
            constraint: None,
        };
        serde_json::to_string_pretty(&doc).expect("graph serializes")
    }

    pub fn nodes(&self) -> &[AnatomyNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[AnatomyEdge] {
        &self.edges
    }

    pub fn constraint(&self) -> &ConstraintMatrix {
        &self.constraint
    }

    pub fn atlas_landmarks(&self) -> &[Landmark] {
        &self.atlas_landmarks
    }

    /// Number of labels spanned by the constraint matrix.
    pub fn num_labels(&self) -> usize {
        self.constraint.size()
    }

    pub fn node(&self, id: usize) -> Option<&AnatomyNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn edge(&self, source: usize, target: usize) -> Option<&AnatomyEdge> {
        self.edges
            .iter()
            .find(|e| e.source == source && e.target == target)
    }

    /// Largest node id, 0 for an empty graph.
    pub fn max_label(&self) -> usize {
        self.nodes.iter().map(|n| n.id).max().unwrap_or(0)
    }

    /// Checks that every node id is a label of a `k`-label map.
    pub fn check_labels(&self, k: usize) -> Result<()> {
        if self.max_label() >= k {
            return Err(Error::Shape(format!(
                "graph references label {} but maps have {k} labels",
                self.max_label()
            )));
        }
        Ok(())
    }

    /// Same graph with node ids renamed through `perm` (background stays 0).
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        let nodes = self
            .nodes
            .iter()
            .map(|n| AnatomyNode {
                id: perm[n.id],
                ..n.clone()
            })
            .collect();
        let edges = self
            .edges
            .iter()
            .map(|e| AnatomyEdge {
                source: perm[e.source],
                target: perm[e.target],
                ..e.clone()
            })
            .collect();
        Self::build(
            nodes,
            edges,
            self.atlas_landmarks.clone(),
            Some(self.num_labels().max(perm.len())),
            None,
        )
    }

    /// Edges grouped by source organ, in edge-list order.
    pub fn edges_by_source(&self) -> BTreeMap<usize, Vec<&AnatomyEdge>> {
        let mut out: BTreeMap<usize, Vec<&AnatomyEdge>> = BTreeMap::new();
        for e in &self.edges {
            out.entry(e.source).or_default().push(e);
        }
        out
    }
}

/// Loads and validates a knowledge graph JSON document.
pub fn load_graph(path: impl AsRef<Path>) -> Result<KnowledgeGraph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    KnowledgeGraph::from_json(&text)
}
