//! In-memory model and structural validator for GSN goal structures.
//!
//! A goal structure is a directed acyclic graph of goals, strategies,
//! solutions, contexts and assumptions, connected by `SupportedBy` and
//! `InContextOf` relationships. The validator reports every broken
//! structural rule instead of failing fast, so a whole file's worth of
//! problems surfaces in one pass.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

/// The five element kinds of a goal structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GsnKind {
    Goal,
    Strategy,
    Solution,
    Context,
    Assumption,
}

impl GsnKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GsnKind::Goal => "goal",
            GsnKind::Strategy => "strategy",
            GsnKind::Solution => "solution",
            GsnKind::Context => "context",
            GsnKind::Assumption => "assumption",
        }
    }

    pub fn from_str(s: &str) -> Option<GsnKind> {
        match s {
            "goal" => Some(GsnKind::Goal),
            "strategy" => Some(GsnKind::Strategy),
            "solution" => Some(GsnKind::Solution),
            "context" => Some(GsnKind::Context),
            "assumption" => Some(GsnKind::Assumption),
            _ => None,
        }
    }

    /// Only goals and strategies may carry the undeveloped decorator.
    pub fn may_be_undeveloped(self) -> bool {
        matches!(self, GsnKind::Goal | GsnKind::Strategy)
    }
}

impl fmt::Display for GsnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The two relationship kinds between elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    SupportedBy,
    InContextOf,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::SupportedBy => "supported_by",
            Relation::InContextOf => "in_context_of",
        }
    }
}

/// A single element of a goal structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GsnNode {
    pub id: String,
    pub kind: GsnKind,
    pub text: String,
    pub undeveloped: bool,
    /// Path or identifier of an evidence artifact; only meaningful for solutions.
    pub evidence_ref: Option<String>,
}

impl GsnNode {
    pub fn new(id: &str, kind: GsnKind, text: &str) -> GsnNode {
        GsnNode {
            id: id.to_string(),
            kind,
            text: text.to_string(),
            undeveloped: false,
            evidence_ref: None,
        }
    }

    pub fn undeveloped(mut self) -> GsnNode {
        self.undeveloped = true;
        self
    }

    pub fn with_evidence(mut self, evidence: &str) -> GsnNode {
        self.evidence_ref = Some(evidence.to_string());
        self
    }
}

/// A directed relationship; `source` is the supported/contextualised element.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GsnEdge {
    pub source: String,
    pub relation: Relation,
    pub target: String,
}

impl GsnEdge {
    pub fn supported_by(source: &str, target: &str) -> GsnEdge {
        GsnEdge {
            source: source.to_string(),
            relation: Relation::SupportedBy,
            target: target.to_string(),
        }
    }

    pub fn in_context_of(source: &str, target: &str) -> GsnEdge {
        GsnEdge {
            source: source.to_string(),
            relation: Relation::InContextOf,
            target: target.to_string(),
        }
    }
}

/// A candidate goal structure; may violate any number of structural rules
/// until `validate` says otherwise.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GoalStructure {
    pub nodes: Vec<GsnNode>,
    pub edges: Vec<GsnEdge>,
    pub root: String,
}

/// Stable identifiers for every structural rule the validator checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ViolationCode {
    EmptyId,
    DuplicateId,
    BadUndeveloped,
    EvidenceNotSolution,
    UnknownId,
    DuplicateEdge,
    EdgeType,
    RootUnknown,
    RootNotGoal,
    GoalNotSupported,
    SolutionNotLeaf,
    Cycle,
    Unreachable,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::EmptyId => "EMPTY_ID",
            ViolationCode::DuplicateId => "DUPLICATE_ID",
            ViolationCode::BadUndeveloped => "BAD_UNDEVELOPED",
            ViolationCode::EvidenceNotSolution => "EVIDENCE_NOT_SOLUTION",
            ViolationCode::UnknownId => "UNKNOWN_ID",
            ViolationCode::DuplicateEdge => "DUPLICATE_EDGE",
            ViolationCode::EdgeType => "EDGE_TYPE",
            ViolationCode::RootUnknown => "ROOT_UNKNOWN",
            ViolationCode::RootNotGoal => "ROOT_NOT_GOAL",
            ViolationCode::GoalNotSupported => "GOAL_NOT_SUPPORTED",
            ViolationCode::SolutionNotLeaf => "SOLUTION_NOT_LEAF",
            ViolationCode::Cycle => "CYCLE",
            ViolationCode::Unreachable => "UNREACHABLE",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One broken rule, anchored to the node or edge that broke it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub code: ViolationCode,
    /// Node id, or `source -> target` for edge-level findings.
    pub subject: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]: {}", self.code, self.subject, self.message)
    }
}

/// Result of validating a candidate structure. `ok` iff no violations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GsnError {
    #[error("unknown node id {0:?}")]
    UnknownId(String),
    #[error("node {0:?} is a {1}, expected a goal")]
    NotAGoal(String, GsnKind),
    #[error("structure is invalid: {0} violation(s)")]
    InvalidStructure(usize),
}

/// Is `(source kind, relation, target kind)` an allowed combination?
///
/// SupportedBy: goal -> {goal, strategy, solution}, strategy -> goal.
/// InContextOf: {goal, strategy} -> {context, assumption}.
pub fn edge_allowed(source: GsnKind, relation: Relation, target: GsnKind) -> bool {
    match relation {
        Relation::SupportedBy => matches!(
            (source, target),
            (GsnKind::Goal, GsnKind::Goal)
                | (GsnKind::Goal, GsnKind::Strategy)
                | (GsnKind::Goal, GsnKind::Solution)
                | (GsnKind::Strategy, GsnKind::Goal)
        ),
        Relation::InContextOf => {
            matches!(source, GsnKind::Goal | GsnKind::Strategy)
                && matches!(target, GsnKind::Context | GsnKind::Assumption)
        }
    }
}

impl GoalStructure {
    pub fn node(&self, id: &str) -> Option<&GsnNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    fn kind_of(&self, id: &str) -> Option<GsnKind> {
        self.node(id).map(|n| n.kind)
    }

    /// Outgoing SupportedBy targets of `id`, in declaration order.
    fn supported_by(&self, id: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|e| e.relation == Relation::SupportedBy && e.source == id)
            .map(|e| e.target.as_str())
            .collect()
    }

    /// Check every structural rule and report all findings.
    ///
    /// Pure and deterministic: violations come out in a fixed order
    /// (node rules in node order, edge rules in edge order, then graph
    /// rules) so identical inputs yield identical reports.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();

        let mut seen: HashSet<&str> = HashSet::new();
        for node in &self.nodes {
            if node.id.is_empty() {
                violations.push(Violation {
                    code: ViolationCode::EmptyId,
                    subject: "<empty>".to_string(),
                    message: "node id must be non-empty".to_string(),
                });
            }
            if !seen.insert(node.id.as_str()) {
                violations.push(Violation {
                    code: ViolationCode::DuplicateId,
                    subject: node.id.clone(),
                    message: format!("id {:?} declared more than once", node.id),
                });
            }
            if node.undeveloped && !node.kind.may_be_undeveloped() {
                violations.push(Violation {
                    code: ViolationCode::BadUndeveloped,
                    subject: node.id.clone(),
                    message: format!("{} elements cannot be undeveloped", node.kind),
                });
            }
            if node.evidence_ref.is_some() && node.kind != GsnKind::Solution {
                violations.push(Violation {
                    code: ViolationCode::EvidenceNotSolution,
                    subject: node.id.clone(),
                    message: format!("evidence reference on a {}", node.kind),
                });
            }
        }

        let mut edge_seen: HashSet<&GsnEdge> = HashSet::new();
        for edge in &self.edges {
            let subject = format!("{} -> {}", edge.source, edge.target);
            let src = self.kind_of(&edge.source);
            let tgt = self.kind_of(&edge.target);
            if src.is_none() {
                violations.push(Violation {
                    code: ViolationCode::UnknownId,
                    subject: subject.clone(),
                    message: format!("edge source {:?} is not declared", edge.source),
                });
            }
            if tgt.is_none() {
                violations.push(Violation {
                    code: ViolationCode::UnknownId,
                    subject: subject.clone(),
                    message: format!("edge target {:?} is not declared", edge.target),
                });
            }
            if !edge_seen.insert(edge) {
                violations.push(Violation {
                    code: ViolationCode::DuplicateEdge,
                    subject: subject.clone(),
                    message: "duplicate edge".to_string(),
                });
            }
            if let (Some(s), Some(t)) = (src, tgt) {
                if !edge_allowed(s, edge.relation, t) {
                    violations.push(Violation {
                        code: ViolationCode::EdgeType,
                        subject,
                        message: format!(
                            "{} relationship not allowed from {} to {}",
                            edge.relation.as_str(),
                            s,
                            t
                        ),
                    });
                }
            }
        }

        match self.kind_of(&self.root) {
            None => violations.push(Violation {
                code: ViolationCode::RootUnknown,
                subject: self.root.clone(),
                message: "root id is not declared".to_string(),
            }),
            Some(GsnKind::Goal) => {}
            Some(kind) => violations.push(Violation {
                code: ViolationCode::RootNotGoal,
                subject: self.root.clone(),
                message: format!("root must be a goal, found {kind}"),
            }),
        }

        for node in &self.nodes {
            let children = self.supported_by(&node.id);
            match node.kind {
                GsnKind::Goal => {
                    if !node.undeveloped && children.is_empty() {
                        violations.push(Violation {
                            code: ViolationCode::GoalNotSupported,
                            subject: node.id.clone(),
                            message: "goal is neither supported nor marked undeveloped"
                                .to_string(),
                        });
                    }
                }
                GsnKind::Solution => {
                    if !children.is_empty() {
                        violations.push(Violation {
                            code: ViolationCode::SolutionNotLeaf,
                            subject: node.id.clone(),
                            message: "solutions are leaves and cannot support others"
                                .to_string(),
                        });
                    }
                }
                _ => {}
            }
        }

        for id in self.supported_by_cycle_nodes() {
            violations.push(Violation {
                code: ViolationCode::Cycle,
                subject: id.clone(),
                message: "node lies on a SupportedBy cycle".to_string(),
            });
        }

        if self.kind_of(&self.root).is_some() {
            let reachable = self.reachable_from_root();
            for node in &self.nodes {
                if !reachable.contains(node.id.as_str()) {
                    violations.push(Violation {
                        code: ViolationCode::Unreachable,
                        subject: node.id.clone(),
                        message: "node is not reachable from the root".to_string(),
                    });
                }
            }
        }

        ValidationReport { violations }
    }

    /// Nodes on SupportedBy cycles, in sorted order.
    fn supported_by_cycle_nodes(&self) -> Vec<String> {
        // Kahn peeling: whatever survives repeated leaf removal is cyclic.
        let ids: BTreeSet<&str> = self.nodes.iter().map(|n| n.id.as_str()).collect();
        let mut out_deg: HashMap<&str, usize> = ids.iter().map(|&id| (id, 0)).collect();
        let mut preds: HashMap<&str, Vec<&str>> = HashMap::new();
        for e in &self.edges {
            if e.relation != Relation::SupportedBy {
                continue;
            }
            let (s, t) = (e.source.as_str(), e.target.as_str());
            if ids.contains(s) && ids.contains(t) {
                *out_deg.get_mut(s).unwrap() += 1;
                preds.entry(t).or_default().push(s);
            }
        }
        let mut queue: Vec<&str> = out_deg
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&id, _)| id)
            .collect();
        let mut removed: HashSet<&str> = queue.iter().copied().collect();
        while let Some(id) = queue.pop() {
            for &p in preds.get(id).into_iter().flatten() {
                let d = out_deg.get_mut(p).unwrap();
                *d -= 1;
                if *d == 0 && removed.insert(p) {
                    queue.push(p);
                }
            }
        }
        let mut cyclic: Vec<String> = ids
            .iter()
            .filter(|id| !removed.contains(**id))
            .map(|id| id.to_string())
            .collect();
        cyclic.sort();
        cyclic
    }

    /// All nodes reachable from the root over both relationship kinds.
    fn reachable_from_root(&self) -> HashSet<&str> {
        let mut reachable: HashSet<&str> = HashSet::new();
        let mut stack = vec![self.root.as_str()];
        let mut adj: HashMap<&str, Vec<&str>> = HashMap::new();
        for e in &self.edges {
            adj.entry(e.source.as_str()).or_default().push(e.target.as_str());
        }
        while let Some(id) = stack.pop() {
            if self.kind_of(id).is_some() && reachable.insert(id) {
                for &t in adj.get(id).into_iter().flatten() {
                    stack.push(t);
                }
            }
        }
        reachable
    }

    /// Ids of undeveloped elements, sorted. Rejects invalid structures.
    pub fn undeveloped_report(&self) -> Result<Vec<String>, GsnError> {
        let report = self.validate();
        if !report.ok() {
            return Err(GsnError::InvalidStructure(report.violations.len()));
        }
        let mut ids: Vec<String> = self
            .nodes
            .iter()
            .filter(|n| n.undeveloped)
            .map(|n| n.id.clone())
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// All SupportedBy paths from `goal_id` down to solution nodes.
    ///
    /// Paths come out in lexicographic order of their id sequences; an
    /// undeveloped subtree contributes no paths.
    pub fn trace_evidence(&self, goal_id: &str) -> Result<Vec<Vec<String>>, GsnError> {
        let node = self
            .node(goal_id)
            .ok_or_else(|| GsnError::UnknownId(goal_id.to_string()))?;
        if node.kind != GsnKind::Goal {
            return Err(GsnError::NotAGoal(goal_id.to_string(), node.kind));
        }
        let mut paths = Vec::new();
        let mut current = vec![goal_id.to_string()];
        let mut on_path: HashSet<String> = current.iter().cloned().collect();
        self.collect_paths(goal_id, &mut current, &mut on_path, &mut paths);
        paths.sort();
        Ok(paths)
    }

    fn collect_paths(
        &self,
        id: &str,
        current: &mut Vec<String>,
        on_path: &mut HashSet<String>,
        paths: &mut Vec<Vec<String>>,
    ) {
        if self.kind_of(id) == Some(GsnKind::Solution) {
            paths.push(current.clone());
            return;
        }
        let mut children = self.supported_by(id);
        children.sort_unstable();
        for child in children {
            // Guard against cycles in not-yet-validated structures.
            if on_path.contains(child) {
                continue;
            }
            current.push(child.to_string());
            on_path.insert(child.to_string());
            self.collect_paths(child, current, on_path, paths);
            on_path.remove(child);
            current.pop();
        }
    }

    /// Solutions with their evidence references, sorted by id.
    pub fn solutions(&self) -> Vec<&GsnNode> {
        let mut sols: Vec<&GsnNode> = self
            .nodes
            .iter()
            .filter(|n| n.kind == GsnKind::Solution)
            .collect();
        sols.sort_by(|a, b| a.id.cmp(&b.id));
        sols
    }

    /// Nodes keyed by id, for deterministic iteration.
    pub fn nodes_by_id(&self) -> BTreeMap<&str, &GsnNode> {
        self.nodes.iter().map(|n| (n.id.as_str(), n)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_goal() -> GoalStructure {
        GoalStructure {
            nodes: vec![GsnNode::new("G1", GsnKind::Goal, "top").undeveloped()],
            edges: vec![],
            root: "G1".to_string(),
        }
    }

    #[test]
    fn undeveloped_leaf_goal_is_legal() {
        assert!(single_goal().validate().ok());
    }

    #[test]
    fn developed_goal_without_support_is_flagged() {
        let mut gs = single_goal();
        gs.nodes[0].undeveloped = false;
        let report = gs.validate();
        assert!(report.has(ViolationCode::GoalNotSupported));
    }

    #[test]
    fn evidence_on_context_is_flagged() {
        let mut gs = single_goal();
        gs.nodes.push(GsnNode::new("C1", GsnKind::Context, "ctx").with_evidence("x"));
        gs.edges.push(GsnEdge::in_context_of("G1", "C1"));
        let report = gs.validate();
        assert!(report.has(ViolationCode::EvidenceNotSolution));
    }

    #[test]
    fn undeveloped_context_is_flagged() {
        let mut gs = single_goal();
        let mut ctx = GsnNode::new("C1", GsnKind::Context, "ctx");
        ctx.undeveloped = true;
        gs.nodes.push(ctx);
        gs.edges.push(GsnEdge::in_context_of("G1", "C1"));
        assert!(gs.validate().has(ViolationCode::BadUndeveloped));
    }

    #[test]
    fn unknown_edge_endpoint_is_flagged() {
        let mut gs = single_goal();
        gs.edges.push(GsnEdge::supported_by("G1", "missing"));
        let report = gs.validate();
        assert!(report.has(ViolationCode::UnknownId));
    }

    #[test]
    fn duplicate_edges_are_flagged() {
        let mut gs = single_goal();
        gs.nodes.push(GsnNode::new("Sn1", GsnKind::Solution, "s"));
        gs.nodes[0].undeveloped = false;
        gs.edges.push(GsnEdge::supported_by("G1", "Sn1"));
        gs.edges.push(GsnEdge::supported_by("G1", "Sn1"));
        assert!(gs.validate().has(ViolationCode::DuplicateEdge));
    }

    #[test]
    fn cycle_is_flagged_everywhere_on_the_loop() {
        let gs = GoalStructure {
            nodes: vec![
                GsnNode::new("G1", GsnKind::Goal, ""),
                GsnNode::new("G2", GsnKind::Goal, ""),
            ],
            edges: vec![
                GsnEdge::supported_by("G1", "G2"),
                GsnEdge::supported_by("G2", "G1"),
            ],
            root: "G1".to_string(),
        };
        let report = gs.validate();
        let cyclic: Vec<_> = report
            .violations
            .iter()
            .filter(|v| v.code == ViolationCode::Cycle)
            .map(|v| v.subject.clone())
            .collect();
        assert_eq!(cyclic, vec!["G1".to_string(), "G2".to_string()]);
    }

    #[test]
    fn unreachable_node_is_flagged() {
        let mut gs = single_goal();
        gs.nodes.push(GsnNode::new("G9", GsnKind::Goal, "floating").undeveloped());
        assert!(gs.validate().has(ViolationCode::Unreachable));
    }

    #[test]
    fn root_must_be_goal() {
        let gs = GoalStructure {
            nodes: vec![GsnNode::new("Sn1", GsnKind::Solution, "")],
            edges: vec![],
            root: "Sn1".to_string(),
        };
        assert!(gs.validate().has(ViolationCode::RootNotGoal));
    }

    #[test]
    fn edge_typing_table_is_exhaustive() {
        let kinds = [
            GsnKind::Goal,
            GsnKind::Strategy,
            GsnKind::Solution,
            GsnKind::Context,
            GsnKind::Assumption,
        ];
        let allowed_supported: &[(GsnKind, GsnKind)] = &[
            (GsnKind::Goal, GsnKind::Goal),
            (GsnKind::Goal, GsnKind::Strategy),
            (GsnKind::Goal, GsnKind::Solution),
            (GsnKind::Strategy, GsnKind::Goal),
        ];
        for &src in &kinds {
            for &tgt in &kinds {
                for rel in [Relation::SupportedBy, Relation::InContextOf] {
                    let expect = match rel {
                        Relation::SupportedBy => allowed_supported.contains(&(src, tgt)),
                        Relation::InContextOf => {
                            matches!(src, GsnKind::Goal | GsnKind::Strategy)
                                && matches!(tgt, GsnKind::Context | GsnKind::Assumption)
                        }
                    };
                    assert_eq!(edge_allowed(src, rel, tgt), expect, "{src} {rel:?} {tgt}");

                    // Cross-check against the validator on a minimal structure.
                    let mut nodes = vec![GsnNode::new("R", GsnKind::Goal, "").undeveloped()];
                    let mut a = GsnNode::new("A", src, "");
                    if src.may_be_undeveloped() {
                        a.undeveloped = true;
                    }
                    let mut b = GsnNode::new("B", tgt, "");
                    if tgt.may_be_undeveloped() {
                        b.undeveloped = true;
                    }
                    nodes.push(a);
                    nodes.push(b);
                    let gs = GoalStructure {
                        nodes,
                        edges: vec![GsnEdge {
                            source: "A".to_string(),
                            relation: rel,
                            target: "B".to_string(),
                        }],
                        root: "R".to_string(),
                    };
                    assert_eq!(
                        !gs.validate().has(ViolationCode::EdgeType),
                        expect,
                        "validator disagrees for {src} {rel:?} {tgt}"
                    );
                }
            }
        }
    }

    #[test]
    fn undeveloped_report_rejects_invalid_input() {
        let mut gs = single_goal();
        gs.edges.push(GsnEdge::supported_by("G1", "missing"));
        assert!(matches!(
            gs.undeveloped_report(),
            Err(GsnError::InvalidStructure(_))
        ));
    }

    #[test]
    fn undeveloped_report_filters_and_sorts() {
        let gs = GoalStructure {
            nodes: vec![
                GsnNode::new("G1", GsnKind::Goal, ""),
                GsnNode::new("S1", GsnKind::Strategy, "").undeveloped(),
                GsnNode::new("G0", GsnKind::Goal, "").undeveloped(),
            ],
            edges: vec![
                GsnEdge::supported_by("G1", "S1"),
                GsnEdge::supported_by("G1", "G0"),
            ],
            root: "G1".to_string(),
        };
        assert_eq!(gs.undeveloped_report().unwrap(), vec!["G0", "S1"]);
    }

    #[test]
    fn trace_evidence_rejects_wrong_kind() {
        let mut gs = single_goal();
        gs.nodes.push(GsnNode::new("C1", GsnKind::Context, ""));
        gs.edges.push(GsnEdge::in_context_of("G1", "C1"));
        assert!(matches!(gs.trace_evidence("C1"), Err(GsnError::NotAGoal(..))));
        assert!(matches!(gs.trace_evidence("nope"), Err(GsnError::UnknownId(_))));
    }
}
