//! Textual DSL for safety-case files, plus JSON and DOT exporters.
//!
//! The `.case` format is line oriented: one declaration or edge per line,
//! `#` comments, UTF-8 with LF or CRLF line endings.
//!
//! ```text
//! goal G1 "ADS feature is safe" { root }
//! goal G2 "..." { undeveloped }
//! solution Sn1 "Formal proof" { evidence = "proof.cert" }
//! context C1 "Urban roads"
//! G1 <- G2        # G1 is supported by G2
//! G1 <~ C1        # G1 is in the context of C1
//! ```
//!
//! Parsing either yields a [`GoalStructure`] that passes validation, or the
//! full list of diagnostics with source spans; it never stops at the first
//! error.

use std::collections::HashMap;
use std::fmt;

use crate::gsn::{GoalStructure, GsnEdge, GsnKind, GsnNode, Relation, Violation};

/// Position of a token in the source text. 1-based line and column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceSpan {
    pub line: usize,
    pub column: usize,
    pub length: usize,
}

impl SourceSpan {
    fn new(line: usize, column: usize, length: usize) -> SourceSpan {
        SourceSpan { line, column, length }
    }
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

/// A single diagnostic. `expected` describes the acceptable token set for
/// syntax errors; semantic errors carry a stable code prefix in `message`
/// (e.g. `UNKNOWN_ID: ...`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub span: SourceSpan,
    pub message: String,
    pub expected: Option<String>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.span, self.message)?;
        if let Some(e) = &self.expected {
            write!(f, " (expected {e})")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Kind(GsnKind),
    Ident(String),
    Str(String),
    LBrace,
    RBrace,
    Eq,
    SupportArrow,
    ContextArrow,
    Word(String),
}

#[derive(Debug, Clone)]
struct SpannedTok {
    tok: Tok,
    span: SourceSpan,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic()
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

/// Tokenize one line. Column positions are 1-based character offsets.
fn lex_line(line_no: usize, line: &str, errors: &mut Vec<ParseError>) -> Vec<SpannedTok> {
    let mut toks = Vec::new();
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        match c {
            '#' => break,
            c if c.is_whitespace() => {
                i += 1;
            }
            '{' => {
                toks.push(SpannedTok { tok: Tok::LBrace, span: SourceSpan::new(line_no, col, 1) });
                i += 1;
            }
            '}' => {
                toks.push(SpannedTok { tok: Tok::RBrace, span: SourceSpan::new(line_no, col, 1) });
                i += 1;
            }
            '=' => {
                toks.push(SpannedTok { tok: Tok::Eq, span: SourceSpan::new(line_no, col, 1) });
                i += 1;
            }
            '<' => {
                let next = chars.get(i + 1).copied();
                match next {
                    Some('-') => {
                        toks.push(SpannedTok {
                            tok: Tok::SupportArrow,
                            span: SourceSpan::new(line_no, col, 2),
                        });
                        i += 2;
                    }
                    Some('~') => {
                        toks.push(SpannedTok {
                            tok: Tok::ContextArrow,
                            span: SourceSpan::new(line_no, col, 2),
                        });
                        i += 2;
                    }
                    _ => {
                        errors.push(ParseError {
                            span: SourceSpan::new(line_no, col, 1),
                            message: "stray '<'".to_string(),
                            expected: Some("\"<-\" or \"<~\"".to_string()),
                        });
                        i += 1;
                    }
                }
            }
            '"' => {
                let start = i;
                i += 1;
                let mut value = String::new();
                let mut closed = false;
                while i < chars.len() {
                    match chars[i] {
                        '\\' => {
                            match chars.get(i + 1) {
                                Some('"') => value.push('"'),
                                Some('\\') => value.push('\\'),
                                other => {
                                    errors.push(ParseError {
                                        span: SourceSpan::new(line_no, i + 1, 2),
                                        message: format!(
                                            "unknown escape {:?}",
                                            other.map(|c| c.to_string()).unwrap_or_default()
                                        ),
                                        expected: Some("\\\" or \\\\".to_string()),
                                    });
                                }
                            }
                            i += 2;
                        }
                        '"' => {
                            i += 1;
                            closed = true;
                            break;
                        }
                        c => {
                            value.push(c);
                            i += 1;
                        }
                    }
                }
                if !closed {
                    errors.push(ParseError {
                        span: SourceSpan::new(line_no, start + 1, i - start),
                        message: "unterminated string".to_string(),
                        expected: Some("closing '\"'".to_string()),
                    });
                }
                toks.push(SpannedTok {
                    tok: Tok::Str(value),
                    span: SourceSpan::new(line_no, start + 1, i - start),
                });
            }
            c if is_ident_start(c) => {
                let start = i;
                while i < chars.len() && is_ident_continue(chars[i]) {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                let span = SourceSpan::new(line_no, start + 1, i - start);
                let tok = match GsnKind::from_str(&word) {
                    Some(kind) => Tok::Kind(kind),
                    None => match word.as_str() {
                        "undeveloped" | "root" | "evidence" => Tok::Word(word),
                        _ => Tok::Ident(word),
                    },
                };
                toks.push(SpannedTok { tok, span });
            }
            other => {
                errors.push(ParseError {
                    span: SourceSpan::new(line_no, col, 1),
                    message: format!("unexpected character {other:?}"),
                    expected: Some("declaration, edge, or comment".to_string()),
                });
                i += 1;
            }
        }
    }
    toks
}

struct Decl {
    node: GsnNode,
    span: SourceSpan,
    root: bool,
}

struct EdgeDecl {
    edge: GsnEdge,
    span: SourceSpan,
    target_span: SourceSpan,
}

/// Parse a `.case` document.
pub fn parse_casefile(text: &str) -> Result<GoalStructure, Vec<ParseError>> {
    let mut errors: Vec<ParseError> = Vec::new();
    let mut decls: Vec<Decl> = Vec::new();
    let mut edges: Vec<EdgeDecl> = Vec::new();

    let mut last_line = 0;
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        let toks = lex_line(line_no, line, &mut errors);
        if toks.is_empty() {
            continue;
        }
        match &toks[0].tok {
            Tok::Kind(kind) => parse_decl(*kind, &toks, &mut decls, &mut errors),
            Tok::Ident(_) => parse_edge(&toks, &mut edges, &mut errors),
            _ => errors.push(ParseError {
                span: toks[0].span,
                message: "line must start with an element kind or an edge".to_string(),
                expected: Some(
                    "goal, strategy, solution, context, assumption, or ID <-/<~ ID".to_string(),
                ),
            }),
        }
    }

    // Semantic pass: duplicate ids, root discipline, unknown edge endpoints.
    let mut spans_by_id: HashMap<String, SourceSpan> = HashMap::new();
    for d in &decls {
        if let Some(_first) = spans_by_id.get(&d.node.id) {
            errors.push(ParseError {
                span: d.span,
                message: format!("DUPLICATE_ID: {:?} is already declared", d.node.id),
                expected: None,
            });
        } else {
            spans_by_id.insert(d.node.id.clone(), d.span);
        }
    }

    let roots: Vec<&Decl> = decls.iter().filter(|d| d.root).collect();
    let root_id = match roots.as_slice() {
        [] => {
            errors.push(ParseError {
                span: SourceSpan::new(last_line.max(1), 1, 0),
                message: "NO_ROOT: no root goal declared".to_string(),
                expected: Some("exactly one declaration with { root }".to_string()),
            });
            String::new()
        }
        [only] => only.node.id.clone(),
        [first, rest @ ..] => {
            for extra in rest {
                errors.push(ParseError {
                    span: extra.span,
                    message: "MULTIPLE_ROOTS: a case file has exactly one root".to_string(),
                    expected: None,
                });
            }
            first.node.id.clone()
        }
    };

    for e in &edges {
        if !spans_by_id.contains_key(&e.edge.source) {
            errors.push(ParseError {
                span: e.span,
                message: format!("UNKNOWN_ID: {:?} is not declared", e.edge.source),
                expected: None,
            });
        }
        if !spans_by_id.contains_key(&e.edge.target) {
            errors.push(ParseError {
                span: e.target_span,
                message: format!("UNKNOWN_ID: {:?} is not declared", e.edge.target),
                expected: None,
            });
        }
    }

    let gs = GoalStructure {
        nodes: decls.into_iter().map(|d| d.node).collect(),
        edges: edges.iter().map(|e| e.edge.clone()).collect(),
        root: root_id,
    };

    // Full structural validation; map the remaining findings onto spans.
    let report = gs.validate();
    for v in &report.violations {
        if already_reported(&errors, v) {
            continue;
        }
        let span = spans_by_id
            .get(subject_node(v, &gs))
            .copied()
            .or_else(|| edge_span(&edges, v))
            .unwrap_or(SourceSpan::new(last_line.max(1), 1, 0));
        errors.push(ParseError {
            span,
            message: format!("{}: {}", v.code, v.message),
            expected: None,
        });
    }

    if errors.is_empty() {
        Ok(gs)
    } else {
        errors.sort_by_key(|e| (e.span.line, e.span.column));
        Err(errors)
    }
}

/// Unknown ids and duplicates already get dedicated diagnostics above.
fn already_reported(_errors: &[ParseError], v: &Violation) -> bool {
    matches!(
        v.code,
        crate::gsn::ViolationCode::UnknownId
            | crate::gsn::ViolationCode::DuplicateId
            | crate::gsn::ViolationCode::RootUnknown
    )
}

fn subject_node<'a>(v: &'a Violation, _gs: &GoalStructure) -> &'a str {
    match v.subject.split_once(" -> ") {
        Some((src, _)) => src,
        None => v.subject.as_str(),
    }
}

fn edge_span(edges: &[EdgeDecl], v: &Violation) -> Option<SourceSpan> {
    let (src, tgt) = v.subject.split_once(" -> ")?;
    edges
        .iter()
        .find(|e| e.edge.source == src && e.edge.target == tgt)
        .map(|e| e.span)
}

fn parse_decl(kind: GsnKind, toks: &[SpannedTok], decls: &mut Vec<Decl>, errors: &mut Vec<ParseError>) {
    let mut it = toks.iter().skip(1).peekable();
    let (id, id_span) = match it.next() {
        Some(SpannedTok { tok: Tok::Ident(id), span }) => (id.clone(), *span),
        other => {
            errors.push(ParseError {
                span: other.map(|t| t.span).unwrap_or(toks[0].span),
                message: "declaration needs an identifier".to_string(),
                expected: Some("ID matching [A-Za-z][A-Za-z0-9_-]*".to_string()),
            });
            return;
        }
    };
    let text = match it.next() {
        Some(SpannedTok { tok: Tok::Str(s), .. }) => s.clone(),
        other => {
            errors.push(ParseError {
                span: other.map(|t| t.span).unwrap_or(id_span),
                message: "declaration needs a quoted description".to_string(),
                expected: Some("STRING".to_string()),
            });
            return;
        }
    };

    let mut node = GsnNode::new(&id, kind, &text);
    let mut is_root = false;

    if let Some(SpannedTok { tok: Tok::LBrace, .. }) = it.peek().map(|t| &**t) {
        it.next();
        let mut closed = false;
        while let Some(t) = it.next() {
            match &t.tok {
                Tok::RBrace => {
                    closed = true;
                    break;
                }
                Tok::Word(w) if w == "undeveloped" => node.undeveloped = true,
                Tok::Word(w) if w == "root" => is_root = true,
                Tok::Word(w) if w == "evidence" => {
                    match (it.next(), it.next()) {
                        (
                            Some(SpannedTok { tok: Tok::Eq, .. }),
                            Some(SpannedTok { tok: Tok::Str(path), .. }),
                        ) => node.evidence_ref = Some(path.clone()),
                        _ => {
                            errors.push(ParseError {
                                span: t.span,
                                message: "evidence attribute needs = STRING".to_string(),
                                expected: Some("evidence = \"path\"".to_string()),
                            });
                            return;
                        }
                    }
                }
                _ => {
                    errors.push(ParseError {
                        span: t.span,
                        message: "unknown attribute".to_string(),
                        expected: Some("undeveloped, root, or evidence = STRING".to_string()),
                    });
                    return;
                }
            }
        }
        if !closed {
            errors.push(ParseError {
                span: id_span,
                message: "unterminated attribute block".to_string(),
                expected: Some("'}'".to_string()),
            });
            return;
        }
    }
    if let Some(extra) = it.next() {
        errors.push(ParseError {
            span: extra.span,
            message: "trailing tokens after declaration".to_string(),
            expected: Some("end of line".to_string()),
        });
        return;
    }
    decls.push(Decl { node, span: id_span, root: is_root });
}

fn parse_edge(toks: &[SpannedTok], edges: &mut Vec<EdgeDecl>, errors: &mut Vec<ParseError>) {
    let source = match &toks[0].tok {
        Tok::Ident(id) => id.clone(),
        _ => unreachable!("caller dispatched on Ident"),
    };
    let relation = match toks.get(1).map(|t| &t.tok) {
        Some(Tok::SupportArrow) => Relation::SupportedBy,
        Some(Tok::ContextArrow) => Relation::InContextOf,
        _ => {
            errors.push(ParseError {
                span: toks.get(1).map(|t| t.span).unwrap_or(toks[0].span),
                message: "edge needs an arrow".to_string(),
                expected: Some("\"<-\" (supported by) or \"<~\" (in context of)".to_string()),
            });
            return;
        }
    };
    let (target, target_span) = match toks.get(2) {
        Some(SpannedTok { tok: Tok::Ident(id), span }) => (id.clone(), *span),
        other => {
            errors.push(ParseError {
                span: other.map(|t| t.span).unwrap_or(toks[0].span),
                message: "edge needs a target identifier".to_string(),
                expected: Some("ID".to_string()),
            });
            return;
        }
    };
    if let Some(extra) = toks.get(3) {
        errors.push(ParseError {
            span: extra.span,
            message: "trailing tokens after edge".to_string(),
            expected: Some("end of line".to_string()),
        });
        return;
    }
    edges.push(EdgeDecl {
        edge: GsnEdge { source, relation, target },
        span: toks[0].span,
        target_span,
    });
}

// ---------------------------------------------------------------------------
// JSON export / import
// ---------------------------------------------------------------------------

use serde_json::{json, Map, Value};

/// Canonical JSON: object keys sorted, nodes sorted by id, edges sorted by
/// (source, relation, target). Byte-identical across runs and platforms.
pub fn render_json(gs: &GoalStructure) -> String {
    let mut nodes: Vec<&GsnNode> = gs.nodes.iter().collect();
    nodes.sort_by(|a, b| a.id.cmp(&b.id));
    let mut edges: Vec<&GsnEdge> = gs.edges.iter().collect();
    edges.sort_by_key(|e| (e.source.clone(), e.relation.as_str(), e.target.clone()));

    let node_values: Vec<Value> = nodes
        .iter()
        .map(|n| {
            json!({
                "id": n.id,
                "kind": n.kind.as_str(),
                "text": n.text,
                "undeveloped": n.undeveloped,
                "evidence": n.evidence_ref,
            })
        })
        .collect();
    let edge_values: Vec<Value> = edges
        .iter()
        .map(|e| {
            json!({
                "source": e.source,
                "relation": e.relation.as_str(),
                "target": e.target,
            })
        })
        .collect();
    let doc = json!({
        "nodes": node_values,
        "edges": edge_values,
        "root": gs.root,
    });
    let mut out = serde_json::to_string_pretty(&doc).expect("in-memory serialization");
    out.push('\n');
    out
}

/// Parse the JSON export back into a structure. Inverse of [`render_json`].
pub fn parse_json(text: &str) -> Result<GoalStructure, String> {
    let doc: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let obj = doc.as_object().ok_or("top level must be an object")?;
    let get_str = |m: &Map<String, Value>, key: &str| -> Result<String, String> {
        m.get(key)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| format!("missing string field {key:?}"))
    };
    let mut gs = GoalStructure {
        root: get_str(obj, "root")?,
        ..Default::default()
    };
    for v in obj.get("nodes").and_then(Value::as_array).ok_or("missing nodes array")? {
        let m = v.as_object().ok_or("node must be an object")?;
        let kind = GsnKind::from_str(&get_str(m, "kind")?).ok_or("unknown node kind")?;
        gs.nodes.push(GsnNode {
            id: get_str(m, "id")?,
            kind,
            text: get_str(m, "text")?,
            undeveloped: m.get("undeveloped").and_then(Value::as_bool).unwrap_or(false),
            evidence_ref: m.get("evidence").and_then(Value::as_str).map(str::to_string),
        });
    }
    for v in obj.get("edges").and_then(Value::as_array).ok_or("missing edges array")? {
        let m = v.as_object().ok_or("edge must be an object")?;
        let relation = match get_str(m, "relation")?.as_str() {
            "supported_by" => Relation::SupportedBy,
            "in_context_of" => Relation::InContextOf,
            other => return Err(format!("unknown relation {other:?}")),
        };
        gs.edges.push(GsnEdge {
            source: get_str(m, "source")?,
            relation,
            target: get_str(m, "target")?,
        });
    }
    Ok(gs)
}

// ---------------------------------------------------------------------------
// DOT export
// ---------------------------------------------------------------------------

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz DOT text. Node shape encodes the element kind, dashed edges are
/// InContextOf. Output ordering is deterministic.
pub fn render_dot(gs: &GoalStructure) -> String {
    let mut nodes: Vec<&GsnNode> = gs.nodes.iter().collect();
    nodes.sort_by(|a, b| a.id.cmp(&b.id));
    let mut edges: Vec<&GsnEdge> = gs.edges.iter().collect();
    edges.sort_by_key(|e| (e.source.clone(), e.relation.as_str(), e.target.clone()));

    let mut out = String::new();
    out.push_str("digraph goal_structure {\n");
    out.push_str("  rankdir=TB;\n");
    out.push_str("  node [fontname=\"Helvetica\"];\n");
    for n in nodes {
        let shape = match n.kind {
            GsnKind::Goal => "shape=box",
            GsnKind::Strategy => "shape=parallelogram",
            GsnKind::Solution => "shape=circle",
            GsnKind::Context | GsnKind::Assumption => "shape=box, style=rounded",
        };
        let mut label = format!("{}\\n{}", dot_escape(&n.id), dot_escape(&n.text));
        if n.undeveloped {
            label.push_str("\\n(undeveloped)");
        }
        out.push_str(&format!("  \"{}\" [label=\"{}\", {}];\n", dot_escape(&n.id), label, shape));
    }
    for e in edges {
        let attrs = match e.relation {
            Relation::SupportedBy => "[style=solid]",
            Relation::InContextOf => "[style=dashed, arrowhead=empty]",
        };
        out.push_str(&format!(
            "  \"{}\" -> \"{}\" {};\n",
            dot_escape(&e.source),
            dot_escape(&e.target),
            attrs
        ));
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_goal_parses() {
        let gs = parse_casefile("goal G1 \"top claim\" { root undeveloped }\n").unwrap();
        assert_eq!(gs.nodes.len(), 1);
        assert_eq!(gs.root, "G1");
        assert!(gs.validate().ok());
    }

    #[test]
    fn empty_file_reports_missing_root() {
        let errs = parse_casefile("").unwrap_err();
        assert!(errs.iter().any(|e| e.message.contains("NO_ROOT")));
    }

    #[test]
    fn unknown_edge_target_has_precise_span() {
        let text = "goal G1 \"g\" { root undeveloped }\nG1 <- S_missing\n";
        let errs = parse_casefile(text).unwrap_err();
        let err = errs
            .iter()
            .find(|e| e.message.contains("UNKNOWN_ID"))
            .expect("unknown id reported");
        assert_eq!(err.span.line, 2);
        assert_eq!(err.span.column, 7);
        assert_eq!(err.span.length, "S_missing".len());
    }

    #[test]
    fn crlf_is_accepted() {
        let gs = parse_casefile("goal G1 \"g\" { root undeveloped }\r\n").unwrap();
        assert_eq!(gs.nodes.len(), 1);
    }

    #[test]
    fn duplicate_id_reported_at_second_decl() {
        let text = "goal G1 \"a\" { root undeveloped }\ngoal G1 \"b\"\n";
        let errs = parse_casefile(text).unwrap_err();
        let dup = errs.iter().find(|e| e.message.contains("DUPLICATE_ID")).unwrap();
        assert_eq!(dup.span.line, 2);
    }

    #[test]
    fn solution_not_leaf_reported_with_span() {
        let text = "goal G1 \"g\" { root }\nsolution Sn1 \"proof\"\nG1 <- Sn1\nSn1 <- G1\n";
        let errs = parse_casefile(text).unwrap_err();
        assert!(errs.iter().any(|e| e.message.contains("SOLUTION_NOT_LEAF")));
        assert!(errs.iter().any(|e| e.message.contains("CYCLE")));
    }

    #[test]
    fn string_escapes_round_trip() {
        let text = "goal G1 \"say \\\"hi\\\" \\\\ done\" { root undeveloped }\n";
        let gs = parse_casefile(text).unwrap();
        assert_eq!(gs.nodes[0].text, "say \"hi\" \\ done");
    }

    #[test]
    fn json_round_trip_single_goal() {
        let gs = parse_casefile("goal G1 \"top\" { root undeveloped }\n").unwrap();
        let rendered = render_json(&gs);
        let back = parse_json(&rendered).unwrap();
        assert_eq!(gs, back);
        assert!(rendered.contains("\"edges\": []"));
    }

    #[test]
    fn dot_single_goal() {
        let gs = parse_casefile("goal G1 \"top\" { root undeveloped }\n").unwrap();
        let dot = render_dot(&gs);
        assert!(dot.starts_with("digraph"));
        assert!(dot.contains("\"G1\""));
    }
}
