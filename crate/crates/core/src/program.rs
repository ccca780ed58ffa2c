//! KoPL programs and the tagged draft format exchanged with the LLM.
//!
//! One function call per line:
//!
//! ```text
//! Find<d></d><i>Sudan</i>
//! Relate<d>0</d><i>Make a visit,forward</i>
//! ```
//!
//! `<d>` holds comma-separated indices of earlier nodes, `<i>` holds the
//! textual arguments. Programs are post-order: the last line is the root.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::signature::signature;

macro_rules! functions {
    ($($name:ident),* $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum FunctionName {
            $($name),*
        }

        impl FunctionName {
            pub const ALL: [FunctionName; [$(stringify!($name)),*].len()] = [$(FunctionName::$name),*];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $(FunctionName::$name => stringify!($name)),*
                }
            }
        }

        impl FromStr for FunctionName {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $(stringify!($name) => Ok(FunctionName::$name),)*
                    other => Err(format!("unknown function '{other}'")),
                }
            }
        }
    };
}

functions!(
    Find,
    Relate,
    QueryRelationQualifier,
    QueryEventQualifier,
    What,
    FilterBefore,
    FilterAfter,
    FilterFirstTime,
    FilterLastTime,
    FilterFirstEvent,
    FilterLastEvent,
    FilterRange,
    GetYear,
    GetMonth,
    GetDate,
    GetDuration,
    FilterByDuration,
    FilterByTimePoint,
);

impl fmt::Display for FunctionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the textual args of a node were joined in its source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ArgSeparator {
    #[default]
    Comma,
    Pipe,
}

impl ArgSeparator {
    fn as_str(&self) -> &'static str {
        match self {
            ArgSeparator::Comma => ",",
            ArgSeparator::Pipe => "|",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProgramNode {
    pub function: FunctionName,
    pub textual_args: Vec<String>,
    pub dep_args: Vec<usize>,
    pub separator: ArgSeparator,
}

impl ProgramNode {
    pub fn new<S: Into<String>>(function: FunctionName, deps: Vec<usize>, args: Vec<S>) -> Self {
        Self {
            function,
            textual_args: args.into_iter().map(Into::into).collect(),
            dep_args: deps,
            separator: ArgSeparator::Comma,
        }
    }

    pub fn with_separator(mut self, separator: ArgSeparator) -> Self {
        self.separator = separator;
        self
    }

    /// Several textual args, one of which contains a comma: only the pipe
    /// separator keeps them apart.
    pub fn needs_pipe(&self) -> bool {
        self.textual_args.len() >= 2 && self.textual_args.iter().any(|a| a.contains(','))
    }

    /// Switches to the pipe separator when commas inside args require it.
    pub fn fix_separator(&mut self) {
        if self.needs_pipe() {
            self.separator = ArgSeparator::Pipe;
        }
    }

    /// One line of the tagged format.
    pub fn to_draft_line(&self) -> String {
        let deps: Vec<String> = self.dep_args.iter().map(|d| d.to_string()).collect();
        let separator = if self.needs_pipe() { ArgSeparator::Pipe } else { self.separator };
        format!("{}<d>{}</d><i>{}</i>", self.function, deps.join(","), self.textual_args.join(separator.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error("empty program")]
    Empty,
    #[error("node {node}: dep index {dep} out of range")]
    DepOutOfRange { node: usize, dep: usize },
    #[error("node {node}: {function} expects {expected}, got {deps} deps + {textual} textual")]
    Arity { node: usize, function: FunctionName, expected: String, deps: usize, textual: usize },
}

/// A post-order sequence of function calls; the last node is the root.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Program {
    nodes: Vec<ProgramNode>,
}

impl Program {
    /// Checks non-emptiness, the post-order property and call shapes.
    pub fn new(nodes: Vec<ProgramNode>) -> Result<Self, ProgramError> {
        if nodes.is_empty() {
            return Err(ProgramError::Empty);
        }
        for (i, node) in nodes.iter().enumerate() {
            if let Some(&dep) = node.dep_args.iter().find(|&&d| d >= i) {
                return Err(ProgramError::DepOutOfRange { node: i, dep });
            }
            let sig = signature(node.function);
            if !sig.admits(node.dep_args.len(), node.textual_args.len()) {
                return Err(ProgramError::Arity {
                    node: i,
                    function: node.function,
                    expected: sig.describe_shapes(),
                    deps: node.dep_args.len(),
                    textual: node.textual_args.len(),
                });
            }
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[ProgramNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> &ProgramNode {
        self.nodes.last().expect("non-empty by construction")
    }

    /// Indices of non-root nodes that no later node consumes.
    pub fn dangling_nodes(&self) -> Vec<usize> {
        let mut used = vec![false; self.nodes.len()];
        for node in &self.nodes {
            for &d in &node.dep_args {
                used[d] = true;
            }
        }
        (0..self.nodes.len().saturating_sub(1)).filter(|&i| !used[i]).collect()
    }

    /// Rebuilds the program with one node replaced; shape is re-validated.
    pub fn with_node(&self, index: usize, node: ProgramNode) -> Result<Program, ProgramError> {
        let mut nodes = self.nodes.clone();
        nodes[index] = node;
        Program::new(nodes)
    }

    pub fn into_nodes(self) -> Vec<ProgramNode> {
        self.nodes
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_draft(self))
    }
}

/// Serializes a program as tagged draft lines joined by `\n`.
pub fn serialize_draft(program: &Program) -> String {
    program.nodes.iter().map(ProgramNode::to_draft_line).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warn,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    /// 1-based line in the raw text, when the diagnostic concerns one line.
    pub line: Option<usize>,
    pub message: String,
}

impl Diagnostic {
    pub fn error(line: Option<usize>, message: impl Into<String>) -> Self {
        Self { severity: Severity::Error, line, message: message.into() }
    }

    pub fn warn(line: Option<usize>, message: impl Into<String>) -> Self {
        Self { severity: Severity::Warn, line, message: message.into() }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.severity {
            Severity::Warn => "warning",
            Severity::Error => "error",
        };
        match self.line {
            Some(l) => write!(f, "{level}: line {l}: {}", self.message),
            None => write!(f, "{level}: {}", self.message),
        }
    }
}

/// Raw LLM output plus its parse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Draft {
    pub raw_text: String,
    pub parsed: Option<Program>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Draft {
    pub fn errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics.iter().filter(|d| d.is_error())
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }
}

fn line_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^([A-Za-z][A-Za-z0-9_]*)<d>([^<]*)</d><i>(.*)</i>$").expect("valid regex"))
}

fn starts_call(line: &str) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[A-Za-z][A-Za-z0-9_]*<").expect("valid regex")).is_match(line)
}

/// Parses the tagged draft format. Never fails; problems land in diagnostics.
pub fn parse_draft(text: &str) -> Draft {
    let mut diagnostics = Vec::new();
    let mut nodes: Vec<Option<ProgramNode>> = Vec::new();

    for (i, raw_line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        if !starts_call(line) {
            if !nodes.is_empty() {
                diagnostics.push(Diagnostic::warn(Some(lineno), format!("ignored line '{line}'")));
            }
            continue;
        }
        let index = nodes.len();
        let node = parse_line(line, index).map_err(|msg| Diagnostic::error(Some(lineno), msg));
        match node {
            Ok(n) => nodes.push(Some(n)),
            Err(d) => {
                diagnostics.push(d);
                nodes.push(None);
            }
        }
    }

    if nodes.is_empty() {
        diagnostics.push(Diagnostic::error(None, "empty draft"));
    }

    let parsed = if diagnostics.iter().any(Diagnostic::is_error) {
        None
    } else {
        let nodes: Vec<ProgramNode> = nodes.into_iter().flatten().collect();
        match Program::new(nodes) {
            Ok(p) => {
                for idx in p.dangling_nodes() {
                    diagnostics.push(Diagnostic::warn(None, format!("node {idx} is not consumed by any later node")));
                }
                Some(p)
            }
            Err(e) => {
                diagnostics.push(Diagnostic::error(None, e.to_string()));
                None
            }
        }
    };

    Draft { raw_text: text.to_string(), parsed, diagnostics }
}

fn parse_line(line: &str, index: usize) -> Result<ProgramNode, String> {
    let caps = line_pattern().captures(line).ok_or_else(|| format!("malformed tags in '{line}'"))?;
    let function: FunctionName = caps[1].parse()?;

    let dep_text = caps[2].trim();
    let mut dep_args = Vec::new();
    if !dep_text.is_empty() {
        for tok in dep_text.split(',') {
            let tok = tok.trim();
            let dep: usize = tok.parse().map_err(|_| format!("invalid dep index '{tok}'"))?;
            if dep >= index {
                return Err(format!("dep index {dep} out of range"));
            }
            dep_args.push(dep);
        }
    }

    let arg_text = caps[3].trim();
    let mut separator = ArgSeparator::Comma;
    let mut textual_args: Vec<String> =
        if arg_text.is_empty() { Vec::new() } else { arg_text.split(',').map(|a| a.trim().to_string()).collect() };

    let sig = signature(function);
    let n_deps = dep_args.len();
    let comma_fits = sig.admits(n_deps, textual_args.len());
    if arg_text.contains('|') && sig.wants_several_textual(n_deps) && (textual_args.len() == 1 || !comma_fits) {
        let split: Vec<String> = arg_text.split('|').map(|a| a.trim().to_string()).collect();
        if sig.admits(n_deps, split.len()) {
            textual_args = split;
            separator = ArgSeparator::Pipe;
        }
    } else if !comma_fits && !arg_text.is_empty() && sig.admits(n_deps, 1) && !sig.wants_several_textual(n_deps) {
        // a single name that itself contains commas
        textual_args = vec![arg_text.to_string()];
    }

    if !sig.admits(dep_args.len(), textual_args.len()) {
        return Err(format!(
            "{function} expects {}, got {} deps + {} textual",
            sig.describe_shapes(),
            dep_args.len(),
            textual_args.len()
        ));
    }

    Ok(ProgramNode { function, textual_args, dep_args, separator })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_two_node_program() {
        let d = parse_draft("Find<d></d><i>Sudan</i>\nRelate<d>0</d><i>Make a visit,forward</i>");
        assert!(d.diagnostics.is_empty(), "{:?}", d.diagnostics);
        let p = d.parsed.unwrap();
        assert_eq!(p.nodes()[0], ProgramNode::new(FunctionName::Find, vec![], vec!["Sudan"]));
        assert_eq!(p.nodes()[1], ProgramNode::new(FunctionName::Relate, vec![0], vec!["Make a visit", "forward"]));
    }

    #[test]
    fn forward_reference_is_error() {
        let d = parse_draft("FilterFirstTime<d>2</d><i></i>");
        assert!(d.parsed.is_none());
        assert!(d.errors().any(|e| e.message.contains("dep index 2 out of range")), "{:?}", d.diagnostics);
    }

    #[test]
    fn prose_only_is_empty_draft() {
        let d = parse_draft("I think the answer is Sudan.");
        assert!(d.parsed.is_none());
        assert_eq!(d.diagnostics, vec![Diagnostic::error(None, "empty draft")]);
        assert!(parse_draft("").errors().any(|e| e.message == "empty draft"));
    }

    #[test]
    fn unknown_function_and_bad_tags_are_per_line() {
        let d = parse_draft("Find<d></d><i>A</i>\nFly<d>0</d><i></i>\nWhat<d>0<i></i>\nWhat<d>0</d><i></i>");
        let errs: Vec<_> = d.errors().collect();
        assert_eq!(errs.len(), 2);
        assert_eq!(errs[0].line, Some(2));
        assert!(errs[0].message.contains("unknown function 'Fly'"));
        assert_eq!(errs[1].line, Some(3));
        assert!(d.parsed.is_none());
    }

    #[test]
    fn chatty_prefix_and_blank_lines_skipped() {
        let d = parse_draft("Sure, here is the program:\n\n  Find<d></d><i>A</i>  \nWhat<d>0</d><i></i>\n");
        assert!(d.diagnostics.is_empty(), "{:?}", d.diagnostics);
        assert_eq!(d.parsed.unwrap().len(), 2);
    }

    #[test]
    fn pipe_separated_args_when_signature_demands() {
        let text = "Find<d></d><i>Angelo Buratti</i>\nRelate<d>0</d><i>member of sports team|forward</i>";
        let p = parse_draft(text).parsed.unwrap();
        assert_eq!(p.nodes()[1].textual_args, vec!["member of sports team", "forward"]);
        assert_eq!(p.nodes()[1].separator, ArgSeparator::Pipe);
        assert_eq!(serialize_draft(&p), text);
    }

    #[test]
    fn names_with_commas_round_trip() {
        let text =
            "Find<d></d><i>Avelino J. Cruz, Jr.</i>\nRelate<d>0</d><i>Abduct, hijack, or take hostage|forward</i>";
        let p = parse_draft(text).parsed.unwrap();
        assert_eq!(p.nodes()[0].textual_args, vec!["Avelino J. Cruz, Jr."]);
        assert_eq!(p.nodes()[1].textual_args, vec!["Abduct, hijack, or take hostage", "forward"]);
        assert_eq!(serialize_draft(&p), text);

        // a comma-joined node whose arg gains a comma is written with pipes
        let mut node =
            ProgramNode::new(FunctionName::Relate, vec![0], vec!["Abduct, hijack, or take hostage", "forward"]);
        assert!(node.to_draft_line().ends_with("<i>Abduct, hijack, or take hostage|forward</i>"));
        node.fix_separator();
        assert_eq!(node.separator, ArgSeparator::Pipe);
    }

    #[test]
    fn arity_mismatch_rejected() {
        let d = parse_draft("Find<d>0</d><i>A</i>");
        assert!(d.has_errors());
        let d = parse_draft("Find<d></d><i>A</i>\nRelate<d>0</d><i>r,forward,x</i>");
        assert!(d.errors().any(|e| e.message.contains("Relate expects")), "{:?}", d.diagnostics);
        let d = parse_draft("Find<d></d><i>A</i>\nRelate<d>0</d><i>r</i>");
        assert!(d.has_errors());
    }

    #[test]
    fn dangling_node_warns_only() {
        let d = parse_draft("Find<d></d><i>A</i>\nFind<d></d><i>B</i>\nWhat<d>1</d><i></i>");
        assert!(d.parsed.is_some());
        assert_eq!(d.diagnostics.len(), 1);
        assert_eq!(d.diagnostics[0].severity, Severity::Warn);
    }

    #[test]
    fn serialize_single_nodes() {
        let p = Program::new(vec![ProgramNode::new(FunctionName::Find, vec![], vec!["Tony Blair"])]).unwrap();
        assert_eq!(serialize_draft(&p), "Find<d></d><i>Tony Blair</i>");
        let node = ProgramNode::new::<&str>(FunctionName::What, vec![6], vec![]);
        assert_eq!(node.to_draft_line(), "What<d>6</d><i></i>");
    }

    fn arb_arg() -> impl Strategy<Value = String> {
        "[A-Za-z][A-Za-z0-9 ()\\.]{0,12}[A-Za-z0-9)]".prop_map(|s| s.to_string())
    }

    fn arb_program() -> impl Strategy<Value = Program> {
        let node_spec =
            (0usize..FunctionName::ALL.len(), any::<u64>(), prop::collection::vec(arb_arg(), 0..4), any::<bool>());
        prop::collection::vec(node_spec, 1..8).prop_filter_map("no admissible node", |specs| {
            let mut nodes = Vec::new();
            for (i, (fidx, seed, args, pipe)) in specs.into_iter().enumerate() {
                let function = FunctionName::ALL[fidx];
                let sig = signature(function);
                let shape = sig.shapes.iter().find(|s| s.deps <= i)?;
                let n_text = match shape.textual {
                    crate::engine::signature::Arity::Exactly(k) => k,
                    crate::engine::signature::Arity::AtLeast(k) => k.max(args.len()),
                };
                if args.len() < n_text {
                    return None;
                }
                let deps = (0..shape.deps).map(|j| (seed as usize).wrapping_add(j * 7) % i).collect();
                let sep = if pipe && n_text >= 2 && sig.wants_several_textual(shape.deps) {
                    ArgSeparator::Pipe
                } else {
                    ArgSeparator::Comma
                };
                nodes.push(ProgramNode::new(function, deps, args[..n_text].to_vec()).with_separator(sep));
            }
            Program::new(nodes).ok()
        })
    }

    proptest! {
        #[test]
        fn serialize_parse_identity(p in arb_program()) {
            let text = serialize_draft(&p);
            let d = parse_draft(&text);
            prop_assert!(!d.has_errors(), "{:?}", d.diagnostics);
            prop_assert_eq!(d.parsed.unwrap(), p);
        }

        #[test]
        fn parse_is_total(s in "\\PC{0,200}") {
            let d = parse_draft(&s);
            prop_assert_eq!(d.parsed.is_some(), !d.has_errors());
        }

        #[test]
        fn parse_is_total_on_tag_soup(s in "(Find|Relate|What|<d>|</d>|<i>|</i>|[0-9]|,|\\||\n| |x){0,60}") {
            let d = parse_draft(&s);
            prop_assert_eq!(d.parsed.is_some(), !d.has_errors());
        }
    }
}
