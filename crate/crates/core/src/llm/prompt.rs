//! Demonstration pools, seeded sampling and the prompt layout.

use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::program::{parse_draft, Diagnostic};

pub const INSTRUCTION: &str = "Convert a natural language question to a KoPL query.";

/// Question types of the two benchmark taxonomies; `BeforeAfter` and
/// `FirstLast` are shared between them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum QuestionCategory {
    Equal,
    BeforeAfter,
    FirstLast,
    EqualMulti,
    BeforeLast,
    AfterFirst,
    Simple,
    TimeJoin,
}

impl QuestionCategory {
    pub const ALL: [QuestionCategory; 8] = [
        QuestionCategory::Equal,
        QuestionCategory::BeforeAfter,
        QuestionCategory::FirstLast,
        QuestionCategory::EqualMulti,
        QuestionCategory::BeforeLast,
        QuestionCategory::AfterFirst,
        QuestionCategory::Simple,
        QuestionCategory::TimeJoin,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            QuestionCategory::Equal => "Equal",
            QuestionCategory::BeforeAfter => "Before/After",
            QuestionCategory::FirstLast => "First/Last",
            QuestionCategory::EqualMulti => "Equal-Multi",
            QuestionCategory::BeforeLast => "Before-Last",
            QuestionCategory::AfterFirst => "After-First",
            QuestionCategory::Simple => "Simple",
            QuestionCategory::TimeJoin => "Time-Join",
        }
    }
}

impl fmt::Display for QuestionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QuestionCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim();
        Self::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(wanted))
            .ok_or_else(|| format!("unknown question category '{wanted}'"))
    }
}

impl TryFrom<String> for QuestionCategory {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<QuestionCategory> for String {
    fn from(c: QuestionCategory) -> String {
        c.as_str().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerType {
    Entity,
    Time,
}

impl fmt::Display for AnswerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnswerType::Entity => "entity",
            AnswerType::Time => "time",
        })
    }
}

impl FromStr for AnswerType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "entity" => Ok(AnswerType::Entity),
            "time" => Ok(AnswerType::Time),
            other => Err(format!("unknown answer type '{other}'")),
        }
    }
}

/// An annotated (question, program) demonstration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub question: String,
    /// Tagged draft text, one node per line.
    pub program: String,
    pub category: QuestionCategory,
    pub answer_type: AnswerType,
}

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads a JSON-lines example pool; every program must parse cleanly.
pub fn load_example_pool<R: BufRead>(source: R) -> Result<Vec<Example>, PoolError> {
    let mut pool = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let example: Example =
            serde_json::from_str(&line).map_err(|e| PoolError::Invalid { line: i + 1, message: e.to_string() })?;
        let draft = parse_draft(&example.program);
        if let Some(err) = draft.errors().next() {
            return Err(PoolError::Invalid { line: i + 1, message: format!("program does not parse: {err}") });
        }
        pool.push(example);
    }
    Ok(pool)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("uncovered category {category}")]
pub struct UncoveredCategory {
    pub category: QuestionCategory,
}

/// 64-bit FNV-1a; stable across platforms and toolchains, unlike the std hasher.
fn stable_hash(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Draws `n` demonstrations of `category`/`answer_type` uniformly without
/// replacement. The stream depends only on `seed` and `question`.
///
/// When the exact bucket is too small the whole category is used instead
/// (with a warning); a category with no examples at all is an error.
pub fn sample_demonstrations(
    pool: &[Example],
    category: QuestionCategory,
    answer_type: Option<AnswerType>,
    n: usize,
    seed: u64,
    question: &str,
) -> Result<(Vec<Example>, Vec<Diagnostic>), UncoveredCategory> {
    let parent: Vec<&Example> = pool.iter().filter(|e| e.category == category).collect();
    if parent.is_empty() {
        return Err(UncoveredCategory { category });
    }
    let mut diagnostics = Vec::new();
    let bucket: Vec<&Example> = match answer_type {
        Some(t) => parent.iter().copied().filter(|e| e.answer_type == t).collect(),
        None => parent.clone(),
    };
    let source = if bucket.len() >= n {
        bucket
    } else {
        if let Some(t) = answer_type {
            diagnostics.push(Diagnostic::warn(
                None,
                format!(
                    "bucket {category}/{t} has {} examples, fewer than {n}; using the whole category",
                    bucket.len()
                ),
            ));
        }
        if parent.len() < n {
            diagnostics.push(Diagnostic::warn(
                None,
                format!("category {category} has only {} examples, fewer than {n}", parent.len()),
            ));
        }
        parent
    };
    Ok((draw(&source, n, seed, question), diagnostics))
}

/// Draws `n` demonstrations from the whole pool, regardless of category.
pub fn sample_any(pool: &[Example], n: usize, seed: u64, question: &str) -> Vec<Example> {
    draw(&pool.iter().collect::<Vec<_>>(), n, seed, question)
}

fn draw(source: &[&Example], n: usize, seed: u64, question: &str) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(question));
    let picked = rand::seq::index::sample(&mut rng, source.len(), n.min(source.len()));
    picked.into_iter().map(|i| source[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub instruction: String,
    pub demonstrations: Vec<Example>,
    pub query: String,
}

impl Prompt {
    pub fn new(demonstrations: Vec<Example>, query: impl Into<String>) -> Self {
        Self { instruction: INSTRUCTION.to_string(), demonstrations, query: query.into() }
    }
}

/// Renders the few-shot layout; the text ends right after `### Response:`.
pub fn render_prompt(prompt: &Prompt) -> String {
    let mut out = format!("### Instruction: {}\n\n", prompt.instruction);
    for demo in &prompt.demonstrations {
        out.push_str(&format!("### Input: {}\n### Response: {}\n\n", demo.question, demo.program.trim_end()));
    }
    out.push_str(&format!("### Input: {}\n### Response:", prompt.query));
    out
}

/// The query question of a rendered prompt (its last input block).
pub fn prompt_query(rendered: &str) -> Option<&str> {
    let start = rendered.rfind("### Input: ")? + "### Input: ".len();
    let rest = &rendered[start..];
    Some(rest.split('\n').next().unwrap_or(rest))
}

/// Keeps a completion up to its first blank line or the next `### ` block.
pub fn cut_completion(completion: &str) -> &str {
    let text = completion.trim_start();
    let mut end = text.len();
    if let Some(i) = text.find("\n\n") {
        end = end.min(i);
    }
    if let Some(i) = text.find("### ") {
        end = end.min(i);
    }
    text[..end].trim_end()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(q: &str, c: QuestionCategory, t: AnswerType) -> Example {
        Example { question: q.into(), program: "Find<d></d><i>X</i>".into(), category: c, answer_type: t }
    }

    fn pool() -> Vec<Example> {
        let mut pool: Vec<Example> =
            (0..20).map(|i| example(&format!("eq {i}"), QuestionCategory::Equal, AnswerType::Entity)).collect();
        pool.push(example("eq time", QuestionCategory::Equal, AnswerType::Time));
        pool.push(example("fl", QuestionCategory::FirstLast, AnswerType::Time));
        pool
    }

    #[test]
    fn category_names_round_trip() {
        for c in QuestionCategory::ALL {
            assert_eq!(c.as_str().parse::<QuestionCategory>().unwrap(), c);
        }
        assert!("Sideways".parse::<QuestionCategory>().is_err());
        let json = serde_json::to_string(&QuestionCategory::BeforeAfter).unwrap();
        assert_eq!(json, "\"Before/After\"");
    }

    #[test]
    fn sampling_is_seeded() {
        let pool = pool();
        let (a, warn) =
            sample_demonstrations(&pool, QuestionCategory::Equal, Some(AnswerType::Entity), 6, 7, "q").unwrap();
        let (b, _) =
            sample_demonstrations(&pool, QuestionCategory::Equal, Some(AnswerType::Entity), 6, 7, "q").unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a, b);
        assert!(warn.is_empty());
        let distinct: std::collections::HashSet<_> = a.iter().map(|e| &e.question).collect();
        assert_eq!(distinct.len(), 6);
        assert!(a.iter().all(|e| e.answer_type == AnswerType::Entity));
    }

    #[test]
    fn small_bucket_falls_back_to_category() {
        let pool = pool();
        let (picked, warn) =
            sample_demonstrations(&pool, QuestionCategory::Equal, Some(AnswerType::Time), 3, 1, "q").unwrap();
        assert_eq!(picked.len(), 3);
        assert_eq!(warn.len(), 1);
        let (one, warn) =
            sample_demonstrations(&pool, QuestionCategory::FirstLast, Some(AnswerType::Time), 1, 1, "q").unwrap();
        assert_eq!(one[0].question, "fl");
        assert!(warn.is_empty());
        let err = sample_demonstrations(&pool, QuestionCategory::TimeJoin, None, 1, 1, "q").unwrap_err();
        assert_eq!(err.to_string(), "uncovered category Time-Join");
    }

    #[test]
    fn prompt_layout() {
        let demo = Example {
            question: "Q1?".into(),
            program: "Find<d></d><i>A</i>\nWhat<d>0</d><i></i>\n".into(),
            category: QuestionCategory::Equal,
            answer_type: AnswerType::Entity,
        };
        let p = Prompt::new(vec![demo], "Q2?");
        assert_eq!(
            render_prompt(&p),
            "### Instruction: Convert a natural language question to a KoPL query.\n\n### Input: Q1?\n### Response: Find<d></d><i>A</i>\nWhat<d>0</d><i></i>\n\n### Input: Q2?\n### Response:"
        );
        assert_eq!(prompt_query(&render_prompt(&p)), Some("Q2?"));
        let empty = Prompt::new(vec![], "Q?");
        assert_eq!(
            render_prompt(&empty),
            "### Instruction: Convert a natural language question to a KoPL query.\n\n### Input: Q?\n### Response:"
        );
    }

    #[test]
    fn completions_are_cut() {
        assert_eq!(
            cut_completion(" Find<d></d><i>A</i>\nWhat<d>0</d><i></i>\n\n### Input: x"),
            "Find<d></d><i>A</i>\nWhat<d>0</d><i></i>"
        );
        assert_eq!(cut_completion("Find<d></d><i>A</i>\n### Input: x"), "Find<d></d><i>A</i>");
        assert_eq!(cut_completion(""), "");
    }

    #[test]
    fn pool_rejects_bad_programs() {
        let good = r#"{"question":"q","program":"Find<d></d><i>A</i>","category":"Equal","answer_type":"entity"}"#;
        assert_eq!(load_example_pool(good.as_bytes()).unwrap().len(), 1);
        let bad = r#"{"question":"q","program":"Find<d>3</d><i>A</i>","category":"Equal","answer_type":"entity"}"#;
        assert!(load_example_pool(bad.as_bytes()).is_err());
    }
}
