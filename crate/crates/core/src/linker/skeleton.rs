//! Skeleton sentences for retrieval: questions stripped of question, stop
//! and temporal words; facts reduced to triples and entity-relation tuples.

use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;

use regex::Regex;

use crate::store::{EntityId, RelationId, TkgStore};

const QUESTION_WORDS: &[&str] = &["who", "whom", "whose", "what", "which", "when", "where", "why", "how"];

const STOP_WORDS: &[&str] = &[
    "a", "an", "the", "in", "on", "at", "of", "to", "for", "with", "by", "from", "as", "and", "or", "is", "was",
    "were", "are", "be", "been", "being", "did", "do", "does", "has", "have", "had", "that", "this", "these", "those",
    "it", "its", "their", "his", "her", "they", "he", "she", "them", "him", "i", "you", "we", "there", "any", "some",
    "would", "could", "should", "can", "will",
];

const TEMPORAL_WORDS: &[&str] = &[
    "before",
    "after",
    "first",
    "last",
    "same",
    "month",
    "year",
    "day",
    "date",
    "time",
    "during",
    "while",
    "since",
    "until",
    "earliest",
    "latest",
    "prior",
    "previous",
    "next",
    "followed",
    "following",
    "then",
];

const DATE_PATTERN: &str = r"\d{4}(-\d{2}(-\d{2})?)?";

/// One configured word list: literal tokens plus anchored regexes.
#[derive(Debug, Clone, Default)]
pub struct WordList {
    words: HashSet<String>,
    patterns: Vec<Regex>,
}

impl WordList {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self { words: words.into_iter().map(|w| w.as_ref().to_lowercase()).collect(), patterns: Vec::new() }
    }

    /// Adds a pattern that must match a whole token.
    pub fn with_pattern(mut self, pattern: &str) -> Result<Self, regex::Error> {
        self.patterns.push(Regex::new(&format!("^(?:{pattern})$"))?);
        Ok(self)
    }

    /// One token per line; `re:` marks a regex; blank lines and `#` comments skipped.
    pub fn parse<R: BufRead>(source: R) -> Result<Self, WordListError> {
        let mut list = WordList::default();
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.strip_prefix("re:") {
                Some(pattern) => {
                    list = list
                        .with_pattern(pattern.trim())
                        .map_err(|e| WordListError::Regex { line: i + 1, message: e.to_string() })?
                }
                None => {
                    list.words.insert(line.to_lowercase());
                }
            }
        }
        Ok(list)
    }

    pub fn load(path: &Path) -> Result<Self, WordListError> {
        let file = std::fs::File::open(path)?;
        Self::parse(std::io::BufReader::new(file))
    }

    pub fn matches(&self, token: &str) -> bool {
        self.words.contains(&token.to_lowercase()) || self.patterns.iter().any(|p| p.is_match(token))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WordListError {
    #[error("line {line}: bad regex: {message}")]
    Regex { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct WordLists {
    pub question: WordList,
    pub stop: WordList,
    pub temporal: WordList,
}

impl Default for WordLists {
    fn default() -> Self {
        Self {
            question: WordList::from_words(QUESTION_WORDS),
            stop: WordList::from_words(STOP_WORDS),
            temporal: WordList::from_words(TEMPORAL_WORDS).with_pattern(DATE_PATTERN).expect("valid built-in pattern"),
        }
    }
}

impl WordLists {
    fn removes(&self, token: &str) -> bool {
        self.question.matches(token) || self.stop.matches(token) || self.temporal.matches(token)
    }
}

/// A space-joined sentence of core entity and relation tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Skeleton(pub String);

impl Skeleton {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn strip_edges(token: &str) -> &str {
    token.trim_matches(|c: char| !c.is_alphanumeric())
}

pub fn extract_question_skeleton(question: &str, lists: &WordLists) -> Skeleton {
    let kept: Vec<&str> =
        question.split_whitespace().map(strip_edges).filter(|t| !t.is_empty() && !lists.removes(t)).collect();
    Skeleton(kept.join(" "))
}

/// A retrievable fact sentence and the vocabulary it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactSentence {
    pub text: String,
    pub entities: Vec<EntityId>,
    pub relation: RelationId,
}

/// Per distinct `(s, r, o)`: the triple sentence and both tuple sentences.
pub fn build_fact_sentences(store: &TkgStore) -> Vec<FactSentence> {
    let mut seen_triples = HashSet::new();
    let mut seen_sentences = HashSet::new();
    let mut out = Vec::new();
    for fact in store.facts() {
        if !seen_triples.insert((fact.subject, fact.relation, fact.object)) {
            continue;
        }
        let s = store.entity_name(fact.subject);
        let r = store.relation_name(fact.relation);
        let o = store.entity_name(fact.object);
        let candidates = [
            (format!("{s} {r} {o}"), vec![fact.subject, fact.object]),
            (format!("{s} {r}"), vec![fact.subject]),
            (format!("{r} {o}"), vec![fact.object]),
        ];
        for (text, entities) in candidates {
            if seen_sentences.insert((text.clone(), entities.clone(), fact.relation)) {
                out.push(FactSentence { text, entities, relation: fact.relation });
            }
        }
    }
    out
}
