//! Draft generation: few-shot prompts sent to a completion service (or to a
//! deterministic in-process mock) and parsed into drafts.

mod prompt;

use std::collections::HashMap;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::program::{parse_draft, Draft};

pub use self::prompt::{
    cut_completion, load_example_pool, prompt_query, render_prompt, sample_any, sample_demonstrations, AnswerType,
    Example, PoolError, Prompt, QuestionCategory, UncoveredCategory, INSTRUCTION,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("completion service unreachable after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("completion service rejected the request: {0}")]
    Rejected(String),
    #[error("malformed completion response: {0}")]
    BadResponse(String),
}

/// Anything that turns a prompt into `n` completions.
pub trait LlmClient: Send + Sync {
    fn complete(&self, prompt: &str, n: usize) -> Result<Vec<String>, LlmError>;
}

impl<T: LlmClient + ?Sized> LlmClient for Arc<T> {
    fn complete(&self, prompt: &str, n: usize) -> Result<Vec<String>, LlmError> {
        (**self).complete(prompt, n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpClientConfig {
    pub endpoint: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub attempts: usize,
    /// Delay before the first retry; doubled on every further retry.
    pub backoff: Duration,
    pub timeout: Duration,
}

impl HttpClientConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            max_tokens: 512,
            temperature: 0.0,
            attempts: 3,
            backoff: Duration::from_millis(250),
            timeout: Duration::from_secs(120),
        }
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    n: usize,
    max_tokens: u32,
    temperature: f64,
}

#[derive(Deserialize)]
struct CompletionResponse {
    completions: Vec<String>,
}

/// JSON-over-HTTP completion client:
/// `{"prompt", "n", "max_tokens", "temperature"}` → `{"completions": [...]}`.
pub struct HttpLlmClient {
    config: HttpClientConfig,
    agent: ureq::Agent,
}

impl HttpLlmClient {
    pub fn new(config: HttpClientConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    fn attempt(&self, prompt: &str, n: usize) -> Result<Vec<String>, (bool, LlmError)> {
        let request =
            CompletionRequest { prompt, n, max_tokens: self.config.max_tokens, temperature: self.config.temperature };
        let mut resp = self
            .agent
            .post(&self.config.endpoint)
            .send_json(&request)
            .map_err(|e| (true, LlmError::Transport { attempts: 1, message: e.to_string() }))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err((true, LlmError::Transport { attempts: 1, message: format!("HTTP {status}") }));
        }
        if status != 200 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err((false, LlmError::Rejected(format!("HTTP {status}: {body}"))));
        }
        let body: CompletionResponse =
            resp.body_mut().read_json().map_err(|e| (false, LlmError::BadResponse(e.to_string())))?;
        Ok(body.completions)
    }
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, prompt: &str, n: usize) -> Result<Vec<String>, LlmError> {
        let attempts = self.config.attempts.max(1);
        let mut delay = self.config.backoff;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.attempt(prompt, n) {
                Ok(completions) => return Ok(completions),
                Err((false, e)) => return Err(e),
                Err((true, e)) => {
                    log::warn!("completion attempt {attempt}/{attempts} failed: {e}");
                    last = match e {
                        LlmError::Transport { message, .. } => message,
                        other => other.to_string(),
                    };
                    if attempt < attempts {
                        thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(LlmError::Transport { attempts, message: last })
    }
}

/// Deterministic stand-in for a model: looks up the prompt's query question
/// in a table of canned completions. Unknown questions get an empty
/// completion. Request `i` of a batch gets canned variant `i` (cycling).
#[derive(Debug, Clone, Default)]
pub struct OracleMock {
    table: HashMap<String, Vec<String>>,
}

impl OracleMock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, question: impl Into<String>, completion: impl Into<String>) {
        self.table.entry(question.into()).or_default().push(completion.into());
    }

    pub fn with(mut self, question: impl Into<String>, completion: impl Into<String>) -> Self {
        self.insert(question, completion);
        self
    }

    pub fn knows(&self, question: &str) -> bool {
        self.table.contains_key(question)
    }

    pub fn questions(&self) -> impl Iterator<Item = &str> {
        self.table.keys().map(String::as_str)
    }

    pub fn completions(&self, question: &str) -> &[String] {
        self.table.get(question).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Reads JSON lines `{"question": ..., "program": ...}`; repeated
    /// questions add further canned variants.
    pub fn load<R: std::io::BufRead>(source: R) -> Result<Self, PoolError> {
        #[derive(Deserialize)]
        struct Entry {
            question: String,
            program: String,
        }
        let mut mock = Self::new();
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: Entry =
                serde_json::from_str(&line).map_err(|e| PoolError::Invalid { line: i + 1, message: e.to_string() })?;
            mock.insert(entry.question, entry.program);
        }
        Ok(mock)
    }
}

impl LlmClient for OracleMock {
    fn complete(&self, prompt: &str, n: usize) -> Result<Vec<String>, LlmError> {
        let canned = prompt_query(prompt).and_then(|q| self.table.get(q.trim()));
        Ok((0..n)
            .map(|i| match canned {
                Some(variants) => format!(" {}\n\n### Input:", variants[i % variants.len()]),
                None => String::new(),
            })
            .collect())
    }
}

/// Requests `n_drafts` completions for `prompt` and parses each one.
pub fn generate_drafts(client: &dyn LlmClient, prompt: &Prompt, n_drafts: usize) -> Result<Vec<Draft>, LlmError> {
    let rendered = render_prompt(prompt);
    let completions = client.complete(&rendered, n_drafts)?;
    if completions.len() != n_drafts {
        log::warn!("asked for {n_drafts} completions, got {}", completions.len());
    }
    Ok(completions.iter().map(|c| parse_draft(cut_completion(c))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const EQUAL_MULTI: &str = "Find<d></d><i>Men (South Africa)</i>\nRelate<d>0</d><i>Use unconventional violence,forward</i>\nFilterRange<d>1</d><i>2014</i>\nFilterFirstEvent<d>2</d><i></i>";

    #[test]
    fn mock_returns_canned_program() {
        let q = "In 2014, against whom did the men of South Africa use unconventional violence for the first time?";
        let mock = OracleMock::new().with(q, EQUAL_MULTI);
        let drafts = generate_drafts(&mock, &Prompt::new(vec![], q), 1).unwrap();
        assert_eq!(drafts.len(), 1);
        assert!(!drafts[0].has_errors());
        assert_eq!(drafts[0].parsed.as_ref().unwrap().to_string(), EQUAL_MULTI);
    }

    #[test]
    fn unknown_question_gives_empty_draft() {
        let drafts = generate_drafts(&OracleMock::new(), &Prompt::new(vec![], "?"), 1).unwrap();
        assert_eq!(drafts[0].errors().next().unwrap().message, "empty draft");
    }

    #[test]
    fn variants_come_back_in_request_order() {
        let mock = OracleMock::new()
            .with("q", "Find<d></d><i>A</i>")
            .with("q", "Find<d></d><i>B</i>")
            .with("q", "Find<d></d><i>C</i>");
        let drafts = generate_drafts(&mock, &Prompt::new(vec![], "q"), 3).unwrap();
        let names: Vec<String> =
            drafts.iter().map(|d| d.parsed.as_ref().unwrap().nodes()[0].textual_args[0].clone()).collect();
        assert_eq!(names, vec!["A", "B", "C"]);
    }

    #[test]
    fn mock_file_format() {
        let src = "{\"question\":\"q\",\"program\":\"Find<d></d><i>A</i>\"}\n\n";
        let mock = OracleMock::load(src.as_bytes()).unwrap();
        assert!(mock.knows("q"));
        assert!(OracleMock::load("nope".as_bytes()).is_err());
    }

    #[test]
    fn http_transport_failure_after_retries() {
        let mut config = HttpClientConfig::new("http://127.0.0.1:9/complete");
        config.attempts = 2;
        config.backoff = Duration::from_millis(1);
        config.timeout = Duration::from_millis(200);
        let err = HttpLlmClient::new(config).complete("p", 1).unwrap_err();
        assert!(matches!(err, LlmError::Transport { attempts: 2, .. }), "{err}");
    }
}
