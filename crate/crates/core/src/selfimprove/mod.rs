//! Self-improvement with weak supervision: programs are generated for
//! training questions, kept when their answers hit the gold answers, used
//! to fine-tune the generator, and the remaining questions are retried.

mod trainer;

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{AnswerType, LlmClient, QuestionCategory, INSTRUCTION};
use crate::pipeline::Pipeline;
use crate::program::{parse_draft, serialize_draft, Program};

pub use self::trainer::{CommandTrainer, FineTuneHook, NoopTrainer, SimulatedImprovingTrainer, TrainerError};

/// A question with its gold answers (JSON lines
/// `{"question", "category", "answers", "answer_type"?}`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingItem {
    pub question: String,
    pub category: QuestionCategory,
    #[serde(rename = "answers")]
    pub gold_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_type: Option<AnswerType>,
}

impl TrainingItem {
    pub fn gold_contains(&self, answer: &str) -> bool {
        self.gold_answers.iter().any(|g| g == answer)
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn load_items<R: BufRead>(source: R) -> Result<Vec<TrainingItem>, DatasetError> {
    let mut items = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: TrainingItem =
            serde_json::from_str(&line).map_err(|e| DatasetError::Invalid { line: i + 1, message: e.to_string() })?;
        if item.gold_answers.is_empty() {
            return Err(DatasetError::Invalid { line: i + 1, message: "no gold answers".into() });
        }
        items.push(item);
    }
    Ok(items)
}

/// All candidate programs generated for one question and what each returned.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionRun {
    pub question: String,
    pub programs: Vec<Program>,
    /// Aligned with `programs`; failed executions are `Err(message)`.
    pub results: Vec<Result<Vec<String>, String>>,
    pub diagnostics: Vec<String>,
}

/// Runs the full pipeline on every item (in parallel); output keeps input
/// order. A failing question yields a run without programs.
///
/// The pipeline is expected to have expansion switched on so that enough
/// candidates exist for filtering.
pub fn gen_prog(items: &[TrainingItem], pipeline: &Pipeline, client: &dyn LlmClient) -> Vec<QuestionRun> {
    if !pipeline.config().expand {
        log::warn!("generating training programs without expansion");
    }
    items
        .par_iter()
        .map(|item| match pipeline.answer(client, &item.question, Some(item.category), item.answer_type) {
            Ok(out) => QuestionRun {
                question: item.question.clone(),
                results: out.merged.outcomes.iter().map(|o| o.result.clone().map_err(|e| e.to_string())).collect(),
                programs: out.programs,
                diagnostics: out.warnings,
            },
            Err(e) => QuestionRun {
                question: item.question.clone(),
                programs: Vec::new(),
                results: Vec::new(),
                diagnostics: vec![e.to_string()],
            },
        })
        .collect()
}

/// Accepted (question, program) pairs and the questions without one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckOutcome {
    pub correct: Vec<(String, Program)>,
    pub incorrect: Vec<String>,
}

/// Keeps, per question, the first program whose answers meet the gold set.
pub fn check_prog(runs: &[QuestionRun], items: &[TrainingItem]) -> CheckOutcome {
    let mut out = CheckOutcome::default();
    for run in runs {
        let item = items.iter().find(|i| i.question == run.question);
        let hit = item.and_then(|item| {
            run.programs.iter().zip(&run.results).find_map(|(program, result)| match result {
                Ok(answers) if answers.iter().any(|a| item.gold_contains(a)) => Some(program.clone()),
                _ => None,
            })
        });
        match hit {
            Some(program) => out.correct.push((run.question.clone(), program)),
            None => out.incorrect.push(run.question.clone()),
        }
    }
    out
}

/// One instruction-tuning record in the fine-tuning template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineTuneRecord {
    pub instruction: String,
    pub input: String,
    pub response: String,
}

impl FineTuneRecord {
    pub fn new(question: impl Into<String>, program_text: impl Into<String>) -> Self {
        Self { instruction: INSTRUCTION.to_string(), input: question.into(), response: program_text.into() }
    }

    /// The record as training text.
    pub fn render(&self) -> String {
        format!("### Instruction: {}\n\n### Input: {}\n### Response: {}", self.instruction, self.input, self.response)
    }
}

/// JSON-lines export, one record per pair in the given order. Programs
/// whose text does not parse back identically are skipped with a warning.
pub fn export_finetune(correct: &[(String, Program)]) -> (Vec<FineTuneRecord>, String) {
    let mut records = Vec::new();
    let mut out = String::new();
    for (question, program) in correct {
        let text = serialize_draft(program);
        let reparsed = parse_draft(&text);
        if reparsed.has_errors() || reparsed.parsed.as_ref() != Some(program) {
            log::warn!("skipping unserializable program for '{question}'");
            continue;
        }
        let record = FineTuneRecord::new(question.clone(), text);
        out.push_str(&serde_json::to_string(&record).expect("records serialize"));
        out.push('\n');
        records.push(record);
    }
    (records, out)
}

pub fn import_finetune<R: BufRead>(source: R) -> Result<Vec<FineTuneRecord>, DatasetError> {
    let mut records = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line).map_err(|e| DatasetError::Invalid { line: i + 1, message: e.to_string() })?,
        );
    }
    Ok(records)
}

/// A seeded sample of accepted pairs for manual review of spurious programs.
pub fn audit_sample(correct: &[(String, Program)], n: usize, seed: u64) -> Vec<FineTuneRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, correct.len(), n.min(correct.len())).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| FineTuneRecord::new(correct[i].0.clone(), serialize_draft(&correct[i].1))).collect()
}

/// 1 when one of the first `k` ranked answers is gold.
pub fn hits_at_k(ranked: &[String], gold: &[String], k: usize) -> u8 {
    u8::from(ranked.iter().take(k).any(|a| gold.contains(a)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationState {
    pub round: usize,
    /// Accepted this round.
    pub correct: Vec<(String, Program)>,
    /// Still unsolved after this round.
    pub incorrect: Vec<String>,
    pub threshold: usize,
    pub max_rounds: usize,
}

impl IterationState {
    /// Whether another fine-tuning round is due.
    pub fn should_continue(&self) -> bool {
        self.correct.len() >= self.threshold && self.round < self.max_rounds && !self.incorrect.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum SelfImproveError {
    #[error("fine-tuning failed in round {round}: {source}")]
    Trainer { round: usize, source: TrainerError },
    #[error("cannot write export: {0}")]
    Export(#[from] std::io::Error),
}

/// Per-round summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoundReport {
    pub round: usize,
    pub correct: usize,
    pub incorrect: usize,
    pub export: Option<PathBuf>,
    /// Records new in this round's export (after de-duplication).
    pub records: usize,
}

/// Drives the rounds; owns the dataset, the pipeline and the export location.
pub struct SelfImprover<'a> {
    pub items: &'a [TrainingItem],
    pub pipeline: &'a Pipeline,
    pub workdir: Option<&'a Path>,
    exported: HashSet<(String, String)>,
    pub records: Vec<FineTuneRecord>,
}

impl<'a> SelfImprover<'a> {
    pub fn new(items: &'a [TrainingItem], pipeline: &'a Pipeline, workdir: Option<&'a Path>) -> Self {
        Self { items, pipeline, workdir, exported: HashSet::new(), records: Vec::new() }
    }

    /// Round 0: generate and check every question with the initial client.
    pub fn initial(&self, client: &dyn LlmClient, threshold: usize, max_rounds: usize) -> IterationState {
        let runs = gen_prog(self.items, self.pipeline, client);
        let checked = check_prog(&runs, self.items);
        IterationState { round: 0, correct: checked.correct, incorrect: checked.incorrect, threshold, max_rounds }
    }

    /// Exports this round's accepted pairs, skipping ones already exported.
    fn export(&mut self, state: &IterationState) -> Result<(Vec<FineTuneRecord>, Option<PathBuf>), SelfImproveError> {
        let fresh: Vec<(String, Program)> = state
            .correct
            .iter()
            .filter(|(q, p)| !self.exported.contains(&(q.clone(), serialize_draft(p))))
            .cloned()
            .collect();
        let (records, text) = export_finetune(&fresh);
        let path = match self.workdir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                let path = dir.join(format!("finetune_round{}.jsonl", state.round));
                fs::File::create(&path)?.write_all(text.as_bytes())?;
                Some(path)
            }
            None => None,
        };
        Ok((records, path))
    }

    /// Fine-tunes on `state.correct` and retries `state.incorrect` with the
    /// new client. On trainer failure nothing changes.
    pub fn run_iteration(
        &mut self,
        state: &IterationState,
        trainer: &mut dyn FineTuneHook,
    ) -> Result<(IterationState, RoundReport), SelfImproveError> {
        let (records, export) = self.export(state)?;
        let client = trainer
            .fine_tune(&records, export.as_deref())
            .map_err(|source| SelfImproveError::Trainer { round: state.round, source })?;
        let report = RoundReport {
            round: state.round,
            correct: state.correct.len(),
            incorrect: state.incorrect.len(),
            export,
            records: records.len(),
        };
        for r in &records {
            self.exported.insert((r.input.clone(), r.response.clone()));
        }
        self.records.extend(records);

        let retry: Vec<TrainingItem> =
            self.items.iter().filter(|i| state.incorrect.contains(&i.question)).cloned().collect();
        let runs = gen_prog(&retry, self.pipeline, client.as_ref());
        let checked = check_prog(&runs, &retry);
        let next = IterationState {
            round: state.round + 1,
            correct: checked.correct,
            incorrect: checked.incorrect,
            threshold: state.threshold,
            max_rounds: state.max_rounds,
        };
        Ok((next, report))
    }

    /// The whole loop; also returns the final state (whose accepted pairs
    /// are exported too, without another fine-tuning call).
    pub fn run(
        &mut self,
        client: &dyn LlmClient,
        trainer: &mut dyn FineTuneHook,
        threshold: usize,
        max_rounds: usize,
    ) -> Result<(Vec<RoundReport>, IterationState), SelfImproveError> {
        let mut state = self.initial(client, threshold, max_rounds);
        let mut reports = Vec::new();
        while state.should_continue() {
            let (next, report) = self.run_iteration(&state, trainer)?;
            reports.push(report);
            state = next;
        }
        let (records, export) = self.export(&state)?;
        reports.push(RoundReport {
            round: state.round,
            correct: state.correct.len(),
            incorrect: state.incorrect.len(),
            export,
            records: records.len(),
        });
        for r in &records {
            self.exported.insert((r.input.clone(), r.response.clone()));
        }
        self.records.extend(records);
        Ok((reports, state))
    }
}
