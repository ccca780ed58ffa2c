//! Hits@k over a labelled question set, broken down by question category
//! and answer type.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::llm::{AnswerType, LlmClient, QuestionCategory};
use crate::pipeline::{Pipeline, PipelineError};
use crate::selfimprove::{hits_at_k, TrainingItem};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty test set")]
    Empty,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("question '{question}': {source}")]
    Pipeline { question: String, source: PipelineError },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub category: String,
    pub answer_type: String,
    pub questions: usize,
    /// Hits@k per requested k, in the order of `EvalReport::ks`.
    pub hits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerQuestion {
    pub question: String,
    pub answers: Vec<String>,
    pub hits: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub rows: Vec<EvalRow>,
    pub overall: EvalRow,
    pub questions: Vec<PerQuestion>,
}

impl EvalReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("category\tanswer_type\tquestions");
        for k in &self.ks {
            let _ = write!(out, "\thits@{k}");
        }
        out.push('\n');
        for row in self.rows.iter().chain(std::iter::once(&self.overall)) {
            let _ = write!(out, "{}\t{}\t{}", row.category, row.answer_type, row.questions);
            for h in &row.hits {
                let _ = write!(out, "\t{h:.3}");
            }
            out.push('\n');
        }
        out
    }
}

/// Parses a comma-separated list of k values such as `1,10`.
pub fn parse_ks(text: &str) -> Result<Vec<usize>, String> {
    let ks: Vec<usize> = text
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("bad k '{}': {e}", t.trim())))
        .collect::<Result<_, _>>()?;
    if ks.contains(&0) {
        return Err("k must be at least 1".into());
    }
    Ok(ks)
}

fn row(category: String, answer_type: String, hits: &[&[u8]], ks: usize) -> EvalRow {
    let n = hits.len();
    EvalRow {
        category,
        answer_type,
        questions: n,
        hits: (0..ks)
            .map(|j| if n == 0 { 0.0 } else { hits.iter().map(|h| f64::from(h[j])).sum::<f64>() / n as f64 })
            .collect(),
    }
}

fn type_label(t: Option<AnswerType>) -> String {
    t.map_or_else(|| "-".to_string(), |t| t.to_string())
}

pub fn evaluate(
    pipeline: &Pipeline,
    client: &dyn LlmClient,
    items: &[TrainingItem],
    ks: &[usize],
) -> Result<EvalReport, EvalError> {
    if items.is_empty() {
        return Err(EvalError::Empty);
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(EvalError::ZeroK);
    }
    let questions: Vec<PerQuestion> = items
        .par_iter()
        .map(|item| {
            let out = pipeline
                .answer(client, &item.question, Some(item.category), item.answer_type)
                .map_err(|source| EvalError::Pipeline { question: item.question.clone(), source })?;
            let answers = out.answers();
            let hits = ks.iter().map(|&k| hits_at_k(&answers, &item.gold_answers, k)).collect();
            Ok(PerQuestion { question: item.question.clone(), answers, hits })
        })
        .collect::<Result<_, EvalError>>()?;

    let mut groups: BTreeMap<(QuestionCategory, Option<AnswerType>), Vec<&[u8]>> = BTreeMap::new();
    for (item, q) in items.iter().zip(&questions) {
        groups.entry((item.category, item.answer_type)).or_default().push(&q.hits);
    }
    let rows = groups.into_iter().map(|((c, t), hits)| row(c.to_string(), type_label(t), &hits, ks.len())).collect();
    let all: Vec<&[u8]> = questions.iter().map(|q| q.hits.as_slice()).collect();
    let overall = row("Overall".into(), "-".into(), &all, ks.len());
    Ok(EvalReport { ks: ks.to_vec(), rows, overall, questions })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_lists() {
        assert_eq!(parse_ks("1,10").unwrap(), vec![1, 10]);
        assert_eq!(parse_ks(" 3 ").unwrap(), vec![3]);
        assert!(parse_ks("0").is_err());
        assert!(parse_ks("1,x").is_err());
    }

    #[test]
    fn rows_average_hits() {
        let h1: &[u8] = &[1, 1];
        let h2: &[u8] = &[0, 1];
        let r = row("Equal".into(), "entity".into(), &[h1, h2], 2);
        assert_eq!(r.hits, vec![0.5, 1.0]);
        assert_eq!(r.questions, 2);
    }
}
