//! Question → drafts → linked programs → (variants) → merged answers.

use std::collections::HashSet;
use std::sync::Arc;

use thiserror::Error;

use crate::expander::{enumerate_variants, execute_programs, MergedAnswers, DEFAULT_CAP};
use crate::linker::{LinkConfig, LinkResult, Linker, ProviderError, SimilarityProvider, TrigramTfIdf, WordLists};
use crate::llm::{
    generate_drafts, sample_any, sample_demonstrations, AnswerType, Example, LlmClient, LlmError, Prompt,
    QuestionCategory, UncoveredCategory,
};
use crate::program::{Draft, Program};
use crate::store::TkgStore;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub n_demos: usize,
    pub n_drafts: usize,
    pub seed: u64,
    pub link: LinkConfig,
    pub expand: bool,
    /// Variant cap per linked program when expansion is on.
    pub cap: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { n_demos: 6, n_drafts: 1, seed: 0, link: LinkConfig::default(), expand: false, cap: DEFAULT_CAP }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Uncovered(#[from] UncoveredCategory),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("fact retrieval failed: {0}")]
    Retrieval(#[from] ProviderError),
}

impl PipelineError {
    /// Failures of a remote service rather than of the inputs.
    pub fn is_upstream(&self) -> bool {
        !matches!(self, PipelineError::Uncovered(_))
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub drafts: Vec<Draft>,
    pub links: Vec<LinkResult>,
    /// Every executed program in execution order; `merged.outcomes` aligns with it.
    pub programs: Vec<Program>,
    pub merged: MergedAnswers,
    pub warnings: Vec<String>,
}

impl PipelineOutput {
    pub fn answers(&self) -> Vec<String> {
        self.merged.answers()
    }
}

pub struct Pipeline {
    store: Arc<TkgStore>,
    linker: Linker,
    pool: Vec<Example>,
    config: PipelineConfig,
}

impl Pipeline {
    pub fn new(
        store: Arc<TkgStore>,
        pool: Vec<Example>,
        provider: Arc<dyn SimilarityProvider>,
        word_lists: WordLists,
        config: PipelineConfig,
    ) -> Self {
        let linker = Linker::new(Arc::clone(&store), provider, word_lists, config.link);
        Self { store, linker, pool, config }
    }

    pub fn with_defaults(store: Arc<TkgStore>, pool: Vec<Example>, config: PipelineConfig) -> Self {
        Self::new(store, pool, Arc::new(TrigramTfIdf::new()), WordLists::default(), config)
    }

    pub fn store(&self) -> &TkgStore {
        &self.store
    }

    pub fn linker(&self) -> &Linker {
        &self.linker
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Same pipeline with expansion switched on or off.
    pub fn set_expand(&mut self, expand: bool) {
        self.config.expand = expand;
    }

    fn demonstrations(
        &self,
        question: &str,
        category: Option<QuestionCategory>,
        answer_type: Option<AnswerType>,
        warnings: &mut Vec<String>,
    ) -> Result<Vec<Example>, UncoveredCategory> {
        if self.pool.is_empty() || self.config.n_demos == 0 {
            return Ok(Vec::new());
        }
        match category {
            Some(c) => {
                let (demos, diags) =
                    sample_demonstrations(&self.pool, c, answer_type, self.config.n_demos, self.config.seed, question)?;
                warnings.extend(diags.into_iter().map(|d| d.message));
                Ok(demos)
            }
            None => Ok(sample_any(&self.pool, self.config.n_demos, self.config.seed, question)),
        }
    }

    pub fn answer(
        &self,
        client: &dyn LlmClient,
        question: &str,
        category: Option<QuestionCategory>,
        answer_type: Option<AnswerType>,
    ) -> Result<PipelineOutput, PipelineError> {
        let mut warnings = Vec::new();
        let demos = self.demonstrations(question, category, answer_type, &mut warnings)?;
        let drafts = generate_drafts(client, &Prompt::new(demos, question), self.config.n_drafts.max(1))?;

        let mut links = Vec::new();
        let mut programs: Vec<Program> = Vec::new();
        let mut seen: HashSet<Program> = HashSet::new();
        for (i, draft) in drafts.iter().enumerate() {
            for d in &draft.diagnostics {
                warnings.push(format!("draft {i}: {d}"));
            }
            let Some(parsed) = &draft.parsed else { continue };
            let link = self.linker.link(question, parsed)?;
            warnings.extend(link.diagnostics.iter().map(|d| format!("draft {i}: {d}")));
            for linked in &link.linked_drafts {
                let candidates = if self.config.expand {
                    enumerate_variants(linked, self.config.cap).variants
                } else {
                    vec![linked.clone()]
                };
                for p in candidates {
                    if seen.insert(p.clone()) {
                        programs.push(p);
                    }
                }
            }
            links.push(link);
        }
        if programs.is_empty() {
            warnings.push("no executable program for question".to_string());
        }
        let merged = execute_programs(&self.store, &programs);
        Ok(PipelineOutput { drafts, links, programs, merged, warnings })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::OracleMock;
    use crate::store::{load_quads, QuadFormat};

    fn store() -> Arc<TkgStore> {
        Arc::new(
            load_quads(
                "Barack Obama\tMake a visit\tJordan\t2013-03-22\nBarack Obama\tMake a visit\tIsrael\t2013-03-20\nXi Jinping\tMake an appeal or request\tJordan\t2014-01-01\n"
                    .as_bytes(),
                QuadFormat::TsvPoint,
            )
            .unwrap(),
        )
    }

    #[test]
    fn noisy_draft_is_linked_and_answered() {
        let q = "Which countries did Obama visit?";
        let mock = OracleMock::new()
            .with(q, "Find<d></d><i>barack obama</i>\nRelate<d>0</d><i>make a visit,forward</i>\nWhat<d>1</d><i></i>");
        let pipeline = Pipeline::with_defaults(store(), vec![], PipelineConfig::default());
        let out = pipeline.answer(&mock, q, None, None).unwrap();
        assert_eq!(out.answers(), vec!["Jordan", "Israel"]);
        // the top-5 sentences all mention the visit relation, so one copy
        assert_eq!(out.programs.len(), 1);
    }

    #[test]
    fn unknown_question_yields_no_answers() {
        let pipeline = Pipeline::with_defaults(store(), vec![], PipelineConfig::default());
        let out = pipeline.answer(&OracleMock::new(), "?", None, None).unwrap();
        assert!(out.answers().is_empty());
        assert!(out.warnings.iter().any(|w| w.contains("empty draft")));
    }

    #[test]
    fn expansion_adds_direction_variants() {
        let q = "Who visited Jordan?";
        let mock = OracleMock::new()
            .with(q, "Find<d></d><i>Jordan</i>\nRelate<d>0</d><i>Make a visit,forward</i>\nWhat<d>1</d><i></i>");
        let mut pipeline = Pipeline::with_defaults(store(), vec![], PipelineConfig::default());
        let plain = pipeline.answer(&mock, q, None, None).unwrap();
        assert!(!plain.answers().contains(&"Barack Obama".to_string()));
        pipeline.set_expand(true);
        let expanded = pipeline.answer(&mock, q, None, None).unwrap();
        assert!(expanded.answers().contains(&"Barack Obama".to_string()));
    }
}
