//! Aligns entity and relation mentions in a draft with the store vocabulary.
//!
//! Retrieval narrows the vocabulary to the entities and relations of the
//! top-k fact sentences most similar to the question skeleton; fuzzy
//! matching then picks among those candidates. Relations are easy to
//! confuse, so the `r` best relation matches each yield a program copy.

mod similarity;
mod skeleton;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::Arc;

use crate::program::{Diagnostic, FunctionName, Program, ProgramNode};
use crate::store::{normalize_name, EntityId, RelationId, TkgStore};

pub use self::similarity::{char_trigrams, ProviderError, RemoteEmbedding, SimilarityProvider, TrigramTfIdf};
pub use self::skeleton::{
    build_fact_sentences, extract_question_skeleton, FactSentence, Skeleton, WordList, WordListError, WordLists,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkConfig {
    /// Fact sentences retrieved per question.
    pub k: usize,
    /// Entity alternatives per entity mention.
    pub top_e: usize,
    /// Relation alternatives, one program copy each.
    pub r: usize,
    /// Fuzzy score below which a mention stays verbatim.
    pub threshold: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self { k: 5, top_e: 1, r: 2, threshold: 0.5 }
    }
}

/// Whole-string token-set edit similarity in `[0, 1]`.
///
/// Both strings are case-folded, stripped of punctuation and reduced to their
/// sorted set of tokens before a normalized Levenshtein comparison.
pub fn fuzzy_similarity(a: &str, b: &str) -> f64 {
    let (ta, tb) = (token_set(a), token_set(b));
    if ta.is_empty() && tb.is_empty() {
        return if normalize_name(a) == normalize_name(b) { 1.0 } else { 0.0 };
    }
    strsim::normalized_levenshtein(&ta, &tb)
}

fn token_set(s: &str) -> String {
    let cleaned: String = s.chars().map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' }).collect();
    let mut tokens: Vec<&str> = cleaned.split_whitespace().collect();
    tokens.sort_unstable();
    tokens.dedup();
    tokens.join(" ")
}

/// Entities and relations retrieved for one question, best first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Candidates {
    pub entities: Vec<(EntityId, f64)>,
    pub relations: Vec<(RelationId, f64)>,
}

/// Top-k sentences by similarity (ties by text), merged into candidate sets
/// scored by the best sentence each appeared in. Zero-similarity sentences
/// contribute nothing.
pub fn retrieve_top_k(
    store: &TkgStore,
    skeleton: &Skeleton,
    sentences: &[FactSentence],
    corpus: &[String],
    k: usize,
    provider: &dyn SimilarityProvider,
) -> Result<Candidates, ProviderError> {
    if skeleton.is_empty() || sentences.is_empty() || k == 0 {
        return Ok(Candidates::default());
    }
    let scores = provider.similarities(skeleton.as_str(), corpus)?;
    let mut order: Vec<usize> = (0..sentences.len()).filter(|&i| scores[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| sentences[a].text.cmp(&sentences[b].text))
    });
    order.truncate(k);

    let mut entities: Vec<(EntityId, f64)> = Vec::new();
    let mut relations: Vec<(RelationId, f64)> = Vec::new();
    for i in order {
        let score = scores[i];
        for &e in &sentences[i].entities {
            if !entities.iter().any(|(x, _)| *x == e) {
                entities.push((e, score));
            }
        }
        if !relations.iter().any(|(x, _)| *x == sentences[i].relation) {
            relations.push((sentences[i].relation, score));
        }
    }
    // already in descending score order; break equal scores by name
    entities.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| store.entity_name(a.0).cmp(store.entity_name(b.0)))
    });
    relations.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| store.relation_name(a.0).cmp(store.relation_name(b.0)))
    });
    Ok(Candidates { entities, relations })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MentionKind {
    Entity,
    Event,
    Relation,
}

/// How one textual argument was linked.
#[derive(Debug, Clone, PartialEq)]
pub struct ArgLink {
    pub node: usize,
    pub arg: usize,
    pub kind: MentionKind,
    pub mention: String,
    /// Replacement options, best first, with fuzzy scores.
    pub options: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkResult {
    pub entity_candidates: Vec<(EntityId, f64)>,
    pub relation_candidates: Vec<(RelationId, f64)>,
    pub linked_drafts: Vec<Program>,
    pub arg_links: Vec<ArgLink>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Textual positions that name vocabulary items. Direction and qualifier
/// arguments are never touched here.
fn mention_positions(node: &ProgramNode) -> Vec<(usize, MentionKind)> {
    match node.function {
        FunctionName::Find => vec![(0, MentionKind::Entity)],
        FunctionName::Relate | FunctionName::QueryRelationQualifier => vec![(0, MentionKind::Relation)],
        FunctionName::QueryEventQualifier => vec![(0, MentionKind::Event)],
        _ => Vec::new(),
    }
}

fn rank_options<'a>(
    mention: &str,
    exact: Option<&'a str>,
    pool: impl Iterator<Item = &'a str>,
    threshold: f64,
    limit: usize,
) -> Vec<(String, f64)> {
    let mut scored: Vec<(usize, &str, f64)> =
        pool.enumerate().map(|(rank, name)| (rank, name, fuzzy_similarity(mention, name))).collect();
    scored.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    // the threshold decides whether the mention is linked at all; once it is,
    // alternatives are the next-best candidates whatever their score
    if exact.is_none() && scored.first().is_none_or(|(_, _, s)| *s < threshold) {
        return Vec::new();
    }
    let mut out: Vec<(String, f64)> = Vec::new();
    if let Some(name) = exact {
        out.push((name.to_string(), 1.0));
    }
    for (_, name, s) in scored {
        if !out.iter().any(|(n, _)| n == name) {
            out.push((name.to_string(), s));
        }
    }
    out.truncate(limit.max(1));
    out
}

/// Rewrites entity, event and relation mentions of `draft`.
///
/// Copies are the product of entity alternatives (`top_e`) and relation
/// alternatives (`r`), each bounded by the number of retrieved candidates.
/// A mention that already is an exact store name keeps that name as its
/// first option.
pub fn link_draft(store: &TkgStore, draft: &Program, candidates: &Candidates, config: &LinkConfig) -> LinkResult {
    let mut arg_links = Vec::new();
    let mut diagnostics = Vec::new();
    let entity_pool: Vec<&str> = candidates.entities.iter().map(|(e, _)| store.entity_name(*e)).collect();
    let relation_pool: Vec<&str> = candidates.relations.iter().map(|(r, _)| store.relation_name(*r)).collect();
    let event_pool: Vec<&str> = store.event_entities().map(|e| store.entity_name(e)).collect();

    for (i, node) in draft.nodes().iter().enumerate() {
        for (arg, kind) in mention_positions(node) {
            let Some(mention) = node.textual_args.get(arg) else { continue };
            let (exact, pool, limit) = match kind {
                MentionKind::Entity => {
                    (store.entity_id(mention).map(|e| store.entity_name(e)), &entity_pool, config.top_e)
                }
                MentionKind::Event => (
                    store.entity_id(mention).filter(|&e| store.is_event(e)).map(|e| store.entity_name(e)),
                    &event_pool,
                    config.top_e,
                ),
                MentionKind::Relation => {
                    (store.relation_id(mention).map(|r| store.relation_name(r)), &relation_pool, config.r)
                }
            };
            let options = rank_options(mention, exact, pool.iter().copied(), config.threshold, limit);
            if options.is_empty() {
                diagnostics.push(Diagnostic::warn(
                    None,
                    format!("node {i}: '{mention}' left unlinked (no candidate scores >= {})", config.threshold),
                ));
            }
            arg_links.push(ArgLink { node: i, arg, kind, mention: mention.clone(), options });
        }
    }

    let has = |kinds: &[MentionKind]| arg_links.iter().any(|l| kinds.contains(&l.kind));
    let entity_copies = if has(&[MentionKind::Entity, MentionKind::Event]) {
        config.top_e.min(candidates.entities.len()).max(1)
    } else {
        1
    };
    let relation_copies =
        if has(&[MentionKind::Relation]) { config.r.min(candidates.relations.len()).max(1) } else { 1 };

    let mut linked_drafts = Vec::with_capacity(entity_copies * relation_copies);
    for ei in 0..entity_copies {
        for ri in 0..relation_copies {
            let mut nodes = draft.nodes().to_vec();
            for link in &arg_links {
                if link.options.is_empty() {
                    continue;
                }
                let pick = if link.kind == MentionKind::Relation { ri } else { ei };
                let (name, _) = &link.options[pick.min(link.options.len() - 1)];
                nodes[link.node].textual_args[link.arg] = name.clone();
            }
            nodes.iter_mut().for_each(ProgramNode::fix_separator);
            linked_drafts.push(Program::new(nodes).expect("linking preserves structure"));
        }
    }

    LinkResult {
        entity_candidates: candidates.entities.clone(),
        relation_candidates: candidates.relations.clone(),
        linked_drafts,
        arg_links,
        diagnostics,
    }
}

/// Retrieval corpus for one store plus the linking configuration.
pub struct Linker {
    store: Arc<TkgStore>,
    sentences: Vec<FactSentence>,
    corpus: Vec<String>,
    provider: Arc<dyn SimilarityProvider>,
    word_lists: WordLists,
    config: LinkConfig,
}

impl Linker {
    pub fn new(
        store: Arc<TkgStore>,
        provider: Arc<dyn SimilarityProvider>,
        word_lists: WordLists,
        config: LinkConfig,
    ) -> Self {
        let sentences = build_fact_sentences(&store);
        let corpus = sentences.iter().map(|s| s.text.clone()).collect();
        Self { store, sentences, corpus, provider, word_lists, config }
    }

    pub fn with_defaults(store: Arc<TkgStore>) -> Self {
        Self::new(store, Arc::new(TrigramTfIdf::new()), WordLists::default(), LinkConfig::default())
    }

    pub fn config(&self) -> &LinkConfig {
        &self.config
    }

    pub fn sentences(&self) -> &[FactSentence] {
        &self.sentences
    }

    pub fn skeleton(&self, question: &str) -> Skeleton {
        extract_question_skeleton(question, &self.word_lists)
    }

    pub fn candidates(&self, question: &str) -> Result<Candidates, ProviderError> {
        retrieve_top_k(
            &self.store,
            &self.skeleton(question),
            &self.sentences,
            &self.corpus,
            self.config.k,
            self.provider.as_ref(),
        )
    }

    pub fn link(&self, question: &str, draft: &Program) -> Result<LinkResult, ProviderError> {
        let candidates = self.candidates(question)?;
        Ok(link_draft(&self.store, draft, &candidates, &self.config))
    }

    /// Candidate names, for debugging output.
    pub fn describe(&self, candidates: &Candidates) -> HashMap<&'static str, Vec<(String, f64)>> {
        let mut out = HashMap::new();
        out.insert(
            "entities",
            candidates.entities.iter().map(|(e, s)| (self.store.entity_name(*e).to_string(), *s)).collect(),
        );
        out.insert(
            "relations",
            candidates.relations.iter().map(|(r, s)| (self.store.relation_name(*r).to_string(), *s)).collect(),
        );
        out
    }
}
