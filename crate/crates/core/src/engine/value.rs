use std::collections::HashSet;

use crate::engine::signature::ValueKind;
use crate::store::{EntityId, Fact, Focus, TkgStore};
use crate::time::TimeValue;

/// Intermediate result flowing between program nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    EntitySet(Vec<EntityId>),
    FactSet(Vec<Fact>),
    TimeList(Vec<TimeValue>),
    AnswerList(Vec<String>),
}

impl Value {
    pub fn kind(&self) -> ValueKind {
        match self {
            Value::EntitySet(_) => ValueKind::EntitySet,
            Value::FactSet(_) => ValueKind::FactSet,
            Value::TimeList(_) => ValueKind::TimeList,
            Value::AnswerList(_) => ValueKind::AnswerList,
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Value::EntitySet(v) => v.is_empty(),
            Value::FactSet(v) => v.is_empty(),
            Value::TimeList(v) => v.is_empty(),
            Value::AnswerList(v) => v.is_empty(),
        }
    }

    /// Renders to answer strings, deduplicated in first-occurrence order.
    pub fn into_answers(self, store: &TkgStore) -> Vec<String> {
        let rendered: Vec<String> = match self {
            Value::EntitySet(ids) => ids.into_iter().map(|e| store.entity_name(e).to_string()).collect(),
            Value::FactSet(facts) => facts.iter().map(|f| render_fact(store, f)).collect(),
            Value::TimeList(times) => times.iter().map(TimeValue::to_string).collect(),
            Value::AnswerList(a) => a,
        };
        dedup_keep_first(rendered)
    }
}

pub(crate) fn render_fact(store: &TkgStore, fact: &Fact) -> String {
    match fact.focus {
        Focus::Subject => store.entity_name(fact.subject).to_string(),
        Focus::Object => store.entity_name(fact.object).to_string(),
        Focus::Whole => format!(
            "({}, {}, {}, {})",
            store.entity_name(fact.subject),
            store.relation_name(fact.relation),
            store.entity_name(fact.object),
            fact.time
        ),
    }
}

pub(crate) fn dedup_keep_first<T: Eq + std::hash::Hash + Clone>(items: Vec<T>) -> Vec<T> {
    let mut seen = HashSet::with_capacity(items.len());
    items.into_iter().filter(|x| seen.insert(x.clone())).collect()
}
