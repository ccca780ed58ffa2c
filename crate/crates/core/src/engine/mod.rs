//! Program interpreter: base KoPL functions plus the temporal operators.
//!
//! Temporal comparisons expand every time to its day span. Before/after are
//! strict: a fact is before a bound only when its whole span ends before the
//! bound's span begins. Open intervals run to the store horizon.

pub mod signature;
mod value;

use thiserror::Error;

use crate::program::{FunctionName, Program, ProgramError};
use crate::store::{Direction, EntityId, Fact, TkgStore};
use crate::time::{Granularity, Span, TimeValue};

use self::signature::{signature, KindSet, ValueKind};
pub(crate) use self::value::dedup_keep_first;
pub use self::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    /// An entity, relation or event name that is not in the store.
    #[error("node {node}: link failure: {message}")]
    Link { node: usize, message: String },
    #[error("node {node}: expected {expected}, got {actual}")]
    Kind { node: usize, expected: String, actual: ValueKind },
    #[error("node {node}: {message}")]
    Invalid { node: usize, message: String },
    #[error(transparent)]
    Program(#[from] ProgramError),
}

impl ExecError {
    pub fn is_link_failure(&self) -> bool {
        matches!(self, ExecError::Link { .. })
    }

    pub fn is_type_error(&self) -> bool {
        matches!(self, ExecError::Kind { .. })
    }

    fn at(self, node: usize) -> ExecError {
        match self {
            ExecError::Link { message, .. } => ExecError::Link { node, message },
            ExecError::Kind { expected, actual, .. } => ExecError::Kind { node, expected, actual },
            ExecError::Invalid { message, .. } => ExecError::Invalid { node, message },
            other => other,
        }
    }
}

fn link(message: impl Into<String>) -> ExecError {
    ExecError::Link { node: 0, message: message.into() }
}

fn invalid(message: impl Into<String>) -> ExecError {
    ExecError::Invalid { node: 0, message: message.into() }
}

fn kind_error(expected: KindSet, actual: ValueKind) -> ExecError {
    ExecError::Kind { node: 0, expected: expected.to_string(), actual }
}

/// Executes `program` and renders the root value as answers.
pub fn execute_program(store: &TkgStore, program: &Program) -> Result<Vec<String>, ExecError> {
    Ok(evaluate(store, program)?.into_answers(store))
}

/// Executes `program` and returns the root value.
pub fn evaluate(store: &TkgStore, program: &Program) -> Result<Value, ExecError> {
    let mut values: Vec<Value> = Vec::with_capacity(program.len());
    for (i, node) in program.nodes().iter().enumerate() {
        let inputs: Vec<&Value> = node.dep_args.iter().map(|&d| &values[d]).collect();
        let v = apply(store, node.function, &node.textual_args, &inputs).map_err(|e| e.at(i))?;
        values.push(v);
    }
    Ok(values.pop().expect("program is non-empty"))
}

/// Applies one function to already-evaluated inputs.
///
/// Errors carry node index 0; [`evaluate`] rewrites them to the real index.
pub fn apply(
    store: &TkgStore,
    function: FunctionName,
    textual: &[String],
    inputs: &[&Value],
) -> Result<Value, ExecError> {
    let sig = signature(function);
    if !sig.admits(inputs.len(), textual.len()) {
        return Err(invalid(format!(
            "{function} expects {}, got {} deps + {} textual",
            sig.describe_shapes(),
            inputs.len(),
            textual.len()
        )));
    }
    for (slot, input) in inputs.iter().enumerate() {
        let accepted = sig.inputs[slot];
        if !accepted.contains(input.kind()) {
            return Err(kind_error(accepted, input.kind()));
        }
    }
    let ops = Ops { store };

    use FunctionName::*;
    match function {
        Find => ops.find(&textual[0]).map(|e| Value::EntitySet(vec![e])),
        Relate => {
            let entities = ops.entities(inputs[0]);
            let direction: Direction = textual[1].parse().map_err(invalid)?;
            ops.relate(&entities, &textual[0], direction).map(Value::FactSet)
        }
        QueryRelationQualifier => {
            let subjects = ops.entities(inputs[0]);
            let objects = ops.entities(inputs[1]);
            ops.query_relation_qualifier(&subjects, &objects, &textual[0], &textual[1]).map(Value::TimeList)
        }
        QueryEventQualifier => ops.query_event_qualifier(&textual[0], &textual[1]).map(Value::TimeList),
        What => Ok(Value::AnswerList(inputs[0].clone().into_answers(store))),
        FilterBefore | FilterAfter | FilterRange | FilterByTimePoint | FilterByDuration => {
            let facts = facts_of(inputs[0]);
            let times = match inputs.get(1) {
                Some(v) => times_of(v).to_vec(),
                None => parse_times(textual)?,
            };
            let kept = match function {
                FilterBefore => ops.filter_before(facts, &times),
                FilterAfter => ops.filter_after(facts, &times),
                FilterRange => ops.filter_range(facts, &times),
                FilterByTimePoint => ops.filter_by_time_point(facts, &times),
                _ => ops.filter_by_duration(facts, &times),
            };
            Ok(Value::FactSet(kept))
        }
        FilterFirstTime | FilterLastTime => {
            let times = ops.times_or_fact_times(inputs[0]);
            Ok(Value::TimeList(first_or_last_time(times, function == FilterFirstTime)))
        }
        FilterFirstEvent => Ok(Value::FactSet(ops.extreme_facts(facts_of(inputs[0]), true))),
        FilterLastEvent => Ok(Value::FactSet(ops.extreme_facts(facts_of(inputs[0]), false))),
        GetYear | GetMonth | GetDate => {
            let granularity = match function {
                GetYear => Granularity::Year,
                GetMonth => Granularity::Month,
                _ => Granularity::Day,
            };
            let times = ops.times_or_fact_times(inputs[0]);
            Ok(Value::TimeList(sorted_unique(times.iter().map(|t| t.truncate(granularity)).collect())))
        }
        GetDuration => {
            Ok(Value::TimeList(sorted_unique(facts_of(inputs[0]).iter().map(|f| f.time.as_interval()).collect())))
        }
    }
}

fn facts_of(v: &Value) -> &[Fact] {
    match v {
        Value::FactSet(f) => f,
        _ => unreachable!("kind checked against signature"),
    }
}

fn times_of(v: &Value) -> &[TimeValue] {
    match v {
        Value::TimeList(t) => t,
        _ => unreachable!("kind checked against signature"),
    }
}

fn parse_times(textual: &[String]) -> Result<Vec<TimeValue>, ExecError> {
    textual.iter().map(|s| s.parse::<TimeValue>().map_err(|e| invalid(format!("invalid time '{s}': {e}")))).collect()
}

fn sorted_unique(mut times: Vec<TimeValue>) -> Vec<TimeValue> {
    times.sort();
    times.dedup();
    times
}

fn first_or_last_time(times: Vec<TimeValue>, first: bool) -> Vec<TimeValue> {
    let pick = if first { times.into_iter().min() } else { times.into_iter().max() };
    pick.into_iter().collect()
}

struct Ops<'a> {
    store: &'a TkgStore,
}

impl Ops<'_> {
    fn span(&self, t: &TimeValue) -> Span {
        t.span_with_horizon(self.store.horizon())
    }

    fn find(&self, name: &str) -> Result<EntityId, ExecError> {
        if name.is_empty() {
            return Err(link("empty entity name"));
        }
        self.store.entity_id(name).ok_or_else(|| link(format!("unknown entity '{name}'")))
    }

    fn entities(&self, v: &Value) -> Vec<EntityId> {
        match v {
            Value::EntitySet(e) => e.clone(),
            Value::FactSet(facts) => dedup_keep_first(facts.iter().filter_map(Fact::focus_entity).collect()),
            _ => unreachable!("kind checked against signature"),
        }
    }

    fn relate(&self, entities: &[EntityId], relation: &str, direction: Direction) -> Result<Vec<Fact>, ExecError> {
        let rel = self.store.relation_id(relation).ok_or_else(|| link(format!("unknown relation '{relation}'")))?;
        let mut out = Vec::new();
        for &e in entities {
            out.extend(self.store.facts_about(e, rel, direction).map_err(|e| link(e.to_string()))?);
        }
        Ok(out)
    }

    fn query_relation_qualifier(
        &self,
        subjects: &[EntityId],
        objects: &[EntityId],
        relation: &str,
        qualifier: &str,
    ) -> Result<Vec<TimeValue>, ExecError> {
        let facts = self.relate(subjects, relation, Direction::Forward)?;
        Ok(sorted_unique(
            facts.iter().filter(|f| objects.contains(&f.object)).filter_map(|f| f.qualifier(qualifier)).collect(),
        ))
    }

    fn query_event_qualifier(&self, event: &str, qualifier: &str) -> Result<Vec<TimeValue>, ExecError> {
        let id = self
            .store
            .entity_id(event)
            .filter(|&e| self.store.is_event(e))
            .ok_or_else(|| link(format!("unknown event '{event}'")))?;
        Ok(self.store.event_qualifier(id, qualifier).into_iter().collect())
    }

    fn times_or_fact_times(&self, v: &Value) -> Vec<TimeValue> {
        match v {
            Value::TimeList(t) => t.clone(),
            Value::FactSet(f) => f.iter().map(|f| f.time).collect(),
            _ => unreachable!("kind checked against signature"),
        }
    }

    fn filter_before(&self, facts: &[Fact], bound: &[TimeValue]) -> Vec<Fact> {
        let Some(bound) = bound.iter().min() else { return Vec::new() };
        let b = self.span(bound);
        facts.iter().filter(|f| self.span(&f.time).precedes(&b)).cloned().collect()
    }

    fn filter_after(&self, facts: &[Fact], bound: &[TimeValue]) -> Vec<Fact> {
        let Some(bound) = bound.iter().max() else { return Vec::new() };
        let b = self.span(bound);
        facts.iter().filter(|f| self.span(&f.time).follows(&b)).cloned().collect()
    }

    fn filter_range(&self, facts: &[Fact], periods: &[TimeValue]) -> Vec<Fact> {
        let periods: Vec<Span> = periods.iter().map(|p| self.span(p)).collect();
        facts
            .iter()
            .filter(|f| {
                let s = self.span(&f.time);
                periods.iter().any(|p| p.contains(&s))
            })
            .cloned()
            .collect()
    }

    fn filter_by_time_point(&self, facts: &[Fact], points: &[TimeValue]) -> Vec<Fact> {
        let points: Vec<Span> = points.iter().map(|p| self.span(p)).collect();
        facts
            .iter()
            .filter(|f| {
                let s = self.span(&f.time);
                points.iter().any(|p| s.contains(p))
            })
            .cloned()
            .collect()
    }

    fn filter_by_duration(&self, facts: &[Fact], durations: &[TimeValue]) -> Vec<Fact> {
        let durations: Vec<Span> = durations.iter().map(|d| self.span(d)).collect();
        facts
            .iter()
            .filter(|f| {
                let s = self.span(&f.time);
                durations.iter().any(|d| s.overlaps(d))
            })
            .cloned()
            .collect()
    }

    /// Facts attaining the earliest start (`first`) or latest end; ties kept.
    fn extreme_facts(&self, facts: &[Fact], first: bool) -> Vec<Fact> {
        let key = |f: &Fact| {
            let s = self.span(&f.time);
            if first {
                s.start
            } else {
                s.end
            }
        };
        let target = if first { facts.iter().map(key).min() } else { facts.iter().map(key).max() };
        match target {
            Some(t) => facts.iter().filter(|f| key(f) == t).cloned().collect(),
            None => Vec::new(),
        }
    }
}
