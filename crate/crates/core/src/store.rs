//! In-memory temporal knowledge graph.
//!
//! Facts are quadruples `(subject, relation, object, time)`. Entities and
//! relations are interned into dense ids; per-role indexes keep insertion
//! order so every lookup is deterministic.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{default_horizon, CalendarDate, TimeParseError, TimeValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub u32);

/// Which slot of a fact is the current answer position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Focus {
    Subject,
    Object,
    Whole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }

    pub fn flipped(&self) -> Direction {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            other => Err(format!("unknown direction '{other}'")),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fact {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
    pub time: TimeValue,
    pub qualifiers: BTreeMap<String, TimeValue>,
    pub focus: Focus,
}

impl Fact {
    pub fn with_focus(&self, focus: Focus) -> Fact {
        Fact { focus, ..self.clone() }
    }

    /// Entity in the focus slot, if the focus is a single entity.
    pub fn focus_entity(&self) -> Option<EntityId> {
        match self.focus {
            Focus::Subject => Some(self.subject),
            Focus::Object => Some(self.object),
            Focus::Whole => None,
        }
    }

    /// Time attached to this fact under a qualifier name.
    ///
    /// `point in time` is the fact time itself, `start time`/`end time`
    /// address interval endpoints and `duration` is the interval form.
    pub fn qualifier(&self, name: &str) -> Option<TimeValue> {
        if let Some(t) = self.qualifiers.get(name) {
            return Some(*t);
        }
        match name {
            "point in time" | "time" => Some(self.time),
            "start time" => Some(TimeValue::Point(self.time.start())),
            "end time" => match self.time {
                TimeValue::Point(d) => Some(TimeValue::Point(d)),
                TimeValue::Interval { end, .. } => end.map(TimeValue::Point),
            },
            "duration" => Some(self.time.as_interval()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadFormat {
    TsvPoint,
    TsvInterval,
    EventTable,
}

impl FromStr for QuadFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv-point" => Ok(QuadFormat::TsvPoint),
            "tsv-interval" => Ok(QuadFormat::TsvInterval),
            "event-table" => Ok(QuadFormat::EventTable),
            other => Err(format!("unknown format '{other}' (expected tsv-point, tsv-interval or event-table)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{source} at line {line}, column {column}")]
    Time {
        line: usize,
        column: usize,
        token: String,
        #[source]
        source: TimeParseError,
    },
    #[error("malformed row at line {line}, column {column}: {message}")]
    Malformed { line: usize, column: usize, message: String },
    #[error("read error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("unknown entity")]
    UnknownEntity,
    #[error("unknown relation")]
    UnknownRelation,
}

/// Collapses whitespace and case-folds a name for fuzzy candidate lookup.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace().map(|w| w.to_lowercase()).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Default, Clone)]
struct Vocabulary {
    names: Vec<String>,
    ids: HashMap<String, u32>,
    normalized: HashMap<String, Vec<u32>>,
}

impl Vocabulary {
    fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        self.normalized.entry(normalize_name(name)).or_default().push(id);
        id
    }

    fn get(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }
}

/// Immutable once built; share freely across threads.
#[derive(Debug, Clone)]
pub struct TkgStore {
    entities: Vocabulary,
    relations: Vocabulary,
    facts: Vec<Fact>,
    by_subject: HashMap<(EntityId, RelationId), Vec<usize>>,
    by_object: HashMap<(EntityId, RelationId), Vec<usize>>,
    by_entity: HashMap<EntityId, Vec<usize>>,
    by_relation: HashMap<RelationId, Vec<usize>>,
    events: HashMap<EntityId, BTreeMap<String, TimeValue>>,
    event_order: Vec<EntityId>,
    horizon: NaiveDate,
}

impl Default for TkgStore {
    fn default() -> Self {
        StoreBuilder::new().build()
    }
}

impl TkgStore {
    pub fn builder() -> StoreBuilder {
        StoreBuilder::new()
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn horizon(&self) -> NaiveDate {
        self.horizon
    }

    pub fn entity_count(&self) -> usize {
        self.entities.names.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.names.len()
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entities.get(name).map(EntityId)
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relations.get(name).map(RelationId)
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entities.names[id.0 as usize]
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relations.names[id.0 as usize]
    }

    pub fn entity_names(&self) -> impl Iterator<Item = &str> {
        self.entities.names.iter().map(String::as_str)
    }

    pub fn relation_names(&self) -> impl Iterator<Item = &str> {
        self.relations.names.iter().map(String::as_str)
    }

    /// Entities whose normalized name equals the normalized `name`.
    pub fn entities_normalized(&self, name: &str) -> Vec<EntityId> {
        self.entities
            .normalized
            .get(&normalize_name(name))
            .map(|ids| ids.iter().map(|&i| EntityId(i)).collect())
            .unwrap_or_default()
    }

    pub fn relations_normalized(&self, name: &str) -> Vec<RelationId> {
        self.relations
            .normalized
            .get(&normalize_name(name))
            .map(|ids| ids.iter().map(|&i| RelationId(i)).collect())
            .unwrap_or_default()
    }

    fn check_entity(&self, id: EntityId) -> Result<(), StoreError> {
        if (id.0 as usize) < self.entities.names.len() {
            Ok(())
        } else {
            Err(StoreError::UnknownEntity)
        }
    }

    fn check_relation(&self, id: RelationId) -> Result<(), StoreError> {
        if (id.0 as usize) < self.relations.names.len() {
            Ok(())
        } else {
            Err(StoreError::UnknownRelation)
        }
    }

    /// Facts linking `entity` through `relation`, with focus on the other end.
    pub fn facts_about(
        &self,
        entity: EntityId,
        relation: RelationId,
        direction: Direction,
    ) -> Result<Vec<Fact>, StoreError> {
        self.check_entity(entity)?;
        self.check_relation(relation)?;
        let (index, focus) = match direction {
            Direction::Forward => (&self.by_subject, Focus::Object),
            Direction::Backward => (&self.by_object, Focus::Subject),
        };
        Ok(index
            .get(&(entity, relation))
            .map(|idx| idx.iter().map(|&i| self.facts[i].with_focus(focus)).collect())
            .unwrap_or_default())
    }

    /// All facts mentioning `entity` in either role, in insertion order.
    pub fn facts_of_entity(&self, entity: EntityId) -> impl Iterator<Item = &Fact> {
        self.by_entity.get(&entity).into_iter().flatten().map(move |&i| &self.facts[i])
    }

    pub fn facts_of_relation(&self, relation: RelationId) -> impl Iterator<Item = &Fact> {
        self.by_relation.get(&relation).into_iter().flatten().map(move |&i| &self.facts[i])
    }

    pub fn is_event(&self, entity: EntityId) -> bool {
        self.events.contains_key(&entity)
    }

    pub fn event_entities(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.event_order.iter().copied()
    }

    pub fn event_qualifiers(&self, entity: EntityId) -> Option<&BTreeMap<String, TimeValue>> {
        self.events.get(&entity)
    }

    /// Qualifier of an event entity; `duration` is derived from start/end
    /// time when not stored explicitly.
    pub fn event_qualifier(&self, entity: EntityId, qualifier: &str) -> Option<TimeValue> {
        let quals = self.events.get(&entity)?;
        if let Some(t) = quals.get(qualifier) {
            return Some(*t);
        }
        match qualifier {
            "duration" => {
                let start = quals.get("start time")?.start();
                let end = quals.get("end time").map(|t| t.end().unwrap_or(t.start()));
                TimeValue::interval(start, end).ok()
            }
            "start time" => quals.get("duration").map(|d| TimeValue::Point(d.start())),
            "end time" => quals.get("duration").and_then(|d| d.end()).map(TimeValue::Point),
            _ => None,
        }
    }

    /// Writes facts (or events) back out in one of the load formats.
    pub fn write_quads<W: Write>(&self, format: QuadFormat, out: &mut W) -> std::io::Result<()> {
        match format {
            QuadFormat::TsvPoint => {
                for f in &self.facts {
                    writeln!(
                        out,
                        "{}\t{}\t{}\t{}",
                        self.entity_name(f.subject),
                        self.relation_name(f.relation),
                        self.entity_name(f.object),
                        f.time
                    )?;
                }
            }
            QuadFormat::TsvInterval => {
                for f in &self.facts {
                    let start = f.time.start();
                    let end = match f.time {
                        TimeValue::Point(d) => Some(d),
                        TimeValue::Interval { end, .. } => end,
                    };
                    writeln!(
                        out,
                        "{}\t{}\t{}\t{}\t{}",
                        self.entity_name(f.subject),
                        self.relation_name(f.relation),
                        self.entity_name(f.object),
                        start,
                        end.map(|e| e.to_string()).unwrap_or_default()
                    )?;
                }
            }
            QuadFormat::EventTable => {
                for &e in &self.event_order {
                    for (name, t) in &self.events[&e] {
                        writeln!(out, "{}\t{}\t{}", self.entity_name(e), name, t)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn serialize(&self, format: QuadFormat) -> String {
        let mut buf = Vec::new();
        self.write_quads(format, &mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("names are UTF-8")
    }
}

/// Accumulates facts and events from one or more sources.
#[derive(Debug)]
pub struct StoreBuilder {
    entities: Vocabulary,
    relations: Vocabulary,
    facts: Vec<Fact>,
    seen: HashSet<(EntityId, RelationId, EntityId, TimeValue)>,
    events: HashMap<EntityId, BTreeMap<String, TimeValue>>,
    event_order: Vec<EntityId>,
    horizon: NaiveDate,
}

impl Default for StoreBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl StoreBuilder {
    pub fn new() -> Self {
        Self {
            entities: Vocabulary::default(),
            relations: Vocabulary::default(),
            facts: Vec::new(),
            seen: HashSet::new(),
            events: HashMap::new(),
            event_order: Vec::new(),
            horizon: default_horizon(),
        }
    }

    pub fn horizon(mut self, horizon: NaiveDate) -> Self {
        self.horizon = horizon;
        self
    }

    /// Adds a fact; exact duplicates are ignored. Returns whether it was new.
    pub fn add_fact(&mut self, subject: &str, relation: &str, object: &str, time: TimeValue) -> bool {
        let s = EntityId(self.entities.intern(subject));
        let r = RelationId(self.relations.intern(relation));
        let o = EntityId(self.entities.intern(object));
        if !self.seen.insert((s, r, o, time)) {
            return false;
        }
        self.facts.push(Fact {
            subject: s,
            relation: r,
            object: o,
            time,
            qualifiers: BTreeMap::new(),
            focus: Focus::Whole,
        });
        true
    }

    pub fn add_event_qualifier(&mut self, event: &str, qualifier: &str, time: TimeValue) {
        let e = EntityId(self.entities.intern(event));
        if !self.events.contains_key(&e) {
            self.event_order.push(e);
        }
        self.events.entry(e).or_default().insert(qualifier.to_string(), time);
    }

    pub fn load<R: BufRead>(mut self, source: R, format: QuadFormat) -> Result<Self, LoadError> {
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let expected = match format {
                QuadFormat::TsvPoint => 4,
                QuadFormat::TsvInterval => 5,
                QuadFormat::EventTable => 3,
            };
            if cols.len() != expected {
                return Err(LoadError::Malformed {
                    line: lineno,
                    column: cols.len().min(expected) + 1,
                    message: format!("expected {expected} tab-separated fields, found {}", cols.len()),
                });
            }
            let name_cols = if format == QuadFormat::EventTable { &[0, 1][..] } else { &[0, 1, 2][..] };
            for &c in name_cols {
                if cols[c].trim().is_empty() {
                    return Err(LoadError::Malformed { line: lineno, column: c + 1, message: "empty field".into() });
                }
            }
            let time_err = |column: usize, token: &str, source: TimeParseError| LoadError::Time {
                line: lineno,
                column,
                token: token.to_string(),
                source,
            };
            match format {
                QuadFormat::TsvPoint => {
                    let t: TimeValue = cols[3].parse().map_err(|e| time_err(4, cols[3], e))?;
                    self.add_fact(cols[0], cols[1], cols[2], t);
                }
                QuadFormat::TsvInterval => {
                    let start: CalendarDate = cols[3].parse().map_err(|e| time_err(4, cols[3], e))?;
                    let end = if cols[4].trim().is_empty() {
                        None
                    } else {
                        Some(cols[4].parse::<CalendarDate>().map_err(|e| time_err(5, cols[4], e))?)
                    };
                    let t = TimeValue::interval(start, end).map_err(|e| time_err(5, cols[4], e))?;
                    self.add_fact(cols[0], cols[1], cols[2], t);
                }
                QuadFormat::EventTable => {
                    let t: TimeValue = cols[2].parse().map_err(|e| time_err(3, cols[2], e))?;
                    self.add_event_qualifier(cols[0], cols[1], t);
                }
            }
        }
        Ok(self)
    }

    pub fn build(self) -> TkgStore {
        let mut by_subject: HashMap<(EntityId, RelationId), Vec<usize>> = HashMap::new();
        let mut by_object: HashMap<(EntityId, RelationId), Vec<usize>> = HashMap::new();
        let mut by_entity: HashMap<EntityId, Vec<usize>> = HashMap::new();
        let mut by_relation: HashMap<RelationId, Vec<usize>> = HashMap::new();
        for (i, f) in self.facts.iter().enumerate() {
            by_subject.entry((f.subject, f.relation)).or_default().push(i);
            by_object.entry((f.object, f.relation)).or_default().push(i);
            by_entity.entry(f.subject).or_default().push(i);
            if f.object != f.subject {
                by_entity.entry(f.object).or_default().push(i);
            }
            by_relation.entry(f.relation).or_default().push(i);
        }
        TkgStore {
            entities: self.entities,
            relations: self.relations,
            facts: self.facts,
            by_subject,
            by_object,
            by_entity,
            by_relation,
            events: self.events,
            event_order: self.event_order,
            horizon: self.horizon,
        }
    }
}

/// Loads a single source into a fresh store.
pub fn load_quads<R: BufRead>(source: R, format: QuadFormat) -> Result<TkgStore, LoadError> {
    Ok(StoreBuilder::new().load(source, format)?.build())
}
