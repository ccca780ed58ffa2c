use std::fmt;

use crate::program::FunctionName;

/// Kind of an intermediate execution value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueKind {
    EntitySet,
    FactSet,
    TimeList,
    AnswerList,
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueKind::EntitySet => "EntitySet",
            ValueKind::FactSet => "FactSet",
            ValueKind::TimeList => "TimeList",
            ValueKind::AnswerList => "AnswerList",
        })
    }
}

/// Set of accepted kinds for one dependency slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KindSet(&'static [ValueKind]);

impl KindSet {
    pub fn contains(&self, kind: ValueKind) -> bool {
        self.0.contains(&kind)
    }

    pub fn kinds(&self) -> &'static [ValueKind] {
        self.0
    }
}

impl fmt::Display for KindSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.0.iter().map(|k| k.to_string()).collect();
        f.write_str(&names.join("/"))
    }
}

const ENTITIES_OR_FACTS: KindSet = KindSet(&[ValueKind::EntitySet, ValueKind::FactSet]);
const FACTS: KindSet = KindSet(&[ValueKind::FactSet]);
const TIMES: KindSet = KindSet(&[ValueKind::TimeList]);
const TIMES_OR_FACTS: KindSet = KindSet(&[ValueKind::TimeList, ValueKind::FactSet]);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Exactly(usize),
    AtLeast(usize),
}

impl Arity {
    pub fn admits(&self, n: usize) -> bool {
        match *self {
            Arity::Exactly(k) => n == k,
            Arity::AtLeast(k) => n >= k,
        }
    }
}

impl fmt::Display for Arity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arity::Exactly(k) => write!(f, "{k}"),
            Arity::AtLeast(k) => write!(f, "at least {k}"),
        }
    }
}

/// One admissible call shape: dependency count plus textual arity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub deps: usize,
    pub textual: Arity,
}

const fn shape(deps: usize, textual: usize) -> Shape {
    Shape { deps, textual: Arity::Exactly(textual) }
}

#[derive(Debug, Clone, Copy)]
pub struct Signature {
    pub shapes: &'static [Shape],
    /// Accepted input kinds per dependency slot.
    pub inputs: &'static [KindSet],
    pub output: ValueKind,
}

impl Signature {
    pub fn admits(&self, deps: usize, textual: usize) -> bool {
        self.shapes.iter().any(|s| s.deps == deps && s.textual.admits(textual))
    }

    /// True when some shape with `deps` dependencies accepts more than one textual arg.
    pub fn wants_several_textual(&self, deps: usize) -> bool {
        self.shapes.iter().any(|s| {
            s.deps == deps
                && match s.textual {
                    Arity::Exactly(k) | Arity::AtLeast(k) => k >= 2,
                }
        })
    }

    pub fn describe_shapes(&self) -> String {
        let parts: Vec<String> =
            self.shapes.iter().map(|s| format!("{} deps + {} textual", s.deps, s.textual)).collect();
        parts.join(" or ")
    }
}

/// The signature table, total over [`FunctionName`].
pub fn signature(function: FunctionName) -> Signature {
    use FunctionName::*;
    use ValueKind::*;
    const FILTER_WITH_TIME: &[Shape] = &[shape(2, 0), shape(1, 1)];
    const UNARY: &[Shape] = &[shape(1, 0)];
    const DURATION: &[Shape] = &[shape(2, 0), Shape { deps: 1, textual: Arity::AtLeast(1) }];
    const FIND: &[Shape] = &[shape(0, 1)];
    const RELATE: &[Shape] = &[shape(1, 2)];
    const QUALIFIER: &[Shape] = &[shape(2, 2)];
    const EVENT: &[Shape] = &[shape(0, 2)];
    match function {
        Find => Signature { shapes: FIND, inputs: &[], output: EntitySet },
        Relate => Signature { shapes: RELATE, inputs: &[ENTITIES_OR_FACTS], output: FactSet },
        QueryRelationQualifier => {
            Signature { shapes: QUALIFIER, inputs: &[ENTITIES_OR_FACTS, ENTITIES_OR_FACTS], output: TimeList }
        }
        QueryEventQualifier => Signature { shapes: EVENT, inputs: &[], output: TimeList },
        What => Signature { shapes: UNARY, inputs: &[ENTITIES_OR_FACTS], output: AnswerList },
        FilterBefore | FilterAfter | FilterRange | FilterByTimePoint => {
            Signature { shapes: FILTER_WITH_TIME, inputs: &[FACTS, TIMES], output: FactSet }
        }
        FilterByDuration => Signature { shapes: DURATION, inputs: &[FACTS, TIMES], output: FactSet },
        FilterFirstTime | FilterLastTime => Signature { shapes: UNARY, inputs: &[TIMES_OR_FACTS], output: TimeList },
        FilterFirstEvent | FilterLastEvent => Signature { shapes: UNARY, inputs: &[FACTS], output: FactSet },
        GetYear | GetMonth | GetDate => Signature { shapes: UNARY, inputs: &[TIMES_OR_FACTS], output: TimeList },
        GetDuration => Signature { shapes: UNARY, inputs: &[FACTS], output: TimeList },
    }
}
