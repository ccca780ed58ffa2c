//! Program variants that undo common generation mistakes: swapped
//! dependency order on multi-input nodes and confused relation directions.
//! All variants are executed and their answers merged by support.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;

use crate::engine::{execute_program, ExecError};
use crate::program::{FunctionName, Program, ProgramNode};
use crate::store::{Direction, TkgStore};

pub const DEFAULT_CAP: usize = 64;

/// One place where a variant may deviate from the base program.
#[derive(Debug, Clone)]
enum ChoicePoint {
    /// Alternative orderings of a node's dependency list; index 0 is the base.
    DepOrder {
        node: usize,
        orders: Vec<Vec<usize>>,
    },
    Direction {
        node: usize,
        arg: usize,
        base: Direction,
    },
}

impl ChoicePoint {
    fn options(&self) -> usize {
        match self {
            ChoicePoint::DepOrder { orders, .. } => orders.len(),
            ChoicePoint::Direction { .. } => 2,
        }
    }

    fn apply(&self, option: usize, nodes: &mut [ProgramNode]) {
        match self {
            ChoicePoint::DepOrder { node, orders } => nodes[*node].dep_args = orders[option].clone(),
            ChoicePoint::Direction { node, arg, base } => {
                let d = if option == 0 { *base } else { base.flipped() };
                nodes[*node].textual_args[*arg] = d.as_str().to_string();
            }
        }
    }
}

/// All orderings of `items`, the identity first, then lexicographic by position.
fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    fn rec(rest: &mut Vec<usize>, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..rest.len() {
            let x = rest.remove(i);
            prefix.push(x);
            rec(rest, prefix, out);
            prefix.pop();
            rest.insert(i, x);
        }
    }
    let mut out = Vec::new();
    rec(&mut items.to_vec(), &mut Vec::new(), &mut out);
    let mut seen = HashSet::new();
    out.retain(|p| seen.insert(p.clone()));
    out
}

fn choice_points(program: &Program) -> Vec<ChoicePoint> {
    let mut points = Vec::new();
    for (i, node) in program.nodes().iter().enumerate() {
        if node.dep_args.len() >= 2 {
            let orders = permutations(&node.dep_args);
            if orders.len() > 1 {
                points.push(ChoicePoint::DepOrder { node: i, orders });
            }
        }
        if node.function == FunctionName::Relate {
            if let Some(base) = node.textual_args.get(1).and_then(|a| a.parse::<Direction>().ok()) {
                points.push(ChoicePoint::Direction { node: i, arg: 1, base });
            }
        }
    }
    points
}

/// The base program plus up to `cap - 1` deviations from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariantSet {
    pub base: Program,
    /// Base first, then variants by increasing number of deviations.
    pub variants: Vec<Program>,
    pub cap: usize,
}

/// Calls `visit` with every size-`size` subset of `0..n` in lexicographic
/// order; stops early when `visit` returns false.
fn for_each_subset(n: usize, size: usize, visit: &mut dyn FnMut(&[usize]) -> bool) -> bool {
    fn rec(
        start: usize,
        n: usize,
        size: usize,
        chosen: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize]) -> bool,
    ) -> bool {
        if chosen.len() == size {
            return visit(chosen);
        }
        for i in start..n {
            if n - i < size - chosen.len() {
                break;
            }
            chosen.push(i);
            let go_on = rec(i + 1, n, size, chosen, visit);
            chosen.pop();
            if !go_on {
                return false;
            }
        }
        true
    }
    rec(0, n, size, &mut Vec::new(), visit)
}

/// Enumerates dependency-order and direction variants of `program`.
///
/// Ordering is deterministic: the base, then every variant deviating at one
/// choice point, then at two, and so on; within a deviation count, by choice
/// point position and option index. The list is truncated to `cap` (at
/// least 1) and contains no duplicates.
pub fn enumerate_variants(program: &Program, cap: usize) -> VariantSet {
    let cap = cap.max(1);
    let points = choice_points(program);
    let mut variants = vec![program.clone()];
    let mut seen: HashSet<Program> = variants.iter().cloned().collect();

    let max_size = if cap > 1 { points.len() } else { 0 };
    'sizes: for size in 1..=max_size {
        let full = !for_each_subset(points.len(), size, &mut |subset| {
            // odometer over the non-base options of each chosen point
            let mut picks = vec![1usize; subset.len()];
            loop {
                let mut nodes = program.nodes().to_vec();
                for (&p, &o) in subset.iter().zip(&picks) {
                    points[p].apply(o, &mut nodes);
                }
                let variant = Program::new(nodes).expect("variants keep the call shapes");
                if seen.insert(variant.clone()) {
                    variants.push(variant);
                    if variants.len() >= cap {
                        return false;
                    }
                }
                let mut pos = subset.len();
                loop {
                    if pos == 0 {
                        return true;
                    }
                    pos -= 1;
                    picks[pos] += 1;
                    if picks[pos] < points[subset[pos]].options() {
                        break;
                    }
                    picks[pos] = 1;
                }
            }
        });
        if full {
            break 'sizes;
        }
    }
    VariantSet { base: program.clone(), variants, cap }
}

/// Outcome of one executed variant.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantOutcome {
    pub program: Program,
    pub result: Result<Vec<String>, ExecError>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MergedAnswers {
    /// Union of all answers with the number of variants producing each,
    /// ranked by support, then by the first variant (and position) that
    /// produced it.
    pub ranked: Vec<(String, usize)>,
    pub outcomes: Vec<VariantOutcome>,
    /// One message per failed variant.
    pub diagnostics: Vec<String>,
}

impl MergedAnswers {
    pub fn answers(&self) -> Vec<String> {
        self.ranked.iter().map(|(a, _)| a.clone()).collect()
    }
}

/// Merges per-program answer lists; failed programs contribute nothing.
pub fn merge_outcomes(outcomes: Vec<VariantOutcome>) -> MergedAnswers {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut ranked: Vec<(String, usize)> = Vec::new();
    let mut diagnostics = Vec::new();
    for (v, outcome) in outcomes.iter().enumerate() {
        match &outcome.result {
            Ok(answers) => {
                let mut seen_here = HashSet::new();
                for a in answers {
                    if !seen_here.insert(a) {
                        continue;
                    }
                    match index.get(a) {
                        Some(&i) => ranked[i].1 += 1,
                        None => {
                            index.insert(a.clone(), ranked.len());
                            ranked.push((a.clone(), 1));
                        }
                    }
                }
            }
            Err(e) => diagnostics.push(format!("variant {v}: {e}")),
        }
    }
    // stable: ties keep first-production order
    ranked.sort_by_key(|r| std::cmp::Reverse(r.1));
    MergedAnswers { ranked, outcomes, diagnostics }
}

/// Executes every variant (in parallel) and merges the results.
pub fn execute_all(store: &TkgStore, variants: &VariantSet) -> MergedAnswers {
    execute_programs(store, &variants.variants)
}

pub fn execute_programs(store: &TkgStore, programs: &[Program]) -> MergedAnswers {
    let outcomes: Vec<VariantOutcome> =
        programs.par_iter().map(|p| VariantOutcome { program: p.clone(), result: execute_program(store, p) }).collect();
    merge_outcomes(outcomes)
}
