//! Property tests for store, parser, engine, linker, expander, prompt and
//! self-training invariants.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use proptest::prelude::*;

use tkopl_core::engine::{apply, Value};
use tkopl_core::expander::{enumerate_variants, execute_all};
use tkopl_core::linker::{LinkConfig, Linker, ProviderError, SimilarityProvider, TrigramTfIdf, WordLists};
use tkopl_core::llm::{load_example_pool, render_prompt, sample_any, LlmClient, OracleMock, Prompt};
use tkopl_core::pipeline::{Pipeline, PipelineConfig};
use tkopl_core::selfimprove::{load_items, FineTuneHook, FineTuneRecord, SelfImprover, TrainerError};
use tkopl_core::{
    execute_program, load_quads, parse_draft, Direction, FunctionName, Program, QuadFormat, TimeValue, TkgStore,
};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn date() -> impl Strategy<Value = String> {
    (2000i32..2003, 1u32..13, 1u32..29, 0u8..3).prop_map(|(y, m, d, g)| match g {
        0 => format!("{y}"),
        1 => format!("{y}-{m:02}"),
        _ => format!("{y}-{m:02}-{d:02}"),
    })
}

fn day() -> impl Strategy<Value = String> {
    (1990i32..2030, 1u32..13, 1u32..29).prop_map(|(y, m, d)| format!("{y}-{m:02}-{d:02}"))
}

fn tsv_rows() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec((0..6u8, 0..3u8, 0..6u8, date()), 1..40)
        .prop_map(|rows| rows.into_iter().map(|(s, r, o, t)| format!("E{s}\tr{r}\tE{o}\t{t}")).collect())
}

fn store_of(rows: &[String]) -> TkgStore {
    let text: String = rows.iter().map(|r| format!("{r}\n")).collect();
    load_quads(text.as_bytes(), QuadFormat::TsvPoint).unwrap()
}

fn unique_sorted(text: &str) -> BTreeSet<String> {
    text.lines().map(String::from).collect()
}

fn facts_of(store: &TkgStore) -> Value {
    Value::FactSet(store.facts().to_vec())
}

fn fact_count(v: &Value) -> usize {
    match v {
        Value::FactSet(f) => f.len(),
        other => panic!("expected facts, got {other:?}"),
    }
}

fn is_subset(inner: &Value, outer: &Value) -> bool {
    match (inner, outer) {
        (Value::FactSet(a), Value::FactSet(b)) => a.iter().all(|f| b.contains(f)),
        _ => false,
    }
}

/// A program over store names; mirrors the shapes of the question categories.
fn program_over(store: &TkgStore, pick: (usize, usize, usize, u8, bool), time: &str) -> Program {
    let entities: Vec<&str> = store.entity_names().collect();
    let relations: Vec<&str> = store.relation_names().collect();
    let e1 = entities[pick.0 % entities.len()];
    let e2 = entities[pick.1 % entities.len()];
    let rel = relations[pick.2 % relations.len()];
    let dir = if pick.4 { "forward" } else { "backward" };
    let text = match pick.3 % 3 {
        0 => format!("Find<d></d><i>{e1}</i>\nRelate<d>0</d><i>{rel},{dir}</i>\nFilterRange<d>1</d><i>{time}</i>\nFilterFirstEvent<d>2</d><i></i>"),
        1 => format!(
            "Find<d></d><i>{e1}</i>\nFind<d></d><i>{e2}</i>\nQueryRelationQualifier<d>0,1</d><i>{rel},point in time</i>\nRelate<d>0</d><i>{rel},{dir}</i>\nFilterFirstTime<d>2</d><i></i>\nFilterBefore<d>3,4</d><i></i>\nFilterLastEvent<d>5</d><i></i>"
        ),
        _ => format!(
            "Find<d></d><i>{e1}</i>\nFind<d></d><i>{e2}</i>\nQueryRelationQualifier<d>1,0</d><i>{rel},point in time</i>\nRelate<d>1</d><i>{rel},{dir}</i>\nFilterFirstTime<d>2</d><i></i>\nGetMonth<d>4</d><i></i>\nFilterRange<d>3,5</d><i></i>\nWhat<d>6</d><i></i>"
        ),
    };
    parse_draft(&text).parsed.unwrap()
}

fn pick() -> impl Strategy<Value = (usize, usize, usize, u8, bool)> {
    (0..16usize, 0..16usize, 0..4usize, 0..3u8, any::<bool>())
}

/// Scores by shared characters; a deliberately different ranking.
struct CharOverlap;

impl SimilarityProvider for CharOverlap {
    fn similarities(&self, query: &str, corpus: &[String]) -> Result<Vec<f64>, ProviderError> {
        let q: BTreeSet<char> = query.to_lowercase().chars().collect();
        Ok(corpus
            .iter()
            .map(|s| {
                let c: BTreeSet<char> = s.to_lowercase().chars().collect();
                q.intersection(&c).count() as f64 / q.union(&c).count().max(1) as f64
            })
            .collect())
    }

    fn name(&self) -> &str {
        "char-overlap"
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn point_rows_round_trip(rows in tsv_rows()) {
        let text: String = rows.iter().map(|r| format!("{r}\n")).collect();
        let store = load_quads(text.as_bytes(), QuadFormat::TsvPoint).unwrap();
        prop_assert_eq!(unique_sorted(&store.serialize(QuadFormat::TsvPoint)), unique_sorted(&text));
    }

    #[test]
    fn interval_rows_round_trip(rows in prop::collection::vec((0..5u8, 0..3u8, 0..5u8, day(), prop::option::of(0u32..400)), 1..30)) {
        let text: String = rows
            .iter()
            .map(|(s, r, o, start, len)| {
                let end = len.map(|n| {
                    let d: chrono::NaiveDate = start.parse().unwrap();
                    (d + chrono::Days::new(u64::from(n))).format("%Y-%m-%d").to_string()
                });
                format!("E{s}\tr{r}\tE{o}\t{start}\t{}\n", end.unwrap_or_default())
            })
            .collect();
        let store = load_quads(text.as_bytes(), QuadFormat::TsvInterval).unwrap();
        prop_assert_eq!(unique_sorted(&store.serialize(QuadFormat::TsvInterval)), unique_sorted(&text));
    }

    #[test]
    fn event_rows_round_trip(quals in prop::collection::btree_map((0..4u8, 0..2u8), date(), 1..8)) {
        let text: String = quals
            .iter()
            .map(|((e, q), t)| format!("Event {e}\t{}\t{t}\n", ["start time", "end time"][*q as usize]))
            .collect();
        let store = load_quads(text.as_bytes(), QuadFormat::EventTable).unwrap();
        prop_assert_eq!(unique_sorted(&store.serialize(QuadFormat::EventTable)), unique_sorted(&text));
    }

    #[test]
    fn index_matches_linear_scan(rows in tsv_rows()) {
        let store = store_of(&rows);
        for e in store.entity_names().map(|n| store.entity_id(n).unwrap()) {
            for r in store.relation_names().map(|n| store.relation_id(n).unwrap()) {
                for dir in [Direction::Forward, Direction::Backward] {
                    let indexed = store.facts_about(e, r, dir).unwrap();
                    let scanned: Vec<_> = store
                        .facts()
                        .iter()
                        .filter(|f| f.relation == r && if dir == Direction::Forward { f.subject == e } else { f.object == e })
                        .map(|f| f.with_focus(if dir == Direction::Forward { tkopl_core::Focus::Object } else { tkopl_core::Focus::Subject }))
                        .collect();
                    prop_assert_eq!(indexed, scanned);
                }
            }
        }
    }

    #[test]
    fn day_order_agrees_with_text_order(a in day(), b in day()) {
        let (ta, tb): (TimeValue, TimeValue) = (a.parse().unwrap(), b.parse().unwrap());
        prop_assert_eq!(ta.cmp(&tb), a.cmp(&b));
        prop_assert_eq!(ta.to_string(), a);
    }

    #[test]
    fn parsing_never_panics(text in "\\PC{0,200}") {
        let _ = parse_draft(&text);
    }

    #[test]
    fn parsing_tag_soup_never_panics(parts in prop::collection::vec(
        prop::sample::select(vec!["Find", "Relate", "<d>", "</d>", "<i>", "</i>", "0", "1,0", ",", "|", "\n", "x", "What", "99"]),
        0..40,
    )) {
        let _ = parse_draft(&parts.concat());
    }

    #[test]
    fn filters_keep_subsets(rows in tsv_rows(), t in date()) {
        let store = store_of(&rows);
        let all = facts_of(&store);
        for f in [
            FunctionName::FilterBefore,
            FunctionName::FilterAfter,
            FunctionName::FilterRange,
            FunctionName::FilterByTimePoint,
            FunctionName::FilterByDuration,
            FunctionName::FilterFirstEvent,
            FunctionName::FilterLastEvent,
        ] {
            let textual = if matches!(f, FunctionName::FilterFirstEvent | FunctionName::FilterLastEvent) { vec![] } else { vec![t.clone()] };
            let out = apply(&store, f, &textual, &[&all]).unwrap();
            prop_assert!(is_subset(&out, &all), "{} grew its input", f);
        }
    }

    #[test]
    fn before_after_same_bound_is_empty(rows in tsv_rows(), t in date()) {
        let store = store_of(&rows);
        let after = apply(&store, FunctionName::FilterAfter, std::slice::from_ref(&t), &[&facts_of(&store)]).unwrap();
        let both = apply(&store, FunctionName::FilterBefore, &[t], &[&after]).unwrap();
        prop_assert_eq!(fact_count(&both), 0);
    }

    #[test]
    fn first_time_and_get_year_are_idempotent(rows in tsv_rows()) {
        let store = store_of(&rows);
        let all = facts_of(&store);
        for f in [FunctionName::FilterFirstTime, FunctionName::FilterLastTime, FunctionName::GetYear, FunctionName::GetMonth] {
            let once = apply(&store, f, &[], &[&all]).unwrap();
            let twice = apply(&store, f, &[], &[&once]).unwrap();
            prop_assert_eq!(&once, &twice, "{} not idempotent", f);
        }
    }

    #[test]
    fn execution_is_deterministic(rows in tsv_rows(), p in pick(), t in date()) {
        let store = store_of(&rows);
        let program = program_over(&store, p, &t);
        let a = execute_program(&store, &program).map_err(|e| e.to_string());
        let b = execute_program(&store, &program).map_err(|e| e.to_string());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn variants_are_deterministic_and_recall_grows(rows in tsv_rows(), p in pick(), t in date(), small in 1usize..8, extra in 0usize..60) {
        let store = store_of(&rows);
        let program = program_over(&store, p, &t);
        let large = small + extra;
        prop_assert_eq!(enumerate_variants(&program, large), enumerate_variants(&program, large));
        let narrow = execute_all(&store, &enumerate_variants(&program, small));
        let wide = execute_all(&store, &enumerate_variants(&program, large));
        prop_assert_eq!(&wide.ranked, &execute_all(&store, &enumerate_variants(&program, large)).ranked);
        let wide: BTreeSet<String> = wide.answers().into_iter().collect();
        prop_assert!(narrow.answers().iter().all(|a| wide.contains(a)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn linking_preserves_structure(rows in tsv_rows(), p in pick(), t in date(), noise in 0u8..3) {
        let store = Arc::new(store_of(&rows));
        let program = program_over(&store, p, &t);
        let noisy_nodes: Vec<_> = program
            .nodes()
            .iter()
            .cloned()
            .map(|mut n| {
                if let Some(first) = n.textual_args.first_mut() {
                    *first = match noise {
                        0 => first.to_lowercase(),
                        1 => first.replace('E', "e "),
                        _ => first.clone(),
                    };
                }
                n
            })
            .collect();
        let draft = Program::new(noisy_nodes).unwrap();
        let question = format!("What about {}?", draft.nodes()[0].textual_args[0]);
        for provider in [Arc::new(TrigramTfIdf::new()) as Arc<dyn SimilarityProvider>, Arc::new(CharOverlap)] {
            let linker = Linker::new(Arc::clone(&store), provider, WordLists::default(), LinkConfig::default());
            let result = linker.link(&question, &draft).unwrap();
            prop_assert!(!result.linked_drafts.is_empty());
            for linked in &result.linked_drafts {
                prop_assert_eq!(linked.len(), draft.len());
                for (a, b) in linked.nodes().iter().zip(draft.nodes()) {
                    prop_assert_eq!(a.function, b.function);
                    prop_assert_eq!(&a.dep_args, &b.dep_args);
                    prop_assert_eq!(a.textual_args.len(), b.textual_args.len());
                }
            }
        }
    }

    #[test]
    fn exact_names_link_to_themselves(rows in tsv_rows(), p in pick(), t in date()) {
        let store = Arc::new(store_of(&rows));
        let program = program_over(&store, p, &t);
        let names: Vec<&str> = program.nodes().iter().filter_map(|n| n.textual_args.first().map(String::as_str)).collect();
        let question = names.join(" ");
        let linker = Linker::new(Arc::clone(&store), Arc::new(TrigramTfIdf::new()), WordLists::default(), LinkConfig::default());
        let result = linker.link(&question, &program).unwrap();
        prop_assert_eq!(&result.linked_drafts[0], &program);
        for link in &result.arg_links {
            prop_assert_eq!(&link.options[0].0, &link.mention);
            prop_assert_eq!(link.options[0].1, 1.0);
        }
    }

    #[test]
    fn prompts_are_deterministic(seed in any::<u64>(), question in "[a-zA-Z ?]{1,60}", n in 0usize..8) {
        let pool = load_example_pool(std::fs::read_to_string(fixtures().join("demos.jsonl")).unwrap().as_bytes()).unwrap();
        let a = render_prompt(&Prompt::new(sample_any(&pool, n, seed, &question), question.clone()));
        let b = render_prompt(&Prompt::new(sample_any(&pool, n, seed, &question), question.clone()));
        prop_assert_eq!(a, b);
    }
}

/// Returns a generator that knows an arbitrary subset of the reference table
/// on every call, ignoring the records entirely.
struct ErraticTrainer {
    reference: OracleMock,
    masks: Mutex<Vec<u32>>,
}

impl FineTuneHook for ErraticTrainer {
    fn fine_tune(&mut self, _: &[FineTuneRecord], _: Option<&Path>) -> Result<Arc<dyn LlmClient>, TrainerError> {
        let mask = self.masks.lock().unwrap().pop().unwrap_or(0);
        let mut questions: Vec<&str> = self.reference.questions().collect();
        questions.sort_unstable();
        let mut mock = OracleMock::new();
        for (i, q) in questions.into_iter().enumerate() {
            if mask & (1 << (i % 32)) != 0 {
                for c in self.reference.completions(q) {
                    mock.insert(q, c.clone());
                }
            }
        }
        Ok(Arc::new(mock))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn loop_terminates_and_partitions_for_any_trainer(
        masks in prop::collection::vec(any::<u32>(), 0..12),
        initial in any::<u32>(),
        threshold in 0usize..4,
        max_rounds in 0usize..6,
    ) {
        let dir = fixtures().join("multitq_mini");
        let items = load_items(std::fs::read_to_string(dir.join("questions.jsonl")).unwrap().as_bytes()).unwrap();
        let reference = OracleMock::load(std::fs::read_to_string(dir.join("mock.jsonl")).unwrap().as_bytes()).unwrap();
        let store = Arc::new(load_quads(std::fs::read_to_string(dir.join("facts.tsv")).unwrap().as_bytes(), QuadFormat::TsvPoint).unwrap());
        let config = PipelineConfig { expand: true, ..PipelineConfig::default() };
        let pipeline = Pipeline::with_defaults(store, Vec::new(), config);
        // masks are popped from the back: the initial generator comes first
        let mut masks = masks;
        masks.push(initial);
        let mut trainer = ErraticTrainer { reference, masks: Mutex::new(masks) };
        let start = trainer.fine_tune(&[], None).unwrap();

        let mut improver = SelfImprover::new(&items, &pipeline, None);
        let mut state = improver.initial(start.as_ref(), threshold, max_rounds);
        let mut processed: BTreeSet<String> = items.iter().map(|i| i.question.clone()).collect();
        let mut rounds = 0;
        loop {
            let correct: BTreeSet<String> = state.correct.iter().map(|(q, _)| q.clone()).collect();
            let incorrect: BTreeSet<String> = state.incorrect.iter().cloned().collect();
            prop_assert!(correct.is_disjoint(&incorrect));
            prop_assert_eq!(&correct.union(&incorrect).cloned().collect::<BTreeSet<_>>(), &processed);
            if !state.should_continue() {
                break;
            }
            let (next, _) = improver.run_iteration(&state, &mut trainer).unwrap();
            prop_assert!(next.incorrect.iter().all(|q| incorrect.contains(q)));
            processed = incorrect;
            state = next;
            rounds += 1;
            prop_assert!(rounds <= max_rounds);
        }
    }
}

#[test]
fn coarse_bound_drops_a_fact_inside_its_span() {
    let store = load_quads("A\tr\tB\t2010-01-12\nA\tr\tC\t2009-12-31\n".as_bytes(), QuadFormat::TsvPoint).unwrap();
    let out = apply(&store, FunctionName::FilterBefore, &["2010-01".to_string()], &[&facts_of(&store)]).unwrap();
    let Value::FactSet(kept) = out else { panic!() };
    let objects: Vec<&str> = kept.iter().map(|f| store.entity_name(f.object)).collect();
    assert_eq!(objects, vec!["C"]);
}
