//! `tkopl`: load temporal knowledge graphs, execute and link KoPL programs,
//! answer questions, evaluate and run the self-training loop.
//!
//! JSON goes to stdout, diagnostics to stderr. Exit codes: 0 success
//! (possibly with empty answers), 2 input error, 3 upstream-service error.

mod config;

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value as Json};
use thiserror::Error;

use tkopl_core::expander::{enumerate_variants, execute_all};
use tkopl_core::linker::{LinkConfig, TrigramTfIdf, WordList, WordLists};
use tkopl_core::llm::{
    load_example_pool, AnswerType, Example, HttpClientConfig, HttpLlmClient, LlmClient, OracleMock, QuestionCategory,
};
use tkopl_core::pipeline::{Pipeline, PipelineConfig};
use tkopl_core::selfimprove::{
    load_items, CommandTrainer, FineTuneHook, NoopTrainer, SelfImprover, SimulatedImprovingTrainer, TrainingItem,
};
use tkopl_core::store::StoreBuilder;
use tkopl_core::{eval, execute_program, parse_draft, serialize_draft, Program, QuadFormat, TkgStore};

use crate::config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Upstream(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Upstream(_) => 3,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "tkopl", version, about = "Temporal KoPL question answering over temporal knowledge graphs")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Unset flags fall back to the config
/// file, then to built-in defaults.
#[derive(Args, Debug, Default)]
struct GlobalArgs {
    /// Directory that relative paths are resolved against
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// `key = value` config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Fact file(s); repeat or comma-separate
    #[arg(long, global = true, value_delimiter = ',')]
    kg: Vec<PathBuf>,
    /// tsv-point, tsv-interval or event-table
    #[arg(long, global = true)]
    format: Option<QuadFormat>,
    /// Event qualifier table(s)
    #[arg(long, global = true, value_delimiter = ',')]
    events: Vec<PathBuf>,
    #[arg(long, global = true)]
    question_words: Option<PathBuf>,
    #[arg(long, global = true)]
    stop_words: Option<PathBuf>,
    #[arg(long, global = true)]
    temporal_words: Option<PathBuf>,
    /// Retrieved fact sentences per question
    #[arg(long = "retrieve-k", global = true)]
    retrieve_k: Option<usize>,
    /// Entity alternatives per mention
    #[arg(long, global = true)]
    top_e: Option<usize>,
    /// Relation alternatives per mention
    #[arg(long, global = true)]
    r: Option<usize>,
    /// Fuzzy-match score needed to link a mention
    #[arg(long, global = true)]
    link_threshold: Option<f64>,
    /// Execute dependency-order and direction variants too
    #[arg(long, global = true)]
    expand: bool,
    /// Variant cap per program
    #[arg(long, global = true)]
    cap: Option<usize>,
    /// Completion service endpoint
    #[arg(long, global = true, conflicts_with = "mock")]
    llm: Option<String>,
    /// JSONL table of canned programs used instead of a model
    #[arg(long, global = true)]
    mock: Option<PathBuf>,
    /// Demonstration pool (JSONL)
    #[arg(long, global = true)]
    pool: Option<PathBuf>,
    #[arg(long, global = true)]
    n_demos: Option<usize>,
    #[arg(long, global = true)]
    n_drafts: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-question parallelism
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Load fact files and print statistics
    Load,
    /// Execute a program file against the store
    Exec {
        #[arg(long)]
        program_file: PathBuf,
    },
    /// Link the mentions of a draft program for a question
    Link {
        #[arg(long)]
        question: String,
        #[arg(long)]
        program_file: PathBuf,
    },
    /// Answer one question end to end
    Answer {
        #[arg(long)]
        question: String,
        #[arg(long)]
        category: Option<QuestionCategory>,
        #[arg(long)]
        answer_type: Option<AnswerType>,
        /// Include drafts, linked copies and executed programs
        #[arg(long)]
        debug: bool,
    },
    /// Hits@k over a labelled test set
    Eval {
        #[arg(long)]
        testset: PathBuf,
        /// Comma-separated k values
        #[arg(long, default_value = "1,10")]
        k: String,
        /// Print a TSV table instead of JSON
        #[arg(long)]
        tsv: bool,
    },
    /// Self-training loop over a labelled training set
    Selfimprove {
        #[arg(long)]
        trainset: PathBuf,
        /// Maximum number of rounds
        #[arg(long)]
        rounds: Option<usize>,
        /// Minimum number of accepted programs to keep going
        #[arg(long)]
        threshold: Option<usize>,
        #[arg(long, value_enum, default_value_t = TrainerKind::Noop)]
        trainer: TrainerKind,
        /// Shell command for `--trainer command`; gets the export path as its argument
        #[arg(long)]
        trainer_command: Option<String>,
        /// Initial knowledge of the simulated trainer (JSONL like --mock)
        #[arg(long)]
        initial_mock: Option<PathBuf>,
        /// Questions the simulated trainer learns per accepted record
        #[arg(long, default_value_t = 1)]
        gain: usize,
        /// Where fine-tuning exports are written
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TrainerKind {
    Noop,
    Simulated,
    Command,
}

fn resolve_config(global: &GlobalArgs) -> CliResult<RunConfig> {
    let mut c = RunConfig::default();
    if let Some(w) = &global.workdir {
        c.workdir = w.clone();
    }
    if let Some(path) = &global.config {
        let path = c.resolve(path);
        c.load_file(&path)?;
    }
    if !global.kg.is_empty() {
        c.kg = global.kg.clone();
    }
    if let Some(f) = global.format {
        c.format = f;
    }
    if !global.events.is_empty() {
        c.events = global.events.clone();
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),* $(,)?) => {
            $(if let Some(v) = &global.$flag { c.$field = v.clone(); })*
        };
    }
    set!(retrieve_k => k, top_e => top_e, r => r, link_threshold => threshold_link, cap => cap,
         n_demos => n_demos, n_drafts => n_drafts, seed => seed);
    macro_rules! set_opt {
        ($($flag:ident),*) => {
            $(if global.$flag.is_some() { c.$flag = global.$flag.clone(); })*
        };
    }
    set_opt!(question_words, stop_words, temporal_words, pool, jobs);
    if global.llm.is_some() {
        c.llm = global.llm.clone();
        c.mock = None;
    }
    if global.mock.is_some() {
        c.mock = global.mock.clone();
        c.llm = None;
    }
    if global.expand {
        c.expand = true;
    }
    Ok(c)
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn open(path: &Path) -> CliResult<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))
}

fn load_store(c: &RunConfig) -> CliResult<TkgStore> {
    if c.kg.is_empty() && c.events.is_empty() {
        return Err(CliError::Input("no knowledge graph given (--kg)".into()));
    }
    let mut builder = StoreBuilder::new();
    for path in &c.kg {
        let path = c.resolve(path);
        builder =
            builder.load(open(&path)?, c.format).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    for path in &c.events {
        let path = c.resolve(path);
        builder = builder
            .load(open(&path)?, QuadFormat::EventTable)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    let store = builder.build();
    log::info!("loaded {} facts, {} entities, {} relations", store.len(), store.entity_count(), store.relation_count());
    Ok(store)
}

fn word_lists(c: &RunConfig) -> CliResult<WordLists> {
    let mut lists = WordLists::default();
    let load = |p: &Path| WordList::load(&c.resolve(p)).map_err(|e| CliError::Input(format!("{}: {e}", p.display())));
    if let Some(p) = &c.question_words {
        lists.question = load(p)?;
    }
    if let Some(p) = &c.stop_words {
        lists.stop = load(p)?;
    }
    if let Some(p) = &c.temporal_words {
        lists.temporal = load(p)?;
    }
    Ok(lists)
}

fn load_pool(c: &RunConfig) -> CliResult<Vec<Example>> {
    match &c.pool {
        Some(p) => {
            let p = c.resolve(p);
            load_example_pool(open(&p)?).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
        }
        None => {
            log::warn!("no demonstration pool given; prompts carry no demonstrations");
            Ok(Vec::new())
        }
    }
}

fn load_mock(c: &RunConfig, path: &Path) -> CliResult<OracleMock> {
    let p = c.resolve(path);
    OracleMock::load(open(&p)?).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
}

fn client(c: &RunConfig) -> CliResult<Arc<dyn LlmClient>> {
    match (&c.llm, &c.mock) {
        (Some(endpoint), _) => Ok(Arc::new(HttpLlmClient::new(HttpClientConfig::new(endpoint.clone())))),
        (None, Some(mock)) => Ok(Arc::new(load_mock(c, mock)?)),
        (None, None) => Err(CliError::Input("no program generator given (--llm or --mock)".into())),
    }
}

fn pipeline(c: &RunConfig, store: TkgStore) -> CliResult<Pipeline> {
    let config = PipelineConfig {
        n_demos: c.n_demos,
        n_drafts: c.n_drafts,
        seed: c.seed,
        link: link_config(c),
        expand: c.expand,
        cap: c.cap,
    };
    Ok(Pipeline::new(Arc::new(store), load_pool(c)?, Arc::new(TrigramTfIdf::new()), word_lists(c)?, config))
}

fn link_config(c: &RunConfig) -> LinkConfig {
    LinkConfig { k: c.k, top_e: c.top_e, r: c.r, threshold: c.threshold_link }
}

fn read_program(c: &RunConfig, path: &Path) -> CliResult<Program> {
    let text = read_text(&c.resolve(path))?;
    let draft = parse_draft(&text);
    for d in &draft.diagnostics {
        eprintln!("{}: {d}", path.display());
    }
    match draft.parsed {
        Some(p) if !draft.has_errors() => Ok(p),
        _ => Err(CliError::Input(format!("{}: malformed program", path.display()))),
    }
}

fn cmd_load(c: &RunConfig) -> CliResult<Json> {
    let store = load_store(c)?;
    Ok(json!({
        "facts": store.len(),
        "entities": store.entity_count(),
        "relations": store.relation_count(),
        "events": store.event_entities().count(),
    }))
}

fn cmd_exec(c: &RunConfig, program_file: &Path) -> CliResult<Json> {
    let store = load_store(c)?;
    let program = read_program(c, program_file)?;
    if !c.expand {
        let answers = execute_program(&store, &program).map_err(|e| CliError::Input(e.to_string()))?;
        return Ok(json!({ "answers": answers }));
    }
    let merged = execute_all(&store, &enumerate_variants(&program, c.cap));
    let variants: Vec<Json> = merged
        .outcomes
        .iter()
        .map(|o| match &o.result {
            Ok(answers) => json!({ "program": serialize_draft(&o.program), "answers": answers }),
            Err(e) => {
                log::warn!("variant failed: {e}");
                json!({ "program": serialize_draft(&o.program), "error": e.to_string() })
            }
        })
        .collect();
    let support: Vec<Json> = merged.ranked.iter().map(|(a, n)| json!({ "answer": a, "support": n })).collect();
    Ok(json!({ "answers": merged.answers(), "support": support, "variants": variants }))
}

fn cmd_link(c: &RunConfig, question: &str, program_file: &Path) -> CliResult<Json> {
    let store = Arc::new(load_store(c)?);
    let program = read_program(c, program_file)?;
    let linker = tkopl_core::linker::Linker::new(
        Arc::clone(&store),
        Arc::new(TrigramTfIdf::new()),
        word_lists(c)?,
        link_config(c),
    );
    let result = linker.link(question, &program).map_err(|e| CliError::Upstream(e.to_string()))?;
    for d in &result.diagnostics {
        log::warn!("{d}");
    }
    let mentions: Vec<Json> = result
        .arg_links
        .iter()
        .map(|l| json!({ "node": l.node, "arg": l.arg, "mention": l.mention, "options": l.options }))
        .collect();
    Ok(json!({
        "entity_candidates": result.entity_candidates.iter().map(|(e, s)| (store.entity_name(*e), *s)).collect::<Vec<_>>(),
        "relation_candidates": result.relation_candidates.iter().map(|(r, s)| (store.relation_name(*r), *s)).collect::<Vec<_>>(),
        "mentions": mentions,
        "programs": result.linked_drafts.iter().map(serialize_draft).collect::<Vec<_>>(),
    }))
}

fn cmd_answer(
    c: &RunConfig,
    question: &str,
    category: Option<QuestionCategory>,
    answer_type: Option<AnswerType>,
    debug: bool,
) -> CliResult<Json> {
    let llm = client(c)?;
    let pipeline = pipeline(c, load_store(c)?)?;
    let out = pipeline.answer(llm.as_ref(), question, category, answer_type).map_err(|e| {
        if e.is_upstream() {
            CliError::Upstream(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    })?;
    for w in &out.warnings {
        log::warn!("{w}");
    }
    let answers = out.answers();
    if answers.is_empty() {
        log::warn!("no answer for question");
    }
    let chosen: Vec<String> = out
        .programs
        .iter()
        .zip(&out.merged.outcomes)
        .filter(|(_, o)| o.result.as_ref().is_ok_and(|a| !a.is_empty()))
        .map(|(p, _)| serialize_draft(p))
        .collect();
    let mut result = json!({ "question": question, "answers": answers, "programs": chosen });
    if debug {
        result["drafts"] = json!(out.drafts.iter().map(|d| d.raw_text.clone()).collect::<Vec<_>>());
        result["linked"] = json!(out
            .links
            .iter()
            .map(|l| l.linked_drafts.iter().map(serialize_draft).collect::<Vec<_>>())
            .collect::<Vec<_>>());
        result["executed"] = json!(out
            .merged
            .outcomes
            .iter()
            .map(|o| match &o.result {
                Ok(a) => json!({ "program": serialize_draft(&o.program), "answers": a }),
                Err(e) => json!({ "program": serialize_draft(&o.program), "error": e.to_string() }),
            })
            .collect::<Vec<_>>());
    }
    Ok(result)
}

fn load_dataset(c: &RunConfig, path: &Path) -> CliResult<Vec<TrainingItem>> {
    let p = c.resolve(path);
    load_items(open(&p)?).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
}

fn cmd_eval(c: &RunConfig, testset: &Path, k: &str, tsv: bool) -> CliResult<String> {
    let ks = eval::parse_ks(k).map_err(CliError::Input)?;
    let items = load_dataset(c, testset)?;
    let llm = client(c)?;
    let pipeline = pipeline(c, load_store(c)?)?;
    let report = eval::evaluate(&pipeline, llm.as_ref(), &items, &ks).map_err(|e| match &e {
        eval::EvalError::Pipeline { source, .. } if source.is_upstream() => CliError::Upstream(e.to_string()),
        _ => CliError::Input(e.to_string()),
    })?;
    if tsv {
        Ok(report.to_tsv())
    } else {
        Ok(to_json_line(&json!(report)))
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_selfimprove(
    c: &RunConfig,
    trainset: &Path,
    trainer_kind: TrainerKind,
    trainer_command: Option<&str>,
    initial_mock: Option<&Path>,
    gain: usize,
) -> CliResult<Json> {
    let items = load_dataset(c, trainset)?;
    let out_dir = c.out.as_ref().map(|p| c.resolve(p));
    let mut trainer: Box<dyn FineTuneHook>;
    let initial: Arc<dyn LlmClient>;
    match trainer_kind {
        TrainerKind::Noop => {
            initial = client(c)?;
            trainer = Box::new(NoopTrainer::new(Arc::clone(&initial)));
        }
        TrainerKind::Simulated => {
            let reference = match &c.mock {
                Some(m) => load_mock(c, m)?,
                None => return Err(CliError::Input("--trainer simulated needs --mock as its reference table".into())),
            };
            let known = match initial_mock {
                Some(m) => load_mock(c, m)?,
                None => OracleMock::new(),
            };
            let simulated = SimulatedImprovingTrainer::new(&reference, known, gain);
            initial = simulated.initial_client();
            trainer = Box::new(simulated);
        }
        TrainerKind::Command => {
            let command =
                trainer_command.ok_or_else(|| CliError::Input("--trainer command needs --trainer-command".into()))?;
            if out_dir.is_none() {
                return Err(CliError::Input("--trainer command needs --out for the exports".into()));
            }
            let endpoint = c.llm.clone().unwrap_or_default();
            initial = client(c)?;
            trainer = Box::new(CommandTrainer {
                command: command.to_string(),
                client_template: HttpClientConfig::new(endpoint),
            });
        }
    }
    // training programs are always generated with expansion
    let mut pipeline = pipeline(c, load_store(c)?)?;
    pipeline.set_expand(true);
    let mut improver = SelfImprover::new(&items, &pipeline, out_dir.as_deref());
    let (reports, state) =
        improver.run(initial.as_ref(), trainer.as_mut(), c.min_correct, c.rounds).map_err(|e| match e {
            tkopl_core::selfimprove::SelfImproveError::Export(_) => CliError::Input(e.to_string()),
            _ => CliError::Upstream(e.to_string()),
        })?;
    Ok(json!({
        "rounds": reports,
        "final": {
            "round": state.round,
            "correct": state.correct.iter().map(|(q, _)| q).collect::<Vec<_>>(),
            "incorrect": state.incorrect,
        },
        "records": improver.records.len(),
    }))
}

fn to_json_line(value: &Json) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON values serialize");
    s.push('\n');
    s
}

fn run(cli: Cli) -> CliResult<String> {
    let mut c = resolve_config(&cli.global)?;
    if let Some(jobs) = c.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| CliError::Input(format!("--jobs: {e}")))?;
    }
    let json = match &cli.command {
        Command::Load => cmd_load(&c)?,
        Command::Exec { program_file } => cmd_exec(&c, program_file)?,
        Command::Link { question, program_file } => cmd_link(&c, question, program_file)?,
        Command::Answer { question, category, answer_type, debug } => {
            cmd_answer(&c, question, *category, *answer_type, *debug)?
        }
        Command::Eval { testset, k, tsv } => return cmd_eval(&c, testset, k, *tsv),
        Command::Selfimprove { trainset, rounds, threshold, trainer, trainer_command, initial_mock, gain, out } => {
            if let Some(r) = rounds {
                c.rounds = *r;
            }
            if let Some(t) = threshold {
                c.min_correct = *t;
            }
            if out.is_some() {
                c.out = out.clone();
            }
            cmd_selfimprove(&c, trainset, *trainer, trainer_command.as_deref(), initial_mock.as_deref(), *gain)?
        }
    };
    Ok(to_json_line(&json))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).format_timestamp(None).init();
    match run(Cli::parse()) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
