//! Run configuration: built-in defaults, overridden by a `key = value`
//! config file, overridden by command-line flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use tkopl_core::QuadFormat;

use crate::CliError;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub workdir: PathBuf,
    pub kg: Vec<PathBuf>,
    pub format: QuadFormat,
    pub events: Vec<PathBuf>,
    pub question_words: Option<PathBuf>,
    pub stop_words: Option<PathBuf>,
    pub temporal_words: Option<PathBuf>,
    pub k: usize,
    pub top_e: usize,
    pub r: usize,
    pub threshold_link: f64,
    pub expand: bool,
    pub cap: usize,
    pub llm: Option<String>,
    pub mock: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub n_demos: usize,
    pub n_drafts: usize,
    pub seed: u64,
    pub min_correct: usize,
    pub rounds: usize,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            workdir: PathBuf::from("."),
            kg: Vec::new(),
            format: QuadFormat::TsvPoint,
            events: Vec::new(),
            question_words: None,
            stop_words: None,
            temporal_words: None,
            k: 5,
            top_e: 1,
            r: 2,
            threshold_link: 0.5,
            expand: false,
            cap: 64,
            llm: None,
            mock: None,
            pool: None,
            n_demos: 6,
            n_drafts: 1,
            seed: 0,
            min_correct: 1,
            rounds: 3,
            out: None,
            jobs: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| CliError::Input(format!("config key '{key}': cannot parse '{value}': {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(CliError::Input(format!("config key '{key}': expected a boolean, got '{value}'"))),
    }
}

fn paths(value: &str) -> Vec<PathBuf> {
    value.split(',').map(str::trim).filter(|p| !p.is_empty()).map(PathBuf::from).collect()
}

/// Reads `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("config line {}: expected key = value", i + 1)))?;
        map.insert(key.trim().replace('-', "_"), value.trim().to_string());
    }
    Ok(map)
}

impl RunConfig {
    pub fn apply_map(&mut self, map: &BTreeMap<String, String>) -> Result<(), CliError> {
        for (key, value) in map {
            let v = value.as_str();
            match key.as_str() {
                "kg" => self.kg = paths(v),
                "format" => self.format = parse(key, v)?,
                "events" => self.events = paths(v),
                "question_words" => self.question_words = Some(v.into()),
                "stop_words" => self.stop_words = Some(v.into()),
                "temporal_words" => self.temporal_words = Some(v.into()),
                "k" => self.k = parse(key, v)?,
                "top_e" => self.top_e = parse(key, v)?,
                "r" => self.r = parse(key, v)?,
                "link_threshold" => self.threshold_link = parse(key, v)?,
                "expand" => self.expand = parse_bool(key, v)?,
                "cap" => self.cap = parse(key, v)?,
                "llm" => self.llm = Some(v.to_string()),
                "mock" => self.mock = Some(v.into()),
                "pool" => self.pool = Some(v.into()),
                "n_demos" => self.n_demos = parse(key, v)?,
                "n_drafts" => self.n_drafts = parse(key, v)?,
                "seed" => self.seed = parse(key, v)?,
                "threshold" => self.min_correct = parse(key, v)?,
                "rounds" => self.rounds = parse(key, v)?,
                "out" => self.out = Some(v.into()),
                "jobs" => self.jobs = Some(parse(key, v)?),
                other => return Err(CliError::Input(format!("unknown config key '{other}'"))),
            }
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_map(&parse_config_text(&text)?)
    }

    /// Resolves a path against the working directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.workdir.join(path)
        }
    }
}
