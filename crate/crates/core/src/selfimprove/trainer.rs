//! Fine-tuning hooks. Weight updates happen outside this crate; a hook only
//! has to turn accepted records into the client used for the next round.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use thiserror::Error;

use crate::llm::{HttpClientConfig, HttpLlmClient, LlmClient, OracleMock};

use super::FineTuneRecord;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("trainer command failed to start: {0}")]
    Spawn(#[from] std::io::Error),
    #[error("trainer command exited with {status}: {stderr}")]
    Failed { status: String, stderr: String },
    #[error("trainer command printed no endpoint")]
    NoEndpoint,
    #[error("trainer needs the export written to disk (set a work directory)")]
    NoExport,
    #[error("{0}")]
    Other(String),
}

pub trait FineTuneHook {
    /// Called with this round's accepted records (and where they were
    /// exported, if anywhere); returns the next round's generator.
    fn fine_tune(
        &mut self,
        records: &[FineTuneRecord],
        export: Option<&Path>,
    ) -> Result<Arc<dyn LlmClient>, TrainerError>;
}

/// Keeps using the same client.
pub struct NoopTrainer {
    client: Arc<dyn LlmClient>,
}

impl NoopTrainer {
    pub fn new(client: Arc<dyn LlmClient>) -> Self {
        Self { client }
    }
}

impl FineTuneHook for NoopTrainer {
    fn fine_tune(&mut self, _: &[FineTuneRecord], _: Option<&Path>) -> Result<Arc<dyn LlmClient>, TrainerError> {
        Ok(Arc::clone(&self.client))
    }
}

/// Test double for a model that generalizes from its training data.
///
/// It starts out knowing the programs in `known`. Every fine-tuning call
/// memorizes the records and additionally "learns" up to `gain_per_record`
/// further questions per record from a hidden reference table (in sorted
/// question order), so each round solves more questions until the
/// reference is exhausted.
pub struct SimulatedImprovingTrainer {
    reference: BTreeMap<String, Vec<String>>,
    known: OracleMock,
    gain_per_record: usize,
}

impl SimulatedImprovingTrainer {
    pub fn new(reference: &OracleMock, known: OracleMock, gain_per_record: usize) -> Self {
        let reference = reference.questions().map(|q| (q.to_string(), reference.completions(q).to_vec())).collect();
        Self { reference, known, gain_per_record }
    }

    pub fn initial_client(&self) -> Arc<dyn LlmClient> {
        Arc::new(self.known.clone())
    }
}

impl FineTuneHook for SimulatedImprovingTrainer {
    fn fine_tune(&mut self, records: &[FineTuneRecord], _: Option<&Path>) -> Result<Arc<dyn LlmClient>, TrainerError> {
        for r in records {
            if !self.known.knows(&r.input) {
                self.known.insert(r.input.clone(), r.response.clone());
            }
        }
        let budget = records.len() * self.gain_per_record;
        let learned: Vec<(String, Vec<String>)> = self
            .reference
            .iter()
            .filter(|(q, _)| !self.known.knows(q))
            .take(budget)
            .map(|(q, c)| (q.clone(), c.clone()))
            .collect();
        for (q, completions) in learned {
            for c in completions {
                self.known.insert(q.clone(), c);
            }
        }
        Ok(Arc::new(self.known.clone()))
    }
}

/// Runs an external command with the export path appended as its last
/// argument; the last non-empty stdout line is the endpoint of the
/// fine-tuned model.
pub struct CommandTrainer {
    pub command: String,
    pub client_template: HttpClientConfig,
}

impl FineTuneHook for CommandTrainer {
    fn fine_tune(&mut self, _: &[FineTuneRecord], export: Option<&Path>) -> Result<Arc<dyn LlmClient>, TrainerError> {
        let export = export.ok_or(TrainerError::NoExport)?;
        let output =
            Command::new("sh").arg("-c").arg(format!("{} \"$1\"", self.command)).arg("trainer").arg(export).output()?;
        if !output.status.success() {
            return Err(TrainerError::Failed {
                status: output.status.to_string(),
                stderr: String::from_utf8_lossy(&output.stderr).trim().to_string(),
            });
        }
        let stdout = String::from_utf8_lossy(&output.stdout);
        let endpoint = stdout.lines().map(str::trim).rfind(|l| !l.is_empty()).ok_or(TrainerError::NoEndpoint)?;
        let config = HttpClientConfig { endpoint: endpoint.to_string(), ..self.client_template.clone() };
        Ok(Arc::new(HttpLlmClient::new(config)))
    }
}
