//! JSONL store of recorded per-token log-probabilities.

use super::{Context, LmError, Sample, SamplingConfig, ScoreRequest, Scorer};
use crate::scoring::{ContextSpec, TokenScoreSeries};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Mutex, RwLock};

/// One line of the store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayRecord {
    pub instance_id: String,
    pub candidate_id: usize,
    pub spec: ContextSpec,
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
}

type Key = (String, usize, ContextSpec);

/// Readers share the index; appends are serialized through one writer.
/// A later record for the same key replaces the earlier one.
#[derive(Debug, Default)]
pub struct ReplayStore {
    records: RwLock<HashMap<Key, ReplayRecord>>,
    writer: Mutex<Option<File>>,
}

impl ReplayStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads `path` if it exists and appends future inserts to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LmError> {
        let path = path.as_ref();
        let mut records = HashMap::new();
        if path.exists() {
            for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: ReplayRecord = serde_json::from_str(&line)
                    .map_err(|e| LmError::MalformedResponse(format!("{}:{}: {e}", path.display(), n + 1)))?;
                records.insert(key(&record), record);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            records: RwLock::new(records),
            writer: Mutex::new(Some(file)),
        })
    }

    /// Read-only view of an existing file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LmError> {
        let store = Self::open(path)?;
        *store.writer.lock().expect("writer lock") = None;
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.records.read().expect("records lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&self, record: ReplayRecord) -> Result<(), LmError> {
        if record.tokens.len() != record.logprobs.len() {
            return Err(LmError::AlignmentMismatch {
                spec: record.spec,
                expected: record.tokens.len(),
                got: record.logprobs.len(),
            });
        }
        let mut writer = self.writer.lock().expect("writer lock");
        if let Some(file) = writer.as_mut() {
            let mut line = serde_json::to_vec(&record).expect("record serializes");
            line.push(b'\n');
            file.write_all(&line)?;
            file.flush()?;
        }
        self.records.write().expect("records lock").insert(key(&record), record);
        Ok(())
    }

    /// Records all four series of one candidate.
    pub fn insert_series(
        &self,
        instance_id: &str,
        candidate_id: usize,
        tokens: &[String],
        series: &TokenScoreSeries,
    ) -> Result<(), LmError> {
        for spec in ContextSpec::ALL {
            self.insert(ReplayRecord {
                instance_id: instance_id.to_string(),
                candidate_id,
                spec,
                tokens: tokens.to_vec(),
                logprobs: series.get(spec).to_vec(),
            })?;
        }
        Ok(())
    }

    pub fn get(&self, instance_id: &str, candidate_id: usize, spec: ContextSpec) -> Result<ReplayRecord, LmError> {
        self.records
            .read()
            .expect("records lock")
            .get(&(instance_id.to_string(), candidate_id, spec))
            .cloned()
            .ok_or_else(|| LmError::NotFound {
                instance_id: instance_id.to_string(),
                candidate_id,
                spec,
            })
    }

    pub fn series(&self, instance_id: &str, candidate_id: usize) -> Result<TokenScoreSeries, LmError> {
        let get = |spec| self.replay_score(instance_id, candidate_id, spec);
        Ok(TokenScoreSeries::new(
            get(ContextSpec::Full)?,
            get(ContextSpec::HistoryOnly)?,
            get(ContextSpec::KnowledgeOnly)?,
            get(ContextSpec::None)?,
        )?)
    }

    pub fn replay_score(&self, instance_id: &str, candidate_id: usize, spec: ContextSpec) -> Result<Vec<f64>, LmError> {
        Ok(self.get(instance_id, candidate_id, spec)?.logprobs)
    }
}

fn key(record: &ReplayRecord) -> Key {
    (record.instance_id.clone(), record.candidate_id, record.spec)
}

impl Scorer for ReplayStore {
    fn score(&self, request: &ScoreRequest<'_>) -> Result<Vec<f64>, LmError> {
        let record = self.get(request.instance_id, request.candidate_id, request.spec)?;
        if record.tokens.len() != request.response.len() {
            return Err(LmError::AlignmentMismatch {
                spec: request.spec,
                expected: request.response.len(),
                got: record.tokens.len(),
            });
        }
        Ok(record.logprobs)
    }

    fn sample(&self, _: &Context<'_>, _: &SamplingConfig, _: u64) -> Result<Vec<Sample>, LmError> {
        Err(LmError::Unsupported("sampling"))
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}
