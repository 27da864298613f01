//! Assignment protocol and persistence.
//!
//! State lives in two append-only JSONL logs in the data directory:
//! `assignments.jsonl` (one line per task handed out) and `annotations.jsonl`
//! (one line per accepted judgment). Opening a store replays both logs.

use pcmi_core::experiments::{
    aggregate, stable_seed, AggregateResult, Annotation, Choice, ComparisonPair, Experiment, ExperimentError,
    RATERS_PER_PAIR,
};
use pcmi_core::text::token_offsets_utf16;
use pcmi_core::SpanSet;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};
use thiserror::Error;

pub const ASSIGNMENT_LOG: &str = "assignments.jsonl";
pub const ANNOTATION_LOG: &str = "annotations.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("annotator id is required")]
    MissingAnnotator,
    #[error("unknown pair {0}")]
    UnknownPair(String),
    #[error("annotator {annotator_id} already annotated {pair_id}")]
    Duplicate { pair_id: String, annotator_id: String },
    #[error("no open assignment of {pair_id} to {annotator_id}")]
    NoAssignment { pair_id: String, annotator_id: String },
    #[error("pair {0} already has all annotations")]
    PairComplete(String),
    #[error("invalid submission: {0}")]
    Invalid(String),
    #[error("no pair has a complete set of annotations")]
    NoCompletePairs,
    #[error("{path}:{line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Milliseconds since the Unix epoch.
pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreConfig {
    /// Seed for the per-annotator task order.
    pub seed: u64,
    /// An unsubmitted assignment stops holding a slot after this long.
    pub assignment_ttl_ms: u64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            assignment_ttl_ms: 30 * 60 * 1000,
        }
    }
}

/// One line of the assignment log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentRecord {
    pub pair_id: String,
    pub annotator_id: String,
    pub assigned_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentState {
    Open,
    Submitted,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskAssignment {
    pub pair_id: String,
    pub annotator_id: String,
    pub assigned_at: u64,
    pub state: AssignmentState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskMode {
    #[serde(rename = "choice")]
    Choice,
    #[serde(rename = "choice+span")]
    ChoiceSpan,
}

impl TaskMode {
    pub fn for_experiment(exp: Experiment) -> Self {
        if exp.collects_spans() {
            TaskMode::ChoiceSpan
        } else {
            TaskMode::Choice
        }
    }
}

/// A response as rendered for annotators. `token_offsets` are UTF-16
/// `[start, end)` ranges into `text`, absent when the tokens cannot be
/// located in the text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResponse {
    pub text: String,
    pub tokens: Vec<String>,
    pub token_offsets: Option<Vec<[usize; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub pair_id: String,
    pub experiment: Experiment,
    pub mode: TaskMode,
    pub history: Vec<String>,
    pub response_a: TaskResponse,
    pub response_b: TaskResponse,
    pub assigned_at: u64,
}

/// Body of `POST /api/annotations`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Submission {
    pub pair_id: String,
    pub annotator_id: String,
    pub choice: Choice,
    #[serde(default)]
    pub spans: Option<SpanSet>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentProgress {
    pub pairs: usize,
    pub complete: usize,
    pub annotations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairProgress {
    pub pair_id: String,
    pub submitted: usize,
    pub open: usize,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub total_pairs: usize,
    pub complete_pairs: usize,
    pub annotations: usize,
    pub open_assignments: usize,
    pub experiments: BTreeMap<Experiment, ExperimentProgress>,
    pub pairs: Vec<PairProgress>,
}

/// Everything the logs determine, in a canonical order; used to check that a
/// restart reconstructs the same state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub assignments: Vec<TaskAssignment>,
    pub annotations: Vec<Annotation>,
}

struct Log {
    path: PathBuf,
    file: File,
}

impl Log {
    /// Opens `path` for appending and returns its complete lines. A final line
    /// without a newline is a torn write from a crash; it is dropped and cut
    /// from the file.
    fn open(path: PathBuf) -> Result<(Self, Vec<String>), StoreError> {
        let mut lines = Vec::new();
        if path.exists() {
            let content = std::fs::read_to_string(&path)?;
            let complete = content.rfind('\n').map_or(0, |i| i + 1);
            if complete < content.len() {
                log::warn!(
                    "{}: dropping {} bytes of an incomplete final line",
                    path.display(),
                    content.len() - complete
                );
                OpenOptions::new().write(true).open(&path)?.set_len(complete as u64)?;
            }
            lines.extend(content[..complete].lines().map(String::from));
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok((Self { path, file }, lines))
    }

    /// Appends one record as a single write, then syncs.
    fn append<T: Serialize>(&mut self, record: &T) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(record).map_err(|e| StoreError::Invalid(e.to_string()))?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(())
    }
}

fn parse_lines<T: for<'de> Deserialize<'de>>(path: &Path, lines: &[String]) -> Result<Vec<(usize, T)>, StoreError> {
    lines
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map(|r| (i + 1, r)).map_err(|e| StoreError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Default)]
struct PairState {
    annotations: Vec<usize>,
    /// Annotator -> assignment time, for every assignment ever made.
    assigned: BTreeMap<String, u64>,
}

pub struct Store {
    pairs: Vec<ComparisonPair>,
    index: HashMap<String, usize>,
    state: Vec<PairState>,
    annotations: Vec<Annotation>,
    submitted: HashSet<(String, String)>,
    assignments: Log,
    annotation_log: Log,
    config: StoreConfig,
    clock: Clock,
}

impl Store {
    /// Opens (or creates) the logs under `dir` and replays them.
    pub fn open(pairs: Vec<ComparisonPair>, dir: &Path, config: StoreConfig, clock: Clock) -> Result<Self, StoreError> {
        let mut index = HashMap::new();
        for (i, p) in pairs.iter().enumerate() {
            if index.insert(p.pair_id.clone(), i).is_some() {
                return Err(StoreError::Invalid(format!("duplicate pair id {}", p.pair_id)));
            }
        }
        std::fs::create_dir_all(dir)?;
        let (assignments, assignment_lines) = Log::open(dir.join(ASSIGNMENT_LOG))?;
        let (annotation_log, annotation_lines) = Log::open(dir.join(ANNOTATION_LOG))?;
        let mut store = Self {
            state: (0..pairs.len()).map(|_| PairState::default()).collect(),
            pairs,
            index,
            annotations: Vec::new(),
            submitted: HashSet::new(),
            assignments,
            annotation_log,
            config,
            clock,
        };

        let corrupt = |path: &Path, line: usize, message: String| StoreError::Corrupt {
            path: path.to_path_buf(),
            line,
            message,
        };
        let path = store.assignments.path.clone();
        for (line, rec) in parse_lines::<AssignmentRecord>(&path, &assignment_lines)? {
            let i = store.pair_index(&rec.pair_id).map_err(|e| corrupt(&path, line, e.to_string()))?;
            if store.state[i].assigned.insert(rec.annotator_id.clone(), rec.assigned_at).is_some() {
                return Err(corrupt(&path, line, format!("{} assigned {} twice", rec.annotator_id, rec.pair_id)));
            }
        }
        let path = store.annotation_log.path.clone();
        for (line, a) in parse_lines::<Annotation>(&path, &annotation_lines)? {
            let i = store.pair_index(&a.pair_id).map_err(|e| corrupt(&path, line, e.to_string()))?;
            if store.submitted.contains(&(a.annotator_id.clone(), a.pair_id.clone())) {
                return Err(corrupt(&path, line, format!("duplicate annotation by {}", a.annotator_id)));
            }
            if store.state[i].annotations.len() >= RATERS_PER_PAIR {
                return Err(corrupt(&path, line, format!("more than {RATERS_PER_PAIR} annotations for {}", a.pair_id)));
            }
            store.state[i].assigned.entry(a.annotator_id.clone()).or_insert(a.timestamp);
            store.record(i, a);
        }
        log::info!(
            "annotation store: {} pairs, {} annotations, {} assignments replayed",
            store.pairs.len(),
            store.annotations.len(),
            assignment_lines.len()
        );
        Ok(store)
    }

    fn pair_index(&self, pair_id: &str) -> Result<usize, StoreError> {
        self.index
            .get(pair_id)
            .copied()
            .ok_or_else(|| StoreError::UnknownPair(pair_id.to_string()))
    }

    fn record(&mut self, i: usize, annotation: Annotation) {
        self.submitted
            .insert((annotation.annotator_id.clone(), annotation.pair_id.clone()));
        self.state[i].annotations.push(self.annotations.len());
        self.annotations.push(annotation);
    }

    pub fn pairs(&self) -> &[ComparisonPair] {
        &self.pairs
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    fn assignment_state(&self, pair_id: &str, annotator_id: &str, assigned_at: u64, now: u64) -> AssignmentState {
        if self.submitted.contains(&(annotator_id.to_string(), pair_id.to_string())) {
            AssignmentState::Submitted
        } else if now.saturating_sub(assigned_at) >= self.config.assignment_ttl_ms {
            AssignmentState::Expired
        } else {
            AssignmentState::Open
        }
    }

    fn open_count(&self, i: usize, now: u64) -> usize {
        let pair_id = &self.pairs[i].pair_id;
        self.state[i]
            .assigned
            .iter()
            .filter(|(who, &at)| self.assignment_state(pair_id, who, at, now) == AssignmentState::Open)
            .count()
    }

    /// Hands `annotator_id` the least-annotated pair it has not seen and that
    /// still has a free slot. Ties are broken by a per-annotator random order.
    pub fn next_task(&mut self, annotator_id: &str) -> Result<Option<Task>, StoreError> {
        let annotator_id = annotator_id.trim();
        if annotator_id.is_empty() {
            return Err(StoreError::MissingAnnotator);
        }
        let now = (self.clock)();
        let seed = self.config.seed;
        let best = (0..self.pairs.len())
            .filter(|&i| !self.state[i].assigned.contains_key(annotator_id))
            .filter_map(|i| {
                let submitted = self.state[i].annotations.len();
                let load = submitted + self.open_count(i, now);
                (load < RATERS_PER_PAIR).then(|| {
                    let tie = stable_seed(seed, &format!("{annotator_id}\u{1f}{}", self.pairs[i].pair_id));
                    ((submitted, load, tie), i)
                })
            })
            .min()
            .map(|(_, i)| i);
        let Some(i) = best else { return Ok(None) };

        let record = AssignmentRecord {
            pair_id: self.pairs[i].pair_id.clone(),
            annotator_id: annotator_id.to_string(),
            assigned_at: now,
        };
        self.assignments.append(&record)?;
        self.state[i].assigned.insert(record.annotator_id, now);
        Ok(Some(task_for(&self.pairs[i], now)))
    }

    /// Validates and persists one judgment.
    pub fn submit(&mut self, submission: Submission) -> Result<Annotation, StoreError> {
        let Submission {
            pair_id,
            annotator_id,
            choice,
            spans,
        } = submission;
        let annotator_id = annotator_id.trim().to_string();
        if annotator_id.is_empty() {
            return Err(StoreError::Invalid("annotator_id is empty".into()));
        }
        let i = self.pair_index(&pair_id)?;
        let pair = &self.pairs[i];
        let spans = validate_spans(pair, choice, spans)?;

        if self.submitted.contains(&(annotator_id.clone(), pair_id.clone())) {
            return Err(StoreError::Duplicate { pair_id, annotator_id });
        }
        if !self.state[i].assigned.contains_key(&annotator_id) {
            return Err(StoreError::NoAssignment { pair_id, annotator_id });
        }
        if self.state[i].annotations.len() >= RATERS_PER_PAIR {
            return Err(StoreError::PairComplete(pair_id));
        }

        let annotation = Annotation {
            pair_id,
            annotator_id,
            choice,
            spans,
            timestamp: (self.clock)(),
        };
        self.annotation_log.append(&annotation)?;
        self.record(i, annotation.clone());
        Ok(annotation)
    }

    pub fn progress(&self) -> Progress {
        let now = (self.clock)();
        let mut experiments: BTreeMap<Experiment, ExperimentProgress> = BTreeMap::new();
        let mut pairs = Vec::with_capacity(self.pairs.len());
        for (i, pair) in self.pairs.iter().enumerate() {
            let submitted = self.state[i].annotations.len();
            let complete = submitted >= RATERS_PER_PAIR;
            let e = experiments.entry(pair.experiment).or_default();
            e.pairs += 1;
            e.annotations += submitted;
            e.complete += usize::from(complete);
            pairs.push(PairProgress {
                pair_id: pair.pair_id.clone(),
                submitted,
                open: self.open_count(i, now),
                complete,
            });
        }
        Progress {
            total_pairs: self.pairs.len(),
            complete_pairs: pairs.iter().filter(|p| p.complete).count(),
            annotations: self.annotations.len(),
            open_assignments: pairs.iter().map(|p| p.open).sum(),
            experiments,
            pairs,
        }
    }

    /// Results table over complete pairs, recomputed from the log.
    pub fn results(&self) -> Result<Vec<AggregateResult>, StoreError> {
        if !self.state.iter().any(|s| s.annotations.len() >= RATERS_PER_PAIR) {
            return Err(StoreError::NoCompletePairs);
        }
        Ok(aggregate(&self.pairs, &self.annotations)?)
    }

    pub fn snapshot(&self) -> Snapshot {
        let now = (self.clock)();
        let mut assignments: Vec<TaskAssignment> = self
            .pairs
            .iter()
            .zip(&self.state)
            .flat_map(|(pair, s)| {
                s.assigned.iter().map(|(who, &at)| TaskAssignment {
                    pair_id: pair.pair_id.clone(),
                    annotator_id: who.clone(),
                    assigned_at: at,
                    state: self.assignment_state(&pair.pair_id, who, at, now),
                })
            })
            .collect();
        assignments.sort_by(|a, b| (&a.pair_id, &a.annotator_id).cmp(&(&b.pair_id, &b.annotator_id)));
        Snapshot {
            assignments,
            annotations: self.annotations.clone(),
        }
    }
}

fn validate_spans(pair: &ComparisonPair, choice: Choice, spans: Option<SpanSet>) -> Result<Option<SpanSet>, StoreError> {
    let spans = spans.filter(|s| !s.is_empty());
    match (TaskMode::for_experiment(pair.experiment), choice.side()) {
        (TaskMode::ChoiceSpan, Some(side)) => {
            let spans = spans.ok_or_else(|| StoreError::Invalid("span mode requires at least one span".into()))?;
            spans
                .validate(pair.side(side).tokens.len())
                .map_err(|e| StoreError::Invalid(e.to_string()))?;
            Ok(Some(spans))
        }
        (_, _) if spans.is_some() => Err(StoreError::Invalid(format!(
            "spans are only accepted with choice A or B on span tasks ({})",
            pair.experiment
        ))),
        _ => Ok(None),
    }
}

fn task_for(pair: &ComparisonPair, assigned_at: u64) -> Task {
    let response = |c: &pcmi_core::experiments::CandidateRef| TaskResponse {
        text: c.text.clone(),
        tokens: c.tokens.clone(),
        token_offsets: token_offsets_utf16(&c.text, &c.tokens)
            .map(|v| v.into_iter().map(|(s, e)| [s, e]).collect()),
    };
    Task {
        pair_id: pair.pair_id.clone(),
        experiment: pair.experiment,
        mode: TaskMode::for_experiment(pair.experiment),
        history: pair.history.clone(),
        response_a: response(&pair.side_a),
        response_b: response(&pair.side_b),
        assigned_at,
    }
}

/// Reads a pairs JSONL file.
pub fn load_pairs(path: &Path) -> Result<Vec<ComparisonPair>, StoreError> {
    let content = std::fs::read_to_string(path)?;
    let lines: Vec<String> = content.lines().map(String::from).collect();
    Ok(parse_lines(path, &lines)?.into_iter().map(|(_, p)| p).collect())
}
