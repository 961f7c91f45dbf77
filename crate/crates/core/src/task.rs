//! Task descriptors, canonical task signatures, and the repeated-task corpus.
//!
//! A task is described by its goal tokens, environment context, available
//! observation channels, and execution constraints. Two descriptors that share
//! normalized goal tokens and constraints share a [`Signature`], regardless of
//! id or instruction wording.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{from_json_str, Error, Result};

/// Identifier of a primitive action in the executor's action set.
pub type ActionId = String;

pub const DEFAULT_ACTIONS: [&str; 12] = [
    "move", "grasp", "lift", "place", "rotate", "push", "pull", "open", "close", "release", "scan",
    "align",
];

const COLORS: [&str; 6] = ["red", "blue", "green", "yellow", "black", "white"];
const OBJECTS: [&str; 6] = ["cube", "cup", "box", "bottle", "drawer", "tool"];

/// Canonical task identity: hex digest of normalized goal tokens and constraints.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Signature(String);

impl Signature {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<String> for Signature {
    fn from(value: String) -> Self {
        Signature(value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    pub max_steps: usize,
    #[serde(default)]
    pub deadline_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub id: String,
    pub instruction: String,
    pub goal: Vec<String>,
    #[serde(default)]
    pub environment: BTreeMap<String, String>,
    #[serde(default)]
    pub observations: Vec<String>,
    pub constraints: Constraints,
    /// Ground truth for the simulated executor; policies never read it.
    pub target_sequence: Vec<ActionId>,
}

impl TaskDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.goal.is_empty() {
            return Err(Error::schema("goal", "goal must be non-empty"));
        }
        if self.constraints.max_steps == 0 {
            return Err(Error::schema("constraints.max_steps", "must be positive"));
        }
        if let Some(d) = self.constraints.deadline_s {
            if d.is_nan() || d < 0.0 {
                return Err(Error::schema(
                    "constraints.deadline_s",
                    "must be nonnegative",
                ));
            }
        }
        if self.target_sequence.len() > self.constraints.max_steps {
            return Err(Error::schema(
                "target_sequence",
                format!(
                    "length {} exceeds max_steps {}",
                    self.target_sequence.len(),
                    self.constraints.max_steps
                ),
            ));
        }
        Ok(())
    }

    pub fn signature(&self) -> Signature {
        signature_of(self)
    }

    /// Normalized goal tokens as a set, the form used for similarity matching.
    pub fn goal_token_set(&self) -> BTreeSet<String> {
        normalize_tokens(&self.goal).into_iter().collect()
    }
}

/// Lowercases each token and strips non-alphanumeric characters; empty results are dropped.
pub fn normalize_tokens<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    tokens
        .iter()
        .map(|t| {
            t.as_ref()
                .chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn signature_of(task: &TaskDescriptor) -> Signature {
    let mut hasher = Sha256::new();
    for token in normalize_tokens(&task.goal) {
        hasher.update(token.as_bytes());
        hasher.update([0x1f]);
    }
    hasher.update(format!("|max_steps={}", task.constraints.max_steps).as_bytes());
    match task.constraints.deadline_s {
        Some(d) => hasher.update(format!("|deadline={:016x}", d.to_bits()).as_bytes()),
        None => hasher.update(b"|deadline=none"),
    }
    let digest = hasher.finalize();
    let hex: String = digest[..16].iter().map(|b| format!("{b:02x}")).collect();
    Signature(hex)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedEvent {
    pub task_signature: Signature,
    pub action_sequence: Vec<ActionId>,
    pub success: bool,
    #[serde(default)]
    pub context: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SelfTask,
    ObservedEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEvent {
    pub cycle: u64,
    /// 1-based repetition index of this task within the corpus.
    pub repeat: u32,
    pub kind: EventKind,
    pub task: TaskDescriptor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed: Option<ObservedEvent>,
}

impl TaskEvent {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        match (self.kind, &self.observed) {
            (EventKind::ObservedEvent, Some(obs)) => {
                if obs.success && obs.action_sequence.is_empty() {
                    return Err(Error::schema(
                        "observed.action_sequence",
                        "successful observation needs at least one action",
                    ));
                }
                Ok(())
            }
            (EventKind::ObservedEvent, None) => Err(Error::schema(
                "observed",
                "observed_event requires an observation",
            )),
            (EventKind::SelfTask, Some(_)) => Err(Error::schema(
                "observed",
                "self_task must not carry an observation",
            )),
            (EventKind::SelfTask, None) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusMode {
    SelfExecution,
    ObservationFirst,
}

/// Shape of the generated benchmark tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub actions: Vec<ActionId>,
    pub min_len: usize,
    pub max_len: usize,
    pub max_steps: usize,
    /// Upper bound on goal-token Jaccard similarity between two distinct tasks.
    pub max_goal_overlap: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            actions: DEFAULT_ACTIONS.iter().map(|s| s.to_string()).collect(),
            min_len: 3,
            max_len: 6,
            max_steps: 8,
            max_goal_overlap: 0.5,
        }
    }
}

pub fn generate_corpus(
    seed: u64,
    n_tasks: usize,
    n_repeats: u32,
    mode: CorpusMode,
) -> Result<Vec<TaskEvent>> {
    generate_corpus_with(&CorpusSpec::default(), seed, n_tasks, n_repeats, mode)
}

/// Generates `n_tasks × n_repeats` events in repeat-major order.
pub fn generate_corpus_with(
    spec: &CorpusSpec,
    seed: u64,
    n_tasks: usize,
    n_repeats: u32,
    mode: CorpusMode,
) -> Result<Vec<TaskEvent>> {
    if n_tasks == 0 {
        return Err(Error::InvalidArgument("n_tasks must be at least 1".into()));
    }
    if n_repeats == 0 {
        return Err(Error::InvalidArgument(
            "n_repeats must be at least 1".into(),
        ));
    }
    if spec.actions.is_empty() || spec.min_len == 0 || spec.min_len > spec.max_len {
        return Err(Error::InvalidArgument(
            "corpus spec has an empty action range".into(),
        ));
    }
    if spec.max_len > spec.max_steps {
        return Err(Error::InvalidArgument("max_len exceeds max_steps".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tasks: Vec<TaskDescriptor> = Vec::with_capacity(n_tasks);
    let mut token_sets: Vec<BTreeSet<String>> = Vec::with_capacity(n_tasks);

    const MAX_DRAWS: usize = 10_000;
    for index in 0..n_tasks {
        let mut draws = 0;
        let task = loop {
            draws += 1;
            if draws > MAX_DRAWS {
                return Err(Error::InvalidArgument(format!(
                    "could not draw {n_tasks} sufficiently distinct tasks"
                )));
            }
            let candidate = draw_task(spec, &mut rng, index);
            let tokens = candidate.goal_token_set();
            let distinct = token_sets
                .iter()
                .all(|other| jaccard(&tokens, other) <= spec.max_goal_overlap);
            if distinct {
                token_sets.push(tokens);
                break candidate;
            }
        };
        tasks.push(task);
    }

    let mut events = Vec::with_capacity(n_tasks * n_repeats as usize);
    let mut cycle = 0u64;
    for repeat in 1..=n_repeats {
        for task in &tasks {
            let observed = mode == CorpusMode::ObservationFirst && repeat == 1;
            let event = if observed {
                TaskEvent {
                    cycle,
                    repeat,
                    kind: EventKind::ObservedEvent,
                    task: task.clone(),
                    observed: Some(ObservedEvent {
                        task_signature: task.signature(),
                        action_sequence: task.target_sequence.clone(),
                        success: true,
                        context: BTreeMap::from([(
                            "agent".to_string(),
                            "external_demonstrator".to_string(),
                        )]),
                    }),
                }
            } else {
                TaskEvent {
                    cycle,
                    repeat,
                    kind: EventKind::SelfTask,
                    task: task.clone(),
                    observed: None,
                }
            };
            events.push(event);
            cycle += 1;
        }
    }
    Ok(events)
}

fn draw_task(spec: &CorpusSpec, rng: &mut ChaCha8Rng, index: usize) -> TaskDescriptor {
    let len = rng.random_range(spec.min_len..=spec.max_len);
    let target: Vec<ActionId> = (0..len)
        .map(|_| spec.actions.choose(rng).expect("non-empty actions").clone())
        .collect();
    let color = *COLORS.choose(rng).expect("colors");
    let object = *OBJECTS.choose(rng).expect("objects");

    let mut goal = target.clone();
    goal.push(color.to_string());
    goal.push(object.to_string());
    let instruction = format!("{} the {color} {object}", target.join(", then "));

    TaskDescriptor {
        id: format!("task-{:03}", index + 1),
        instruction,
        goal,
        environment: BTreeMap::from([("scene".to_string(), "tabletop".to_string())]),
        observations: vec!["rgb_camera".to_string(), "joint_states".to_string()],
        constraints: Constraints {
            max_steps: spec.max_steps,
            deadline_s: None,
        },
        target_sequence: target,
    }
}

pub(crate) fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

pub const CORPUS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusDocument {
    pub version: u32,
    pub events: Vec<TaskEvent>,
}

impl CorpusDocument {
    pub fn new(events: Vec<TaskEvent>) -> Self {
        Self {
            version: CORPUS_VERSION,
            events,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("corpus serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CorpusDocument = from_json_str(text)?;
        if doc.version != CORPUS_VERSION {
            return Err(Error::schema(
                "version",
                format!("unsupported corpus version {}", doc.version),
            ));
        }
        let mut last: Option<u64> = None;
        for (i, event) in doc.events.iter().enumerate() {
            event
                .validate()
                .map_err(|e| prefix_field(e, &format!("events[{i}]")))?;
            if let Some(prev) = last {
                if event.cycle <= prev {
                    return Err(Error::schema(
                        format!("events[{i}].cycle"),
                        "cycles must be strictly increasing",
                    ));
                }
            }
            last = Some(event.cycle);
        }
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub(crate) fn prefix_field(err: Error, prefix: &str) -> Error {
    match err {
        Error::Schema { field, message } => Error::Schema {
            field: format!("{prefix}.{field}"),
            message,
        },
        other => other,
    }
}
