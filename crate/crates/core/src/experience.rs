//! Experience samples and per-episode datasets split by source.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{ActionId, ObservedEvent, Signature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    #[serde(rename = "self")]
    SelfExecution,
    Observed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub success: bool,
    /// 1 when the step matched the executor's expectation, 0 otherwise.
    pub feedback: f64,
}

impl Outcome {
    pub fn from_success(success: bool) -> Self {
        Self {
            success,
            feedback: if success { 1.0 } else { 0.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleContext {
    pub source: Source,
    #[serde(default)]
    pub environment: BTreeMap<String, String>,
}

/// One step of experience: observation snapshot, action, outcome, context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceSample {
    /// 1-based step counter, strictly increasing within a source.
    pub t: u32,
    /// 0-based index of the action within the attempted sequence.
    pub position: usize,
    #[serde(default)]
    pub observation: BTreeMap<String, String>,
    pub action: ActionId,
    pub outcome: Outcome,
    pub context: SampleContext,
}

impl ExperienceSample {
    pub fn new(
        t: u32,
        position: usize,
        action: impl Into<ActionId>,
        success: bool,
        source: Source,
    ) -> Self {
        Self {
            t,
            position,
            observation: BTreeMap::new(),
            action: action.into(),
            outcome: Outcome::from_success(success),
            context: SampleContext {
                source,
                environment: BTreeMap::new(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDataset {
    pub task_signature: Signature,
    pub self_samples: Vec<ExperienceSample>,
    pub obs_samples: Vec<ExperienceSample>,
}

impl EpisodeDataset {
    pub fn new(task_signature: Signature) -> Self {
        Self {
            task_signature,
            self_samples: Vec::new(),
            obs_samples: Vec::new(),
        }
    }

    fn list(&self, source: Source) -> &Vec<ExperienceSample> {
        match source {
            Source::SelfExecution => &self.self_samples,
            Source::Observed => &self.obs_samples,
        }
    }

    /// The step index the next sample from `source` should carry.
    pub fn next_t(&self, source: Source) -> u32 {
        self.list(source).last().map_or(1, |s| s.t + 1)
    }

    pub fn record_step(&mut self, sample: ExperienceSample) -> Result<()> {
        let last = self.list(sample.context.source).last().map_or(0, |s| s.t);
        if sample.t <= last {
            return Err(Error::OutOfOrderStep {
                last,
                got: sample.t,
            });
        }
        match sample.context.source {
            Source::SelfExecution => self.self_samples.push(sample),
            Source::Observed => self.obs_samples.push(sample),
        }
        Ok(())
    }

    /// Converts a successful observed action sequence into observation samples.
    pub fn ingest_observation(&mut self, event: &ObservedEvent) -> Result<()> {
        if !event.success {
            return Err(Error::UnsuccessfulObservation);
        }
        let start = self.next_t(Source::Observed);
        for (position, action) in event.action_sequence.iter().enumerate() {
            let mut sample = ExperienceSample::new(
                start + position as u32,
                position,
                action.clone(),
                true,
                Source::Observed,
            );
            sample.context.environment = event.context.clone();
            self.obs_samples.push(sample);
        }
        Ok(())
    }

    /// |D_self| + |D_obs|.
    pub fn merged_size(&self) -> usize {
        self.self_samples.len() + self.obs_samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merged_size() == 0
    }

    /// Self samples followed by observation samples.
    pub fn iter(&self) -> impl Iterator<Item = &ExperienceSample> {
        self.self_samples.iter().chain(self.obs_samples.iter())
    }

    /// One JSON object per sample, for audit dumps.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for sample in self.iter() {
            out.push_str(&serde_json::to_string(sample).expect("sample serializes"));
            out.push('\n');
        }
        out
    }
}
