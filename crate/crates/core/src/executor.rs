//! Simulated action executor and its virtual timing model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{ActionId, TaskDescriptor};

/// Virtual durations, in seconds, charged for each phase of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutorConfig {
    pub base_s: f64,
    pub per_step_s: f64,
    pub retrieve_s: f64,
    pub collect_s: f64,
    pub train_s: f64,
    pub store_s: f64,
    pub observe_s: f64,
}

impl ExecutorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("base_s", self.base_s),
            ("per_step_s", self.per_step_s),
            ("retrieve_s", self.retrieve_s),
            ("collect_s", self.collect_s),
            ("train_s", self.train_s),
            ("store_s", self.store_s),
            ("observe_s", self.observe_s),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::schema(
                    name,
                    format!("{v} must be a nonnegative number"),
                ));
            }
        }
        Ok(())
    }

    /// Time to execute a sequence of `len` actions.
    pub fn execution_s(&self, len: usize) -> f64 {
        self.base_s + self.per_step_s * len as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Execution {
    pub steps: Vec<bool>,
    pub success: bool,
}

impl Execution {
    pub fn first_failure(&self) -> Option<usize> {
        self.steps.iter().position(|ok| !ok)
    }
}

pub trait Executor {
    /// Attempts `action` at `position` of the task and reports whether it was correct.
    fn try_step(&mut self, task: &TaskDescriptor, position: usize, action: &str) -> bool;

    fn execute(&mut self, task: &TaskDescriptor, sequence: &[ActionId]) -> Execution {
        let steps: Vec<bool> = sequence
            .iter()
            .enumerate()
            .map(|(i, a)| self.try_step(task, i, a))
            .collect();
        let success = !steps.is_empty()
            && steps.iter().all(|ok| *ok)
            && sequence.len() == self.expected_len(task);
        Execution { steps, success }
    }

    fn expected_len(&self, task: &TaskDescriptor) -> usize;
}

/// Executes against the task's ground-truth action sequence.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimulatedExecutor;

impl Executor for SimulatedExecutor {
    fn try_step(&mut self, task: &TaskDescriptor, position: usize, action: &str) -> bool {
        task.target_sequence
            .get(position)
            .is_some_and(|expected| expected == action)
    }

    fn expected_len(&self, task: &TaskDescriptor) -> usize {
        task.target_sequence.len()
    }
}
