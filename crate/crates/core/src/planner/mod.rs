//! Learning-plan generation.
//!
//! A [`Planner`] turns a task, recent history, and optional feedback into a
//! [`LearningPlan`]. Two implementations ship: [`MockPlanner`], a seeded
//! deterministic stand-in used for benchmarks, and [`HttpPlanner`], which
//! talks to a chat-completions endpoint.

mod http;
mod mock;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{from_json_str, Error, Result};
use crate::task::{ActionId, Signature, TaskDescriptor};

pub use http::{HttpPlanner, HttpPlannerConfig, API_KEY_ENV};
pub use mock::MockPlanner;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Sequence,
    Visual,
    Multimodal,
    Hybrid,
}

impl ModelFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::Sequence => "sequence",
            ModelFamily::Visual => "visual",
            ModelFamily::Multimodal => "multimodal",
            ModelFamily::Hybrid => "hybrid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateModel {
    pub family: ModelFamily,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRequirement {
    pub channel: String,
    #[serde(default)]
    pub min_samples: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectiveKind {
    Execute,
    Observe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Directive {
    pub kind: DirectiveKind,
    #[serde(default)]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UpdateCriteria {
    pub validation_threshold: f64,
    pub max_episodes: u32,
}

impl Default for UpdateCriteria {
    fn default() -> Self {
        Self {
            validation_threshold: 0.5,
            max_episodes: 3,
        }
    }
}

/// Planner output: subproblems, ranked model families, data requirements,
/// execution/observation strategy, update criteria, and an optional
/// proposed action sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningPlan {
    #[serde(default)]
    pub subproblems: Vec<String>,
    #[serde(default)]
    pub candidate_models: Vec<CandidateModel>,
    #[serde(default)]
    pub data_requirements: Vec<DataRequirement>,
    #[serde(default)]
    pub strategy: Vec<Directive>,
    #[serde(default)]
    pub update_criteria: UpdateCriteria,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direct_solution: Option<Vec<ActionId>>,
}

impl LearningPlan {
    pub fn validate(&self) -> Result<()> {
        if self.candidate_models.is_empty() {
            return Err(Error::schema(
                "candidate_models",
                "missing or empty; at least one candidate model is required",
            ));
        }
        if self.update_criteria.max_episodes < 1 {
            return Err(Error::schema(
                "update_criteria.max_episodes",
                "must be at least 1",
            ));
        }
        let t = self.update_criteria.validation_threshold;
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::schema(
                "update_criteria.validation_threshold",
                format!("{t} is outside [0, 1]"),
            ));
        }
        if let Some(solution) = &self.direct_solution {
            if solution.iter().any(|a| a.is_empty()) {
                return Err(Error::schema("direct_solution", "empty action identifier"));
            }
        }
        Ok(())
    }

    pub fn top_family(&self) -> ModelFamily {
        self.candidate_models
            .first()
            .map(|c| c.family)
            .unwrap_or(ModelFamily::Sequence)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }
}

/// Parses and validates a plan document; a surrounding Markdown code fence is tolerated.
pub fn parse_plan(text: &str) -> Result<LearningPlan> {
    let trimmed = strip_fence(text.trim());
    let plan: LearningPlan = from_json_str(trimmed)?;
    plan.validate()?;
    Ok(plan)
}

fn strip_fence(text: &str) -> &str {
    let Some(rest) = text.strip_prefix("```") else {
        return text;
    };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_step: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlannerFeedback {
    pub episode_outcomes: Vec<EpisodeOutcome>,
    #[serde(default)]
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub id: String,
    pub success_ratio: f64,
}

/// Bounded record of recently seen tasks and used methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerHistory {
    pub recent_tasks: VecDeque<Signature>,
    pub recent_methods: VecDeque<MethodSummary>,
    pub capacity: usize,
}

impl Default for PlannerHistory {
    fn default() -> Self {
        Self::with_capacity(50)
    }
}

impl PlannerHistory {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            recent_tasks: VecDeque::new(),
            recent_methods: VecDeque::new(),
            capacity,
        }
    }

    pub fn push_task(&mut self, signature: Signature) {
        self.recent_tasks.push_back(signature);
        while self.recent_tasks.len() > self.capacity {
            self.recent_tasks.pop_front();
        }
    }

    pub fn push_method(&mut self, id: impl Into<String>, success_ratio: f64) {
        self.recent_methods.push_back(MethodSummary {
            id: id.into(),
            success_ratio,
        });
        while self.recent_methods.len() > self.capacity {
            self.recent_methods.pop_front();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerCall {
    pub latency_s: f64,
    pub plan: LearningPlan,
    pub raw: Option<String>,
    /// Attempts beyond the first that were needed to obtain a valid plan.
    pub retries: u32,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("planning failed after {attempts} attempt(s): {message}")]
    PlanningFailed {
        attempts: u32,
        elapsed_s: f64,
        message: String,
    },
    #[error("planner precondition violated: {0}")]
    Precondition(String),
}

impl PlannerError {
    /// Time spent inside the planner before giving up.
    pub fn elapsed_s(&self) -> f64 {
        match self {
            PlannerError::PlanningFailed { elapsed_s, .. } => *elapsed_s,
            PlannerError::Precondition(_) => 0.0,
        }
    }
}

pub trait Planner {
    fn plan(
        &mut self,
        task: &TaskDescriptor,
        history: &PlannerHistory,
        feedback: Option<&PlannerFeedback>,
    ) -> Result<PlannerCall, PlannerError>;

    /// Revises a plan from intermediate feedback.
    fn replan(
        &mut self,
        task: &TaskDescriptor,
        history: &PlannerHistory,
        feedback: &PlannerFeedback,
    ) -> Result<PlannerCall, PlannerError> {
        if feedback.episode_outcomes.is_empty() {
            return Err(PlannerError::Precondition(
                "replanning needs at least one episode outcome".into(),
            ));
        }
        self.plan(task, history, Some(feedback))
    }
}

impl<P: Planner + ?Sized> Planner for Box<P> {
    fn plan(
        &mut self,
        task: &TaskDescriptor,
        history: &PlannerHistory,
        feedback: Option<&PlannerFeedback>,
    ) -> Result<PlannerCall, PlannerError> {
        (**self).plan(task, history, feedback)
    }

    fn replan(
        &mut self,
        task: &TaskDescriptor,
        history: &PlannerHistory,
        feedback: &PlannerFeedback,
    ) -> Result<PlannerCall, PlannerError> {
        (**self).replan(task, history, feedback)
    }
}
