use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{parse_plan, Planner, PlannerCall, PlannerError, PlannerFeedback, PlannerHistory};
use crate::task::TaskDescriptor;

/// Environment variable holding the bearer token for the chat endpoint.
pub const API_KEY_ENV: &str = "AUTOLEARN_API_KEY";

const PLAN_SCHEMA: &str = r#"{
  "subproblems": [string],
  "candidate_models": [{"family": "sequence"|"visual"|"multimodal"|"hybrid", "rationale": string}],
  "data_requirements": [{"channel": string, "min_samples": integer}],
  "strategy": [{"kind": "execute"|"observe", "detail": string}],
  "update_criteria": {"validation_threshold": number in [0,1], "max_episodes": integer >= 1},
  "direct_solution": [action identifier] (optional)
}"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpPlannerConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_s: f64,
    /// Extra attempts after a transport failure or an invalid plan.
    pub retries: u32,
    pub transcript_path: Option<PathBuf>,
}

impl Default for HttpPlannerConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            temperature: 0.0,
            timeout_s: 60.0,
            retries: 2,
            transcript_path: None,
        }
    }
}

/// Chat-completions client that asks a remote model for a learning plan.
pub struct HttpPlanner {
    config: HttpPlannerConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for HttpPlanner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpPlanner")
            .field("config", &self.config)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpPlanner {
    /// Builds a client; the credential is read from [`API_KEY_ENV`] if set.
    pub fn new(config: HttpPlannerConfig) -> Result<Self, PlannerError> {
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_api_key(config, api_key)
    }

    pub fn with_api_key(
        config: HttpPlannerConfig,
        api_key: Option<String>,
    ) -> Result<Self, PlannerError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_s.max(0.001)))
            .build()
            .map_err(|e| PlannerError::PlanningFailed {
                attempts: 0,
                elapsed_s: 0.0,
                message: format!("cannot build http client: {e}"),
            })?;
        Ok(Self {
            config,
            api_key,
            client,
        })
    }

    fn request_body(
        &self,
        task: &TaskDescriptor,
        history: &PlannerHistory,
        feedback: Option<&PlannerFeedback>,
    ) -> Value {
        // target_sequence is benchmark ground truth and never leaves the process
        let task_view = json!({
            "id": task.id,
            "instruction": task.instruction,
            "goal": task.goal,
            "environment": task.environment,
            "observations": task.observations,
            "constraints": task.constraints,
        });
        let content = format!(
            "You organize learning for a robot that has no reusable method for the task below.\n\
             Reply with exactly one JSON object matching this schema and nothing else:\n{PLAN_SCHEMA}\n\n\
             Task descriptor:\n{}\n\nHistory:\n{}\n\nFeedback:\n{}",
            task_view,
            serde_json::to_string(history).unwrap_or_default(),
            feedback
                .map(|f| serde_json::to_string(f).unwrap_or_default())
                .unwrap_or_else(|| "none".into()),
        );
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": self.config.temperature,
        })
    }

    fn send(&self, body: &Value) -> Result<String, String> {
        let mut req = self.client.post(&self.config.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| format!("request failed: {e}"))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| format!("cannot read body: {e}"))?;
        if !status.is_success() {
            return Err(format!("endpoint returned {status}"));
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| format!("response is not JSON: {e}"))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| "response has no choices[0].message.content".to_string())
    }

    fn log(&self, entry: Value) {
        let Some(path) = &self.config.transcript_path else {
            return;
        };
        let written = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .and_then(|mut f| writeln!(f, "{entry}"));
        if let Err(e) = written {
            tracing::warn!(path = %path.display(), error = %e, "cannot append planner transcript");
        }
    }
}

impl Planner for HttpPlanner {
    fn plan(
        &mut self,
        task: &TaskDescriptor,
        history: &PlannerHistory,
        feedback: Option<&PlannerFeedback>,
    ) -> Result<PlannerCall, PlannerError> {
        let body = self.request_body(task, history, feedback);
        let started = Instant::now();
        let mut last_error = String::new();
        for attempt in 0..=self.config.retries {
            let outcome = self.send(&body).and_then(|content| {
                parse_plan(&content)
                    .map(|plan| (plan, content.clone()))
                    .map_err(|e| format!("invalid plan: {e}"))
            });
            match outcome {
                Ok((plan, content)) => {
                    self.log(json!({"task": task.id, "attempt": attempt, "request": body, "response": content}));
                    return Ok(PlannerCall {
                        latency_s: started.elapsed().as_secs_f64(),
                        plan,
                        raw: Some(content),
                        retries: attempt,
                    });
                }
                Err(message) => {
                    tracing::debug!(attempt, %message, "planner attempt failed");
                    self.log(json!({"task": task.id, "attempt": attempt, "request": body, "error": message}));
                    last_error = message;
                }
            }
        }
        Err(PlannerError::PlanningFailed {
            attempts: self.config.retries + 1,
            elapsed_s: started.elapsed().as_secs_f64(),
            message: last_error,
        })
    }
}
