//! Benchmark configuration and the end-to-end runner behind `bench run`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::engine::{Engine, PolicyMode, RunRecord};
use crate::error::{from_json_str, Error, Result};
use crate::executor::ExecutorConfig;
use crate::library::MethodLibrary;
use crate::metrics::{aggregate, MetricsReport};
use crate::planner::{HttpPlanner, HttpPlannerConfig, MockPlanner, Planner};
use crate::profile::CalibrationProfile;
use crate::task::{generate_corpus, CorpusMode, TaskEvent};
use crate::trigger::TriggerThresholds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub kind: PlannerKind,
    /// Virtual seconds per mock call; defaults to the corpus calibration.
    pub latency_s: Option<f64>,
    pub p_corrupt: f64,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: f64,
    pub timeout_s: f64,
    pub retries: u32,
    pub transcript_path: Option<PathBuf>,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            kind: PlannerKind::Mock,
            latency_s: None,
            p_corrupt: 0.05,
            endpoint: None,
            model: None,
            temperature: 0.0,
            timeout_s: 60.0,
            retries: 2,
            transcript_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub n_tasks: usize,
    pub n_repeats: u32,
    pub mode: PolicyMode,
    /// Defaults to observation-first for the observation policies.
    pub corpus: Option<CorpusMode>,
    pub thresholds: TriggerThresholds,
    /// Defaults to the calibration profile of the corpus.
    pub executor: Option<ExecutorConfig>,
    pub planner: PlannerConfig,
    pub library_path: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_tasks: 20,
            n_repeats: 5,
            mode: PolicyMode::Proposed,
            corpus: None,
            thresholds: TriggerThresholds::default(),
            executor: None,
            planner: PlannerConfig::default(),
            library_path: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_value(from_json_str(text)?)
    }

    /// Applies dotted-path overrides such as `("planner.p_corrupt", "0")`
    /// before validation. Values are parsed as JSON, falling back to a string.
    pub fn from_json_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut value: Value = from_json_str(text)?;
        for (key, raw) in overrides {
            apply_override(&mut value, key, raw)?;
        }
        Self::from_value(value)
    }

    fn from_value(value: Value) -> Result<Self> {
        let config: RunConfig =
            serde_path_to_error::deserialize(value).map_err(Error::from_path_error)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn corpus_mode(&self) -> CorpusMode {
        self.corpus.unwrap_or(if self.mode.is_observation_mode() {
            CorpusMode::ObservationFirst
        } else {
            CorpusMode::SelfExecution
        })
    }

    pub fn profile(&self) -> CalibrationProfile {
        CalibrationProfile::for_corpus(self.corpus_mode())
    }

    pub fn executor_config(&self) -> ExecutorConfig {
        self.executor
            .clone()
            .unwrap_or_else(|| self.profile().executor())
    }

    pub fn planner_latency_s(&self) -> f64 {
        self.planner
            .latency_s
            .unwrap_or_else(|| self.profile().planner_latency_s())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 {
            return Err(Error::schema("n_tasks", "must be at least 1"));
        }
        if self.n_repeats == 0 {
            return Err(Error::schema("n_repeats", "must be at least 1"));
        }
        self.thresholds
            .validate()
            .map_err(|e| crate::task::prefix_field(e, "thresholds"))?;
        if let Some(exec) = &self.executor {
            exec.validate()
                .map_err(|e| crate::task::prefix_field(e, "executor"))?;
        }
        let p = &self.planner;
        if !(0.0..=1.0).contains(&p.p_corrupt) {
            return Err(Error::schema("planner.p_corrupt", "must lie in [0, 1]"));
        }
        if let Some(l) = p.latency_s {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::schema("planner.latency_s", "must be nonnegative"));
            }
        }
        if p.timeout_s.is_nan() || p.timeout_s <= 0.0 {
            return Err(Error::schema("planner.timeout_s", "must be positive"));
        }
        if p.kind == PlannerKind::Http {
            if p.endpoint.as_deref().is_none_or(str::is_empty) {
                return Err(Error::schema(
                    "planner.endpoint",
                    "required for the http planner",
                ));
            }
            if p.model.as_deref().is_none_or(str::is_empty) {
                return Err(Error::schema(
                    "planner.model",
                    "required for the http planner",
                ));
            }
        }
        Ok(())
    }

    pub fn build_planner(&self) -> Result<Box<dyn Planner>> {
        let p = &self.planner;
        Ok(match p.kind {
            PlannerKind::Mock => Box::new(MockPlanner::new(
                self.seed,
                p.p_corrupt,
                self.planner_latency_s(),
            )),
            PlannerKind::Http => Box::new(
                HttpPlanner::new(HttpPlannerConfig {
                    endpoint: p.endpoint.clone().unwrap_or_default(),
                    model: p.model.clone().unwrap_or_default(),
                    temperature: p.temperature,
                    timeout_s: p.timeout_s,
                    retries: p.retries,
                    transcript_path: p.transcript_path.clone(),
                })
                .map_err(|e| Error::InvalidArgument(e.to_string()))?,
            ),
        })
    }

    pub fn corpus(&self) -> Result<Vec<TaskEvent>> {
        generate_corpus(self.seed, self.n_tasks, self.n_repeats, self.corpus_mode())
    }
}

fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::InvalidArgument(format!(
            "malformed override key `{key}`"
        )));
    }
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::schema(key, "override path crosses a non-object"))?;
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    node.as_object_mut()
        .ok_or_else(|| Error::schema(key, "override path crosses a non-object"))?
        .insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

pub struct BenchmarkRun {
    pub records: Vec<RunRecord>,
    pub report: MetricsReport,
    pub library: MethodLibrary,
}

impl BenchmarkRun {
    pub fn has_errors(&self) -> bool {
        self.records.iter().any(|r| r.error.is_some())
    }
}

/// Generates the corpus, runs the engine, and aggregates the records.
pub fn run_benchmark(config: &RunConfig) -> Result<BenchmarkRun> {
    config.validate()?;
    let library = match &config.library_path {
        Some(path) => MethodLibrary::load(path)?,
        None => MethodLibrary::new(),
    };
    let planner = config.build_planner()?;
    run_with_planner(config, planner, library)
}

pub fn run_with_planner<P: Planner>(
    config: &RunConfig,
    planner: P,
    library: MethodLibrary,
) -> Result<BenchmarkRun> {
    let events = config.corpus()?;
    let mut engine = Engine::new(
        config.mode,
        config.thresholds,
        config.executor_config(),
        planner,
        library,
    );
    let records = engine.run_loop(&events)?;
    let report = aggregate(&records)?;
    Ok(BenchmarkRun {
        records,
        report,
        library: engine.into_library(),
    })
}
