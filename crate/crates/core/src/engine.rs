//! The closed-loop engine.
//!
//! [`Engine::run_episode`] handles one task event under a [`PolicyMode`] on a
//! per-episode [`VirtualClock`]; [`Engine::run_loop`] folds it over an event
//! stream, threading the method library from one cycle to the next.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{from_json_str, Error, Result};
use crate::executor::{Executor, ExecutorConfig, SimulatedExecutor};
use crate::experience::{EpisodeDataset, ExperienceSample, Source};
use crate::learner::{needs_refinement, CandidateSolution};
use crate::library::{Method, MethodLibrary, RetrievalResult};
use crate::planner::{
    EpisodeOutcome, LearningPlan, Planner, PlannerCall, PlannerError, PlannerFeedback,
    PlannerHistory,
};
use crate::task::{ActionId, EventKind, ObservedEvent, TaskDescriptor, TaskEvent, DEFAULT_ACTIONS};
use crate::trigger::{decide, Branch, TriggerThresholds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    AlwaysLlm,
    LibraryOnly,
    Proposed,
    ObservationOnly,
    ProposedObservation,
}

impl PolicyMode {
    pub const ALL: [PolicyMode; 5] = [
        PolicyMode::AlwaysLlm,
        PolicyMode::LibraryOnly,
        PolicyMode::Proposed,
        PolicyMode::ObservationOnly,
        PolicyMode::ProposedObservation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyMode::AlwaysLlm => "always_llm",
            PolicyMode::LibraryOnly => "library_only",
            PolicyMode::Proposed => "proposed",
            PolicyMode::ObservationOnly => "observation_only",
            PolicyMode::ProposedObservation => "proposed_observation",
        }
    }

    /// Whether the mode is meant for a corpus that opens with observations.
    pub fn is_observation_mode(self) -> bool {
        matches!(
            self,
            PolicyMode::ObservationOnly | PolicyMode::ProposedObservation
        )
    }
}

impl fmt::Display for PolicyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown policy mode `{s}`")))
    }
}

/// Per-episode simulated time, split by phase.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VirtualClock {
    pub retrieve: f64,
    pub plan_llm: f64,
    pub execute: f64,
    pub collect: f64,
    pub train: f64,
    pub store: f64,
}

impl VirtualClock {
    /// Sum of the phase accumulators, always added in field order.
    pub fn now_s(&self) -> f64 {
        self.retrieve + self.plan_llm + self.execute + self.collect + self.train + self.store
    }

    pub fn reset(&mut self) {
        *self = VirtualClock::default();
    }
}

/// How an episode was resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodePath {
    Reuse,
    LearnUncovered,
    LearnLowConfidence,
    LearnObservation,
    Refine,
    NoAction,
    DirectLlm,
    Observe,
    Miss,
}

impl From<Branch> for EpisodePath {
    fn from(b: Branch) -> Self {
        match b {
            Branch::Reuse => EpisodePath::Reuse,
            Branch::LearnUncovered => EpisodePath::LearnUncovered,
            Branch::LearnLowConfidence => EpisodePath::LearnLowConfidence,
            Branch::LearnObservation => EpisodePath::LearnObservation,
            Branch::NoAction => EpisodePath::NoAction,
        }
    }
}

/// One line of `runs.jsonl`. Field order is the serialization order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub policy: PolicyMode,
    pub cycle: u64,
    pub task_id: String,
    pub repeat_index: u32,
    pub event_kind: EventKind,
    pub path: EpisodePath,
    pub retrieve_s: f64,
    pub plan_llm_s: f64,
    pub execute_s: f64,
    pub collect_s: f64,
    pub train_s: f64,
    pub store_s: f64,
    pub total_s: f64,
    pub llm_calls: u32,
    pub llm_time_s: f64,
    pub success: bool,
    pub hit: bool,
    pub learned: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    /// Phase durations summed in the same order the clock uses.
    pub fn phase_sum(&self) -> f64 {
        self.retrieve_s
            + self.plan_llm_s
            + self.execute_s
            + self.collect_s
            + self.train_s
            + self.store_s
    }
}

/// Serializes records as JSON lines.
pub fn runs_to_jsonl(records: &[RunRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Parses JSON lines; blank lines are skipped and errors carry the 1-based line number.
pub fn parse_runs_jsonl(text: &str) -> Result<Vec<RunRecord>> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: RunRecord = from_json_str(line).map_err(|e| match e {
            Error::Schema { field, message } => Error::Schema {
                field: format!("line {}: {field}", i + 1),
                message,
            },
            other => other,
        })?;
        records.push(record);
    }
    Ok(records)
}

struct Episode {
    clock: VirtualClock,
    llm_calls: u32,
    success: bool,
    hit: bool,
    learned: bool,
    path: EpisodePath,
    error: Option<String>,
}

impl Episode {
    fn new() -> Self {
        Self {
            clock: VirtualClock::default(),
            llm_calls: 0,
            success: false,
            hit: false,
            learned: false,
            path: EpisodePath::Miss,
            error: None,
        }
    }
}

/// Runs episodes for one policy over a shared method library.
pub struct Engine<P: Planner, E: Executor = SimulatedExecutor> {
    mode: PolicyMode,
    thresholds: TriggerThresholds,
    timing: ExecutorConfig,
    planner: P,
    executor: E,
    library: MethodLibrary,
    history: PlannerHistory,
    actions: Vec<ActionId>,
}

impl<P: Planner> Engine<P, SimulatedExecutor> {
    pub fn new(
        mode: PolicyMode,
        thresholds: TriggerThresholds,
        timing: ExecutorConfig,
        planner: P,
        library: MethodLibrary,
    ) -> Self {
        Self::with_executor(
            mode,
            thresholds,
            timing,
            planner,
            SimulatedExecutor,
            library,
        )
    }
}

impl<P: Planner, E: Executor> Engine<P, E> {
    pub fn with_executor(
        mode: PolicyMode,
        thresholds: TriggerThresholds,
        timing: ExecutorConfig,
        planner: P,
        executor: E,
        library: MethodLibrary,
    ) -> Self {
        Self {
            mode,
            thresholds,
            timing,
            planner,
            executor,
            library,
            history: PlannerHistory::default(),
            actions: DEFAULT_ACTIONS.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Action set tried during corrective exploration.
    pub fn with_actions(mut self, actions: Vec<ActionId>) -> Self {
        self.actions = actions;
        self
    }

    pub fn library(&self) -> &MethodLibrary {
        &self.library
    }

    pub fn into_library(self) -> MethodLibrary {
        self.library
    }

    pub fn planner(&self) -> &P {
        &self.planner
    }

    pub fn run_loop(&mut self, events: &[TaskEvent]) -> Result<Vec<RunRecord>> {
        let mut records = Vec::with_capacity(events.len());
        self.run_loop_with(events, |r| records.push(r.clone()))?;
        Ok(records)
    }

    /// Runs every event in order, handing each record to `sink` as soon as it is produced.
    pub fn run_loop_with(
        &mut self,
        events: &[TaskEvent],
        mut sink: impl FnMut(&RunRecord),
    ) -> Result<()> {
        if let Some(i) = events.windows(2).position(|w| w[1].cycle <= w[0].cycle) {
            return Err(Error::InvalidArgument(format!(
                "events must be ordered by cycle (event {} has cycle {})",
                i + 1,
                events[i + 1].cycle
            )));
        }
        for event in events {
            let record = self.run_episode(event);
            sink(&record);
        }
        Ok(())
    }

    pub fn run_episode(&mut self, event: &TaskEvent) -> RunRecord {
        let mut ep = Episode::new();
        let task = &event.task;
        match (self.mode, event.kind) {
            (PolicyMode::ProposedObservation, EventKind::ObservedEvent) => {
                match event.observed.as_ref() {
                    Some(obs) => self.observe_and_learn(task, obs, event.cycle, &mut ep),
                    None => self.observe_only(&mut ep),
                }
            }
            (_, EventKind::ObservedEvent) => self.observe_only(&mut ep),
            (PolicyMode::AlwaysLlm | PolicyMode::ObservationOnly, EventKind::SelfTask) => {
                self.direct_llm(task, &mut ep)
            }
            (PolicyMode::LibraryOnly, EventKind::SelfTask) => {
                self.library_only(task, event.cycle, &mut ep)
            }
            (PolicyMode::Proposed | PolicyMode::ProposedObservation, EventKind::SelfTask) => {
                self.proposed(task, event.cycle, &mut ep)
            }
        }
        self.history.push_task(task.signature());

        tracing::debug!(
            cycle = event.cycle,
            task = %task.id,
            path = ?ep.path,
            success = ep.success,
            total_s = ep.clock.now_s(),
            "episode finished"
        );

        let c = &ep.clock;
        RunRecord {
            policy: self.mode,
            cycle: event.cycle,
            task_id: task.id.clone(),
            repeat_index: event.repeat,
            event_kind: event.kind,
            path: ep.path,
            retrieve_s: c.retrieve,
            plan_llm_s: c.plan_llm,
            execute_s: c.execute,
            collect_s: c.collect,
            train_s: c.train,
            store_s: c.store,
            total_s: c.now_s(),
            llm_calls: ep.llm_calls,
            llm_time_s: c.plan_llm,
            success: ep.success,
            hit: ep.hit,
            learned: ep.learned,
            error: ep.error,
        }
    }

    fn observe_only(&mut self, ep: &mut Episode) {
        ep.clock.collect += self.timing.observe_s;
        ep.path = EpisodePath::Observe;
        ep.success = true;
    }

    fn call_planner(
        &mut self,
        task: &TaskDescriptor,
        feedback: Option<&PlannerFeedback>,
        ep: &mut Episode,
    ) -> Option<LearningPlan> {
        ep.llm_calls += 1;
        let result: std::result::Result<PlannerCall, PlannerError> = match feedback {
            None => self.planner.plan(task, &self.history, None),
            Some(f) => self.planner.replan(task, &self.history, f),
        };
        match result {
            Ok(call) => {
                ep.clock.plan_llm += call.latency_s;
                Some(call.plan)
            }
            Err(e) => {
                ep.clock.plan_llm += e.elapsed_s();
                ep.error = Some(e.to_string());
                ep.success = false;
                None
            }
        }
    }

    fn execute(&mut self, task: &TaskDescriptor, sequence: &[ActionId], ep: &mut Episode) -> bool {
        ep.clock.execute += self.timing.execution_s(sequence.len());
        self.executor.execute(task, sequence).success
    }

    fn retrieve(&mut self, task: &TaskDescriptor, ep: &mut Episode) -> RetrievalResult {
        ep.clock.retrieve += self.timing.retrieve_s;
        self.library.retrieve_best(task, self.thresholds.tau_r)
    }

    fn direct_llm(&mut self, task: &TaskDescriptor, ep: &mut Episode) {
        ep.path = EpisodePath::DirectLlm;
        let Some(plan) = self.call_planner(task, None, ep) else {
            return;
        };
        match plan.direct_solution {
            Some(solution) if !solution.is_empty() => {
                ep.success = self.execute(task, &solution, ep);
            }
            _ => {
                ep.success = false;
                ep.error = Some("plan carries no action sequence to execute".into());
            }
        }
    }

    fn library_only(&mut self, task: &TaskDescriptor, cycle: u64, ep: &mut Episode) {
        let retrieval = self.retrieve(task, ep);
        match retrieval.method.filter(|_| retrieval.covered) {
            Some(method) => self.reuse(task, &method, cycle, ep),
            None => {
                ep.path = EpisodePath::Miss;
                ep.success = false;
            }
        }
    }

    fn reuse(&mut self, task: &TaskDescriptor, method: &Method, cycle: u64, ep: &mut Episode) {
        ep.path = EpisodePath::Reuse;
        ep.hit = true;
        ep.success = self.execute(task, &method.actions(), ep);
        if let Err(e) = self
            .library
            .update_reliability(&method.id, ep.success, cycle)
        {
            ep.error = Some(e.to_string());
        }
        if let Some(m) = self.library.get(&method.id) {
            self.history
                .push_method(m.id.clone(), m.reliability.success_ratio());
        }
    }

    fn proposed(&mut self, task: &TaskDescriptor, cycle: u64, ep: &mut Episode) {
        let retrieval = self.retrieve(task, ep);
        let decision = match decide(task, Some(&retrieval), None, None, &self.thresholds) {
            Ok(d) => d,
            Err(e) => {
                ep.error = Some(e.to_string());
                return;
            }
        };
        if decision.branch == Branch::Reuse {
            let method = decision.method.expect("reuse carries a method");
            // at most one refinement re-entry per cycle
            if needs_refinement(&method, cycle, self.thresholds.tau_u) {
                ep.path = EpisodePath::Refine;
                self.learn_from_self(task, cycle, ep);
            } else {
                self.reuse(task, &method, cycle, ep);
            }
            return;
        }
        ep.path = decision.branch.into();
        self.learn_from_self(task, cycle, ep);
    }

    fn next_method_id(&self, task: &TaskDescriptor, cycle: u64) -> String {
        let sig = task.signature();
        let base = format!("m{cycle:05}-{}", &sig.as_str()[..8]);
        if !self.library.contains(&base) {
            return base;
        }
        (2..)
            .map(|v| format!("{base}-v{v}"))
            .find(|id| !self.library.contains(id))
            .expect("unbounded id space")
    }

    /// Self-execution rollout of `candidate`: every failed step is followed by
    /// trying the remaining actions at that position until one succeeds.
    fn collect_self(
        &mut self,
        task: &TaskDescriptor,
        candidate: &mut CandidateSolution,
        dataset: &mut EpisodeDataset,
        ep: &mut Episode,
    ) -> Result<EpisodeOutcome> {
        ep.clock.collect += self.timing.collect_s;
        let planned = candidate.sequence.clone();
        let mut first_failure = None;
        for (position, action) in planned.iter().enumerate() {
            let ok = self.executor.try_step(task, position, action);
            let sample = ExperienceSample::new(
                dataset.next_t(Source::SelfExecution),
                position,
                action.clone(),
                ok,
                Source::SelfExecution,
            );
            candidate.quasi_adjust(&sample)?;
            dataset.record_step(sample)?;
            if ok {
                continue;
            }
            first_failure.get_or_insert(position);
            for alternative in self.actions.clone().iter().filter(|a| *a != action) {
                ep.clock.collect += self.timing.per_step_s;
                let ok = self.executor.try_step(task, position, alternative);
                let sample = ExperienceSample::new(
                    dataset.next_t(Source::SelfExecution),
                    position,
                    alternative.clone(),
                    ok,
                    Source::SelfExecution,
                );
                candidate.quasi_adjust(&sample)?;
                dataset.record_step(sample)?;
                if ok {
                    break;
                }
            }
        }
        Ok(EpisodeOutcome {
            success: first_failure.is_none(),
            failed_step: first_failure,
        })
    }

    fn learn_from_self(&mut self, task: &TaskDescriptor, cycle: u64, ep: &mut Episode) {
        let mut dataset = EpisodeDataset::new(task.signature());
        let mut feedback: Option<PlannerFeedback> = None;
        let mut attempts = 0u32;
        loop {
            let Some(plan) = self.call_planner(task, feedback.as_ref(), ep) else {
                return;
            };
            attempts += 1;
            match self.consolidate_self(task, &plan, &mut dataset, cycle, ep) {
                Ok(Some(method)) => {
                    let actions = method.actions();
                    if let Err(e) = self.install(method, ep) {
                        ep.error = Some(e.to_string());
                        return;
                    }
                    ep.success = self.execute(task, &actions, ep);
                    return;
                }
                Ok(None) => {}
                Err(e) => {
                    ep.error = Some(e.to_string());
                    return;
                }
            }
            if attempts >= plan.update_criteria.max_episodes {
                ep.success = false;
                return;
            }
            let outcomes = feedback
                .take()
                .map(|f| f.episode_outcomes)
                .unwrap_or_default();
            feedback = Some(self.feedback_from(&dataset, outcomes));
        }
    }

    fn feedback_from(
        &self,
        dataset: &EpisodeDataset,
        mut outcomes: Vec<EpisodeOutcome>,
    ) -> PlannerFeedback {
        let failed_step = dataset
            .self_samples
            .iter()
            .find(|s| !s.outcome.success)
            .map(|s| s.position);
        outcomes.push(EpisodeOutcome {
            success: false,
            failed_step,
        });
        PlannerFeedback {
            episode_outcomes: outcomes,
            notes: "validation failed".into(),
        }
    }

    /// One plan → collect → adjust → train → validate pass. Returns the new
    /// method when validation passes.
    fn consolidate_self(
        &mut self,
        task: &TaskDescriptor,
        plan: &LearningPlan,
        dataset: &mut EpisodeDataset,
        cycle: u64,
        ep: &mut Episode,
    ) -> Result<Option<Method>> {
        let mut candidate = CandidateSolution::initialize(plan, dataset)?;
        self.collect_self(task, &mut candidate, dataset, ep)?;
        ep.clock.train += self.timing.train_s;
        let refined = candidate.train_episode(dataset);
        ep.clock.store += self.timing.store_s;
        let report = refined.validate(task, &mut self.executor, &plan.update_criteria)?;
        if !report.passed {
            return Ok(None);
        }
        let id = self.next_method_id(task, cycle);
        refined
            .build_method(&report, id, task, dataset, cycle)
            .map(Some)
    }

    fn install(&mut self, method: Method, ep: &mut Episode) -> Result<()> {
        self.history
            .push_method(method.id.clone(), method.reliability.success_ratio());
        self.library.insert(method)?;
        ep.learned = true;
        Ok(())
    }

    fn observe_and_learn(
        &mut self,
        task: &TaskDescriptor,
        observation: &ObservedEvent,
        cycle: u64,
        ep: &mut Episode,
    ) {
        ep.clock.collect += self.timing.observe_s;
        let obs_retrieval = self.retrieve(task, ep);
        let decision = match decide(
            task,
            None,
            Some(observation),
            Some(&obs_retrieval),
            &self.thresholds,
        ) {
            Ok(d) => d,
            Err(e) => {
                ep.error = Some(e.to_string());
                return;
            }
        };
        ep.path = decision.branch.into();
        if decision.branch != Branch::LearnObservation {
            ep.success = true;
            return;
        }

        let Some(plan) = self.call_planner(task, None, ep) else {
            return;
        };
        let result = (|| -> Result<Option<Method>> {
            let mut dataset = EpisodeDataset::new(task.signature());
            dataset.ingest_observation(observation)?;
            let candidate = CandidateSolution::initialize(&plan, &dataset)?;
            ep.clock.train += self.timing.train_s;
            let refined = candidate.train_episode(&dataset);
            ep.clock.store += self.timing.store_s;
            let report = refined.validate(task, &mut self.executor, &plan.update_criteria)?;
            if !report.passed {
                return Ok(None);
            }
            let id = self.next_method_id(task, cycle);
            refined
                .build_method(&report, id, task, &dataset, cycle)
                .map(Some)
        })();
        match result {
            Ok(Some(method)) => match self.install(method, ep) {
                Ok(()) => ep.success = true,
                Err(e) => ep.error = Some(e.to_string()),
            },
            Ok(None) => ep.success = false,
            Err(e) => {
                ep.success = false;
                ep.error = Some(e.to_string());
            }
        }
    }
}
