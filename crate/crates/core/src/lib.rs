//! Closed-loop autonomous learning over recurring robot tasks.
//!
//! A task arrives, the [`library`] is searched for a reusable method, the
//! [`trigger`] decides whether to reuse or learn, and on learning the
//! [`planner`] proposes a plan that the [`learner`] turns into a validated
//! method from [`experience`]. The [`engine`] runs this loop under several
//! policies on a virtual clock and [`metrics`] summarizes the runs; [`cost`]
//! holds the analytic reuse-versus-relearn model.

pub mod config;
pub mod cost;
pub mod engine;
pub mod error;
pub mod executor;
pub mod experience;
pub mod learner;
pub mod library;
pub mod metrics;
pub mod planner;
pub mod profile;
pub mod task;
pub mod trigger;

pub use config::{run_benchmark, BenchmarkRun, PlannerConfig, PlannerKind, RunConfig};
pub use cost::{
    benefit_condition_holds, delay_comparison, expected_task_cost, reuse_benefit, single_task_cost,
    CostProfile, DelayComparison, ReuseBenefit,
};
pub use engine::{
    parse_runs_jsonl, runs_to_jsonl, Engine, EpisodePath, PolicyMode, RunRecord, VirtualClock,
};
pub use error::{Error, Result};
pub use executor::{Execution, Executor, ExecutorConfig, SimulatedExecutor};
pub use experience::{EpisodeDataset, ExperienceSample, Outcome, SampleContext, Source};
pub use learner::{needs_refinement, utility, CandidateSolution, Stage, ValidationReport};
pub use library::{
    matching_score, Applicability, DataProfile, LibraryStats, Method, MethodLibrary, MethodStat,
    ProcedureStep, Reliability, RetrievalResult, SharedLibrary,
};
pub use metrics::{aggregate, empirical_coverage, MetricsReport, PolicyReport, ScopeMetrics};
pub use planner::{
    parse_plan, CandidateModel, DataRequirement, Directive, DirectiveKind, EpisodeOutcome,
    HttpPlanner, HttpPlannerConfig, LearningPlan, MockPlanner, ModelFamily, Planner, PlannerCall,
    PlannerError, PlannerFeedback, PlannerHistory, UpdateCriteria, API_KEY_ENV,
};
pub use profile::CalibrationProfile;
pub use task::{
    generate_corpus, generate_corpus_with, normalize_tokens, signature_of, ActionId, Constraints,
    CorpusDocument, CorpusMode, CorpusSpec, EventKind, ObservedEvent, Signature, TaskDescriptor,
    TaskEvent, DEFAULT_ACTIONS,
};
pub use trigger::{confidence, decide, Branch, TriggerDecision, TriggerThresholds};
