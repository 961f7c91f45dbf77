//! Fixtures shared by the criterion benchmarks under `benches/`.

use autolearn_core::{
    config::run_with_planner, BenchmarkRun, CorpusMode, MethodLibrary, MockPlanner, PolicyMode,
    RunConfig, TaskEvent,
};

pub fn config(mode: PolicyMode, n_tasks: usize, n_repeats: u32) -> RunConfig {
    RunConfig {
        mode,
        n_tasks,
        n_repeats,
        ..RunConfig::default()
    }
}

/// A library learned from `n_tasks` distinct tasks, plus the corpus it came from.
pub fn learned_library(n_tasks: usize) -> (MethodLibrary, Vec<TaskEvent>) {
    let cfg = config(PolicyMode::Proposed, n_tasks, 1);
    let events = autolearn_core::generate_corpus(cfg.seed, n_tasks, 1, CorpusMode::SelfExecution)
        .expect("corpus");
    (run(&cfg).library, events)
}

pub fn run(cfg: &RunConfig) -> BenchmarkRun {
    let planner = MockPlanner::new(cfg.seed, cfg.planner.p_corrupt, cfg.planner_latency_s());
    run_with_planner(cfg, planner, MethodLibrary::new()).expect("benchmark run")
}
