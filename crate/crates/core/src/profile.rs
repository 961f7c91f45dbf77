//! Calibrated timing profiles for the two benchmark corpora.
//!
//! Each profile pairs a planner latency with executor phase durations. The
//! self-execution profile fits the always-LLM and proposed totals of the
//! self-execution experiment, the observation profile fits the observation
//! experiment. Both assume the default corpus, whose action sequences average
//! 4.5 steps.

use serde::{Deserialize, Serialize};

use crate::executor::ExecutorConfig;
use crate::task::CorpusMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationProfile {
    SelfExecution,
    Observation,
}

impl CalibrationProfile {
    pub fn for_corpus(mode: CorpusMode) -> Self {
        match mode {
            CorpusMode::SelfExecution => CalibrationProfile::SelfExecution,
            CorpusMode::ObservationFirst => CalibrationProfile::Observation,
        }
    }

    /// Virtual seconds charged per mock planner call.
    pub fn planner_latency_s(self) -> f64 {
        match self {
            // 0.1873 of a 7.7772 s always-LLM episode
            CalibrationProfile::SelfExecution => 1.4567,
            // 0.2758 of the observation-only self-task mean (9.3211 s)
            CalibrationProfile::Observation => 3.2135,
        }
    }

    pub fn executor(self) -> ExecutorConfig {
        let base_s = match self {
            // 7.7772 - 1.4567 - 0.4 * 4.5
            CalibrationProfile::SelfExecution => 4.5205,
            // 9.3211 - 3.2135 - 0.4 * 4.5
            CalibrationProfile::Observation => 4.3076,
        };
        ExecutorConfig {
            base_s,
            per_step_s: 0.4,
            retrieve_s: 0.005,
            collect_s: 0.4,
            train_s: 0.3,
            store_s: 0.1,
            observe_s: 0.2,
        }
    }
}
