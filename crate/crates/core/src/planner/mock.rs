use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{
    CandidateModel, DataRequirement, Directive, DirectiveKind, LearningPlan, ModelFamily, Planner,
    PlannerCall, PlannerError, PlannerFeedback, PlannerHistory, UpdateCriteria,
};
use crate::task::{ActionId, Signature, TaskDescriptor, DEFAULT_ACTIONS};

/// Deterministic planner for benchmarks.
///
/// Every call is a pure function of the task signature, the seed, and the
/// call index. With probability `p_corrupt` the proposed action sequence has
/// exactly one step replaced by a different action from `actions`.
#[derive(Debug, Clone)]
pub struct MockPlanner {
    seed: u64,
    p_corrupt: f64,
    latency_s: f64,
    actions: Vec<ActionId>,
    calls: u64,
}

impl MockPlanner {
    pub fn new(seed: u64, p_corrupt: f64, latency_s: f64) -> Self {
        Self {
            seed,
            p_corrupt: p_corrupt.clamp(0.0, 1.0),
            latency_s: latency_s.max(0.0),
            actions: DEFAULT_ACTIONS.iter().map(|s| s.to_string()).collect(),
            calls: 0,
        }
    }

    pub fn with_actions(mut self, actions: Vec<ActionId>) -> Self {
        self.actions = actions;
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    fn rng_for(&self, signature: &Signature, call_index: u64) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(signature.as_str().as_bytes());
        h.update(call_index.to_le_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest[..32]);
        ChaCha8Rng::from_seed(seed)
    }

    /// Replaces one position of `target` with a different action.
    fn perturb(&self, target: &[ActionId], rng: &mut ChaCha8Rng) -> Vec<ActionId> {
        let mut out = target.to_vec();
        if out.is_empty() {
            return out;
        }
        let pos = rng.random_range(0..out.len());
        let alternatives: Vec<&ActionId> =
            self.actions.iter().filter(|a| **a != out[pos]).collect();
        if !alternatives.is_empty() {
            out[pos] = alternatives[rng.random_range(0..alternatives.len())].clone();
        }
        out
    }
}

impl Planner for MockPlanner {
    fn plan(
        &mut self,
        task: &TaskDescriptor,
        _history: &PlannerHistory,
        feedback: Option<&PlannerFeedback>,
    ) -> Result<PlannerCall, PlannerError> {
        let call_index = self.calls;
        self.calls += 1;
        let mut rng = self.rng_for(&task.signature(), call_index);

        let solution = if rng.random_bool(self.p_corrupt) {
            self.perturb(&task.target_sequence, &mut rng)
        } else {
            task.target_sequence.clone()
        };

        let mut strategy: Vec<Directive> = (0..solution.len())
            .map(|i| Directive {
                kind: DirectiveKind::Execute,
                detail: format!("execute step {i}"),
            })
            .collect();
        if let Some(feedback) = feedback {
            let mut failed: Vec<usize> = feedback
                .episode_outcomes
                .iter()
                .filter_map(|o| o.failed_step)
                .filter(|&k| k <= strategy.len())
                .collect();
            failed.sort_unstable();
            failed.dedup();
            for k in failed.into_iter().rev() {
                strategy.insert(
                    k,
                    Directive {
                        kind: DirectiveKind::Observe,
                        detail: format!("observe a demonstration of step {k}"),
                    },
                );
            }
        }

        let plan = LearningPlan {
            subproblems: task
                .goal
                .iter()
                .enumerate()
                .map(|(i, g)| format!("k{i}: {g}"))
                .collect(),
            candidate_models: vec![
                CandidateModel {
                    family: ModelFamily::Sequence,
                    rationale: "the task is an ordered action sequence".into(),
                },
                CandidateModel {
                    family: ModelFamily::Multimodal,
                    rationale: "fallback when visual context matters".into(),
                },
            ],
            data_requirements: vec![
                DataRequirement {
                    channel: "self_execution".into(),
                    min_samples: solution.len() as u64,
                },
                DataRequirement {
                    channel: "observation".into(),
                    min_samples: 0,
                },
            ],
            strategy,
            update_criteria: UpdateCriteria::default(),
            direct_solution: Some(solution),
        };

        Ok(PlannerCall {
            latency_s: self.latency_s,
            plan,
            raw: None,
            retries: 0,
        })
    }
}
