//! Candidate construction, quasi-real-time adjustment, episode consolidation,
//! validation, and method construction.
//!
//! Training is symbolic: a candidate is an action sequence with per-step
//! confidence, and an episode update re-derives each step from the
//! successful actions recorded at that position.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::executor::Executor;
use crate::experience::{EpisodeDataset, ExperienceSample};
use crate::library::{Applicability, DataProfile, Method, ProcedureStep, Reliability};
use crate::planner::{LearningPlan, ModelFamily, UpdateCriteria};
use crate::task::{ActionId, TaskDescriptor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Initial,
    Adjusted,
    Refined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSolution {
    pub stage: Stage,
    pub sequence: Vec<ActionId>,
    pub per_step_confidence: Vec<f64>,
    pub model_family: ModelFamily,
    /// Positions whose current action failed and may be replaced.
    #[serde(default)]
    pub flagged: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub replay_success: bool,
    pub threshold_used: f64,
}

/// Successful occurrences of each action per position.
fn success_counts(dataset: &EpisodeDataset) -> BTreeMap<usize, BTreeMap<&str, usize>> {
    let mut counts: BTreeMap<usize, BTreeMap<&str, usize>> = BTreeMap::new();
    for s in dataset.iter().filter(|s| s.outcome.success) {
        *counts
            .entry(s.position)
            .or_default()
            .entry(s.action.as_str())
            .or_default() += 1;
    }
    counts
}

/// Most frequent action; ties go to `preferred`, then to the smallest id.
fn majority<'a>(counts: &BTreeMap<&'a str, usize>, preferred: Option<&str>) -> Option<&'a str> {
    let best = counts.values().copied().max()?;
    if let Some(p) = preferred {
        if let Some((&name, _)) = counts.get_key_value(p).filter(|(_, &c)| c == best) {
            return Some(name);
        }
    }
    counts
        .iter()
        .find(|(_, &c)| c == best)
        .map(|(&name, _)| name)
}

impl CandidateSolution {
    /// θ: takes the planner's proposed sequence, or else the longest prefix of
    /// positions that have at least one successful sample.
    pub fn initialize(plan: &LearningPlan, dataset: &EpisodeDataset) -> Result<Self> {
        let sequence: Vec<ActionId> = match plan.direct_solution.as_ref().filter(|s| !s.is_empty())
        {
            Some(solution) => solution.clone(),
            None => {
                let counts = success_counts(dataset);
                let mut seq = Vec::new();
                for position in 0.. {
                    match counts.get(&position).and_then(|c| majority(c, None)) {
                        Some(action) => seq.push(action.to_string()),
                        None => break,
                    }
                }
                seq
            }
        };
        if sequence.is_empty() {
            return Err(Error::NoCandidateSource);
        }
        Ok(Self {
            stage: Stage::Initial,
            per_step_confidence: vec![1.0; sequence.len()],
            sequence,
            model_family: plan.top_family(),
            flagged: BTreeSet::new(),
        })
    }

    /// θ → θ′: folds one executed or observed step into the candidate.
    ///
    /// A failure of the candidate's own action halves that step's confidence
    /// and flags it. A success at a flagged step adopts the successful action.
    /// Any success of the current action averages its confidence toward 1.
    pub fn quasi_adjust(&mut self, sample: &ExperienceSample) -> Result<()> {
        if self.stage == Stage::Refined {
            return Err(Error::CandidateRefined);
        }
        self.stage = Stage::Adjusted;
        let k = sample.position;
        let Some(current) = self.sequence.get(k) else {
            return Ok(());
        };
        let same = *current == sample.action;
        if sample.outcome.success {
            if !same && self.flagged.remove(&k) {
                self.sequence[k] = sample.action.clone();
            } else if !same {
                return Ok(());
            }
            self.per_step_confidence[k] = (self.per_step_confidence[k] + 1.0) / 2.0;
        } else if same {
            self.per_step_confidence[k] /= 2.0;
            self.flagged.insert(k);
        }
        Ok(())
    }

    /// θ′ → θ*: per-position majority over successful samples from both sources.
    ///
    /// Confidence at each position is the empirical success rate of the chosen
    /// action there (0 when it never occurs in the dataset).
    pub fn train_episode(&self, dataset: &EpisodeDataset) -> CandidateSolution {
        let counts = success_counts(dataset);
        let mut occurrences: BTreeMap<(usize, &str), usize> = BTreeMap::new();
        for s in dataset.iter() {
            *occurrences
                .entry((s.position, s.action.as_str()))
                .or_default() += 1;
        }

        let empty = BTreeMap::new();
        let mut sequence = Vec::with_capacity(self.sequence.len());
        let mut confidence = Vec::with_capacity(self.sequence.len());
        for (i, own) in self.sequence.iter().enumerate() {
            let at = counts.get(&i).unwrap_or(&empty);
            let chosen = match majority(at, Some(own)) {
                Some(a) if at[a] > 0 => a.to_string(),
                _ => own.clone(),
            };
            let wins = at.get(chosen.as_str()).copied().unwrap_or(0);
            let seen = occurrences.get(&(i, chosen.as_str())).copied().unwrap_or(0);
            confidence.push(if seen == 0 {
                0.0
            } else {
                wins as f64 / seen as f64
            });
            sequence.push(chosen);
        }
        CandidateSolution {
            stage: Stage::Refined,
            sequence,
            per_step_confidence: confidence,
            model_family: self.model_family,
            flagged: BTreeSet::new(),
        }
    }

    /// Replays the refined sequence once and checks confidence against the threshold.
    pub fn validate(
        &self,
        task: &TaskDescriptor,
        executor: &mut dyn Executor,
        criteria: &UpdateCriteria,
    ) -> Result<ValidationReport> {
        if self.stage != Stage::Refined {
            return Err(Error::InvalidArgument(
                "only refined candidates can be validated".into(),
            ));
        }
        let replay_success = executor.execute(task, &self.sequence).success;
        let min_conf = self
            .per_step_confidence
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let confident =
            !self.per_step_confidence.is_empty() && min_conf >= criteria.validation_threshold;
        Ok(ValidationReport {
            passed: replay_success && confident,
            replay_success,
            threshold_used: criteria.validation_threshold,
        })
    }

    /// Builds M_new from a validated candidate.
    pub fn build_method(
        &self,
        report: &ValidationReport,
        id: impl Into<String>,
        task: &TaskDescriptor,
        dataset: &EpisodeDataset,
        cycle: u64,
    ) -> Result<Method> {
        if !report.passed || self.stage != Stage::Refined {
            return Err(Error::NotValidated);
        }
        let method = Method {
            id: id.into(),
            procedure: self.sequence.iter().map(ProcedureStep::new).collect(),
            params: BTreeMap::from([(
                "model_family".to_string(),
                self.model_family.as_str().to_string(),
            )]),
            data_profile: DataProfile {
                n_self_samples: dataset.self_samples.len() as u64,
                n_obs_samples: dataset.obs_samples.len() as u64,
                episodes: 1,
            },
            applicability: Applicability {
                signatures: BTreeSet::from([task.signature()]),
                goal_tokens: task.goal_token_set(),
                max_steps: task.constraints.max_steps,
            },
            // the validation replay is the first recorded success
            reliability: Reliability {
                successes: 1,
                attempts: 1,
                created_cycle: cycle,
                last_used_cycle: cycle,
            },
        };
        method.validate()?;
        Ok(method)
    }
}

/// U(M): success ratio discounted by cycles since last use.
pub fn utility(method: &Method, current_cycle: u64) -> f64 {
    let idle = current_cycle.saturating_sub(method.reliability.last_used_cycle) as f64;
    method.reliability.success_ratio() / (1.0 + 0.01 * idle)
}

pub fn needs_refinement(method: &Method, current_cycle: u64, tau_u: f64) -> bool {
    utility(method, current_cycle) < tau_u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::SimulatedExecutor;
    use crate::experience::Source;
    use crate::planner::CandidateModel;
    use crate::task::{Constraints, ObservedEvent};

    fn seq(a: &[&str]) -> Vec<ActionId> {
        a.iter().map(|s| s.to_string()).collect()
    }

    fn plan(solution: Option<&[&str]>) -> LearningPlan {
        LearningPlan {
            subproblems: vec![],
            candidate_models: vec![CandidateModel {
                family: ModelFamily::Sequence,
                rationale: String::new(),
            }],
            data_requirements: vec![],
            strategy: vec![],
            update_criteria: UpdateCriteria::default(),
            direct_solution: solution.map(seq),
        }
    }

    fn task(target: &[&str]) -> TaskDescriptor {
        TaskDescriptor {
            id: "x".into(),
            instruction: String::new(),
            goal: vec!["stack".into(), "cube".into()],
            environment: BTreeMap::new(),
            observations: vec![],
            constraints: Constraints {
                max_steps: 8,
                deadline_s: None,
            },
            target_sequence: seq(target),
        }
    }

    fn dataset() -> EpisodeDataset {
        EpisodeDataset::new(task(&["a"]).signature())
    }

    fn observe(d: &mut EpisodeDataset, actions: &[&str]) {
        d.ingest_observation(&ObservedEvent {
            task_signature: d.task_signature.clone(),
            action_sequence: seq(actions),
            success: true,
            context: BTreeMap::new(),
        })
        .unwrap();
    }

    fn self_sample(
        d: &EpisodeDataset,
        position: usize,
        action: &str,
        ok: bool,
    ) -> ExperienceSample {
        ExperienceSample::new(
            d.next_t(Source::SelfExecution),
            position,
            action,
            ok,
            Source::SelfExecution,
        )
    }

    #[test]
    fn initialize_from_direct_solution() {
        let c = CandidateSolution::initialize(&plan(Some(&["a", "b", "c"])), &dataset()).unwrap();
        assert_eq!(c.sequence, seq(&["a", "b", "c"]));
        assert_eq!(c.stage, Stage::Initial);
        assert_eq!(c.model_family, ModelFamily::Sequence);
    }

    #[test]
    fn initialize_from_observation() {
        let mut d = dataset();
        observe(&mut d, &["move", "grasp", "lift", "place"]);
        let c = CandidateSolution::initialize(&plan(None), &d).unwrap();
        assert_eq!(c.sequence, seq(&["move", "grasp", "lift", "place"]));
    }

    #[test]
    fn initialize_without_source_fails() {
        assert_eq!(
            CandidateSolution::initialize(&plan(None), &dataset()),
            Err(Error::NoCandidateSource)
        );
    }

    #[test]
    fn failure_halves_confidence() {
        let d = dataset();
        let mut c = CandidateSolution::initialize(&plan(Some(&["a", "b", "c"])), &d).unwrap();
        c.quasi_adjust(&self_sample(&d, 2, "c", false)).unwrap();
        assert_eq!(c.per_step_confidence[2], 0.5);
        assert!(c.flagged.contains(&2));
        assert_eq!(c.stage, Stage::Adjusted);
    }

    #[test]
    fn success_averages_confidence() {
        let d = dataset();
        let mut c = CandidateSolution::initialize(&plan(Some(&["a", "b", "c"])), &d).unwrap();
        c.per_step_confidence[2] = 0.5;
        c.quasi_adjust(&self_sample(&d, 2, "c", true)).unwrap();
        assert_eq!(c.per_step_confidence[2], 0.75);
    }

    #[test]
    fn flagged_step_adopts_successful_alternative() {
        let d = dataset();
        let mut c = CandidateSolution::initialize(&plan(Some(&["a", "b", "c"])), &d).unwrap();
        c.quasi_adjust(&self_sample(&d, 1, "b", false)).unwrap();
        c.quasi_adjust(&self_sample(&d, 1, "x", false)).unwrap();
        assert_eq!(c.per_step_confidence[1], 0.5);
        c.quasi_adjust(&self_sample(&d, 1, "y", true)).unwrap();
        assert_eq!(c.sequence[1], "y");
        assert_eq!(c.per_step_confidence[1], 0.75);
        assert!(c.flagged.is_empty());
    }

    #[test]
    fn refined_candidate_is_immutable() {
        let d = dataset();
        let c = CandidateSolution::initialize(&plan(Some(&["a"])), &d).unwrap();
        let mut refined = c.train_episode(&d);
        assert_eq!(
            refined.quasi_adjust(&self_sample(&d, 0, "a", true)),
            Err(Error::CandidateRefined)
        );
    }

    #[test]
    fn majority_wins_at_each_index() {
        let mut d = dataset();
        let c = CandidateSolution::initialize(&plan(Some(&["a", "b", "c", "drop"])), &d).unwrap();
        for (action, ok) in [
            ("place", true),
            ("place", true),
            ("drop", true),
            ("drop", false),
        ] {
            let s = self_sample(&d, 3, action, ok);
            d.record_step(s).unwrap();
        }
        let r = c.train_episode(&d);
        assert_eq!(r.sequence[3], "place");
        assert_eq!(r.per_step_confidence[3], 1.0);
        assert_eq!(r.stage, Stage::Refined);
    }

    #[test]
    fn candidate_breaks_ties() {
        let mut d = dataset();
        let c = CandidateSolution::initialize(&plan(Some(&["zz"])), &d).unwrap();
        for action in ["aa", "zz"] {
            let s = self_sample(&d, 0, action, true);
            d.record_step(s).unwrap();
        }
        assert_eq!(c.train_episode(&d).sequence, seq(&["zz"]));
    }

    #[test]
    fn identical_dataset_is_fixed_point() {
        let mut d = dataset();
        let c = CandidateSolution::initialize(&plan(Some(&["a", "b", "c"])), &d).unwrap();
        for (i, a) in ["a", "b", "c"].iter().enumerate() {
            let s = self_sample(&d, i, a, true);
            d.record_step(s).unwrap();
        }
        let r = c.train_episode(&d);
        assert_eq!(r.sequence, c.sequence);
        assert_eq!(r.per_step_confidence, vec![1.0; 3]);
    }

    #[test]
    fn observation_only_dataset_recovers_target() {
        let target = ["move", "grasp", "lift", "place"];
        let mut d = dataset();
        observe(&mut d, &target);
        let wrong =
            CandidateSolution::initialize(&plan(Some(&["move", "push", "lift", "place"])), &d)
                .unwrap();
        let r = wrong.train_episode(&d);
        assert_eq!(r.sequence, seq(&target));
        let report = r
            .validate(
                &task(&target),
                &mut SimulatedExecutor,
                &UpdateCriteria::default(),
            )
            .unwrap();
        assert!(report.passed);
    }

    #[test]
    fn validation_outcomes() {
        let target = ["a", "b", "c"];
        let t = task(&target);
        let mut d = dataset();
        observe(&mut d, &target);
        let good = CandidateSolution::initialize(&plan(None), &d)
            .unwrap()
            .train_episode(&d);
        let criteria = UpdateCriteria::default();
        assert!(
            good.validate(&t, &mut SimulatedExecutor, &criteria)
                .unwrap()
                .passed
        );

        let mut corrupted = good.clone();
        corrupted.sequence[1] = "x".into();
        let r = corrupted
            .validate(&t, &mut SimulatedExecutor, &criteria)
            .unwrap();
        assert!(!r.replay_success && !r.passed);

        let mut shaky = good.clone();
        shaky.per_step_confidence[0] = 0.4;
        let r = shaky
            .validate(&t, &mut SimulatedExecutor, &criteria)
            .unwrap();
        assert!(r.replay_success);
        assert!(!r.passed);
        assert_eq!(r.threshold_used, 0.5);

        let unrefined = CandidateSolution::initialize(&plan(None), &d).unwrap();
        assert!(unrefined
            .validate(&t, &mut SimulatedExecutor, &criteria)
            .is_err());
    }

    #[test]
    fn build_method_from_validated_candidate() {
        let target = ["move", "grasp", "lift", "place"];
        let t = task(&target);
        let mut d = dataset();
        observe(&mut d, &target);
        let r = CandidateSolution::initialize(&plan(None), &d)
            .unwrap()
            .train_episode(&d);
        let report = r
            .validate(&t, &mut SimulatedExecutor, &UpdateCriteria::default())
            .unwrap();
        let m = r.build_method(&report, "m1", &t, &d, 4).unwrap();
        assert_eq!(
            m.data_profile,
            DataProfile {
                n_self_samples: 0,
                n_obs_samples: 4,
                episodes: 1
            }
        );
        assert_eq!((m.reliability.successes, m.reliability.attempts), (1, 1));
        assert_eq!(m.reliability.created_cycle, 4);
        assert_eq!(m.params["model_family"], "sequence");

        let mut lib = crate::library::MethodLibrary::new();
        lib.insert(m).unwrap();
        let hit = lib.retrieve_best(&t, 0.8);
        assert!(hit.covered);
        assert_eq!(hit.score, 1.0);
    }

    #[test]
    fn build_on_failed_validation_errors() {
        let d = dataset();
        let c = CandidateSolution::initialize(&plan(Some(&["a"])), &d)
            .unwrap()
            .train_episode(&d);
        let report = ValidationReport {
            passed: false,
            replay_success: false,
            threshold_used: 0.5,
        };
        assert_eq!(
            c.build_method(&report, "m", &task(&["a"]), &d, 0),
            Err(Error::NotValidated)
        );
    }

    fn method_with(successes: u64, attempts: u64, last_used: u64) -> Method {
        Method {
            id: "m".into(),
            procedure: vec![ProcedureStep::new("a")],
            params: BTreeMap::new(),
            data_profile: DataProfile::default(),
            applicability: Applicability {
                signatures: BTreeSet::from([task(&["a"]).signature()]),
                goal_tokens: BTreeSet::new(),
                max_steps: 8,
            },
            reliability: Reliability {
                successes,
                attempts,
                created_cycle: 0,
                last_used_cycle: last_used,
            },
        }
    }

    #[test]
    fn utility_examples() {
        assert_eq!(utility(&method_with(1, 1, 10), 10), 1.0);
        assert_eq!(utility(&method_with(1, 2, 10), 10), 0.5);
        assert_eq!(utility(&method_with(1, 1, 0), 100), 0.5);
    }

    #[test]
    fn refinement_threshold_is_strict() {
        // 1/5 just used -> 0.2
        assert!(needs_refinement(&method_with(1, 5, 3), 3, 0.3));
        // 3/10 just used -> exactly 0.3
        assert!(!needs_refinement(&method_with(3, 10, 3), 3, 0.3));
        assert!(!needs_refinement(&method_with(1, 1, 3), 3, 0.3));
    }
}
