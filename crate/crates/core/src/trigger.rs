//! The learning-trigger rule.
//!
//! Cases are evaluated in order: uncovered task, low-confidence match,
//! uncovered successful observation, otherwise reuse (or no action when the
//! event is a pure observation that is already covered).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::{matching_score, Method, RetrievalResult};
use crate::task::{ObservedEvent, TaskDescriptor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriggerThresholds {
    pub tau_r: f64,
    pub tau_q: f64,
    pub tau_o: f64,
    pub tau_u: f64,
}

impl Default for TriggerThresholds {
    fn default() -> Self {
        Self {
            tau_r: 0.8,
            tau_q: 0.5,
            tau_o: 0.8,
            tau_u: 0.3,
        }
    }
}

impl TriggerThresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau_r", self.tau_r),
            ("tau_q", self.tau_q),
            ("tau_o", self.tau_o),
            ("tau_u", self.tau_u),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::schema(name, format!("{v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Reuse,
    LearnUncovered,
    LearnLowConfidence,
    LearnObservation,
    NoAction,
}

impl Branch {
    pub fn triggers_learning(self) -> bool {
        matches!(
            self,
            Branch::LearnUncovered | Branch::LearnLowConfidence | Branch::LearnObservation
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerDecision {
    pub z: bool,
    pub branch: Branch,
    pub method: Option<Method>,
}

impl TriggerDecision {
    fn learn(branch: Branch) -> Self {
        Self {
            z: true,
            branch,
            method: None,
        }
    }
}

/// Q(M, T): Laplace-smoothed success ratio scaled by the matching score.
pub fn confidence(method: &Method, task: &TaskDescriptor) -> f64 {
    let r = &method.reliability;
    let smoothed = (r.successes as f64 + 1.0) / (r.attempts as f64 + 2.0);
    smoothed * matching_score(task, method)
}

/// Applies the trigger rule.
///
/// `retrieval` is the library lookup for a pending self task and is `None`
/// for a pure observed event; `obs_retrieval` accompanies `observation`.
pub fn decide(
    task: &TaskDescriptor,
    retrieval: Option<&RetrievalResult>,
    observation: Option<&ObservedEvent>,
    obs_retrieval: Option<&RetrievalResult>,
    thresholds: &TriggerThresholds,
) -> Result<TriggerDecision> {
    if observation.is_some() != obs_retrieval.is_some() {
        return Err(Error::InvalidArgument(
            "obs_retrieval must be given exactly when an observation is".into(),
        ));
    }
    if retrieval.is_none() && observation.is_none() {
        return Err(Error::InvalidArgument(
            "decide needs a pending task or an observation".into(),
        ));
    }

    if let Some(r) = retrieval {
        if r.score < thresholds.tau_r {
            return Ok(TriggerDecision::learn(Branch::LearnUncovered));
        }
        let method = r
            .method
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("covered retrieval without a method".into()))?;
        if confidence(method, task) < thresholds.tau_q {
            return Ok(TriggerDecision::learn(Branch::LearnLowConfidence));
        }
    }

    if let (Some(obs), Some(obs_r)) = (observation, obs_retrieval) {
        if obs.success && obs_r.score < thresholds.tau_o {
            return Ok(TriggerDecision::learn(Branch::LearnObservation));
        }
    }

    Ok(match retrieval {
        Some(r) => TriggerDecision {
            z: false,
            branch: Branch::Reuse,
            method: r.method.clone(),
        },
        None => TriggerDecision {
            z: false,
            branch: Branch::NoAction,
            method: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library::{Applicability, DataProfile, ProcedureStep, Reliability};
    use crate::task::{Constraints, Signature};
    use std::collections::{BTreeMap, BTreeSet};

    fn task() -> TaskDescriptor {
        TaskDescriptor {
            id: "t".into(),
            instruction: String::new(),
            goal: vec!["pick".into(), "cube".into()],
            environment: BTreeMap::new(),
            observations: vec![],
            constraints: Constraints {
                max_steps: 8,
                deadline_s: None,
            },
            target_sequence: vec!["grasp".into()],
        }
    }

    fn method_for(t: &TaskDescriptor, successes: u64, attempts: u64) -> Method {
        Method {
            id: "m".into(),
            procedure: vec![ProcedureStep::new("grasp")],
            params: BTreeMap::new(),
            data_profile: DataProfile::default(),
            applicability: Applicability {
                signatures: BTreeSet::from([t.signature()]),
                goal_tokens: t.goal_token_set(),
                max_steps: 8,
            },
            reliability: Reliability {
                successes,
                attempts,
                ..Default::default()
            },
        }
    }

    #[test]
    fn confidence_examples() {
        let t = task();
        assert_eq!(confidence(&method_for(&t, 0, 0), &t), 0.5);
        assert!((confidence(&method_for(&t, 9, 10), &t) - 10.0 / 12.0).abs() < 1e-12);

        let mut far = method_for(&t, 9, 10);
        far.applicability.signatures = BTreeSet::from([Signature::from("other".to_string())]);
        far.applicability.goal_tokens = BTreeSet::from(["open".to_string()]);
        assert_eq!(confidence(&far, &t), 0.0);
    }

    #[test]
    fn uncovered_score_triggers() {
        let t = task();
        let r = RetrievalResult {
            method: Some(method_for(&t, 1, 1)),
            score: 0.5,
            covered: false,
        };
        let d = decide(&t, Some(&r), None, None, &TriggerThresholds::default()).unwrap();
        assert!(d.z);
        assert_eq!(d.branch, Branch::LearnUncovered);
        assert!(d.method.is_none());
    }

    #[test]
    fn low_confidence_triggers() {
        let t = task();
        // confidence = (0+1)/(5+2) * 1.0 ≈ 0.143 < 0.5
        let r = RetrievalResult {
            method: Some(method_for(&t, 0, 5)),
            score: 0.9,
            covered: true,
        };
        let d = decide(&t, Some(&r), None, None, &TriggerThresholds::default()).unwrap();
        assert!(d.z);
        assert_eq!(d.branch, Branch::LearnLowConfidence);
    }

    #[test]
    fn pure_observation_triggers() {
        let t = task();
        let obs = ObservedEvent {
            task_signature: t.signature(),
            action_sequence: vec!["grasp".into()],
            success: true,
            context: BTreeMap::new(),
        };
        let d = decide(
            &t,
            None,
            Some(&obs),
            Some(&RetrievalResult::empty()),
            &TriggerThresholds::default(),
        )
        .unwrap();
        assert!(d.z);
        assert_eq!(d.branch, Branch::LearnObservation);
    }

    #[test]
    fn covered_observation_is_no_action() {
        let t = task();
        let obs = ObservedEvent {
            task_signature: t.signature(),
            action_sequence: vec!["grasp".into()],
            success: true,
            context: BTreeMap::new(),
        };
        let covered = RetrievalResult {
            method: Some(method_for(&t, 1, 1)),
            score: 1.0,
            covered: true,
        };
        let d = decide(
            &t,
            None,
            Some(&obs),
            Some(&covered),
            &TriggerThresholds::default(),
        )
        .unwrap();
        assert!(!d.z);
        assert_eq!(d.branch, Branch::NoAction);
    }

    #[test]
    fn fresh_method_sits_on_the_confidence_boundary() {
        let t = task();
        let r = RetrievalResult {
            method: Some(method_for(&t, 0, 0)),
            score: 1.0,
            covered: true,
        };
        let d = decide(&t, Some(&r), None, None, &TriggerThresholds::default()).unwrap();
        assert_eq!(d.branch, Branch::Reuse);
        assert_eq!(d.method.unwrap().id, "m");
    }

    #[test]
    fn mismatched_observation_arguments_rejected() {
        let t = task();
        assert!(decide(
            &t,
            Some(&RetrievalResult::empty()),
            None,
            Some(&RetrievalResult::empty()),
            &TriggerThresholds::default()
        )
        .is_err());
        assert!(decide(&t, None, None, None, &TriggerThresholds::default()).is_err());
    }

    #[test]
    fn thresholds_validate_range() {
        assert!(TriggerThresholds::default().validate().is_ok());
        let bad = TriggerThresholds {
            tau_q: 1.2,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Schema { field, .. }) if field == "tau_q"));
    }
}
