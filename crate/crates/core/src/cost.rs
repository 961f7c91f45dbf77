//! Analytic cost model for reuse versus relearning.

use serde::{Deserialize, Serialize};

use crate::error::{from_json_str, Error, Result};

/// Per-phase costs in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostProfile {
    pub c_retrieve: f64,
    pub c_plan: f64,
    pub c_collect: f64,
    pub c_train: f64,
    pub c_store: f64,
    pub c_exec: f64,
    #[serde(default)]
    pub c_delay: f64,
}

impl CostProfile {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("c_retrieve", self.c_retrieve),
            ("c_plan", self.c_plan),
            ("c_collect", self.c_collect),
            ("c_train", self.c_train),
            ("c_store", self.c_store),
            ("c_exec", self.c_exec),
            ("c_delay", self.c_delay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::schema(
                    name,
                    format!("{v} must be a nonnegative number"),
                ));
            }
        }
        Ok(())
    }

    /// Parses and validates a profile document.
    pub fn from_json(text: &str) -> Result<Self> {
        let profile: CostProfile = from_json_str(text)?;
        profile.validate()?;
        Ok(profile)
    }

    fn learning_cost(&self) -> f64 {
        self.c_plan + self.c_collect + self.c_train + self.c_store
    }
}

/// Cost of one task; `learn` is the trigger output z.
pub fn single_task_cost(profile: &CostProfile, learn: bool) -> f64 {
    let base = profile.c_retrieve + profile.c_exec;
    if learn {
        base + profile.learning_cost()
    } else {
        base
    }
}

/// Expected cost when the library covers the task with probability `p`.
pub fn expected_task_cost(profile: &CostProfile, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "coverage probability {p} is outside [0, 1]"
        )));
    }
    Ok(profile.c_retrieve + profile.c_exec + (1.0 - p) * profile.learning_cost())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReuseBenefit {
    pub delta_c: f64,
    pub investment: f64,
    pub b_reuse: f64,
    pub b_net: f64,
}

pub fn reuse_benefit(profile: &CostProfile, rho: f64, k: u64) -> ReuseBenefit {
    let delta_c = profile.c_plan + profile.c_collect + profile.c_train;
    let investment = delta_c + profile.c_store;
    let b_reuse = rho * k as f64 * delta_c;
    ReuseBenefit {
        delta_c,
        investment,
        b_reuse,
        b_net: b_reuse - investment,
    }
}

/// ρ·K·ΔC > ΔC + C_store.
pub fn benefit_condition_holds(profile: &CostProfile, rho: f64, k: u64) -> bool {
    let b = reuse_benefit(profile, rho, k);
    b.b_reuse > b.investment
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayComparison {
    pub delayed_total: f64,
    pub quasi_total: f64,
}

/// Totals for delayed training (charged `c_delay`) and quasi-real-time
/// training (charged `c_delay_quasi`).
pub fn delay_comparison(profile: &CostProfile, c_delay_quasi: f64) -> Result<DelayComparison> {
    if c_delay_quasi.is_nan() || c_delay_quasi < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "quasi-real-time delay {c_delay_quasi} must be nonnegative"
        )));
    }
    if c_delay_quasi > profile.c_delay {
        return Err(Error::InvalidArgument(format!(
            "quasi-real-time delay {c_delay_quasi} exceeds the delayed cost {}",
            profile.c_delay
        )));
    }
    let common =
        profile.c_retrieve + profile.c_exec + profile.c_plan + profile.c_collect + profile.c_train;
    Ok(DelayComparison {
        delayed_total: common + profile.c_delay,
        quasi_total: common + c_delay_quasi,
    })
}
