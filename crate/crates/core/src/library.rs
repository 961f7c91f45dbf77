//! The local method library: storage, scored retrieval, reliability
//! bookkeeping, and JSON persistence.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{from_json_str, Error, Result};
use crate::task::{jaccard, ActionId, Signature, TaskDescriptor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcedureStep {
    pub action: ActionId,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, String>,
}

impl ProcedureStep {
    pub fn new(action: impl Into<ActionId>) -> Self {
        Self {
            action: action.into(),
            params: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataProfile {
    pub n_self_samples: u64,
    pub n_obs_samples: u64,
    pub episodes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Applicability {
    pub signatures: BTreeSet<Signature>,
    pub goal_tokens: BTreeSet<String>,
    /// Step budget of the task the method was learned on.
    pub max_steps: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reliability {
    pub successes: u64,
    pub attempts: u64,
    pub created_cycle: u64,
    pub last_used_cycle: u64,
}

impl Reliability {
    /// `successes / attempts`, or 0 for a method that was never attempted.
    pub fn success_ratio(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.successes as f64 / self.attempts as f64
        }
    }
}

/// A reusable method: procedure, parameters, data profile, applicability, reliability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Method {
    pub id: String,
    pub procedure: Vec<ProcedureStep>,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    #[serde(default)]
    pub data_profile: DataProfile,
    pub applicability: Applicability,
    #[serde(default)]
    pub reliability: Reliability,
}

impl Method {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::schema("id", "must be non-empty"));
        }
        if self.procedure.is_empty() {
            return Err(Error::schema("procedure", "must be non-empty"));
        }
        if self.applicability.signatures.is_empty() {
            return Err(Error::schema(
                "applicability.signatures",
                "must be non-empty",
            ));
        }
        if self.reliability.successes > self.reliability.attempts {
            return Err(Error::schema(
                "reliability.successes",
                format!(
                    "successes ({}) exceed attempts ({})",
                    self.reliability.successes, self.reliability.attempts
                ),
            ));
        }
        Ok(())
    }

    pub fn actions(&self) -> Vec<ActionId> {
        self.procedure.iter().map(|s| s.action.clone()).collect()
    }
}

/// S(T, M): 1 on an exact signature match, otherwise goal-token Jaccard
/// similarity, zeroed when the procedure does not fit the task's step budget.
pub fn matching_score(task: &TaskDescriptor, method: &Method) -> f64 {
    TaskKey::new(task).score(method)
}

/// The parts of a task that scoring reads, computed once per lookup.
struct TaskKey {
    signature: Signature,
    tokens: BTreeSet<String>,
    max_steps: usize,
}

impl TaskKey {
    fn new(task: &TaskDescriptor) -> Self {
        Self {
            signature: task.signature(),
            tokens: task.goal_token_set(),
            max_steps: task.constraints.max_steps,
        }
    }

    fn score(&self, method: &Method) -> f64 {
        if method.applicability.signatures.contains(&self.signature) {
            return 1.0;
        }
        if self.max_steps < method.procedure.len() {
            return 0.0;
        }
        jaccard(&self.tokens, &method.applicability.goal_tokens)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub method: Option<Method>,
    pub score: f64,
    pub covered: bool,
}

impl RetrievalResult {
    pub fn empty() -> Self {
        Self {
            method: None,
            score: 0.0,
            covered: false,
        }
    }
}

/// Ranks two scored candidates; `Greater` means `a` wins.
fn rank(a: (f64, &Method), b: (f64, &Method)) -> Ordering {
    a.0.total_cmp(&b.0)
        .then_with(|| {
            a.1.reliability
                .success_ratio()
                .total_cmp(&b.1.reliability.success_ratio())
        })
        .then_with(|| {
            a.1.reliability
                .last_used_cycle
                .cmp(&b.1.reliability.last_used_cycle)
        })
        .then_with(|| b.1.id.cmp(&a.1.id))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MethodLibrary {
    methods: BTreeMap<String, Method>,
}

impl MethodLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.methods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.methods.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Method> {
        self.methods.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.methods.contains_key(id)
    }

    /// Methods in id order.
    pub fn iter(&self) -> impl Iterator<Item = &Method> {
        self.methods.values()
    }

    pub fn retrieve_best(&self, task: &TaskDescriptor, tau_r: f64) -> RetrievalResult {
        let key = TaskKey::new(task);
        let best = self
            .methods
            .values()
            .map(|m| (key.score(m), m))
            .max_by(|a, b| rank(*a, *b));
        match best {
            None => RetrievalResult::empty(),
            Some((score, method)) => RetrievalResult {
                method: Some(method.clone()),
                score,
                covered: score >= tau_r,
            },
        }
    }

    pub fn insert(&mut self, method: Method) -> Result<()> {
        method.validate()?;
        if self.methods.contains_key(&method.id) {
            return Err(Error::DuplicateMethod(method.id));
        }
        self.methods.insert(method.id.clone(), method);
        Ok(())
    }

    pub fn update_reliability(&mut self, method_id: &str, success: bool, cycle: u64) -> Result<()> {
        let method = self
            .methods
            .get_mut(method_id)
            .ok_or_else(|| Error::UnknownMethod(method_id.to_string()))?;
        let r = &mut method.reliability;
        r.attempts += 1;
        if success {
            r.successes += 1;
        }
        r.last_used_cycle = cycle;
        Ok(())
    }

    pub fn stats(&self) -> LibraryStats {
        LibraryStats {
            n_methods: self.methods.len(),
            methods: self
                .methods
                .values()
                .map(|m| MethodStat {
                    id: m.id.clone(),
                    procedure_len: m.procedure.len(),
                    success_ratio: m.reliability.success_ratio(),
                    n_goal_tokens: m.applicability.goal_tokens.len(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let doc = LibraryDocument {
            version: LIBRARY_VERSION,
            methods: self.methods.values().cloned().collect(),
        };
        serde_json::to_string_pretty(&doc).expect("library serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: LibraryDocument = from_json_str(text)?;
        if doc.version != LIBRARY_VERSION {
            return Err(Error::schema(
                "version",
                format!("unsupported library version {}", doc.version),
            ));
        }
        let mut library = MethodLibrary::new();
        for (i, method) in doc.methods.into_iter().enumerate() {
            let prefix = format!("methods[{i}]");
            method
                .validate()
                .map_err(|e| crate::task::prefix_field(e, &prefix))?;
            if library.contains(&method.id) {
                return Err(Error::schema(
                    format!("{prefix}.id"),
                    format!("duplicate method id `{}`", method.id),
                ));
            }
            library.methods.insert(method.id.clone(), method);
        }
        Ok(library)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub const LIBRARY_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct LibraryDocument {
    version: u32,
    methods: Vec<Method>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodStat {
    pub id: String,
    pub procedure_len: usize,
    #[serde(serialize_with = "crate::metrics::round4")]
    pub success_ratio: f64,
    pub n_goal_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LibraryStats {
    pub n_methods: usize,
    pub methods: Vec<MethodStat>,
}

/// A library handle shared between the engine and background consolidation.
///
/// Readers never observe a partially inserted method: inserts take the write
/// lock for the whole map update.
#[derive(Debug, Clone, Default)]
pub struct SharedLibrary {
    inner: Arc<RwLock<MethodLibrary>>,
}

impl SharedLibrary {
    pub fn new(library: MethodLibrary) -> Self {
        Self {
            inner: Arc::new(RwLock::new(library)),
        }
    }

    pub fn retrieve_best(&self, task: &TaskDescriptor, tau_r: f64) -> RetrievalResult {
        self.inner
            .read()
            .expect("library lock poisoned")
            .retrieve_best(task, tau_r)
    }

    pub fn insert(&self, method: Method) -> Result<()> {
        self.inner
            .write()
            .expect("library lock poisoned")
            .insert(method)
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("library lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> MethodLibrary {
        self.inner.read().expect("library lock poisoned").clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::Constraints;

    fn task(goal: &[&str]) -> TaskDescriptor {
        TaskDescriptor {
            id: "t".into(),
            instruction: String::new(),
            goal: goal.iter().map(|s| s.to_string()).collect(),
            environment: BTreeMap::new(),
            observations: vec![],
            constraints: Constraints {
                max_steps: 8,
                deadline_s: None,
            },
            target_sequence: vec!["move".into()],
        }
    }

    fn method(id: &str, sig_of: &TaskDescriptor, tokens: &[&str], len: usize) -> Method {
        Method {
            id: id.into(),
            procedure: (0..len).map(|_| ProcedureStep::new("move")).collect(),
            params: BTreeMap::new(),
            data_profile: DataProfile::default(),
            applicability: Applicability {
                signatures: BTreeSet::from([sig_of.signature()]),
                goal_tokens: tokens.iter().map(|s| s.to_string()).collect(),
                max_steps: 8,
            },
            reliability: Reliability::default(),
        }
    }

    #[test]
    fn exact_signature_scores_one() {
        let t = task(&["pick", "up", "red", "cube"]);
        let m = method("a", &t, &["unrelated"], 3);
        assert_eq!(matching_score(&t, &m), 1.0);
    }

    #[test]
    fn jaccard_partial_overlap() {
        let t = task(&["pick", "up", "red", "cube"]);
        let other = task(&["zzz"]);
        let m = method("a", &other, &["pick", "up", "blue", "cube"], 3);
        // |{pick,up,cube}| / |{pick,up,red,blue,cube}|
        assert!((matching_score(&t, &m) - 3.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_tokens_score_zero() {
        let t = task(&["pick", "cube"]);
        let other = task(&["zzz"]);
        let m = method("a", &other, &["open", "drawer"], 3);
        assert_eq!(matching_score(&t, &m), 0.0);
    }

    #[test]
    fn oversize_procedure_scores_zero() {
        let t = task(&["pick", "cube"]);
        let other = task(&["zzz"]);
        let m = method("a", &other, &["pick", "cube"], 9);
        assert_eq!(matching_score(&t, &m), 0.0);
    }

    #[test]
    fn empty_library_is_not_covered() {
        let r = MethodLibrary::new().retrieve_best(&task(&["x"]), 0.8);
        assert!(r.method.is_none());
        assert!(!r.covered);
        assert_eq!(r.score, 0.0);
    }

    #[test]
    fn best_of_two_is_covered() {
        let t = task(&["a", "b", "c", "d", "e", "f", "g", "h", "i"]);
        let other = task(&["zzz"]);
        let mut lib = MethodLibrary::new();
        // 6/10 = 0.6
        lib.insert(method("A", &other, &["a", "b", "c", "d", "e", "f", "x"], 2))
            .unwrap();
        // 9/10 = 0.9
        lib.insert(method(
            "B",
            &other,
            &["a", "b", "c", "d", "e", "f", "g", "h", "i", "x"],
            2,
        ))
        .unwrap();
        let r = lib.retrieve_best(&t, 0.8);
        assert_eq!(r.method.unwrap().id, "B");
        assert!(r.covered);
        assert!((r.score - 0.9).abs() < 1e-12);
    }

    #[test]
    fn below_threshold_returns_method_uncovered() {
        let t = task(&["pick", "up", "red", "cube"]);
        let other = task(&["zzz"]);
        let mut lib = MethodLibrary::new();
        lib.insert(method("A", &other, &["pick", "up", "blue", "cube"], 2))
            .unwrap();
        let r = lib.retrieve_best(&t, 0.8);
        assert_eq!(r.method.unwrap().id, "A");
        assert!(!r.covered);
    }

    #[test]
    fn ties_prefer_reliability_then_recency_then_id() {
        let t = task(&["pick", "cube"]);
        let mut lib = MethodLibrary::new();
        lib.insert(method("b", &t, &[], 2)).unwrap();
        lib.insert(method("a", &t, &[], 2)).unwrap();
        assert_eq!(lib.retrieve_best(&t, 0.8).method.unwrap().id, "a");
        lib.update_reliability("b", true, 1).unwrap();
        assert_eq!(lib.retrieve_best(&t, 0.8).method.unwrap().id, "b");
        lib.update_reliability("a", true, 5).unwrap();
        assert_eq!(lib.retrieve_best(&t, 0.8).method.unwrap().id, "a");
    }

    #[test]
    fn insert_then_retrieve_covers() {
        let t = task(&["pick", "cube"]);
        let mut lib = MethodLibrary::new();
        lib.insert(method("m", &t, &["pick", "cube"], 2)).unwrap();
        assert_eq!(lib.len(), 1);
        let r = lib.retrieve_best(&t, 0.8);
        assert!(r.covered);
        assert_eq!(r.score, 1.0);
    }

    #[test]
    fn duplicate_insert_rejected() {
        let t = task(&["pick"]);
        let mut lib = MethodLibrary::new();
        lib.insert(method("m", &t, &[], 1)).unwrap();
        assert_eq!(
            lib.insert(method("m", &t, &[], 1)),
            Err(Error::DuplicateMethod("m".into()))
        );
        assert_eq!(lib.len(), 1);
    }

    #[test]
    fn reliability_counters() {
        let t = task(&["pick"]);
        let mut lib = MethodLibrary::new();
        lib.insert(method("m", &t, &[], 1)).unwrap();
        lib.update_reliability("m", true, 3).unwrap();
        let r = &lib.get("m").unwrap().reliability;
        assert_eq!((r.successes, r.attempts, r.last_used_cycle), (1, 1, 3));

        let mut m = method("n", &t, &[], 1);
        m.reliability = Reliability {
            successes: 3,
            attempts: 4,
            ..Default::default()
        };
        lib.insert(m).unwrap();
        lib.update_reliability("n", false, 9).unwrap();
        let r = &lib.get("n").unwrap().reliability;
        assert_eq!((r.successes, r.attempts), (3, 5));

        assert_eq!(
            lib.update_reliability("zz", true, 0),
            Err(Error::UnknownMethod("zz".into()))
        );
    }

    #[test]
    fn success_ratio_matches_replayed_log() {
        let t = task(&["pick"]);
        let mut lib = MethodLibrary::new();
        lib.insert(method("m", &t, &[], 1)).unwrap();
        let log = [true, false, true, true, false, true, true];
        for (cycle, ok) in log.iter().enumerate() {
            lib.update_reliability("m", *ok, cycle as u64).unwrap();
        }
        let k = log.iter().filter(|b| **b).count() as f64;
        let j = log.len() as f64 - k;
        assert_eq!(
            lib.get("m").unwrap().reliability.success_ratio(),
            k / (k + j)
        );
    }

    #[test]
    fn stats_summary() {
        let t = task(&["pick"]);
        let mut lib = MethodLibrary::new();
        assert_eq!(lib.stats().n_methods, 0);
        let mut m = method("z", &t, &["a", "b"], 2);
        m.reliability = Reliability {
            successes: 2,
            attempts: 3,
            ..Default::default()
        };
        lib.insert(m).unwrap();
        lib.insert(method("c", &t, &[], 1)).unwrap();
        let stats = lib.stats();
        assert_eq!(stats.n_methods, 2);
        let ids: Vec<_> = stats.methods.iter().map(|m| m.id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
        let z = stats.methods.iter().find(|m| m.id == "z").unwrap();
        assert_eq!(format!("{:.4}", z.success_ratio), "0.6667");
    }

    #[test]
    fn load_rejects_successes_above_attempts() {
        let t = task(&["pick"]);
        let mut lib = MethodLibrary::new();
        lib.insert(method("m", &t, &[], 1)).unwrap();
        let text = lib
            .to_json()
            .replace("\"successes\": 0", "\"successes\": 7");
        match MethodLibrary::from_json(&text) {
            Err(Error::Schema { field, .. }) => {
                assert_eq!(field, "methods[0].reliability.successes")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_names_missing_field() {
        let text = r#"{"version":1,"methods":[{"id":"m","applicability":{"signatures":["x"],"goal_tokens":[],"max_steps":3}}]}"#;
        match MethodLibrary::from_json(text) {
            Err(Error::Schema { field, message }) => {
                assert!(field.starts_with("methods[0]"), "{field}");
                assert!(message.contains("procedure"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_round_trip() {
        let lib = MethodLibrary::new();
        assert_eq!(MethodLibrary::from_json(&lib.to_json()).unwrap(), lib);
    }

    #[test]
    fn shared_library_readers_see_whole_inserts() {
        let t = task(&["pick", "cube"]);
        let shared = SharedLibrary::new(MethodLibrary::new());
        let writer = {
            let shared = shared.clone();
            let t = t.clone();
            std::thread::spawn(move || {
                for i in 0..200 {
                    shared
                        .insert(method(&format!("m{i:03}"), &t, &["pick"], 2))
                        .unwrap();
                }
            })
        };
        for _ in 0..200 {
            let r = shared.retrieve_best(&t, 0.8);
            if let Some(m) = r.method {
                m.validate().unwrap();
                assert!(r.covered);
            }
        }
        writer.join().unwrap();
        assert_eq!(shared.len(), 200);
    }
}
