//! Mock environment state: a namespaced key/value store plus a mutation log
//! that makes every run replayable and every attack effect auditable.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// One recorded state mutation: which tool ran, with which canonical
/// arguments, and what it changed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MutationRecord {
    pub tool: String,
    /// Canonical key-sorted JSON rendering of the call arguments.
    pub arguments: String,
    pub effect: String,
}

/// World state a scenario's tools read and mutate.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentState {
    pub store: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub mutation_log: Vec<MutationRecord>,
}

impl EnvironmentState {
    pub fn new() -> Self {
        EnvironmentState::default()
    }

    pub fn get(&self, key: &str) -> Option<&serde_json::Value> {
        self.store.get(key)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.store.get(key).and_then(|v| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.store.get(key).and_then(|v| v.as_f64())
    }

    /// Setup-time write (initial state construction, injection). Not logged:
    /// the mutation log records only tool effects during a run.
    pub fn seed(&mut self, key: impl Into<String>, value: serde_json::Value) {
        self.store.insert(key.into(), value);
    }

    pub(crate) fn set(&mut self, key: impl Into<String>, value: serde_json::Value) {
        self.store.insert(key.into(), value);
    }

    /// Appends a line to a text-log value under `key`.
    pub(crate) fn append_line(&mut self, key: &str, line: &str) {
        let existing = self.get_str(key).unwrap_or("").to_string();
        let next = if existing.is_empty() {
            line.to_string()
        } else {
            format!("{existing}\n{line}")
        };
        self.store.insert(key.to_string(), next.into());
    }

    pub(crate) fn log_mutation(&mut self, tool: &str, arguments: String, effect: String) {
        self.mutation_log.push(MutationRecord {
            tool: tool.to_string(),
            arguments,
            effect,
        });
    }
}
