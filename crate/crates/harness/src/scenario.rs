//! Scenario specifications: a scripted user task, an environment, optional
//! injection, and named goal predicates over the final state and transcript.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{AttackKind, Placement};
use crate::env::{EnvironmentState, MutationRecord};
use crate::tools::Suite;

/// One step of the scripted benign plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub tool: String,
    #[serde(default)]
    pub arguments: IndexMap<String, serde_json::Value>,
}

/// Named checks over the final environment state and transcript.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GoalPredicate {
    /// A mutation by `tool` whose arguments contain every given substring.
    Mutation {
        tool: String,
        #[serde(default)]
        args_contain: BTreeMap<String, String>,
    },
    /// A store value contains the needle.
    StoreContains { key: String, needle: String },
    /// Some final answer in the turn contains the needle.
    FinalAnswerContains { needle: String },
    /// Every sub-check holds.
    AllOf { checks: Vec<GoalPredicate> },
}

impl GoalPredicate {
    pub fn eval(&self, final_state: &EnvironmentState, final_answers: &[String]) -> bool {
        match self {
            GoalPredicate::Mutation { tool, args_contain } => final_state
                .mutation_log
                .iter()
                .any(|m| mutation_matches(m, tool, args_contain)),
            GoalPredicate::StoreContains { key, needle } => final_state
                .get_str(key)
                .is_some_and(|v| v.contains(needle)),
            GoalPredicate::FinalAnswerContains { needle } => {
                final_answers.iter().any(|a| a.contains(needle))
            }
            GoalPredicate::AllOf { checks } => {
                checks.iter().all(|c| c.eval(final_state, final_answers))
            }
        }
    }
}

fn mutation_matches(
    record: &MutationRecord,
    tool: &str,
    args_contain: &BTreeMap<String, String>,
) -> bool {
    if record.tool != tool {
        return false;
    }
    let Ok(parsed) = serde_json::from_str::<serde_json::Value>(&record.arguments) else {
        return false;
    };
    args_contain.iter().all(|(key, needle)| {
        parsed
            .get(key)
            .map(|v| match v {
                serde_json::Value::String(s) => s.contains(needle),
                other => other.to_string().contains(needle),
            })
            .unwrap_or(false)
    })
}

/// Injection template shipped with a benign scenario; pairing it with each
/// attack kind yields the injected variants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionTemplate {
    pub payload_goal: String,
    pub carrier_tool: String,
    /// Store key holding the text the carrier tool returns.
    pub carrier_key: String,
    pub placement: Placement,
}

/// A concrete injection: template plus attack kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionSpec {
    pub attack_kind: AttackKind,
    pub payload_goal: String,
    pub carrier_tool: String,
    pub carrier_key: String,
    pub placement: Placement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario_id: String,
    pub suite: Suite,
    pub user_utterances: Vec<String>,
    pub initial_state: EnvironmentState,
    pub tool_set: Vec<String>,
    /// Concrete injection for injected variants; `None` for benign runs.
    #[serde(default)]
    pub injection: Option<InjectionSpec>,
    /// Template the loader expands into one injected variant per attack kind.
    #[serde(default)]
    pub injectable: Option<InjectionTemplate>,
    /// The agent's scripted plan for the user task.
    pub plan: Vec<PlanStep>,
    pub final_answer: String,
    pub user_goal_predicate: GoalPredicate,
    pub attacker_goal_predicate: GoalPredicate,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("scenario `{id}`: {what}")]
    Invalid { id: String, what: String },
    #[error("scenario `{id}` has no injection template to expand")]
    NotInjectable { id: String },
}

impl ScenarioSpec {
    /// Produces the injected variant for one attack kind.
    pub fn injected_variant(&self, kind: AttackKind) -> Result<ScenarioSpec, ScenarioError> {
        let template = self
            .injectable
            .as_ref()
            .ok_or_else(|| ScenarioError::NotInjectable {
                id: self.scenario_id.clone(),
            })?;
        let mut variant = self.clone();
        variant.scenario_id = format!("{}+{kind}", self.scenario_id);
        variant.injection = Some(InjectionSpec {
            attack_kind: kind,
            payload_goal: template.payload_goal.clone(),
            carrier_tool: template.carrier_tool.clone(),
            carrier_key: template.carrier_key.clone(),
            placement: template.placement,
        });
        variant.injectable = None;
        Ok(variant)
    }

    pub fn is_injected(&self) -> bool {
        self.injection.is_some()
    }

    /// Load-time sanity checks; violated specs never run.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |what: &str| {
            Err(ScenarioError::Invalid {
                id: self.scenario_id.clone(),
                what: what.to_string(),
            })
        };
        if self.user_utterances.is_empty() {
            return fail("no user utterances");
        }
        if self.final_answer.is_empty() {
            return fail("empty final answer");
        }
        for step in &self.plan {
            if !self.tool_set.contains(&step.tool) {
                return fail(&format!("plan uses `{}` outside the tool set", step.tool));
            }
        }
        // The attacker goal must be a concrete mutation, so attacker success
        // is observable in the mutation log and nowhere else.
        let GoalPredicate::Mutation { tool, args_contain } = &self.attacker_goal_predicate else {
            return fail("attacker goal predicate must be a mutation check");
        };
        // Disjoint satisfiability: the benign plan must not trip the
        // attacker's mutation matcher.
        for step in &self.plan {
            if &step.tool == tool {
                let rendered = shield_core::conversation::render_arguments(&step.arguments);
                let record = MutationRecord {
                    tool: step.tool.clone(),
                    arguments: rendered,
                    effect: String::new(),
                };
                if mutation_matches(&record, tool, args_contain) {
                    return fail("benign plan satisfies the attacker goal predicate");
                }
            }
        }
        for (source, carrier_tool, carrier_key) in [
            self.injectable
                .as_ref()
                .map(|t| ("injectable", &t.carrier_tool, &t.carrier_key)),
            self.injection
                .as_ref()
                .map(|i| ("injection", &i.carrier_tool, &i.carrier_key)),
        ]
        .into_iter()
        .flatten()
        {
            if !self.tool_set.contains(carrier_tool) {
                return fail(&format!("{source} carrier tool is outside the tool set"));
            }
            if self.initial_state.get_str(carrier_key).is_none() {
                return fail(&format!(
                    "{source} carrier key `{carrier_key}` is not a string in the initial store"
                ));
            }
            if !self.plan.iter().any(|s| &s.tool == carrier_tool) {
                return fail(&format!(
                    "{source} carrier tool `{carrier_tool}` is never called by the plan"
                ));
            }
        }
        Ok(())
    }
}

/// Expected baseline outcomes recorded next to each scenario file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExpectedOutcomes {
    pub benign_shield_on_user_goal: bool,
    pub injected_shield_off_attacker_goal: bool,
    pub injected_shield_on_attacker_goal: bool,
    pub injected_shield_on_user_goal: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub expect: ExpectedOutcomes,
}

/// Top-level manifest listing every shipped scenario file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub scenarios: Vec<ManifestEntry>,
}

pub fn load_manifest(suites_dir: &Path) -> Result<SuiteManifest, ScenarioError> {
    let path = suites_dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|source| ScenarioError::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ScenarioError::Parse { path, source })
}

pub fn load_scenario(path: &Path) -> Result<ScenarioSpec, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let spec: ScenarioSpec = serde_json::from_str(&text).map_err(|source| ScenarioError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    spec.validate()?;
    Ok(spec)
}

/// Loads every benign scenario listed in the manifest, optionally filtered
/// to one suite.
pub fn load_suite_scenarios(
    suites_dir: &Path,
    suite: Option<Suite>,
) -> Result<Vec<ScenarioSpec>, ScenarioError> {
    let manifest = load_manifest(suites_dir)?;
    let mut out = Vec::new();
    for entry in &manifest.scenarios {
        let spec = load_scenario(&suites_dir.join(&entry.file))?;
        if suite.is_none() || suite == Some(spec.suite) {
            out.push(spec);
        }
    }
    Ok(out)
}
