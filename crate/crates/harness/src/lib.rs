//! Deterministic desk-scale reproduction environment: mini task suites over
//! mock tools with explicit environment state, attack injectors, scripted
//! agent policies (including a maximally vulnerable one), and the CU/U/ASR
//! metrics computed over suite runs.

pub mod agent;
pub mod attack;
pub mod env;
pub mod metrics;
pub mod runner;
pub mod scenario;
pub mod tools;

pub use agent::{agent_for, parse_directive, AgentKind, ScriptedAgent, VulnerableAgent};
pub use attack::{inject, inject_seeded, AttackKind, Placement};
pub use env::{EnvironmentState, MutationRecord};
pub use metrics::{
    compute_metrics, compute_metrics_with, render_table, ConfigSnapshot, MetricsError, RunReport,
    ScenarioRecord,
};
pub use runner::{run_scenario, RunConfig, ScenarioOutcome};
pub use scenario::{
    load_manifest, load_scenario, load_suite_scenarios, ExpectedOutcomes, GoalPredicate,
    InjectionSpec, InjectionTemplate, ManifestEntry, PlanStep, ScenarioError, ScenarioSpec,
    SuiteManifest,
};
pub use tools::{replay, Suite, ToolRegistry};

use std::path::PathBuf;

/// Locates the shipped `suites/` directory: `SHIELD_SUITES_DIR` when set,
/// otherwise the workspace copy relative to this crate.
pub fn default_suites_dir() -> PathBuf {
    if let Ok(dir) = std::env::var("SHIELD_SUITES_DIR") {
        return PathBuf::from(dir);
    }
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../suites")
}
