//! Executes scenarios end to end: environment setup, injection, the shielded
//! (or passthrough) agent loop, and goal-predicate evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use shield_core::{
    AgentPolicy, AuditRecord, CallId, Extractor, Judge, Message, Shield, ShieldConfig,
    ShieldError, ShieldState, ToolCall, ToolExecutor,
};

use crate::agent::{agent_for, AgentKind};
use crate::attack::{inject, inject_seeded};
use crate::env::EnvironmentState;
use crate::scenario::{ScenarioError, ScenarioSpec};
use crate::tools::{Suite, ToolRegistry};

/// How a batch of scenarios is run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub shield_on: bool,
    pub agent_kind: AgentKind,
    pub shield_config: ShieldConfig,
    /// Randomizes embedded injection placement; `None` keeps the fixed
    /// after-first-paragraph placement.
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            shield_on: true,
            agent_kind: AgentKind::Vulnerable,
            shield_config: ShieldConfig::default(),
            seed: None,
        }
    }
}

/// Everything one scenario run produced.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub scenario_id: String,
    pub suite: Suite,
    pub attack_kind: Option<String>,
    pub shield_on: bool,
    pub user_goal_met: bool,
    pub attacker_goal_met: bool,
    pub steps: usize,
    pub blocks: usize,
    pub annotations: usize,
    pub retries: usize,
    pub final_answers: Vec<String>,
    pub transcript: Vec<Message>,
    pub final_state: EnvironmentState,
    pub audit: Vec<AuditRecord>,
    pub executed_call_ids: Vec<CallId>,
    pub blocked_call_ids: Vec<CallId>,
    /// Budget overruns and similar run-level failures; the scenario still
    /// reports (with `user_goal_met = false`).
    pub error: Option<String>,
}

/// Bridges the mock tool registry into the shield's executor interface.
struct LiveTools<'a> {
    registry: &'a ToolRegistry,
    env: &'a mut EnvironmentState,
}

impl ToolExecutor for LiveTools<'_> {
    fn execute(&mut self, call: &ToolCall) -> String {
        self.registry.execute(self.env, call)
    }

    fn available_tools(&self) -> Vec<String> {
        self.registry.names()
    }
}

/// Applies the scenario's injection to its carrier data, seeded or fixed.
fn apply_injection(spec: &ScenarioSpec, env: &mut EnvironmentState, seed: Option<u64>) {
    let Some(injection) = &spec.injection else {
        return;
    };
    let original = env.get_str(&injection.carrier_key).unwrap_or("").to_string();
    let injected = match seed {
        Some(seed) => {
            // per-scenario stream so batch composition does not shift draws
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fxhash(&spec.scenario_id));
            inject_seeded(
                &original,
                injection.attack_kind,
                &injection.payload_goal,
                injection.placement,
                &mut rng,
            )
        }
        None => inject(
            &original,
            injection.attack_kind,
            &injection.payload_goal,
            injection.placement,
        ),
    };
    env.seed(injection.carrier_key.clone(), injected.into());
}

fn fxhash(s: &str) -> u64 {
    // small stable string hash; only stream separation matters here
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x1000_0000_01b3)
        })
}

/// Runs one scenario to completion. Deterministic for a deterministic judge,
/// extractor, and agent.
pub fn run_scenario(
    spec: &ScenarioSpec,
    config: &RunConfig,
    extractor: &dyn Extractor,
    judge: &dyn Judge,
) -> Result<ScenarioOutcome, ScenarioError> {
    spec.validate()?;
    let registry = ToolRegistry::for_suite(spec.suite, &spec.tool_set).map_err(|what| {
        ScenarioError::Invalid {
            id: spec.scenario_id.clone(),
            what,
        }
    })?;
    let mut env = spec.initial_state.clone();
    apply_injection(spec, &mut env, config.seed);

    let mut agent = agent_for(
        config.agent_kind,
        spec.plan.clone(),
        spec.final_answer.clone(),
    );

    let mut outcome = ScenarioOutcome {
        scenario_id: spec.scenario_id.clone(),
        suite: spec.suite,
        attack_kind: spec.injection.as_ref().map(|i| i.attack_kind.to_string()),
        shield_on: config.shield_on,
        user_goal_met: false,
        attacker_goal_met: false,
        steps: 0,
        blocks: 0,
        annotations: 0,
        retries: 0,
        final_answers: Vec::new(),
        transcript: Vec::new(),
        final_state: EnvironmentState::new(),
        audit: Vec::new(),
        executed_call_ids: Vec::new(),
        blocked_call_ids: Vec::new(),
        error: None,
    };

    if config.shield_on {
        let mut state = ShieldState::new(config.shield_config.clone());
        let shield = Shield::new(extractor, judge);
        'turns: for utterance in &spec.user_utterances {
            if let Err(e) = shield.process_user(&mut state, Message::user(utterance.clone())) {
                outcome.error = Some(e.to_string());
                break 'turns;
            }
            let mut tools = LiveTools {
                registry: &registry,
                env: &mut env,
            };
            match shield.run_turn(&mut state, agent.as_mut(), &mut tools) {
                Ok(turn) => {
                    outcome.steps += turn.steps;
                    outcome.blocks += turn.blocked_calls;
                    outcome.annotations += turn.annotations;
                    outcome.retries += turn.retries;
                    outcome.executed_call_ids.extend(turn.executed_call_ids);
                    outcome.blocked_call_ids.extend(turn.blocked_call_ids);
                    outcome.final_answers.push(turn.final_answer);
                }
                Err(e @ ShieldError::StepBudgetExceeded { steps }) => {
                    outcome.steps += steps;
                    outcome.error = Some(e.to_string());
                    break 'turns;
                }
                Err(e) => {
                    outcome.error = Some(e.to_string());
                    break 'turns;
                }
            }
        }
        outcome.transcript = state.conversation().messages().to_vec();
        outcome.audit = state.audit_log().to_vec();
    } else {
        run_passthrough(spec, &registry, &mut env, agent.as_mut(), &mut outcome);
    }

    outcome.final_state = env;
    outcome.user_goal_met = outcome.error.is_none()
        && spec
            .user_goal_predicate
            .eval(&outcome.final_state, &outcome.final_answers);
    outcome.attacker_goal_met = spec
        .attacker_goal_predicate
        .eval(&outcome.final_state, &outcome.final_answers);
    Ok(outcome)
}

/// No-defense baseline: every proposed call executes, outputs flow back raw.
fn run_passthrough(
    spec: &ScenarioSpec,
    registry: &ToolRegistry,
    env: &mut EnvironmentState,
    agent: &mut dyn AgentPolicy,
    outcome: &mut ScenarioOutcome,
) {
    let step_budget = 20usize;
    let mut conv = shield_core::Conversation::new();
    for utterance in &spec.user_utterances {
        if conv.append(Message::user(utterance.clone())).is_err() {
            break;
        }
        let mut steps = 0usize;
        loop {
            if steps >= step_budget {
                outcome.error = Some(format!("step budget exceeded after {steps} agent steps"));
                outcome.steps += steps;
                outcome.transcript = conv.messages().to_vec();
                return;
            }
            let proposal = {
                let tools = LiveTools { registry, env };
                agent.step(conv.view(), &tools)
            };
            steps += 1;
            let msg = Message::assistant_with_calls(proposal.content.clone(), proposal.tool_calls.clone());
            if conv.append(msg).is_err() {
                outcome.error = Some("conversation invariant violated".to_string());
                break;
            }
            if proposal.tool_calls.is_empty() {
                outcome.final_answers.push(proposal.content);
                break;
            }
            for call in &proposal.tool_calls {
                let output = registry.execute(env, call);
                outcome.executed_call_ids.push(call.call_id.clone());
                let _ = conv.append(Message::tool(call.call_id.clone(), output));
            }
        }
        outcome.steps += steps;
    }
    outcome.transcript = conv.messages().to_vec();
}
