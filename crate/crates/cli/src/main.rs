//! `shield` — runs task suites under configurable attacks and defenses and
//! writes machine-readable CU/U/ASR reports.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use shield_core::{
    cached, CachedJudge, EndpointConfig, Extractor, FailMode, Judge, OracleJudge, PatternExtractor,
    RemoteBackend, RemoteExtractor, RemoteJudge, ShieldConfig,
};
use shield_harness::{
    compute_metrics_with, default_suites_dir, load_suite_scenarios, render_table, run_scenario,
    AgentKind, AttackKind, ConfigSnapshot, RunConfig, ScenarioOutcome, ScenarioSpec, Suite,
};

#[derive(Parser)]
#[command(name = "shield", version, about = "Task-alignment defense simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a suite/attack/defense matrix and write reports.
    Run(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Task suite to run.
    #[arg(long, value_enum, default_value_t = SuiteSel::All)]
    suite: SuiteSel,
    /// Attack kind for injected variants; `none` runs benign scenarios only.
    #[arg(long, value_enum, default_value_t = AttackSel::All)]
    attack: AttackSel,
    /// Whether the task shield gates the agent.
    #[arg(long, value_enum, default_value_t = DefenseSel::On)]
    defense: DefenseSel,
    /// Scoring backend: deterministic rule table or remote model.
    #[arg(long, value_enum, default_value_t = JudgeSel::Oracle)]
    judge: JudgeSel,
    /// Misalignment threshold (flag when total contribution <= epsilon).
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    /// Critic-loop rounds per user turn.
    #[arg(long, default_value_t = 3)]
    max_retries: usize,
    /// Agent policy under test.
    #[arg(long, value_enum, default_value_t = AgentSel::Vulnerable)]
    agent: AgentSel,
    /// Worker threads for scenario execution.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Randomizes embedded injection placement (all else stays deterministic).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for reports, transcripts, and audit logs.
    #[arg(long, default_value = "report")]
    out: PathBuf,
    /// Directory holding scenario suites and the oracle rule table.
    #[arg(long)]
    suites_dir: Option<PathBuf>,
    /// Endpoint URL for the remote judge.
    #[arg(long, default_value = "https://api.openai.com/v1/chat/completions")]
    judge_url: String,
    /// Model name for the remote judge.
    #[arg(long, default_value = "gpt-4o")]
    judge_model: String,
    /// Disable the remote judge's score cache.
    #[arg(long, default_value_t = false)]
    no_cache: bool,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum SuiteSel {
    Travel,
    Workspace,
    Banking,
    Slack,
    All,
}

impl SuiteSel {
    fn filter(self) -> Option<Suite> {
        match self {
            SuiteSel::Travel => Some(Suite::Travel),
            SuiteSel::Workspace => Some(Suite::Workspace),
            SuiteSel::Banking => Some(Suite::Banking),
            SuiteSel::Slack => Some(Suite::Slack),
            SuiteSel::All => None,
        }
    }
    fn label(self) -> &'static str {
        match self {
            SuiteSel::Travel => "travel",
            SuiteSel::Workspace => "workspace",
            SuiteSel::Banking => "banking",
            SuiteSel::Slack => "slack",
            SuiteSel::All => "all",
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum AttackSel {
    ImportantInstructions,
    InjecagentConflict,
    IgnorePrevious,
    None,
    All,
}

impl AttackSel {
    fn kinds(self) -> Vec<AttackKind> {
        match self {
            AttackSel::ImportantInstructions => vec![AttackKind::ImportantInstructions],
            AttackSel::InjecagentConflict => vec![AttackKind::InjecagentConflict],
            AttackSel::IgnorePrevious => vec![AttackKind::IgnorePrevious],
            AttackSel::None => Vec::new(),
            AttackSel::All => AttackKind::ALL.to_vec(),
        }
    }
    fn label(self) -> &'static str {
        match self {
            AttackSel::ImportantInstructions => "important_instructions",
            AttackSel::InjecagentConflict => "injecagent_conflict",
            AttackSel::IgnorePrevious => "ignore_previous",
            AttackSel::None => "none",
            AttackSel::All => "all",
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum DefenseSel {
    On,
    Off,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum JudgeSel {
    Oracle,
    Remote,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum AgentSel {
    Scripted,
    Vulnerable,
    FeedbackDeaf,
}

impl AgentSel {
    fn kind(self) -> AgentKind {
        match self {
            AgentSel::Scripted => AgentKind::Scripted,
            AgentSel::Vulnerable => AgentKind::Vulnerable,
            AgentSel::FeedbackDeaf => AgentKind::FeedbackDeaf,
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_max_level(tracing_subscriber::filter::LevelFilter::WARN)
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => match run(args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
    }
}

fn run(args: RunArgs) -> Result<(), String> {
    let suites_dir = args.suites_dir.clone().unwrap_or_else(default_suites_dir);
    let benign = load_suite_scenarios(&suites_dir, args.suite.filter())
        .map_err(|e| format!("loading scenarios: {e}"))?;
    if benign.is_empty() {
        return Err("no scenarios matched the selection".to_string());
    }

    let mut specs: Vec<ScenarioSpec> = Vec::new();
    if args.attack == AttackSel::None || args.attack == AttackSel::All {
        specs.extend(benign.iter().cloned());
    } else {
        // single-attack runs still include benign scenarios so CU is reported
        specs.extend(benign.iter().cloned());
    }
    for kind in args.attack.kinds() {
        for spec in &benign {
            specs.push(
                spec.injected_variant(kind)
                    .map_err(|e| format!("expanding {}: {e}", spec.scenario_id))?,
            );
        }
    }

    let shield_config = ShieldConfig {
        epsilon: args.epsilon,
        max_retry_rounds: args.max_retries.max(1),
        fail_mode: FailMode::FailClosed,
        ..ShieldConfig::default()
    };
    let run_config = RunConfig {
        shield_on: args.defense == DefenseSel::On,
        agent_kind: args.agent.kind(),
        shield_config,
        seed: args.seed,
    };

    let (extractor, judge): (Box<dyn Extractor>, Box<dyn Judge>) = match args.judge {
        JudgeSel::Oracle => {
            let table = suites_dir.join("oracle_rules.json");
            let judge = OracleJudge::from_file(&table)
                .map_err(|e| format!("loading {}: {e}", table.display()))?;
            (Box::new(PatternExtractor::new()), Box::new(judge))
        }
        JudgeSel::Remote => {
            let config = EndpointConfig {
                url: args.judge_url.clone(),
                model: args.judge_model.clone(),
                ..EndpointConfig::default()
            };
            let backend = Arc::new(
                RemoteBackend::new(config).map_err(|e| format!("remote judge: {e}"))?,
            );
            let judge = RemoteJudge::new(Arc::clone(&backend));
            let judge: Box<dyn Judge> = if args.no_cache {
                Box::new(judge)
            } else {
                Box::new(cached(judge)) as Box<CachedJudge<RemoteJudge>>
            };
            (Box::new(RemoteExtractor::new(backend)), judge)
        }
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.parallel.max(1))
        .build()
        .map_err(|e| format!("worker pool: {e}"))?;

    let results: Vec<Result<ScenarioOutcome, String>> = pool.install(|| {
        specs
            .par_iter()
            .map(|spec| {
                run_scenario(spec, &run_config, extractor.as_ref(), judge.as_ref())
                    .map_err(|e| format!("{}: {e}", spec.scenario_id))
            })
            .collect()
    });

    let mut outcomes = Vec::with_capacity(results.len());
    for r in results {
        outcomes.push(r?);
    }
    // report assembly is a deterministic reduction in scenario-id order
    outcomes.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));

    let snapshot = ConfigSnapshot {
        suite: args.suite.label().to_string(),
        attack: args.attack.label().to_string(),
        defense: if args.defense == DefenseSel::On { "on" } else { "off" }.to_string(),
        judge: if args.judge == JudgeSel::Oracle { "oracle" } else { "remote" }.to_string(),
        agent: args.agent.kind().to_string(),
        epsilon: args.epsilon,
        max_retries: args.max_retries,
        parallel: args.parallel,
        seed: args.seed,
    };
    let mut report =
        compute_metrics_with(&outcomes, snapshot).map_err(|e| format!("metrics: {e}"))?;

    fs::create_dir_all(args.out.join("transcripts")).map_err(|e| e.to_string())?;
    fs::create_dir_all(args.out.join("audit")).map_err(|e| e.to_string())?;
    for outcome in &outcomes {
        let transcript_rel = format!("transcripts/{}.jsonl", outcome.scenario_id);
        let audit_rel = format!("audit/{}.jsonl", outcome.scenario_id);
        let mut buf = Vec::new();
        shield_core::write_transcript(&mut buf, &outcome.transcript)
            .map_err(|e| e.to_string())?;
        fs::write(args.out.join(&transcript_rel), buf).map_err(|e| e.to_string())?;
        let audit_lines: Vec<String> = outcome
            .audit
            .iter()
            .map(|r| serde_json::to_string(r).expect("serializable audit record"))
            .collect();
        fs::write(args.out.join(&audit_rel), audit_lines.join("\n") + "\n")
            .map_err(|e| e.to_string())?;
        if let Some(record) = report
            .per_scenario
            .iter_mut()
            .find(|r| r.scenario_id == outcome.scenario_id)
        {
            record.transcript_path = Some(transcript_rel);
            record.audit_path = Some(audit_rel);
        }
    }

    let json = serde_json::to_string_pretty(&report).expect("serializable report");
    fs::write(args.out.join("report.json"), json).map_err(|e| e.to_string())?;
    let table = render_table(&report);
    fs::write(args.out.join("report.txt"), &table).map_err(|e| e.to_string())?;
    print!("{table}");
    Ok(())
}
