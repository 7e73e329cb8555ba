//! Mock tool registry: pure functions over [`EnvironmentState`] with explicit
//! effects, 4-6 tools per suite. Write tools log every mutation; read tools
//! leave the log untouched, so blocked calls are provably effect-free.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use shield_core::conversation::render_arguments;
use shield_core::ToolCall;

use crate::env::EnvironmentState;

pub type ArgMap = IndexMap<String, serde_json::Value>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Travel,
    Workspace,
    Banking,
    Slack,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Travel, Suite::Workspace, Suite::Banking, Suite::Slack];
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Suite::Travel => "travel",
            Suite::Workspace => "workspace",
            Suite::Banking => "banking",
            Suite::Slack => "slack",
        };
        f.write_str(s)
    }
}

impl FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "travel" => Ok(Suite::Travel),
            "workspace" => Ok(Suite::Workspace),
            "banking" => Ok(Suite::Banking),
            "slack" => Ok(Suite::Slack),
            other => Err(format!("unknown suite `{other}`")),
        }
    }
}

struct ToolOutcome {
    output: String,
    /// Present only when the tool mutated state; becomes the log entry.
    effect: Option<String>,
}

impl ToolOutcome {
    fn read(output: impl Into<String>) -> Self {
        ToolOutcome {
            output: output.into(),
            effect: None,
        }
    }

    fn write(output: impl Into<String>, effect: impl Into<String>) -> Self {
        ToolOutcome {
            output: output.into(),
            effect: Some(effect.into()),
        }
    }
}

type ToolFn = fn(&mut EnvironmentState, &ArgMap) -> Result<ToolOutcome, String>;

pub struct ToolDef {
    pub name: &'static str,
    pub writes: bool,
    run: ToolFn,
}

fn arg_str<'a>(args: &'a ArgMap, key: &str) -> Result<&'a str, String> {
    args.get(key)
        .and_then(|v| v.as_str())
        .ok_or_else(|| format!("missing string argument `{key}`"))
}

fn arg_f64(args: &ArgMap, key: &str) -> Result<f64, String> {
    args.get(key)
        .and_then(|v| v.as_f64())
        .ok_or_else(|| format!("missing numeric argument `{key}`"))
}

fn fmt_amount(n: f64) -> String {
    if n.fract() == 0.0 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

fn read_key(state: &EnvironmentState, key: &str) -> Result<ToolOutcome, String> {
    Ok(ToolOutcome::read(
        state.get_str(key).unwrap_or_default().to_string(),
    ))
}

// --- banking ---

fn get_balance(state: &mut EnvironmentState, _args: &ArgMap) -> Result<ToolOutcome, String> {
    let balance = state.get_f64("balance").ok_or("no balance in state")?;
    Ok(ToolOutcome::read(format!(
        "Current balance: ${}",
        fmt_amount(balance)
    )))
}

fn read_bill(state: &mut EnvironmentState, _args: &ArgMap) -> Result<ToolOutcome, String> {
    read_key(state, "bill")
}

fn read_transactions(state: &mut EnvironmentState, _args: &ArgMap) -> Result<ToolOutcome, String> {
    read_key(state, "transactions")
}

fn send_money(state: &mut EnvironmentState, args: &ArgMap) -> Result<ToolOutcome, String> {
    let recipient = arg_str(args, "recipient")?.to_string();
    let amount = arg_f64(args, "amount")?;
    let balance = state.get_f64("balance").ok_or("no balance in state")?;
    state.set("balance", serde_json::json!(balance - amount));
    state.append_line(
        "transactions",
        &format!("sent ${} to {recipient}", fmt_amount(amount)),
    );
    Ok(ToolOutcome::write(
        format!("Transferred ${} to {recipient}.", fmt_amount(amount)),
        format!(
            "balance {} -> {}; transaction appended",
            fmt_amount(balance),
            fmt_amount(balance - amount)
        ),
    ))
}

// --- workspace ---

fn read_inbox(state: &mut EnvironmentState, _args: &ArgMap) -> Result<ToolOutcome, String> {
    read_key(state, "inbox")
}

fn read_document(state: &mut EnvironmentState, _args: &ArgMap) -> Result<ToolOutcome, String> {
    read_key(state, "document")
}

fn read_todo_list(state: &mut EnvironmentState, _args: &ArgMap) -> Result<ToolOutcome, String> {
    read_key(state, "todo")
}

fn search_files(state: &mut EnvironmentState, args: &ArgMap) -> Result<ToolOutcome, String> {
    let query = arg_str(args, "query")?.to_lowercase();
    let files = state.get_str("files").unwrap_or_default();
    let hits: Vec<&str> = files
        .lines()
        .filter(|l| l.to_lowercase().contains(&query))
        .collect();
    Ok(ToolOutcome::read(hits.join("\n")))
}

fn send_email(state: &mut EnvironmentState, args: &ArgMap) -> Result<ToolOutcome, String> {
    let to = arg_str(args, "to")?.to_string();
    let body = arg_str(args, "body").unwrap_or("").to_string();
    state.append_line("sent_emails", &format!("to={to} body={body}"));
    Ok(ToolOutcome::write(
        format!("Email sent to {to}."),
        format!("email queued for {to}"),
    ))
}

fn mark_todo_done(state: &mut EnvironmentState, args: &ArgMap) -> Result<ToolOutcome, String> {
    let item = arg_str(args, "item")?.to_string();
    state.append_line("todo_done", &item);
    Ok(ToolOutcome::write(
        format!("Marked done: {item}."),
        format!("todo item completed: {item}"),
    ))
}

// --- slack ---

fn read_channel(state: &mut EnvironmentState, args: &ArgMap) -> Result<ToolOutcome, String> {
    let channel = arg_str(args, "channel")?;
    let key = format!("channel:{channel}");
    read_key(state, &key)
}

fn post_message(state: &mut EnvironmentState, args: &ArgMap) -> Result<ToolOutcome, String> {
    let channel = arg_str(args, "channel")?.to_string();
    let text = arg_str(args, "text")?.to_string();
    state.append_line("posted", &format!("channel={channel} text={text}"));
    Ok(ToolOutcome::write(
        format!("Message posted to #{channel}."),
        format!("posted to #{channel}"),
    ))
}

fn list_users(state: &mut EnvironmentState, _args: &ArgMap) -> Result<ToolOutcome, String> {
    read_key(state, "users")
}

fn send_dm(state: &mut EnvironmentState, args: &ArgMap) -> Result<ToolOutcome, String> {
    let user = arg_str(args, "user")?.to_string();
    let text = arg_str(args, "text")?.to_string();
    state.append_line("dms", &format!("user={user} text={text}"));
    Ok(ToolOutcome::write(
        format!("DM sent to {user}."),
        format!("dm queued for {user}"),
    ))
}

// --- travel ---

fn get_weather(state: &mut EnvironmentState, _args: &ArgMap) -> Result<ToolOutcome, String> {
    read_key(state, "weather")
}

fn get_flights(state: &mut EnvironmentState, _args: &ArgMap) -> Result<ToolOutcome, String> {
    read_key(state, "flights")
}

fn read_webpage(state: &mut EnvironmentState, _args: &ArgMap) -> Result<ToolOutcome, String> {
    read_key(state, "webpage")
}

fn book_flight(state: &mut EnvironmentState, args: &ArgMap) -> Result<ToolOutcome, String> {
    let flight_id = arg_str(args, "flight_id")?.to_string();
    state.append_line("bookings", &format!("flight={flight_id}"));
    Ok(ToolOutcome::write(
        format!("Flight {flight_id} booked."),
        format!("flight booking added: {flight_id}"),
    ))
}

fn book_hotel(state: &mut EnvironmentState, args: &ArgMap) -> Result<ToolOutcome, String> {
    let hotel = arg_str(args, "hotel")?.to_string();
    state.append_line("bookings", &format!("hotel={hotel}"));
    Ok(ToolOutcome::write(
        format!("Hotel {hotel} booked."),
        format!("hotel booking added: {hotel}"),
    ))
}

fn suite_tools(suite: Suite) -> &'static [ToolDef] {
    match suite {
        Suite::Banking => &[
            ToolDef { name: "get_balance", writes: false, run: get_balance },
            ToolDef { name: "read_bill", writes: false, run: read_bill },
            ToolDef { name: "read_transactions", writes: false, run: read_transactions },
            ToolDef { name: "send_money", writes: true, run: send_money },
        ],
        Suite::Workspace => &[
            ToolDef { name: "read_inbox", writes: false, run: read_inbox },
            ToolDef { name: "read_document", writes: false, run: read_document },
            ToolDef { name: "read_todo_list", writes: false, run: read_todo_list },
            ToolDef { name: "search_files", writes: false, run: search_files },
            ToolDef { name: "send_email", writes: true, run: send_email },
            ToolDef { name: "mark_todo_done", writes: true, run: mark_todo_done },
        ],
        Suite::Slack => &[
            ToolDef { name: "read_channel", writes: false, run: read_channel },
            ToolDef { name: "post_message", writes: true, run: post_message },
            ToolDef { name: "list_users", writes: false, run: list_users },
            ToolDef { name: "send_dm", writes: true, run: send_dm },
        ],
        Suite::Travel => &[
            ToolDef { name: "get_weather", writes: false, run: get_weather },
            ToolDef { name: "get_flights", writes: false, run: get_flights },
            ToolDef { name: "read_webpage", writes: false, run: read_webpage },
            ToolDef { name: "book_flight", writes: true, run: book_flight },
            ToolDef { name: "book_hotel", writes: true, run: book_hotel },
        ],
    }
}

/// The tools one scenario exposes: a suite's table filtered to the
/// scenario's tool set.
pub struct ToolRegistry {
    tools: Vec<&'static ToolDef>,
}

impl ToolRegistry {
    pub fn for_suite(suite: Suite, tool_set: &[String]) -> Result<Self, String> {
        let table = suite_tools(suite);
        let mut tools = Vec::with_capacity(tool_set.len());
        for name in tool_set {
            let def = table
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| format!("suite {suite} has no tool `{name}`"))?;
            tools.push(def);
        }
        Ok(ToolRegistry { tools })
    }

    pub fn names(&self) -> Vec<String> {
        self.tools.iter().map(|t| t.name.to_string()).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.iter().any(|t| t.name == name)
    }

    /// Runs a call against the environment. Mutations are logged with the
    /// call's canonical arguments; failures surface as output text, the way
    /// tool errors reach real agents.
    pub fn execute(&self, state: &mut EnvironmentState, call: &ToolCall) -> String {
        let Some(def) = self.tools.iter().find(|t| t.name == call.function_name) else {
            return format!("error: unknown tool `{}`", call.function_name);
        };
        match (def.run)(state, &call.arguments) {
            Ok(outcome) => {
                if let Some(effect) = outcome.effect {
                    state.log_mutation(def.name, render_arguments(&call.arguments), effect);
                }
                outcome.output
            }
            Err(e) => format!("error: {e}"),
        }
    }
}

/// Re-executes a mutation log against a copy of the initial state. Replaying
/// must reproduce the final store exactly; see the runner tests.
pub fn replay(
    initial: &EnvironmentState,
    log: &[crate::env::MutationRecord],
    registry: &ToolRegistry,
) -> Result<EnvironmentState, String> {
    let mut state = initial.clone();
    for record in log {
        let parsed: serde_json::Value =
            serde_json::from_str(&record.arguments).map_err(|e| format!("bad log args: {e}"))?;
        let args: ArgMap = parsed
            .as_object()
            .ok_or("log arguments are not an object")?
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let call = ToolCall::new("replay", record.tool.clone(), args);
        let def = registry
            .tools
            .iter()
            .find(|t| t.name == record.tool)
            .ok_or_else(|| format!("unknown tool in log: {}", record.tool))?;
        (def.run)(&mut state, &call.arguments).map_err(|e| format!("replay failed: {e}"))?;
    }
    Ok(state)
}
