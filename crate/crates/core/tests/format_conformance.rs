//! Byte-exact conformance of the tool-origin augmentation format against
//! frozen fixture cases.

use indexmap::IndexMap;
use regex::Regex;
use serde::Deserialize;
use shield_core::{
    augment_tool_origin, InstructionKind, PrivilegeLevel, TaskInstruction, ToolCall,
};

#[derive(Deserialize)]
struct AugmentCase {
    text: String,
    function_name: String,
    arguments: IndexMap<String, serde_json::Value>,
    expected: String,
}

fn cases() -> Vec<AugmentCase> {
    let path = format!(
        "{}/tests/fixtures/augment_cases.json",
        env!("CARGO_MANIFEST_DIR")
    );
    serde_json::from_str(&std::fs::read_to_string(path).expect("fixture")).expect("cases")
}

#[test]
fn augmentation_matches_fixtures_byte_exactly() {
    let all = cases();
    assert_eq!(all.len(), 50);
    let suffix_re = Regex::new(r"\(from tool \[[^\]]+\] with arguments \[.*\]\)$").unwrap();

    for (i, case) in all.iter().enumerate() {
        let instr = TaskInstruction::new(
            format!("i{i}"),
            &case.text,
            PrivilegeLevel::Tool,
            0,
            InstructionKind::Explicit,
        );
        let call = ToolCall::new(format!("c{i}"), &case.function_name, case.arguments.clone());
        let augmented = augment_tool_origin(&instr, &call).expect("augment");
        assert_eq!(augmented.text, case.expected, "case {i}");
        assert_eq!(
            suffix_re.find_iter(&augmented.text).count(),
            1,
            "case {i}: suffix pattern must match exactly once"
        );
    }
}
