//! Property tests over the conversation model and the pattern extractor.

use proptest::prelude::*;
use shield_core::{
    parse_transcript, pattern_extract, truncate_for_judge, write_transcript, Conversation,
    Message, PrivilegeLevel, ToolCall,
};

fn arb_conversation() -> impl Strategy<Value = Conversation> {
    // sequence of user/assistant(/tool) turns; every assistant call gets an
    // answering tool message so truncation always has pairs to protect
    proptest::collection::vec(
        prop_oneof![
            (".{0,40}").prop_map(|c| (0u8, c)),
            (".{0,40}").prop_map(|c| (1u8, c)),
            ("[a-z]{1,12}").prop_map(|c| (2u8, c)),
        ],
        0..12,
    )
    .prop_map(|turns| {
        let mut conv = Conversation::new();
        let mut call_counter = 0usize;
        for (kind, text) in turns {
            match kind {
                0 => {
                    conv.append(Message::user(text)).unwrap();
                }
                1 => {
                    let content = if text.is_empty() { "ok".to_string() } else { text };
                    conv.append(Message::assistant(content)).unwrap();
                }
                _ => {
                    call_counter += 1;
                    let id = format!("c{call_counter}");
                    conv.append(Message::assistant_with_calls(
                        "",
                        vec![ToolCall::new(id.clone(), text, indexmap::IndexMap::new())],
                    ))
                    .unwrap();
                    conv.append(Message::tool(id, "output")).unwrap();
                }
            }
        }
        conv
    })
}

proptest! {
    #[test]
    fn transcript_round_trip_is_identity(conv in arb_conversation()) {
        let mut buf = Vec::new();
        write_transcript(&mut buf, conv.messages()).unwrap();
        let parsed = parse_transcript(buf.as_slice()).unwrap();
        prop_assert_eq!(parsed.as_slice(), conv.messages());
    }

    #[test]
    fn truncation_never_orphans_tool_messages(conv in arb_conversation(), budget in 2usize..8) {
        let view = truncate_for_judge(conv.view(), budget);
        for msg in view {
            if msg.level == PrivilegeLevel::Tool {
                let id = msg.responding_to.as_ref().unwrap();
                let present = view
                    .iter()
                    .any(|m| m.tool_calls.iter().any(|c| &c.call_id == id));
                prop_assert!(present, "orphaned tool message in truncated view");
            }
        }
        // suffix of the original view
        prop_assert!(view.len() <= conv.len());
        let offset = conv.len() - view.len();
        prop_assert_eq!(view, &conv.view()[offset..]);
    }

    #[test]
    fn pattern_extract_never_panics_and_is_deterministic(content in ".{0,400}") {
        let msg = Message::user(content);
        let a = pattern_extract(&msg);
        let b = pattern_extract(&msg);
        prop_assert_eq!(&a, &b);
        for instr in &a.instructions {
            prop_assert!(!instr.text.is_empty());
            prop_assert_eq!(instr.source_message_id, msg.message_id);
        }
    }
}
