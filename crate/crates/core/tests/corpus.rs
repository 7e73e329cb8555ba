//! Checks the pattern extractor against the hand-labeled directive corpus.

use serde::Deserialize;
use shield_core::{pattern_extract, Message};

const RECALL_FLOOR: f64 = 0.9;

#[derive(Deserialize)]
struct CorpusRow {
    sentence: String,
    is_directive: bool,
    expected_instructions: Vec<String>,
}

fn corpus() -> Vec<CorpusRow> {
    let path = format!(
        "{}/tests/fixtures/directive_corpus.jsonl",
        env!("CARGO_MANIFEST_DIR")
    );
    std::fs::read_to_string(path)
        .expect("corpus fixture")
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("corpus row"))
        .collect()
}

fn extracted_texts(sentence: &str) -> Vec<String> {
    pattern_extract(&Message::user(sentence))
        .instructions
        .into_iter()
        .map(|i| i.text)
        .collect()
}

#[test]
fn corpus_has_fifty_rows() {
    assert_eq!(corpus().len(), 50);
}

#[test]
fn recall_on_directive_sentences_clears_the_floor() {
    let rows = corpus();
    let directives: Vec<&CorpusRow> = rows.iter().filter(|r| r.is_directive).collect();
    assert!(!directives.is_empty());

    let mut recalled = 0usize;
    let mut misses = Vec::new();
    for row in &directives {
        let texts = extracted_texts(&row.sentence);
        let all_found = row
            .expected_instructions
            .iter()
            .all(|want| texts.contains(want));
        if all_found {
            recalled += 1;
        } else {
            misses.push(format!("{:?} -> {:?}", row.sentence, texts));
        }
    }
    let recall = recalled as f64 / directives.len() as f64;
    assert!(
        recall >= RECALL_FLOOR,
        "recall {recall:.2} below floor {RECALL_FLOOR}; misses:\n{}",
        misses.join("\n")
    );
}

#[test]
fn non_directive_sentences_extract_nothing() {
    for row in corpus().iter().filter(|r| !r.is_directive) {
        let texts = extracted_texts(&row.sentence);
        assert!(
            texts.is_empty(),
            "{:?} wrongly extracted {:?}",
            row.sentence,
            texts
        );
    }
}

#[test]
fn polite_transfer_extracts_exactly_one_instruction() {
    let texts = extracted_texts("Please transfer $100 to IBAN X");
    assert_eq!(texts, vec!["transfer $100 to IBAN X"]);
}
