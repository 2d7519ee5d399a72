mod corpus;

use corpus::{ERRORS, GOLDEN};
use lumactl_core::prompt::{normalize_text, parse, Instruction, VocabularyTable};

#[test]
fn golden_corpus_matches_exactly() {
    assert!(GOLDEN.len() >= 30);
    let vocab = VocabularyTable::default();
    let mut failures = Vec::new();
    for &(prompt, target, scope, direction, ratio) in GOLDEN {
        let want = Instruction { target_phrase: target.into(), scope, direction, ratio, source_text: prompt.into() };
        match parse(prompt, &vocab) {
            Ok(got) if got == want => {}
            other => failures.push(format!("{prompt:?}: {other:?}")),
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

#[test]
fn error_cases_have_designated_kinds() {
    let vocab = VocabularyTable::default();
    for &(prompt, kind) in ERRORS {
        let err = parse(prompt, &vocab).expect_err(prompt);
        assert_eq!(err.kind(), kind, "{prompt:?}: {err:?}");
        if kind != "empty" {
            let span = err.span().expect("span");
            assert!(span.start <= span.end && span.end <= prompt.len(), "{prompt:?}: {span:?}");
        }
    }
}

#[test]
fn normalization_examples() {
    assert_eq!(normalize_text("Brighten,  THE  lamp!"), vec!["brighten", "the", "lamp"]);
    assert!(normalize_text("").is_empty());
    assert_eq!(normalize_text("by 30%"), vec!["by", "30%"]);
    assert_eq!(normalize_text("Éclaircir la scène"), vec!["éclaircir", "la", "scène"]);
}

#[test]
fn parse_is_deterministic_and_percent_beats_vague_amounts() {
    let vocab = VocabularyTable::default();
    for &(prompt, ..) in GOLDEN {
        assert_eq!(parse(prompt, &vocab).unwrap(), parse(prompt, &vocab).unwrap());
    }
    for vague in ["a little", "slightly", "a lot", "somewhat", "significantly"] {
        for p in [format!("brighten the lamp {vague} by 35%"), format!("brighten the lamp by 35% {vague}")] {
            assert_eq!(parse(&p, &vocab).unwrap().ratio, 0.35, "{p}");
        }
    }
}
