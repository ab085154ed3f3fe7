mod common;

use hpvm::text::parse_document;
use hpvm::verify::{has_errors, verify_document, Severity};

/// File name and the rule id it must be rejected with. Parse-time rejections
/// carry the parser's rule id.
const BAD: &[(&str, &str)] = &[
    ("bad_one_to_one_grid.hpvm", "one-to-one-grid"),
    ("bad_arity.hpvm", "arity"),
    ("bad_store_to_in.hpvm", "access-mode"),
    ("bad_cross_level_edge.hpvm", "cross-level-edge"),
    ("bad_cycle.hpvm", "cycle"),
    ("bad_unfed_input.hpvm", "unfed-input"),
    ("bad_internal_code.hpvm", "internal-code"),
    ("bad_unknown_reference.hpvm", "unknown-reference"),
    ("bad_kind_mismatch.hpvm", "kind-mismatch"),
    ("bad_streaming.hpvm", "streaming"),
];

/// The rule ids of all errors for a document, or the parse error's rule.
fn rejection(src: &str) -> Vec<String> {
    match parse_document(src) {
        Err(e) => vec![e.rule.id().to_string()],
        Ok(doc) => verify_document(&doc)
            .into_iter()
            .filter(|d| d.severity == Severity::Error)
            .map(|d| d.rule.id().to_string())
            .collect(),
    }
}

#[test]
fn each_bad_file_has_its_rule() {
    for (file, rule) in BAD {
        let got = rejection(&common::program_source(file));
        assert!(got.iter().any(|r| r == rule), "{file}: expected {rule}, got {got:?}");
    }
}

#[test]
fn every_shipped_bad_file_is_listed() {
    let shipped: Vec<_> = common::all_programs()
        .into_iter()
        .map(|(n, _)| n)
        .filter(|n| n.starts_with("bad_"))
        .collect();
    let listed: Vec<_> = BAD.iter().map(|(f, _)| f.to_string()).collect();
    let mut sorted = listed.clone();
    sorted.sort();
    assert_eq!(shipped, sorted);
}

#[test]
fn good_files_have_no_diagnostics_at_all() {
    for (name, src) in common::valid_programs() {
        let diags = verify_document(&parse_document(&src).unwrap());
        assert!(!has_errors(&diags), "{name}");
        assert!(diags.is_empty(), "{name}: {diags:?}");
    }
}
