mod common;

use proptest::prelude::*;
use vqastab::modelio::normalize_answer;

#[test]
fn fixture_table() {
    for (raw, want) in common::NORMALIZATION_PAIRS {
        assert_eq!(normalize_answer(raw), want, "raw {raw:?}");
    }
}

proptest! {
    #[test]
    fn idempotent(s in "\\PC{0,40}") {
        let once = normalize_answer(&s);
        prop_assert_eq!(normalize_answer(&once), once.clone());
        prop_assert!(!once.ends_with('.'));
        prop_assert!(!once.contains("  "));
        prop_assert_eq!(once.trim(), once.as_str());
    }
}
