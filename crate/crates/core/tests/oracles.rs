use proptest::prelude::*;
use storyecho_core::domain::*;
use storyecho_core::session::{EventKind, SessionState, TfoSession};
use storyecho_core::validate::*;
use storyecho_testkit::checks;
use storyecho_testkit::graphs::{as_episode, oracle_codes};
use storyecho_testkit::han::{reference_count, reference_is_han};
use storyecho_testkit::machine::{event_of, legal_target};

fn assert_passes(o: checks::Outcome) {
    println!("{o}");
    assert!(o.passed, "{o}");
}

#[test]
fn constraint_suite() {
    assert_passes(checks::constraint_suite());
}

#[test]
fn page_graph_oracle() {
    assert_passes(checks::page_graph_oracle(1000, 11));
}

#[test]
fn han_oracle_fuzz() {
    assert_passes(checks::han_oracle(10_000, 12));
}

#[test]
fn han_classification_is_exact_for_every_code_point() {
    let wrong: Vec<u32> = (0..=0x10FFFFu32)
        .filter_map(char::from_u32)
        .filter(|&c| is_han(c) != reference_is_han(c))
        .map(|c| c as u32)
        .take(10)
        .collect();
    assert!(wrong.is_empty(), "{wrong:x?}");
}

#[test]
fn rule_tables() {
    assert_passes(checks::rule_tables());
}

#[test]
fn validate_retry() {
    assert_passes(checks::validate_retry());
}

#[test]
fn state_machine() {
    assert_passes(checks::state_machine(10_000, 13));
}

#[test]
fn feedback_validity() {
    assert_passes(checks::feedback_validity(1000, 14));
}

#[test]
fn every_state_event_pair_matches_the_reference() {
    for state in SessionState::ALL {
        for kind in EventKind::ALL {
            let mut s = TfoSession::new("tfo".into(), "child".into(), "米饭", Timestamp(0)).unwrap();
            s.state = state;
            let got = s.apply(event_of(kind, 1), 1, Timestamp(1)).map(|(n, _)| n.state).ok();
            assert_eq!(got, legal_target(state, kind), "({state}, {kind})");
        }
    }
}

fn page_strategy(n: usize) -> impl Strategy<Value = Vec<Page>> {
    let page = (0..=n + 1, proptest::option::weighted(0.9, 0..n + 1), any::<bool>());
    proptest::collection::vec(page, n).prop_map(move |raw| {
        raw.into_iter()
            .enumerate()
            .map(|(i, (_, next, _))| Page {
                page_no: i as u32 + 1,
                page_id: PageId::new(format!("q{i}")),
                page_text_cn: String::new(),
                next_page_id: next.map(|j| PageId::new(format!("q{j}"))),
                interaction: None,
                branch_choices: vec![],
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn han_count_matches_reference(s in any::<String>()) {
        prop_assert_eq!(count_han_chars(&s), reference_count(&s));
    }

    #[test]
    fn graph_codes_match_the_path_oracle(pages in (1usize..=16).prop_flat_map(page_strategy)) {
        let expected: Vec<_> = oracle_codes(&pages).into_iter().collect();
        prop_assert_eq!(validate_page_graph(&as_episode(pages)).codes(), expected);
    }

    #[test]
    fn feedback_length_boundary(extra in 0usize..40) {
        let text = format!("今天真不错。小满看了看西兰花。{}", "好".repeat(extra));
        let report = validate_feedback_text(&text, "小满", "西兰花", &[]);
        prop_assert_eq!(report.has(ViolationCode::LengthViolation), count_han_chars(&text) > FEEDBACK_MAX_HAN);
    }

    #[test]
    fn ending_variant_is_total_on_its_range(score in -50i64..60) {
        let r = storyecho_core::pipeline::select_ending_variant(score);
        prop_assert_eq!(r.is_ok(), (1..=10).contains(&score));
    }
}
