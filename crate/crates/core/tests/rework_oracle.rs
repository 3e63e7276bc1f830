mod common;

use common::{all_sequences, naive_recurrent, naive_tandem, variant};
use proptest::prelude::*;
use rework_harness::rework::{find_rework, is_rework, DetectMode, DetectPolicy};

fn check_against_oracle(seq: &[&str], policy: DetectPolicy) {
    let v = variant(seq);
    let got = find_rework(&v, policy).map(|f| {
        assert!(f.verify(&v), "finding does not verify on {seq:?}");
        (f.start, f.unit.len(), f.repetitions)
    });
    let want = match policy.mode {
        DetectMode::Tandem => naive_tandem(seq, policy.min_unit_len, policy.min_repetitions),
        DetectMode::Recurrent => naive_recurrent(seq, policy.min_unit_len, policy.min_repetitions),
    };
    assert_eq!(got, want, "{policy:?} on {seq:?}");
}

#[test]
fn tandem_unit_two_matches_oracle_up_to_length_eight() {
    for seq in all_sequences(&["A", "B", "C"], 8) {
        check_against_oracle(&seq, DetectPolicy::tandem(2));
    }
}

#[test]
fn recurrent_matches_oracle_up_to_length_eight() {
    for seq in all_sequences(&["A", "B", "C"], 8) {
        check_against_oracle(&seq, DetectPolicy::recurrent(1));
        check_against_oracle(&seq, DetectPolicy::recurrent(2));
    }
}

#[test]
fn three_repetitions_policy() {
    let policy = DetectPolicy {
        min_repetitions: 3,
        ..DetectPolicy::tandem(1)
    };
    for seq in all_sequences(&["A", "B"], 9) {
        check_against_oracle(&seq, policy);
    }
}

fn seq_strategy() -> impl Strategy<Value = Vec<&'static str>> {
    prop::collection::vec(prop::sample::select(vec!["A", "B", "C", "D"]), 1..24)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn tandem_implies_recurrent(seq in seq_strategy(), unit in 1usize..4) {
        let v = variant(&seq);
        if is_rework(&v, DetectPolicy::tandem(unit)) {
            prop_assert!(is_rework(&v, DetectPolicy::recurrent(unit)));
        }
    }

    #[test]
    fn long_sequences_agree_with_oracle(seq in seq_strategy(), unit in 1usize..4) {
        check_against_oracle(&seq, DetectPolicy::tandem(unit));
        check_against_oracle(&seq, DetectPolicy::recurrent(unit));
    }

    #[test]
    fn duplicating_a_unit_always_creates_rework(
        seq in seq_strategy(),
        at in any::<prop::sample::Index>(),
        len in 1usize..4,
    ) {
        let start = at.index(seq.len());
        let end = (start + len).min(seq.len());
        let mut s = seq[..end].to_vec();
        s.extend_from_slice(&seq[start..end]);
        s.extend_from_slice(&seq[end..]);
        let f = find_rework(&variant(&s), DetectPolicy::tandem(1));
        prop_assert!(f.is_some());
        prop_assert!(f.unwrap().start <= start);
    }
}
