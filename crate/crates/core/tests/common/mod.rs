#![allow(dead_code)]

use std::io::Write;

use rework_harness::eventlog::{Label, LabeledDataset, LabeledVariant, Variant};
use rework_harness::layout::{generate_synthetic, lay_out, Distribution, LayoutSpec, SyntheticSpec};

/// Straight slice comparison: first start, then shortest unit, then as many
/// back-to-back copies as fit. Returns `(start, unit_len, copies)`.
pub fn naive_tandem<T: PartialEq>(s: &[T], min_unit: usize, min_reps: usize) -> Option<(usize, usize, usize)> {
    let n = s.len();
    for start in 0..n {
        for len in min_unit.max(1)..=n {
            if start + 2 * len > n {
                break;
            }
            let unit = &s[start..start + len];
            let mut copies = 1;
            while start + (copies + 1) * len <= n && &s[start + copies * len..start + (copies + 1) * len] == unit {
                copies += 1;
            }
            if copies >= min_reps.max(2) {
                return Some((start, len, copies));
            }
        }
    }
    None
}

/// Largest set of non-overlapping occurrences of `s[start..start+len]` at
/// positions `>= start`, by dynamic programming over positions.
pub fn max_disjoint<T: PartialEq>(s: &[T], start: usize, len: usize) -> usize {
    let n = s.len();
    let unit = &s[start..start + len];
    // best[i] = most occurrences using positions >= i
    let mut best = vec![0usize; n + 2];
    for i in (start..n).rev() {
        let skip = best[i + 1];
        let take = if i + len <= n && &s[i..i + len] == unit {
            1 + best[i + len]
        } else {
            0
        };
        best[i] = skip.max(take);
    }
    best[start]
}

pub fn naive_recurrent<T: PartialEq>(s: &[T], min_unit: usize, min_reps: usize) -> Option<(usize, usize, usize)> {
    let n = s.len();
    for start in 0..n {
        for len in min_unit.max(1)..=n {
            if start + 2 * len > n {
                break;
            }
            let reps = max_disjoint(s, start, len);
            if reps >= min_reps.max(2) {
                return Some((start, len, reps));
            }
        }
    }
    None
}

/// Every sequence over `alphabet` with length in `1..=max_len`, shortest first.
pub fn all_sequences(alphabet: &[&'static str], max_len: usize) -> Vec<Vec<&'static str>> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<&'static str>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::with_capacity(frontier.len() * alphabet.len());
        for seq in &frontier {
            for a in alphabet {
                let mut s = seq.clone();
                s.push(*a);
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

pub fn variant(names: &[&str]) -> Variant {
    Variant::from_names(names).unwrap()
}

/// 689 normal and 71 rework variants.
pub fn full_size(seed: u64) -> (Vec<LabeledVariant>, Vec<LabeledVariant>) {
    generate_synthetic(&SyntheticSpec {
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

pub fn full_size_layout(kind: Distribution, seed: u64) -> LabeledDataset {
    let (n, a) = full_size(seed);
    lay_out(&LayoutSpec::new(kind, seed), &n, &a, "test").unwrap().0
}

pub fn ids_with(ds: &LabeledDataset, label: Label) -> Vec<u64> {
    ds.items().iter().filter(|lv| lv.label == label).map(|lv| lv.id).collect()
}

/// Written straight to stderr so the line shows up without `--nocapture`.
pub fn report(criterion: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "acceptance {criterion:>2} [{verdict}] {name}: {detail}"
    );
}
