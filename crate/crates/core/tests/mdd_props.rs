use std::collections::BTreeMap;
use std::path::Path;

use proptest::prelude::*;

use wavemdd::mddeval::{
    evaluate, f1_score, mdd_classify, metrics, parse_annotations, write_annotations, ConfusionCounts, MetricFlag,
    UttAnnotation,
};

const CANON: [&str; 4] = ["aa", "iy", "uw", "eh"];
const OTHER: [&str; 2] = ["zh", "ng"];

fn canonical() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(0usize..CANON.len(), 1..10).prop_map(|v| v.into_iter().map(|i| CANON[i].to_string()).collect())
}

/// Annotations whose errors are substitutions by symbols never found in the
/// canonical sequence, so the positional alignment is the unique optimum.
fn substitution_annotation() -> impl Strategy<Value = UttAnnotation> {
    canonical()
        .prop_flat_map(|c| {
            let n = c.len();
            (Just(c), prop::collection::vec(prop::option::weighted(0.3, 0usize..OTHER.len()), n))
        })
        .prop_map(|(c, subs)| {
            let perceived = c
                .iter()
                .zip(subs)
                .map(|(p, s)| Some(s.map_or_else(|| p.clone(), |k| OTHER[k].to_string())))
                .collect();
            UttAnnotation::new("u", c, perceived).unwrap()
        })
}

/// Arbitrary annotations, including deletions and in-inventory substitutions.
fn any_annotation() -> impl Strategy<Value = UttAnnotation> {
    canonical()
        .prop_flat_map(|c| {
            let n = c.len();
            (Just(c), prop::collection::vec(prop::option::weighted(0.8, 0usize..6), n))
        })
        .prop_map(|(c, said)| {
            let all: Vec<&str> = CANON.iter().chain(OTHER.iter()).copied().collect();
            let perceived = said.into_iter().map(|s| s.map(|k| all[k].to_string())).collect();
            UttAnnotation::new("u", c, perceived).unwrap()
        })
}

fn hyp() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(0usize..6, 0..12).prop_map(|v| {
        let all: Vec<&str> = CANON.iter().chain(OTHER.iter()).copied().collect();
        v.into_iter().map(|i| all[i].to_string()).collect()
    })
}

proptest! {
    #[test]
    fn perceived_hypothesis_has_no_false_decisions(a in substitution_annotation()) {
        let c = mdd_classify(&a, &a.realized()).unwrap();
        prop_assert_eq!((c.fp, c.fn_, c.de), (0, 0, 0));
        prop_assert_eq!(c.tn as usize, a.error_count());
        prop_assert_eq!(c.cd, c.tn);
    }

    #[test]
    fn canonical_hypothesis_accepts_everything(a in any_annotation()) {
        let c = mdd_classify(&a, &a.canonical).unwrap();
        prop_assert_eq!(c.tn, 0);
        prop_assert_eq!(c.fn_, 0);
        prop_assert_eq!(c.fp as usize, a.error_count());
    }

    #[test]
    fn counts_partition_the_canonical_phones(a in any_annotation(), h in hyp()) {
        let c = mdd_classify(&a, &h).unwrap();
        prop_assert_eq!(c.total() as usize, a.canonical.len());
        prop_assert_eq!(c.cd + c.de, c.tn);
        prop_assert_eq!((c.tn + c.fp) as usize, a.error_count());
    }

    #[test]
    fn metrics_stay_in_range(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50, cd in 0u64..50, de in 0u64..50) {
        let m = metrics(&ConfusionCounts { tp, fp, fn_, tn: cd + de, cd, de });
        for v in [m.precision, m.recall, m.f1, m.dar] {
            prop_assert!((0.0..=100.0).contains(&v));
        }
        prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-9);
        prop_assert!(m.f1 + 1e-9 >= m.precision.min(m.recall));
    }

    #[test]
    fn annotation_files_round_trip(anns in prop::collection::vec(any_annotation(), 1..5)) {
        let anns: Vec<UttAnnotation> = anns
            .into_iter()
            .enumerate()
            .map(|(i, mut a)| { a.utt_id = format!("utt{i}"); a })
            .collect();
        let mut buf = Vec::new();
        write_annotations(&mut buf, &anns).unwrap();
        prop_assert_eq!(parse_annotations(&buf[..], Path::new("mem")).unwrap(), anns);
    }
}

#[test]
fn zero_denominators_are_flagged() {
    let m = metrics(&ConfusionCounts::default());
    assert_eq!((m.precision, m.recall, m.f1, m.dar), (0.0, 0.0, 0.0, 0.0));
    for f in [
        MetricFlag::PrecisionUndefined,
        MetricFlag::RecallUndefined,
        MetricFlag::F1Undefined,
        MetricFlag::DarUndefined,
    ] {
        assert!(m.flags.contains(&f));
    }
    assert_eq!(f1_score(0.0, 0.0), None);
}

#[test]
fn missing_hypothesis_is_an_input_error() {
    let a = UttAnnotation::new("x", vec!["aa".into()], vec![Some("aa".into())]).unwrap();
    let hyps: BTreeMap<String, Vec<String>> = BTreeMap::new();
    assert!(matches!(evaluate(&[a], &hyps), Err(wavemdd::MddError::Input(_))));
}

#[test]
fn length_mismatch_is_rejected() {
    assert!(UttAnnotation::new("x", vec!["aa".into()], vec![]).is_err());
}
