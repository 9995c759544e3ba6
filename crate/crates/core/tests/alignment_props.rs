use proptest::prelude::*;

use wavemdd::mddeval::{align, edit_distance, per, OpKind};

fn seq() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..4, 0..9)
}

proptest! {
    #[test]
    fn distance_is_symmetric(a in seq(), b in seq()) {
        prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
    }

    #[test]
    fn triangle_inequality(a in seq(), b in seq(), c in seq()) {
        prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
    }

    #[test]
    fn identity_and_bounds(a in seq(), b in seq()) {
        prop_assert_eq!(edit_distance(&a, &a), 0);
        let d = edit_distance(&a, &b);
        prop_assert!(d >= a.len().abs_diff(b.len()));
        prop_assert!(d <= a.len().max(b.len()));
    }

    #[test]
    fn ops_rebuild_the_hypothesis(a in seq(), b in seq()) {
        let (d, ops) = align(&a, &b);
        let mut rebuilt = Vec::new();
        let mut cost = 0;
        for op in &ops {
            match op.kind {
                OpKind::Match => rebuilt.push(a[op.ref_pos.unwrap()]),
                OpKind::Substitute | OpKind::Insert => {
                    cost += 1;
                    rebuilt.push(b[op.hyp_pos.unwrap()]);
                }
                OpKind::Delete => cost += 1,
            }
        }
        prop_assert_eq!(rebuilt, b.clone());
        prop_assert_eq!(cost, d);
        prop_assert_eq!(d, edit_distance(&a, &b));
    }

    #[test]
    fn per_is_zero_for_identical_pairs(a in prop::collection::vec(0u8..4, 1..9)) {
        prop_assert_eq!(per(&[(a.clone(), a)]).unwrap(), 0.0);
    }
}

#[test]
fn equal_cost_paths_prefer_the_diagonal() {
    // "b" -> "c" on the diagonal beats deleting "b" after substituting "a".
    let (d, ops) = align(&["a", "b"], &["c"]);
    assert_eq!(d, 2);
    let kinds: Vec<OpKind> = ops.iter().map(|o| o.kind).collect();
    assert_eq!(kinds, [OpKind::Delete, OpKind::Substitute]);
}

#[test]
fn per_rejects_empty_references() {
    assert!(per::<u8>(&[(vec![], vec![1])]).is_err());
}
