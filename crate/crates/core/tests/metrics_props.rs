use magic_core::metrics::{confusion, metrics, ConfusionMatrix};
use proptest::prelude::*;

fn m(rows: &[&[u64]]) -> ConfusionMatrix {
    ConfusionMatrix::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
}

fn f1(p: f64, r: f64) -> f64 {
    2.0 * p * r / (p + r)
}

// Expected values below are written as the raw count ratios.

#[test]
fn fakeddit_two_way_table() {
    let r = metrics(&m(&[&[415, 3], &[5, 203]])).unwrap();
    let (p0, p1) = (415.0 / 420.0, 203.0 / 206.0);
    let (r0, r1) = (415.0 / 418.0, 203.0 / 208.0);
    assert!((r.accuracy - 618.0 / 626.0).abs() < 1e-15);
    assert!((r.macro_precision - (p0 + p1) / 2.0).abs() < 1e-15);
    assert!((r.macro_recall - (r0 + r1) / 2.0).abs() < 1e-15);
    assert!((r.macro_f1 - (f1(p0, r0) + f1(p1, r1)) / 2.0).abs() < 1e-15);
    for (got, published) in [
        (r.accuracy, 98.72),
        (r.macro_precision, 98.68),
        (r.macro_recall, 98.44),
        (r.macro_f1, 98.56),
    ] {
        assert!((got * 100.0 - published).abs() <= 0.01, "{got} vs {published}");
    }
}

#[test]
fn fakeddit_three_way_table_computes_to_its_own_value() {
    let r = metrics(&m(&[&[200, 2, 6], &[0, 209, 3], &[4, 1, 202]])).unwrap();
    assert!((r.accuracy - 611.0 / 627.0).abs() < 1e-15);
    assert!((r.accuracy * 100.0 - 97.45).abs() <= 0.01);
    // The published row for this matrix is 97.60; the counts do not give it.
    assert!((r.accuracy * 100.0 - 97.60).abs() > 0.1);
}

#[test]
fn mfnd_table() {
    let r = metrics(&m(&[&[174, 7, 2], &[14, 169, 22], &[14, 24, 165]])).unwrap();
    assert!((r.accuracy - 508.0 / 591.0).abs() < 1e-15);
    let p = [174.0 / 202.0, 169.0 / 200.0, 165.0 / 189.0];
    let rc = [174.0 / 183.0, 169.0 / 205.0, 165.0 / 203.0];
    let f: f64 = (0..3).map(|i| f1(p[i], rc[i])).sum::<f64>() / 3.0;
    assert!((r.macro_f1 - f).abs() < 1e-15);
    for (got, published) in [
        (r.accuracy, 85.96),
        (r.macro_precision, 85.98),
        (r.macro_recall, 86.27),
        (r.macro_f1, 86.01),
    ] {
        assert!((got * 100.0 - published).abs() <= 0.01, "{got} vs {published}");
    }
}

#[test]
fn text_output_has_four_decimals() {
    let text = metrics(&m(&[&[415, 3], &[5, 203]])).unwrap().to_text();
    assert!(text.starts_with("accuracy: 0.9872\n"), "{text}");
    assert!(text.contains("macro_f1: 0.9856\n"));
}

#[test]
fn empty_classes_are_flagged_not_nan() {
    let r = metrics(&m(&[&[5, 0, 0], &[3, 0, 0], &[0, 0, 0]])).unwrap();
    assert!(r.has_empty_classes());
    assert_eq!(r.per_class[1].precision, 0.0);
    assert!(r.per_class[1].empty_prediction);
    assert!(r.per_class[2].empty_support);
    assert!([r.macro_precision, r.macro_recall, r.macro_f1].iter().all(|x| x.is_finite()));
}

#[test]
fn confusion_rows_are_actual_classes() {
    let c = confusion(&[0, 0, 1, 2], &[0, 1, 1, 0], 3).unwrap();
    assert_eq!(c.get(0, 1), 1);
    assert_eq!(c.get(2, 0), 1);
    assert_eq!(c.total(), 4);
    assert!(confusion(&[0, 3], &[0, 0], 3).is_err());
}

proptest! {
    #[test]
    fn class_relabeling_preserves_macro_metrics(
        counts in proptest::collection::vec(1u64..50, 9),
        perm in Just(vec![0usize, 1, 2]).prop_shuffle(),
    ) {
        let rows: Vec<Vec<u64>> = counts.chunks(3).map(|c| c.to_vec()).collect();
        let a = metrics(&ConfusionMatrix::new(rows).unwrap()).unwrap();
        let b = metrics(&a.matrix.permuted(&perm)).unwrap();
        for (x, y) in [
            (a.accuracy, b.accuracy),
            (a.macro_precision, b.macro_precision),
            (a.macro_recall, b.macro_recall),
            (a.macro_f1, b.macro_f1),
        ] {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn accuracy_is_trace_over_total(counts in proptest::collection::vec(0u64..50, 4)) {
        prop_assume!(counts.iter().sum::<u64>() > 0);
        let rows: Vec<Vec<u64>> = counts.chunks(2).map(|c| c.to_vec()).collect();
        let r = metrics(&ConfusionMatrix::new(rows).unwrap()).unwrap();
        prop_assert_eq!(r.accuracy, (counts[0] + counts[3]) as f64 / counts.iter().sum::<u64>() as f64);
        for c in &r.per_class {
            prop_assert!((0.0..=1.0).contains(&c.f1));
            if c.precision > 0.0 && c.recall > 0.0 {
                prop_assert!(c.f1 >= c.precision.min(c.recall) - 1e-15 && c.f1 <= c.precision.max(c.recall) + 1e-15);
            }
        }
    }
}
