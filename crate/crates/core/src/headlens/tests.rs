use std::collections::HashSet;
use std::path::Path;
use std::sync::Mutex;

use proptest::prelude::*;

use super::*;
use crate::model::{ModelConfig, Regime};

fn matrix(rows: &[&[f64]]) -> ImportanceMatrix {
    ImportanceMatrix::from_masked(MetricKind::F1, 0.0, Matrix::from_rows(rows))
}

#[test]
fn rank_with_evaluates_baseline_then_each_head_once() {
    let cfg = ModelConfig::tiny(Regime::AllPurpose, 16);
    let seen = Mutex::new(Vec::new());
    let m = rank_with(&cfg, MetricKind::Accuracy, 3, |mask| {
        let masked = mask.masked_heads();
        seen.lock().unwrap().push(masked.clone());
        Ok(50.0 + masked.iter().map(|&(l, h)| (l * 2 + h) as f64).sum::<f64>())
    })
    .unwrap();
    let seen = seen.into_inner().unwrap();
    assert_eq!(seen.len(), 5);
    assert_eq!(seen.iter().filter(|m| m.is_empty()).count(), 1);
    let singles: HashSet<_> = seen.iter().filter(|m| m.len() == 1).map(|m| m[0]).collect();
    assert_eq!(singles.len(), 4);
    assert_eq!(m.baseline, 50.0);
    assert_eq!(m.deltas.data(), &[0.0, 1.0, 2.0, 3.0]);
}

#[test]
fn rank_with_is_independent_of_workers() {
    let cfg = ModelConfig::new(Regime::AllPurpose, 3, 12, 4, 16);
    let eval = |mask: &HeadMask| -> Result<f64> {
        let (l, h) = mask.masked_heads().first().copied().unwrap_or((9, 9));
        Ok(100.0 / 3.0 + ((l * 7 + h * 13) as f64).sin())
    };
    let one = rank_with(&cfg, MetricKind::F1, 1, eval).unwrap();
    let eight = rank_with(&cfg, MetricKind::F1, 8, eval).unwrap();
    assert_eq!(importance_csv(&one), importance_csv(&eight));
}

#[test]
fn baseline_plus_delta_is_masked_exactly() {
    let cfg = ModelConfig::new(Regime::AllPurpose, 2, 12, 3, 16);
    let m = rank_with(&cfg, MetricKind::F1, 2, |mask| {
        let n = mask.masked_heads().first().map_or(0, |&(l, h)| l * 3 + h + 1);
        Ok(100.0 * (37 + n) as f64 / 113.0)
    })
    .unwrap();
    for l in 0..2 {
        for h in 0..3 {
            assert_eq!(m.baseline + m.delta(l, h), m.masked.get(l, h));
        }
    }
}

#[test]
fn top_heads_breaks_ties_by_position() {
    let m = matrix(&[&[0.0, -1.0], &[-1.0, 0.0]]);
    let order: Vec<_> = top_heads(&m, 4).iter().map(|&(l, h, _)| (l, h)).collect();
    assert_eq!(order, [(0, 1), (1, 0), (0, 0), (1, 1)]);
}

#[test]
fn top_heads_finds_unique_minimum() {
    let mut rows = vec![vec![0.5; 2]; 4];
    rows[3][1] = -2.0;
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    assert_eq!(top_heads(&matrix(&refs), 1)[0], (3, 1, -2.0));
}

#[test]
fn compare_two_by_two_example() {
    let a = matrix(&[&[-3.0, 0.0], &[1.0, -1.0]]);
    let b = matrix(&[&[2.0, -4.0], &[0.0, -1.0]]);
    let c = compare_tasks(&a, &b).unwrap();
    assert_eq!(c.top1_a, (0, 0));
    assert_eq!(c.top1_b, (0, 1));
    assert!(c.top1_distinct);
    assert_eq!(c.top10pct_k, 1);
    assert_eq!(c.top10pct_overlap, 0.0);
    // B ordering: (0,1) -4, (1,1) -1, (1,0) 0, (0,0) 2
    assert_eq!(c.cross_rank, 4);
    assert_eq!(c.cross_delta, 2.0);
}

#[test]
fn compare_self_and_reversal() {
    let a = matrix(&[&[-3.0, 0.5, 2.0], &[1.0, -1.0, 4.0]]);
    let c = compare_tasks(&a, &a).unwrap();
    assert_eq!(c.spearman, Some(1.0));
    assert_eq!(c.top10pct_overlap, 1.0);
    assert_eq!(c.cross_rank, 1);
    let neg = matrix(&[&[3.0, -0.5, -2.0], &[-1.0, 1.0, -4.0]]);
    assert_eq!(compare_tasks(&a, &neg).unwrap().spearman, Some(-1.0));
}

#[test]
fn compare_rejects_shape_mismatch() {
    let a = matrix(&[&[1.0, 2.0]]);
    let b = matrix(&[&[1.0], &[2.0]]);
    assert!(matches!(compare_tasks(&a, &b), Err(Error::Usage(_))));
}

#[test]
fn spearman_constant_is_undefined() {
    assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
}

#[test]
fn spearman_matches_pearson_of_average_ranks() {
    // ranks a: [1, 2.5, 2.5, 4], b: [2, 1, 3, 4]
    let rho = spearman(&[1.0, 5.0, 5.0, 9.0], &[2.0, 1.0, 3.0, 4.0]).unwrap();
    // cov 0.75 + 2.25, var 4.5 and 5
    let expected = 3.0 / (4.5f64 * 5.0).sqrt();
    assert!((rho - expected).abs() < 1e-15);
}

#[test]
fn layer_summary_examples() {
    let m = matrix(&[&[-4.0, -1.0, 0.0, 2.0], &[1.5, 1.5, 1.5, 1.5]]);
    let s = layer_summary(&m);
    let l0 = &s.layers[0];
    assert_eq!((l0.min, l0.median, l0.max), (-4.0, -0.5, 2.0));
    assert_eq!(l0.p25, -1.75);
    assert_eq!(l0.p75, 0.5);
    let l1 = &s.layers[1];
    assert_eq!([l1.min, l1.p25, l1.median, l1.p75, l1.max], [1.5; 5]);

    let single = layer_summary(&matrix(&[&[-0.25], &[3.0]]));
    for f in &single.layers {
        assert!(f.min == f.median && f.median == f.max);
    }
}

#[test]
fn csv_round_trip() {
    let m = rank_with(&ModelConfig::tiny(Regime::Extractive, 16), MetricKind::F1, 1, |mask| {
        Ok(61.0 / 7.0 - mask.masked_heads().len() as f64 / 3.0)
    })
    .unwrap();
    let text = importance_csv(&m);
    assert!(text.starts_with("layer,head,metric,baseline,masked,delta\n"));
    assert_eq!(text.lines().count(), 5);
    let back = parse_importance_csv(&text, Path::new("x.csv")).unwrap();
    assert_eq!(back.deltas, m.deltas);
    assert_eq!(back.masked, m.masked);
    assert_eq!(back.baseline, m.baseline);
    assert_eq!(back.metric, MetricKind::F1);
}

#[test]
fn csv_errors_name_the_row() {
    let bad = "layer,head,metric,baseline,masked,delta\n0,0,f1,1,1,0\n0,1,f1,1,oops,0\n";
    match parse_importance_csv(bad, Path::new("bad.csv")) {
        Err(Error::Parse { line, msg, .. }) => {
            assert_eq!(line, 3);
            assert!(msg.contains("masked"));
        }
        other => panic!("unexpected {other:?}"),
    }
    let missing = "layer,head,metric,baseline,masked,delta\n0,0,f1,1,1,0\n1,1,f1,1,1,0\n";
    assert!(matches!(parse_importance_csv(missing, Path::new("m.csv")), Err(Error::Parse { .. })));
    let header = "l,h\n";
    assert!(matches!(
        parse_importance_csv(header, Path::new("h.csv")),
        Err(Error::Parse { line: 1, .. })
    ));
}

fn fills(svg: &str) -> Vec<String> {
    svg.match_indices("fill=\"#")
        .map(|(i, _)| svg[i + 6..i + 13].to_string())
        .collect()
}

#[test]
fn heatmap_constant_zero_is_single_color() {
    let svg = render_heatmap_svg(&matrix(&[&[0.0, 0.0], &[0.0, 0.0]]));
    let f = fills(&svg);
    assert_eq!(f.len(), 4);
    assert!(f.iter().all(|c| c == "#ffffff"));
}

#[test]
fn heatmap_darkest_negative_at_minimum() {
    let svg = render_heatmap_svg(&matrix(&[&[-1.0, 2.0, 0.5], &[-5.0, -2.5, 1.0]]));
    let f = fills(&svg);
    assert_eq!(f.len(), 6);
    assert_eq!(f[3], "#ff0000");
    assert!(f.iter().enumerate().all(|(i, c)| i == 3 || c != "#ff0000"));
    assert!(svg.starts_with("<svg"));
}

proptest! {
    #[test]
    fn top_heads_full_is_permutation(vals in proptest::collection::vec(-3i32..3, 12)) {
        let m = ImportanceMatrix::from_masked(
            MetricKind::F1,
            0.0,
            Matrix::from_vec(3, 4, vals.iter().map(|&v| f64::from(v)).collect()).unwrap(),
        );
        let order = top_heads(&m, 12);
        let set: HashSet<_> = order.iter().map(|&(l, h, _)| (l, h)).collect();
        prop_assert_eq!(set.len(), 12);
        for w in order.windows(2) {
            prop_assert!(w[0].2 < w[1].2 || (w[0].2 == w[1].2 && (w[0].0, w[0].1) < (w[1].0, w[1].1)));
        }
    }

    #[test]
    fn spearman_invariant_under_monotone_transform(
        a in proptest::collection::vec(-50.0f64..50.0, 8),
        b in proptest::collection::vec(-50.0f64..50.0, 8),
    ) {
        let f = |x: &f64| x.powi(3) + 2.0 * x;
        let g = |x: &f64| (x / 10.0).exp();
        let ta: Vec<f64> = a.iter().map(f).collect();
        let tb: Vec<f64> = b.iter().map(g).collect();
        let before = spearman(&a, &b);
        let after = spearman(&ta, &tb);
        match (before, after) {
            (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
            (x, y) => prop_assert_eq!(x, y),
        }
    }

    #[test]
    fn quantized_sums_are_exact(a in 0.0f64..100.0, b in 0.0f64..100.0) {
        let (qa, qb) = (quantize(a), quantize(b));
        prop_assert_eq!(qa + (qb - qa), qb);
    }

    #[test]
    fn summary_is_ordered(row in proptest::collection::vec(-10.0f64..10.0, 1..9)) {
        let m = ImportanceMatrix::from_masked(MetricKind::Accuracy, 0.0, Matrix::row_vector(&row));
        let s = &layer_summary(&m).layers[0];
        prop_assert!(s.min <= s.p25 && s.p25 <= s.median && s.median <= s.p75 && s.p75 <= s.max);
        prop_assert_eq!(s.min, row.iter().cloned().fold(f64::INFINITY, f64::min));
        prop_assert_eq!(s.max, row.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
}
