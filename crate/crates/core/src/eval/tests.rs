use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::published::{all_checks, printed_negative_total_note, PUBLISHED};
use super::*;
use crate::data::{sample_lesion_box, ClassLabel, Object, PatientLabel, SynthConfig, REFERENCE_SIZE};
use crate::geometry::{BBox, Detection, MatchCriterion};
use crate::Error;

fn pct(v: Option<f64>) -> f64 {
    100.0 * v.unwrap()
}

#[test]
fn detection_stage_matrix_rates() {
    let m = metrics(&ConfusionMatrix::new(2873, 53822, 799617, 50));
    assert!((pct(m.sensitivity) - 98.29).abs() < 0.05);
    assert!((pct(m.false_positive_rate) - 6.31).abs() < 0.05);
    assert!((pct(m.accuracy) - 93.71).abs() < 0.05);
}

#[test]
fn added_set_matrix_rates() {
    let m = metrics(&ConfusionMatrix::new(2221, 61138, 1026521, 28));
    assert!((pct(m.sensitivity) - 98.75).abs() < 0.05);
    assert!((pct(m.false_positive_rate) - 5.62).abs() < 0.05);
    assert!((pct(m.accuracy) - 94.39).abs() < 0.05);
}

#[test]
fn perfect_classifier() {
    let m = metrics(&ConfusionMatrix::new(7, 0, 5, 0));
    assert_eq!(m.sensitivity, Some(1.0));
    assert_eq!(m.false_positive_rate, Some(0.0));
    assert_eq!(m.specificity, Some(1.0));
    assert_eq!(m.accuracy, Some(1.0));
}

#[test]
fn zero_denominators_are_undefined() {
    let m = metrics(&ConfusionMatrix::default());
    assert_eq!(m, MetricSet::default());
    let m = metrics(&ConfusionMatrix::new(0, 3, 4, 0));
    assert_eq!(m.sensitivity, None);
    assert_eq!(m.false_positive_rate, Some(3.0 / 7.0));
}

#[test]
fn negative_counts_rejected() {
    assert!(matches!(ConfusionMatrix::from_signed(1, -1, 0, 0), Err(Error::Metric(_))));
    assert_eq!(ConfusionMatrix::from_signed(1, 2, 3, 4).unwrap(), ConfusionMatrix::new(1, 2, 3, 4));
}

#[test]
fn confusion_matrix_serializes_fn_field() {
    let json = serde_json::to_string(&ConfusionMatrix::new(1, 2, 3, 4)).unwrap();
    assert_eq!(json, r#"{"tp":1,"fp":2,"tn":3,"fn":4}"#);
}

#[test]
fn published_checks_all_pass() {
    let checks = all_checks();
    assert_eq!(checks.len(), 8);
    for c in &checks {
        assert!(c.passed, "{}", c.line());
    }
}

#[test]
fn only_first_matrix_has_inconsistent_negative_total() {
    let notes: Vec<_> = PUBLISHED.iter().map(printed_negative_total_note).collect();
    assert!(notes[0].as_deref().unwrap().contains("853439"));
    assert!(notes[1..].iter().all(Option::is_none));
}

proptest! {
    #[test]
    fn specificity_plus_fpr_is_one(tp in 0u64..1000, fp in 0u64..1000, tn in 0u64..1000, fn_ in 0u64..1000) {
        let m = metrics(&ConfusionMatrix::new(tp, fp, tn, fn_));
        if let (Some(s), Some(f)) = (m.specificity, m.false_positive_rate) {
            prop_assert!((s + f - 1.0).abs() < 1e-12);
        } else {
            prop_assert_eq!(fp + tn, 0);
        }
        for v in [m.sensitivity, m.false_positive_rate, m.specificity, m.accuracy].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn merge_is_fieldwise_and_commutative(a in prop::array::uniform4(0u64..1000), b in prop::array::uniform4(0u64..1000)) {
        let x = ConfusionMatrix::new(a[0], a[1], a[2], a[3]);
        let y = ConfusionMatrix::new(b[0], b[1], b[2], b[3]);
        prop_assert_eq!(x + y, y + x);
        prop_assert_eq!((x + y).total(), x.total() + y.total());
        prop_assert_eq!([x, y].into_iter().sum::<ConfusionMatrix>(), x + y);
    }
}

fn bx(x: f64, y: f64, w: f64, h: f64) -> BBox {
    BBox::new(x, y, x + w, y + h).unwrap()
}

fn obj(b: BBox, label: ClassLabel) -> Object {
    Object { bbox: b, label }
}

fn truth(id: &str, objects: Vec<Object>) -> FrameTruth {
    FrameTruth { frame_id: id.into(), objects }
}

fn preds(id: &str, labels: &[ClassLabel]) -> FrameDetections {
    FrameDetections {
        frame_id: id.into(),
        detections: labels
            .iter()
            .map(|&l| Detection::new(bx(1.0, 1.0, 5.0, 5.0), l, 0.9).unwrap())
            .collect(),
    }
}

#[test]
fn image_level_all_correct() {
    let so = ClassLabel::SpaceOccupying;
    let t = vec![truth("a", vec![obj(bx(0.0, 0.0, 4.0, 4.0), so)]), truth("b", vec![])];
    let p = vec![preds("b", &[ClassLabel::Bubble]), preds("a", &[so])];
    let cm = image_level_cm(&p, &t).unwrap();
    assert_eq!(cm, ConfusionMatrix::new(1, 0, 1, 0));
}

#[test]
fn image_level_missed_positive() {
    let t = vec![truth("a", vec![obj(bx(0.0, 0.0, 4.0, 4.0), ClassLabel::SpaceOccupying)])];
    let cm = image_level_cm(&[preds("a", &[ClassLabel::Ulcer])], &t).unwrap();
    assert_eq!(cm.fn_, 1);
    assert_eq!(cm.total(), 1);
}

#[test]
fn image_level_frame_set_mismatch() {
    let t = vec![truth("a", vec![]), truth("b", vec![])];
    assert!(matches!(image_level_cm(&[preds("a", &[])], &t), Err(Error::Metric(_))));
    assert!(image_level_cm(&[preds("a", &[]), preds("c", &[])], &t).is_err());
    assert!(image_level_cm(&[preds("a", &[]), preds("a", &[])], &t[..1]).is_err());
}

proptest! {
    #[test]
    fn image_level_matches_recount(flags in prop::collection::vec((any::<bool>(), any::<bool>(), any::<bool>()), 0..40)) {
        let mut t = Vec::new();
        let mut p = Vec::new();
        let mut brute = [0u64; 4];
        for (i, &(pred, actual, noise)) in flags.iter().enumerate() {
            let id = format!("f{i}");
            let mut objects = vec![];
            if actual {
                objects.push(obj(bx(0.0, 0.0, 3.0, 3.0), ClassLabel::SpaceOccupying));
            }
            if noise {
                objects.push(obj(bx(5.0, 5.0, 3.0, 3.0), ClassLabel::Bleeding));
            }
            t.push(truth(&id, objects));
            let mut labels = vec![];
            if pred {
                labels.push(ClassLabel::SpaceOccupying);
            }
            if noise {
                labels.push(ClassLabel::Residues);
            }
            p.push(preds(&id, &labels));
            brute[match (pred, actual) { (true, true) => 0, (true, false) => 1, (false, false) => 2, (false, true) => 3 }] += 1;
        }
        p.reverse();
        let cm = image_level_cm(&p, &t).unwrap();
        prop_assert_eq!(cm, ConfusionMatrix::new(brute[0], brute[1], brute[2], brute[3]));
        prop_assert_eq!(cm.total(), flags.len() as u64);
    }
}

#[test]
fn patient_level_all_correct() {
    let mut verdicts = Vec::new();
    let mut labels = Vec::new();
    for i in 0..21 {
        let label = PatientLabel::ALL[i % 3];
        verdicts.push(PatientVerdict { patient_id: format!("p{i}"), occupant: label.is_positive() });
        labels.push((format!("p{i}"), label));
    }
    let cm = patient_level_cm(&verdicts, &labels).unwrap();
    assert_eq!(cm.total(), 21);
    assert_eq!(metrics(&cm).accuracy, Some(1.0));
}

fn props(id: &str, boxes: Vec<BBox>) -> FrameProposals {
    FrameProposals { frame_id: id.into(), boxes }
}

#[test]
fn rpn_identical_proposal_is_true_positive() {
    let g = bx(10.0, 10.0, 20.0, 20.0);
    let cm = rpn_level_cm(
        &[props("a", vec![g])],
        &[truth("a", vec![obj(g, ClassLabel::SpaceOccupying)])],
        &MatchCriterion::default(),
    )
    .unwrap();
    assert_eq!(cm, ConfusionMatrix::new(1, 0, 0, 0));
}

#[test]
fn rpn_empty_proposals_miss_the_object() {
    let cm = rpn_level_cm(
        &[props("a", vec![])],
        &[truth("a", vec![obj(bx(0.0, 0.0, 8.0, 8.0), ClassLabel::SpaceOccupying)])],
        &MatchCriterion::default(),
    )
    .unwrap();
    assert_eq!(cm, ConfusionMatrix::new(0, 0, 0, 1));
}

#[test]
fn rpn_counting_convention() {
    let so = ClassLabel::SpaceOccupying;
    let g = bx(0.0, 0.0, 10.0, 10.0);
    let far = bx(40.0, 40.0, 10.0, 10.0);
    let t = vec![
        truth("pos", vec![obj(g, so), obj(far, ClassLabel::Bubble)]),
        truth("neg", vec![obj(g, ClassLabel::Bleeding)]),
    ];
    let p = vec![
        // matched, unmatched, matched to a non-positive object
        props("pos", vec![g, bx(20.0, 0.0, 5.0, 5.0), far]),
        // matched to a non-positive object, unmatched
        props("neg", vec![g, far]),
    ];
    let cm = rpn_level_cm(&p, &t, &MatchCriterion::default()).unwrap();
    assert_eq!(cm, ConfusionMatrix::new(1, 3, 1, 0));
}

/// Straight-line recount with a hand-written IoU.
fn brute_rpn(p: &[FrameProposals], t: &[FrameTruth], thr: f64) -> ConfusionMatrix {
    let iou = |a: &BBox, b: &BBox| {
        let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
        let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
        let inter = iw * ih;
        let union = a.area() + b.area() - inter;
        if union > 0.0 { inter / union } else { 0.0 }
    };
    let mut cm = ConfusionMatrix::default();
    for (fp, ft) in p.iter().zip(t) {
        let positive = ft.objects.iter().any(|o| o.label == ClassLabel::SpaceOccupying);
        let mut hit = vec![false; ft.objects.len()];
        for b in &fp.boxes {
            let mut best = None;
            let mut best_v = f64::NEG_INFINITY;
            for (k, o) in ft.objects.iter().enumerate() {
                let v = iou(b, &o.bbox);
                if v > best_v {
                    best_v = v;
                    best = Some(k);
                }
            }
            let matched = best.filter(|_| best_v > 0.0 && best_v >= thr);
            if let Some(k) = matched {
                hit[k] = true;
            }
            match matched {
                Some(k) if ft.objects[k].label == ClassLabel::SpaceOccupying => cm.tp += 1,
                None if !positive => cm.tn += 1,
                _ => cm.fp += 1,
            }
        }
        for (k, o) in ft.objects.iter().enumerate() {
            if o.label == ClassLabel::SpaceOccupying && !hit[k] {
                cm.fn_ += 1;
            }
        }
    }
    cm
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<FrameProposals>, Vec<FrameTruth>) {
    let mut p = Vec::new();
    let mut t = Vec::new();
    for f in 0..rng.random_range(1..6) {
        let id = format!("f{f}");
        let objects: Vec<Object> = (0..rng.random_range(0..3))
            .map(|_| {
                let b = bx(rng.random_range(0.0..40.0), rng.random_range(0.0..40.0), rng.random_range(4.0..20.0), rng.random_range(4.0..20.0));
                let label = if rng.random_bool(0.5) { ClassLabel::SpaceOccupying } else { ClassLabel::ALL[rng.random_range(1..6)] };
                obj(b, label)
            })
            .collect();
        let mut boxes = Vec::new();
        for o in &objects {
            for _ in 0..rng.random_range(0..3) {
                let j = |r: &mut ChaCha8Rng| r.random_range(-4.0..4.0);
                let (dx, dy, dw, dh) = (j(rng), j(rng), j(rng), j(rng));
                boxes.push(bx(o.bbox.x_min + dx, o.bbox.y_min + dy, (o.bbox.width() + dw).max(1.0), (o.bbox.height() + dh).max(1.0)));
            }
        }
        for _ in 0..rng.random_range(0..4) {
            boxes.push(bx(rng.random_range(0.0..50.0), rng.random_range(0.0..50.0), rng.random_range(2.0..15.0), rng.random_range(2.0..15.0)));
        }
        p.push(props(&id, boxes));
        t.push(truth(&id, objects));
    }
    (p, t)
}

#[test]
fn rpn_matches_brute_force_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let (p, t) = random_instance(&mut rng);
        let thr = rng.random_range(0.0..1.0);
        let cm = rpn_level_cm(&p, &t, &MatchCriterion::Iou { threshold: thr }).unwrap();
        assert_eq!(cm, brute_rpn(&p, &t, thr));
    }
}

#[test]
fn perfect_proposals_give_unit_auc() {
    let so = ClassLabel::SpaceOccupying;
    let g1 = bx(3.0, 4.0, 20.0, 18.0);
    let g2 = bx(30.0, 30.0, 12.0, 12.0);
    let t = vec![truth("a", vec![obj(g1, so), obj(g2, so)]), truth("b", vec![])];
    let p = vec![props("a", vec![g1, g2]), props("b", vec![])];
    let curve = roc_over_iou(&p, &t, &MatchCriterion::default(), &threshold_sweep(11)).unwrap();
    assert_eq!(curve.auc, 1.0);
    assert_eq!(curve.points.len(), 11);
}

#[test]
fn roc_needs_two_thresholds() {
    assert!(matches!(roc_over_iou(&[], &[], &MatchCriterion::default(), &[0.5]), Err(Error::Config(_))));
}

#[test]
fn roc_tpr_monotone_and_auc_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let (p, t) = random_instance(&mut rng);
        let curve = roc_over_iou(&p, &t, &MatchCriterion::default(), &threshold_sweep(21)).unwrap();
        for w in curve.points.windows(2) {
            assert!(w[1].threshold > w[0].threshold);
            assert!(w[1].tpr <= w[0].tpr + 1e-12);
        }
        assert!((0.0..=1.0).contains(&curve.auc));
    }
}

#[test]
fn trapezoid_of_diagonal() {
    assert!((trapezoid_auc(&[(0.0, 0.0), (1.0, 1.0)]) - 0.5).abs() < 1e-12);
}

#[test]
fn empty_histogram() {
    let h = box_size_histogram(&[], 32.0, 8).unwrap();
    assert!(h.is_empty());
    assert_eq!(h.mode(), None);
    assert!(box_size_histogram(&[], 0.0, 8).is_err());
}

#[test]
fn histogram_conserves_mass_with_overflow() {
    let boxes = vec![bx(0.0, 0.0, 10.0, 70.0), bx(0.0, 0.0, 500.0, 5.0), bx(0.0, 0.0, 31.9, 32.0)];
    let h = box_size_histogram(&boxes, 32.0, 4).unwrap();
    assert_eq!(h.total(), 3);
    assert_eq!(h.counts[0][2], 1);
    assert_eq!(h.counts[3][0], 1);
    assert_eq!(h.counts[0][1], 1);
    assert_eq!(h.marginal(0), vec![2, 0, 0, 1]);
}

#[test]
fn synthetic_lesion_size_mode_in_band() {
    let cfg = SynthConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let to_ref = REFERENCE_SIZE as f64 / cfg.image_size as f64;
    let boxes: Vec<BBox> = (0..2000)
        .map(|_| {
            let b = sample_lesion_box(&cfg, &mut rng);
            BBox::new(0.0, 0.0, b.width() * to_ref, b.height() * to_ref).unwrap()
        })
        .collect();
    let h = box_size_histogram(&boxes, 32.0, 8).unwrap();
    assert_eq!(h.total(), 2000);
    let (i, j) = h.mode().unwrap();
    for k in [i, j] {
        let (lo, hi) = h.bin_range(k);
        assert!(lo >= 64.0 && hi <= 128.0, "mode bin [{lo}, {hi})");
    }
}

pub(crate) fn pinned_report() -> Report {
    let so = ClassLabel::SpaceOccupying;
    let g = bx(2.0, 2.0, 20.0, 20.0);
    let t = vec![truth("a", vec![obj(g, so)]), truth("b", vec![])];
    let p = vec![props("a", vec![g, bx(3.0, 3.0, 20.0, 16.0)]), props("b", vec![bx(30.0, 30.0, 8.0, 8.0)])];
    let roc = roc_over_iou(&p, &t, &MatchCriterion::default(), &threshold_sweep(5)).unwrap();
    let hist = box_size_histogram(&[g, bx(0.0, 0.0, 70.0, 90.0)], 32.0, 4).unwrap();
    Report {
        title: "Pinned evaluation".into(),
        stages: vec![
            StageMetrics::new("detection only")
                .with(EvalLevel::Rpn, ConfusionMatrix::new(10, 4, 6, 1))
                .with(EvalLevel::Image, ConfusionMatrix::new(5, 3, 30, 0))
                .with(EvalLevel::Patient, ConfusionMatrix::new(2, 1, 3, 0)),
            StageMetrics::new("cascade")
                .with(EvalLevel::Image, ConfusionMatrix::new(5, 1, 32, 0))
                .with(EvalLevel::Patient, ConfusionMatrix::new(2, 0, 4, 0)),
        ],
        sections: vec![Section { heading: "ROC".into(), body: format!("AUC {:.4}", roc.auc) }],
        plots: vec![
            roc_plot("roc", &[("pinned", &roc)]),
            Plot {
                name: "sizes".into(),
                kind: PlotKind::Histogram(HistogramPlot { title: "Box sizes".into(), histogram: hist }),
            },
            Plot {
                name: "trace".into(),
                kind: PlotKind::Line(LinePlot {
                    title: "Training".into(),
                    x_label: "epoch".into(),
                    y_label: "loss".into(),
                    series: vec![Series { name: "total".into(), points: vec![(1.0, 2.5), (2.0, 1.25), (3.0, 0.75)] }],
                    x_range: None,
                    y_range: None,
                }),
            },
        ],
    }
}

const GOLDEN_MD: &str = include_str!("../../tests/golden/report.md");
const GOLDEN_CSV: &str = include_str!("../../tests/golden/report.csv");
const GOLDEN_ROC: &str = include_str!("../../tests/golden/roc.svg");

#[test]
fn report_matches_golden_files() {
    let r = pinned_report();
    assert_eq!(render_markdown(&r), GOLDEN_MD);
    assert_eq!(render_csv(&r).unwrap(), GOLDEN_CSV);
    assert_eq!(render_svg(&r.plots[0]), GOLDEN_ROC);
}

#[test]
fn emitted_report_is_byte_identical_across_runs() {
    let r = pinned_report();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = emit_report(&r, a.path()).unwrap();
    let fb = emit_report(&r, b.path()).unwrap();
    assert_eq!(fa.len(), 5);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
}

#[test]
fn empty_metrics_render_undefined() {
    let r = Report {
        title: "Empty".into(),
        stages: vec![StageMetrics::new("detection only").with(EvalLevel::Image, ConfusionMatrix::default())],
        ..Report::default()
    };
    let md = render_markdown(&r);
    assert!(md.contains("| Sensitivity (%) | undefined |"));
    let rows = parse_report_csv(&render_csv(&r).unwrap()).unwrap();
    assert_eq!(rows[0].metrics, MetricSet::default());
    assert!(render_markdown(&Report::default()).contains("No confusion matrices"));
}

#[test]
fn csv_round_trips_exact_values() {
    let r = pinned_report();
    let rows = parse_report_csv(&render_csv(&r).unwrap()).unwrap();
    assert_eq!(rows.len(), 5);
    for row in rows {
        let stage = r.stages.iter().find(|s| s.stage == row.stage).unwrap();
        let cm = stage.levels[&row.level];
        assert_eq!(row.cm, cm);
        assert_eq!(row.metrics, metrics(&cm));
    }
}

#[test]
fn csv_quotes_awkward_stage_names() {
    let r = Report {
        stages: vec![StageMetrics::new("stage, \"x\"").with(EvalLevel::Rpn, ConfusionMatrix::new(1, 1, 1, 1))],
        ..Report::default()
    };
    let rows = parse_report_csv(&render_csv(&r).unwrap()).unwrap();
    assert_eq!(rows[0].stage, "stage, \"x\"");
}

/// Regenerates the golden files: `cargo test -p lesion-cascade write_golden_files -- --ignored`.
#[test]
#[ignore]
fn write_golden_files() {
    let r = pinned_report();
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    std::fs::write(dir.join("report.md"), render_markdown(&r)).unwrap();
    std::fs::write(dir.join("report.csv"), render_csv(&r).unwrap()).unwrap();
    std::fs::write(dir.join("roc.svg"), render_svg(&r.plots[0])).unwrap();
}
