//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! fails. Runs without the libtest harness so the lines are always shown.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use lesion_cascade::cascade::{
    evaluate_sequences, run_benchmark, run_sequences, split_patients, BenchmarkConfig, CascadeConfig,
    IdentityRecognizer, InferConfig,
};
use lesion_cascade::data::{generate_dataset, ClassLabel, SynthConfig, REFERENCE_SIZE};
use lesion_cascade::eval::published::{all_checks, TOLERANCE_PP};
use lesion_cascade::eval::{roc_over_iou, threshold_sweep, FrameProposals, FrameTruth};
use lesion_cascade::geometry::{
    decode_clamped, encode, generate_anchors, iou, nms_indices, AnchorSpec, BBox, BoxDelta, MatchCriterion,
};
use lesion_cascade::losses::{multitask_loss, LossConfig, MultiTaskInput};
use lesion_cascade::models::{
    Backbone, BackboneConfig, DetectionHead, DetectionHeadConfig, Detector, DetectorConfig, FpnConfig,
    RecognitionConfig, RecognitionNet, ResidualBlock, RpnHead, RpnHeadConfig,
};
use lesion_cascade::nn::gradcheck::{check_layer, numeric_gradient, numeric_param_gradient, relative_error, DEFAULT_STEP};
use lesion_cascade::nn::{
    Add, BatchNorm2d, Concat, Conv2d, GlobalAvgPool, Linear, MaxPool2d, Param, Parameterized, Relu, RoiPool, Softmax,
    Tensor, UpsampleNearest,
};
use lesion_cascade::seed::stream_rng;
use rand::Rng;

const GRAD_TOL: f64 = 1e-4;
const GRAD_INSTANCES: u64 = 5;
const ROUND_TRIP_TOL: f64 = 1e-6;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn within(limit: Duration, elapsed: Duration) -> bool {
    elapsed < limit
}

type Rng8 = rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], r: &mut Rng8) -> Tensor {
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(u, v)| u * v).sum()
}

fn paper_tables() -> Outcome {
    let start = Instant::now();
    let checks = all_checks();
    let elapsed = start.elapsed();
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.line()).collect();
    let ok = failed.is_empty() && within(Duration::from_secs(1), elapsed);
    let detail = if failed.is_empty() {
        format!("{} metric/total checks within {TOLERANCE_PP} pp in {elapsed:.2?}", checks.len())
    } else {
        failed.join("; ")
    };
    outcome(ok, detail)
}

fn backbone_cfg(side: usize) -> BackboneConfig {
    BackboneConfig { in_channels: 3, base_channels: 2, stem_stride: 2, stage_block_counts: vec![1, 1], input_size: (side, side) }
}

struct BackboneRpn {
    backbone: Backbone,
    rpn: RpnHead,
}

impl Parameterized for BackboneRpn {
    fn named_params(&self) -> Vec<(String, &Param)> {
        let mut v = self.backbone.named_params();
        v.extend(self.rpn.named_params());
        v
    }
    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut v = self.backbone.named_params_mut();
        v.extend(self.rpn.named_params_mut());
        v
    }
}

/// Fresh layers have zero biases, which parks every unit with an all-zero
/// receptive field exactly on a ReLU kink; random biases move the check
/// point off it.
fn randomize_biases<P: Parameterized + ?Sized>(model: &mut P, r: &mut Rng8) {
    for (name, p) in model.named_params_mut() {
        if name.ends_with("bias") {
            for v in p.value.data_mut() {
                *v = r.random_range(-0.5..0.5);
            }
        }
    }
}

/// Worst relative error of the classification + regression loss through a
/// tiny backbone and RPN, over parameters and input pixels.
fn composed_loss_error(seed: u64) -> lesion_cascade::Result<f64> {
    let mut r = stream_rng(seed, &[4]);
    let mut net = BackboneRpn {
        backbone: Backbone::new(backbone_cfg(16), &mut r)?,
        rpn: RpnHead::new(8, RpnHeadConfig { intermediate_conv_count: 1, channels: 3, anchors_per_position: 2 }, &mut r)?,
    };
    // larger output weights keep both loss terms well above rounding noise
    net.rpn.cls.weight.value.scale(30.0);
    net.rpn.reg.weight.value.scale(300.0);
    randomize_biases(&mut net, &mut r);
    let image = rand_tensor(&[1, 3, 16, 16], &mut r);
    let n = 2 * 2 * 2;
    let labels: Vec<usize> = (0..n).map(|i| (i % 3 == 0) as usize).collect();
    let targets: Vec<BoxDelta> = (0..n)
        .map(|_| BoxDelta {
            dx: r.random_range(-0.5..0.5),
            dy: r.random_range(-0.5..0.5),
            dw: r.random_range(-0.5..0.5),
            dh: r.random_range(-0.5..0.5),
        })
        .collect();
    let cfg = LossConfig::default();
    let loss_of = |net: &mut BackboneRpn, img: &Tensor| -> lesion_cascade::Result<f64> {
        let f = net.backbone.forward(img)?;
        let (o, d) = net.rpn.forward(f.last().expect("stage"))?;
        let m = multitask_loss(&MultiTaskInput { logits: &o, labels: &labels, deltas: &d, target_deltas: &targets }, &cfg)?;
        Ok(m.cls + m.reg)
    };
    net.zero_grad();
    let f = net.backbone.forward(&image)?;
    let (o, d) = net.rpn.forward(f.last().expect("stage"))?;
    let m = multitask_loss(&MultiTaskInput { logits: &o, labels: &labels, deltas: &d, target_deltas: &targets }, &cfg)?;
    let g = net.rpn.backward(&m.grad_logits, &m.grad_deltas)?;
    let dx = net.backbone.backward(vec![None, Some(g)])?;
    let analytic = net.flat_grads();
    let numeric = numeric_param_gradient(&mut net, DEFAULT_STEP, |n| loss_of(n, &image))?;
    let nx = numeric_gradient(image.data(), DEFAULT_STEP, |v| loss_of(&mut net, &Tensor::new(vec![1, 3, 16, 16], v.to_vec())?))?;
    Ok(relative_error(&analytic, &numeric).max(relative_error(dx.data(), &nx)))
}

/// Worst relative error per layer kind over the random instances.
fn layer_errors(seed: u64) -> lesion_cascade::Result<Vec<(&'static str, f64)>> {
    let mut r = stream_rng(seed, &[1]);
    let x = rand_tensor(&[2, 3, 6, 6], &mut r);
    let mut out = vec![
        ("conv", check_layer(&mut Conv2d::new(3, 4, 3, 1, 1, &mut r), &x, &mut r)?.max_error()),
        ("strided conv", check_layer(&mut Conv2d::new(3, 2, 3, 2, 1, &mut r), &x, &mut r)?.max_error()),
        ("relu", check_layer(&mut Relu::new(), &x, &mut r)?.max_error()),
        ("max pool", check_layer(&mut MaxPool2d::new(2, 2), &x, &mut r)?.max_error()),
        ("global avg pool", check_layer(&mut GlobalAvgPool::new(), &x, &mut r)?.max_error()),
        ("linear", check_layer(&mut Linear::new(108, 4, &mut r), &x, &mut r)?.max_error()),
        ("upsample", check_layer(&mut UpsampleNearest::new(2), &x, &mut r)?.max_error()),
        ("batch norm", check_layer(&mut BatchNorm2d::new(3), &x, &mut r)?.max_error()),
    ];
    let logits = rand_tensor(&[3, 5], &mut r);
    out.push(("softmax", check_layer(&mut Softmax::new(), &logits, &mut r)?.max_error()));

    let mut block = ResidualBlock::new(3, 4, 2, &mut r);
    randomize_biases(&mut block, &mut r);
    let proj = rand_tensor(&block.forward(&x)?.shape().to_vec(), &mut r);
    block.zero_grad();
    block.forward(&x)?;
    let dx = block.backward(&proj)?;
    let analytic = block.flat_grads();
    let numeric = numeric_param_gradient(&mut block, DEFAULT_STEP, |b| Ok(dot(&b.forward(&x)?, &proj)))?;
    let nx = numeric_gradient(x.data(), DEFAULT_STEP, |v| Ok(dot(&block.forward(&Tensor::new(x.shape().to_vec(), v.to_vec())?)?, &proj)))?;
    out.push(("residual block", relative_error(&analytic, &numeric).max(relative_error(dx.data(), &nx))));

    let a = rand_tensor(&[1, 2, 3, 3], &mut r);
    let b = rand_tensor(&[1, 3, 3, 3], &mut r);
    let proj = rand_tensor(&[1, 5, 3, 3], &mut r);
    let mut cat = Concat::new();
    cat.forward(&[&a, &b])?;
    let grads = cat.backward(&proj)?;
    let na = numeric_gradient(a.data(), DEFAULT_STEP, |v| Ok(dot(&Concat::new().forward(&[&Tensor::new(a.shape().to_vec(), v.to_vec())?, &b])?, &proj)))?;
    let nb = numeric_gradient(b.data(), DEFAULT_STEP, |v| Ok(dot(&Concat::new().forward(&[&a, &Tensor::new(b.shape().to_vec(), v.to_vec())?])?, &proj)))?;
    out.push(("concat", relative_error(grads[0].data(), &na).max(relative_error(grads[1].data(), &nb))));

    let c = rand_tensor(&[1, 2, 3, 3], &mut r);
    let proj = rand_tensor(&[1, 2, 3, 3], &mut r);
    let mut add = Add::new();
    add.forward(&a, &c)?;
    let (ga, gc) = add.backward(&proj)?;
    let na = numeric_gradient(a.data(), DEFAULT_STEP, |v| Ok(dot(&Add::new().forward(&Tensor::new(a.shape().to_vec(), v.to_vec())?, &c)?, &proj)))?;
    let nc = numeric_gradient(c.data(), DEFAULT_STEP, |v| Ok(dot(&Add::new().forward(&a, &Tensor::new(c.shape().to_vec(), v.to_vec())?)?, &proj)))?;
    out.push(("add", relative_error(ga.data(), &na).max(relative_error(gc.data(), &nc))));

    let f = rand_tensor(&[1, 2, 6, 6], &mut r);
    let rois = [BBox::new(0.0, 0.0, 20.0, 12.0)?, BBox::new(4.0, 8.0, 23.0, 24.0)?];
    let mut pool = RoiPool::new(2, 0.25);
    let y = pool.forward(&f, &rois)?;
    let proj = rand_tensor(y.shape(), &mut r);
    let g = pool.backward(&proj)?;
    let n = numeric_gradient(f.data(), DEFAULT_STEP, |v| Ok(dot(&RoiPool::new(2, 0.25).forward(&Tensor::new(f.shape().to_vec(), v.to_vec())?, &rois)?, &proj)))?;
    out.push(("roi pool", relative_error(g.data(), &n)));

    let cfg = DetectionHeadConfig { pool_size: 2, channels: 3, block_count: 1, hidden: 5, ..Default::default() };
    let mut head = DetectionHead::new(4, 8, cfg, &mut r)?;
    randomize_biases(&mut head, &mut r);
    let feat = rand_tensor(&[1, 4, 8, 8], &mut r);
    let rois = [BBox::new(3.0, 5.0, 40.0, 33.0)?, BBox::new(12.0, 0.0, 64.0, 50.0)?];
    let pc = rand_tensor(&[2, 7], &mut r);
    let pr = rand_tensor(&[2, 4], &mut r);
    let head_loss = |h: &mut DetectionHead, f: &Tensor| -> lesion_cascade::Result<f64> {
        let (c, d) = h.forward(f, &rois)?.expect("rois");
        Ok(dot(&c, &pc) + dot(&d, &pr))
    };
    head.zero_grad();
    head.forward(&feat, &rois)?;
    let df = head.backward(&pc, &pr)?;
    let analytic = head.flat_grads();
    let numeric = numeric_param_gradient(&mut head, DEFAULT_STEP, |h| head_loss(h, &feat))?;
    let nf = numeric_gradient(feat.data(), DEFAULT_STEP, |v| head_loss(&mut head, &Tensor::new(vec![1, 4, 8, 8], v.to_vec())?))?;
    out.push(("detection head", relative_error(&analytic, &numeric).max(relative_error(df.data(), &nf))));

    let rec = RecognitionConfig { backbone: backbone_cfg(16), fpn: FpnConfig { lateral_channels: 3, levels: 2 }, patch_size: 16 };
    let mut net = RecognitionNet::new(rec, &mut r)?;
    randomize_biases(&mut net, &mut r);
    let x = rand_tensor(&[2, 3, 16, 16], &mut r);
    let proj = rand_tensor(&[2, 6], &mut r);
    net.zero_grad();
    net.forward(&x)?;
    let dx = net.backward(&proj)?;
    let analytic = net.flat_grads();
    let numeric = numeric_param_gradient(&mut net, DEFAULT_STEP, |n| Ok(dot(&n.forward(&x)?, &proj)))?;
    let nx = numeric_gradient(x.data(), DEFAULT_STEP, |v| Ok(dot(&net.forward(&Tensor::new(x.shape().to_vec(), v.to_vec())?)?, &proj)))?;
    out.push(("recognition net", relative_error(&analytic, &numeric).max(relative_error(dx.data(), &nx))));

    out.push(("composed detection loss", composed_loss_error(seed)?));
    Ok(out)
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    for seed in 0..GRAD_INSTANCES {
        match layer_errors(seed) {
            Ok(errs) => {
                for (name, e) in errs {
                    match worst.iter_mut().find(|(n, _)| *n == name) {
                        Some(w) => w.1 = w.1.max(e),
                        None => worst.push((name, e)),
                    }
                }
            }
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        }
    }
    let elapsed = start.elapsed();
    let (name, max) = worst.iter().copied().fold(("none", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let bad: Vec<String> = worst.iter().filter(|(_, e)| !(*e < GRAD_TOL)).map(|(n, e)| format!("{n} {e:.2e}")).collect();
    let ok = bad.is_empty() && within(Duration::from_secs(120), elapsed);
    let detail = format!(
        "{} kinds x {GRAD_INSTANCES} instances, worst {name} {max:.2e} (limit {GRAD_TOL:e}) in {elapsed:.2?}{}",
        worst.len(),
        if bad.is_empty() { String::new() } else { format!("; over limit: {}", bad.join(", ")) }
    );
    outcome(ok, detail)
}

fn rank(boxes: &[BBox], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .total_cmp(&scores[i])
            .then(boxes[i].x_min.total_cmp(&boxes[j].x_min))
            .then(boxes[i].y_min.total_cmp(&boxes[j].y_min))
            .then(i.cmp(&j))
    });
    order
}

/// Quadratic reference: all pairwise IoUs up front, then each surviving box
/// strikes every lower-ranked box it overlaps above the threshold.
fn brute_nms(boxes: &[BBox], scores: &[f64], thr: f64) -> Vec<usize> {
    let n = boxes.len();
    let overlap: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| iou(&boxes[i], &boxes[j])).collect()).collect();
    let order = rank(boxes, scores);
    let mut struck = vec![false; n];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if struck[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[pos + 1..] {
            struck[j] |= overlap[i][j] > thr;
        }
    }
    keep
}

fn nms_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = stream_rng(42, &[3]);
    let mut mismatches = 0;
    let mut largest = 0;
    for _ in 0..200 {
        let n = r.random_range(0..=50);
        largest = largest.max(n);
        let boxes: Vec<BBox> = (0..n)
            .map(|_| {
                let (x, y) = (r.random_range(0.0..80.0), r.random_range(0.0..80.0));
                BBox::new(x, y, x + r.random_range(1.0..40.0), y + r.random_range(1.0..40.0)).expect("box")
            })
            .collect();
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..6) as f64 / 5.0).collect();
        let thr = r.random_range(0.0..=1.0);
        match nms_indices(&boxes, &scores, thr) {
            Ok(keep) if keep == brute_nms(&boxes, &scores, thr) => {}
            _ => mismatches += 1,
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && within(Duration::from_secs(10), elapsed),
        format!("{mismatches}/200 instances differ (up to {largest} boxes) in {elapsed:.2?}"),
    )
}

fn round_trip() -> Outcome {
    let mut r = stream_rng(42, &[4]);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let mut rand_box = || {
            let (x, y) = (r.random_range(-50.0..200.0), r.random_range(-50.0..200.0));
            BBox::new(x, y, x + r.random_range(1.0..150.0), y + r.random_range(1.0..150.0)).expect("box")
        };
        let (anchor, gt) = (rand_box(), rand_box());
        let Ok(delta) = encode(&anchor, &gt) else { return outcome(false, "encode rejected a valid pair") };
        let back = decode_clamped(&anchor, &delta, f64::INFINITY);
        for (p, q) in [(back.x_min, gt.x_min), (back.y_min, gt.y_min), (back.x_max, gt.x_max), (back.y_max, gt.y_max)] {
            worst = worst.max((p - q).abs());
        }
    }
    outcome(worst < ROUND_TRIP_TOL, format!("worst coordinate error {worst:.2e} over 1000 pairs (limit {ROUND_TRIP_TOL:e})"))
}

fn fpr_trend() -> Outcome {
    let start = Instant::now();
    let result = match run_benchmark(&BenchmarkConfig::default().with_seed(42)) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("benchmark failed: {e}")),
    };
    let elapsed = start.elapsed();
    let base = lesion_cascade::eval::metrics(&result.detection_only.image);
    let casc = lesion_cascade::eval::metrics(&result.cascade.image);
    let (Some(f0), Some(f1), Some(s0), Some(s1)) =
        (base.false_positive_rate, casc.false_positive_rate, base.sensitivity, casc.sensitivity)
    else {
        return outcome(false, "image-level rates undefined on the test split");
    };
    let drop_pp = (s0 - s1) * 100.0;
    let ok = f1 < f0 && drop_pp <= 1.0 && within(Duration::from_secs(30 * 60), elapsed);
    outcome(
        ok,
        format!(
            "image FPR {:.2}% -> {:.2}%, sensitivity {:.2}% -> {:.2}% (drop {drop_pp:.2} pp, limit 1) in {elapsed:.1?}",
            f0 * 100.0,
            f1 * 100.0,
            s0 * 100.0,
            s1 * 100.0
        ),
    )
}

fn identity_equivalence() -> Outcome {
    let synth = SynthConfig { patients_per_category: 3, frames_per_patient: 10, ..SynthConfig::default() };
    let run = || -> lesion_cascade::Result<(String, String, String, String, usize)> {
        let patients = generate_dataset(&synth)?;
        let (_, test) = split_patients(patients, 1, 42)?;
        let detector = Detector::new(DetectorConfig::default(), &mut stream_rng(42, &[6]))?;
        let cfg = CascadeConfig { inference: InferConfig { score_threshold: 0.0, ..Default::default() }, ..Default::default() };
        let a = run_sequences::<IdentityRecognizer>(&detector, None, &test, &cfg)?;
        let b = run_sequences(&detector, Some(&IdentityRecognizer), &test, &cfg)?;
        let count = a.iter().flat_map(|s| &s.frames).map(|f| f.detections.len()).sum();
        let ma = evaluate_sequences(&a, &test, &cfg)?;
        let mb = evaluate_sequences(&b, &test, &cfg)?;
        Ok((json(&a), json(&b), json(&ma), json(&mb), count))
    };
    match run() {
        Ok((a, b, ma, mb, count)) => outcome(
            a == b && ma == mb && count > 0,
            format!("{count} detections; detections identical: {}, metrics identical: {}", a == b, ma == mb),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

fn anchor_fit() -> Outcome {
    let synth = SynthConfig::default();
    let patients = match generate_dataset(&synth) {
        Ok(p) => p,
        Err(e) => return outcome(false, e.to_string()),
    };
    let scale = REFERENCE_SIZE / synth.image_size as f64;
    let side = REFERENCE_SIZE as usize;
    let grid = match generate_anchors((side, side), &AnchorSpec::lesion_default()) {
        Ok(g) => g,
        Err(e) => return outcome(false, e.to_string()),
    };
    let band = 64.0..=128.0;
    let (mut sides, mut in_band, mut boxes, mut fitted) = (0usize, 0usize, 0usize, 0usize);
    for o in patients.iter().flat_map(|p| &p.frames).flat_map(|f| &f.objects) {
        if o.label != ClassLabel::SpaceOccupying {
            continue;
        }
        let b = BBox::new(o.bbox.x_min * scale, o.bbox.y_min * scale, o.bbox.x_max * scale, o.bbox.y_max * scale)
            .expect("scaled box");
        let (w, h) = (b.width(), b.height());
        sides += 2;
        in_band += band.contains(&w) as usize + band.contains(&h) as usize;
        if band.contains(&w) && band.contains(&h) {
            boxes += 1;
            fitted += (grid.anchors.iter().map(|a| iou(a, &b)).fold(0.0, f64::max) >= 0.5) as usize;
        }
    }
    let side_frac = in_band as f64 / sides.max(1) as f64;
    let fit_frac = fitted as f64 / boxes.max(1) as f64;
    outcome(
        sides > 0 && boxes > 0 && side_frac >= 0.8 && fit_frac >= 0.95,
        format!(
            "{:.1}% of {sides} sides in band (need 80%), best anchor IoU >= 0.5 for {:.1}% of {boxes} in-band boxes (need 95%)",
            side_frac * 100.0,
            fit_frac * 100.0
        ),
    )
}

fn roc_sanity() -> Outcome {
    let synth = SynthConfig { patients_per_category: 2, frames_per_patient: 10, ..SynthConfig::default() };
    let patients = match generate_dataset(&synth) {
        Ok(p) => p,
        Err(e) => return outcome(false, e.to_string()),
    };
    let truth: Vec<FrameTruth> = patients.iter().flat_map(|p| &p.frames).map(FrameTruth::from).collect();
    let perfect: Vec<FrameProposals> = truth
        .iter()
        .map(|t| FrameProposals {
            frame_id: t.frame_id.clone(),
            boxes: t.objects.iter().filter(|o| o.label.is_positive()).map(|o| o.bbox).collect(),
        })
        .collect();
    // jittered copies of every object plus clutter
    let mut r = stream_rng(42, &[8]);
    let noisy: Vec<FrameProposals> = truth
        .iter()
        .map(|t| {
            let mut boxes = Vec::new();
            for o in &t.objects {
                let j = |r: &mut Rng8| r.random_range(-4.0..4.0);
                let (x, y) = (o.bbox.x_min + j(&mut r), o.bbox.y_min + j(&mut r));
                boxes.push(BBox::from_center_size(x + o.bbox.width() / 2.0, y + o.bbox.height() / 2.0, o.bbox.width(), o.bbox.height()));
            }
            for _ in 0..r.random_range(0..4) {
                let (x, y) = (r.random_range(0.0..50.0), r.random_range(0.0..50.0));
                boxes.push(BBox::new(x, y, x + r.random_range(4.0..14.0), y + r.random_range(4.0..14.0)).expect("box"));
            }
            FrameProposals { frame_id: t.frame_id.clone(), boxes }
        })
        .collect();
    let sweep = threshold_sweep(21);
    let criterion = MatchCriterion::default();
    let (Ok(p), Ok(n)) = (roc_over_iou(&perfect, &truth, &criterion, &sweep), roc_over_iou(&noisy, &truth, &criterion, &sweep))
    else {
        return outcome(false, "ROC computation failed");
    };
    // TPR may only fall as the threshold rises
    let monotone = |c: &lesion_cascade::eval::RocCurve| {
        c.points.windows(2).all(|w| w[1].threshold > w[0].threshold && w[1].tpr <= w[0].tpr + 1e-12)
    };
    let ok = monotone(&p) && monotone(&n) && (0.0..=1.0).contains(&n.auc) && p.auc == 1.0;
    outcome(ok, format!("jittered AUC {:.4}, perfect AUC {:.4}, TPR non-increasing in threshold: {}", n.auc, p.auc, monotone(&p) && monotone(&n)))
}

fn cli(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lesion-cascade"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

const SMALL_CONFIG: &str = r#"{
  "synth": {"patients_per_category": 3, "frames_per_patient": 8},
  "test_patients_per_category": 1,
  "cascade": {"detection": {"epochs": 2}, "recognition": {"epochs": 2}}
}"#;

/// Every command of the pipeline into `root`, returning each manifest.
fn pipeline(root: &Path) -> Result<Vec<(String, String)>, String> {
    fs::write(root.join("config.json"), SMALL_CONFIG).map_err(|e| e.to_string())?;
    let steps: [&[&str]; 6] = [
        &["gen-data", "--out", "data"],
        &["train", "--stage", "detect", "--data", "data", "--out", "det"],
        &["train", "--stage", "recognize", "--data", "data", "--init", "det/detector.ckpt", "--out", "rec"],
        &["infer", "--data", "data", "--detector", "det/detector.ckpt", "--recognizer", "rec/recognizer.ckpt", "--overlays", "--out", "inf"],
        &["eval", "--detections", "inf/detections.jsonl", "--data", "data", "--out", "ev"],
        &["repro-tables", "--out", "rep"],
    ];
    let mut manifests = Vec::new();
    for step in steps {
        let mut args = vec!["--config", "config.json", "--seed", "42"];
        args.extend_from_slice(step);
        cli(&args, root)?;
        let dir = args[args.iter().position(|a| *a == "--out").expect("out") + 1];
        let text = fs::read_to_string(root.join(dir).join("manifest.json")).map_err(|e| e.to_string())?;
        manifests.push((dir.to_string(), text));
    }
    Ok(manifests)
}

fn determinism() -> Outcome {
    let run = || -> Result<Vec<(String, String)>, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        pipeline(dir.path())
    };
    match (run(), run()) {
        (Ok(a), Ok(b)) => {
            let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
            let artifacts: usize = a
                .iter()
                .map(|(_, m)| serde_json::from_str::<serde_json::Value>(m).map(|v| v["artifacts"].as_object().map_or(0, |o| o.len())).unwrap_or(0))
                .sum();
            outcome(
                differing.is_empty(),
                if differing.is_empty() {
                    format!("{} manifests, {artifacts} artifact checksums identical across two runs", a.len())
                } else {
                    format!("manifests differ for {}", differing.join(", "))
                },
            )
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, e),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("published tables recomputed from confusion matrices", paper_tables),
        ("analytic gradients match finite differences", gradients),
        ("greedy NMS equals brute-force reference", nms_oracle),
        ("box encode/decode round trip", round_trip),
        ("cascade lowers image-level FPR on the seed-42 benchmark", fpr_trend),
        ("identity recognizer reproduces detection-only output", identity_equivalence),
        ("lesion sizes fit the two square anchors", anchor_fit),
        ("IoU-sweep ROC sanity", roc_sanity),
        ("same seed gives identical manifests", determinism),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| outcome(false, "panicked"));
        failures += !result.passed as usize;
        println!("{} {}. {name}: {}", if result.passed { "PASS" } else { "FAIL" }, i + 1, result.detail);
    }
    if failures > 0 {
        println!("{failures} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
