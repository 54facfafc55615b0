use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::{generate_anchors, AnchorSpec, BBox, BoxDelta};
use crate::losses::{multitask_loss, LossConfig, MultiTaskInput};
use crate::nn::gradcheck::{numeric_gradient, numeric_param_gradient, relative_error, DEFAULT_STEP};
use crate::nn::{softmax_rows, Layer, Parameterized, Relu, RoiPool, Tensor};

const TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_tensor(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

fn backbone_cfg(side: usize, stem_stride: usize, stages: usize) -> BackboneConfig {
    BackboneConfig {
        in_channels: 3,
        base_channels: 2,
        stem_stride,
        stage_block_counts: vec![1; stages],
        input_size: (side, side),
    }
}

#[test]
fn deepest_map_has_budget_stride() {
    let mut r = rng(0);
    let cfg = backbone_cfg(64, 2, 3);
    assert_eq!(cfg.stride_budget(), 16);
    let mut b = Backbone::new(cfg, &mut r).unwrap();
    let feats = b.forward(&rand_tensor(&[1, 3, 64, 64], &mut r)).unwrap();
    assert_eq!(feats.len(), 3);
    assert_eq!(feats[2].shape(), &[1, 16, 4, 4]);
    assert_eq!(feats[0].shape(), &[1, 4, 16, 16]);
}

#[test]
fn indivisible_input_is_config_error() {
    assert!(matches!(backbone_cfg(60, 2, 3).validate(), Err(crate::Error::Config(_))));
    let mut r = rng(0);
    let mut b = Backbone::new(backbone_cfg(64, 2, 3), &mut r).unwrap();
    assert!(b.forward(&Tensor::zeros(&[1, 3, 40, 40])).is_err());
}

#[test]
fn zero_image_gives_zero_features() {
    let mut r = rng(1);
    let mut b = Backbone::new(backbone_cfg(32, 2, 2), &mut r).unwrap();
    for f in b.forward(&Tensor::zeros(&[1, 3, 32, 32])).unwrap() {
        assert!(f.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn residual_block_is_shortcut_plus_branch() {
    let mut r = rng(2);
    let mut block = ResidualBlock::new(3, 3, 1, &mut r);
    assert!(block.shortcut.is_none());
    let x = rand_tensor(&[1, 3, 5, 5], &mut r);
    let mid = Relu::new().forward(&block.conv1.clone().forward(&x).unwrap()).unwrap();
    let branch = block.conv2.clone().forward(&mid).unwrap();
    let y = block.forward(&x).unwrap();
    for ((o, s), b) in y.data().iter().zip(x.data()).zip(branch.data()) {
        assert!((o - (s + b).max(0.0)).abs() < 1e-12);
    }
    // silencing the branch leaves relu(shortcut)
    block.conv2.weight.value.fill(0.0);
    let y = block.forward(&x).unwrap();
    for (o, s) in y.data().iter().zip(x.data()) {
        assert_eq!(*o, s.max(0.0));
    }
}

#[test]
fn shape_contracts_across_configs() {
    let mut r = rng(3);
    for side in [32usize, 64, 96, 128] {
        for spec in [
            AnchorSpec { scales: vec![16.0], ratios: vec![1.0], stride: 8 },
            AnchorSpec { scales: vec![16.0, 32.0], ratios: vec![1.0], stride: 8 },
            AnchorSpec::faster_rcnn_default().scaled(side as f64 / 512.0, 8),
        ] {
            let a = spec.anchors_per_position();
            let cfg = DetectorConfig {
                backbone: BackboneConfig { base_channels: 2, ..backbone_cfg(side, 2, 2) },
                rpn: RpnHeadConfig { intermediate_conv_count: 1, channels: 4, anchors_per_position: a },
                head: DetectionHeadConfig { pool_size: 2, channels: 4, block_count: 1, hidden: 4, ..Default::default() },
                anchors: spec,
                proposals: ProposalConfig::default(),
            };
            let mut det = Detector::new(cfg, &mut r).unwrap();
            let img = rand_tensor(&[1, 3, side, side], &mut r);
            let feats = det.backbone.forward(&img).unwrap();
            let (obj, del) = det.rpn.forward(feats.last().unwrap()).unwrap();
            let positions = (side / 8) * (side / 8);
            assert_eq!(obj.shape(), &[positions * a, 2]);
            assert_eq!(del.shape(), &[positions * a, 4]);
            assert_eq!(obj.shape()[0], det.grid.len());
            let out = det.detect(&img, 0.0).unwrap();
            assert!(out.proposals.len() <= det.config.proposals.post_nms_top_n);
        }
    }
}

#[test]
fn anchor_mismatch_is_config_error() {
    let mut r = rng(4);
    let mut cfg = DetectorConfig::desk(64);
    cfg.anchors.stride = 16;
    assert!(matches!(Detector::new(cfg, &mut r), Err(crate::Error::Config(_))));
    let mut cfg = DetectorConfig::desk(64);
    cfg.rpn.anchors_per_position = 3;
    assert!(matches!(Detector::new(cfg, &mut r), Err(crate::Error::Config(_))));
}

#[test]
fn rpn_rows_follow_anchor_order() {
    let mut r = rng(5);
    let cfg = RpnHeadConfig { intermediate_conv_count: 0, channels: 3, anchors_per_position: 2 };
    let mut head = RpnHead::new(3, cfg, &mut r).unwrap();
    let feat = rand_tensor(&[1, 3, 4, 4], &mut r);
    let (obj, del) = head.forward(&feat).unwrap();
    assert_eq!(obj.shape(), &[32, 2]);
    let raw_cls = head.cls.clone().forward(&feat).unwrap();
    let raw_reg = head.reg.clone().forward(&feat).unwrap();
    for p in 0..16 {
        for a in 0..2 {
            for k in 0..2 {
                assert_eq!(obj.row(p * 2 + a)[k], raw_cls.data()[(a * 2 + k) * 16 + p]);
            }
            for j in 0..4 {
                assert_eq!(del.row(p * 2 + a)[j], raw_reg.data()[(a * 4 + j) * 16 + p]);
            }
        }
    }
    for row in softmax_rows(&obj).unwrap().data().chunks(2) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let (obj2, _) = head.forward(&Tensor::zeros(&[1, 3, 4, 4])).unwrap();
    assert_eq!(obj2.shape(), obj.shape());
}

fn grid_64() -> crate::geometry::AnchorGrid {
    generate_anchors((64, 64), &AnchorSpec { scales: vec![16.0, 32.0], ratios: vec![1.0], stride: 8 }).unwrap()
}

#[test]
fn equal_scores_yield_clipped_anchors() {
    let grid = grid_64();
    let n = grid.len();
    let cfg = ProposalConfig { pre_nms_top_n: n, post_nms_top_n: n, nms_iou: None, ..Default::default() };
    let props = propose(&Tensor::zeros(&[n, 2]), &Tensor::zeros(&[n, 4]), &grid, &cfg).unwrap();
    let mut expected: Vec<(usize, BBox)> = grid.clipped().into_iter().enumerate().collect();
    expected.sort_by(|a, b| {
        a.1.x_min.total_cmp(&b.1.x_min).then(a.1.y_min.total_cmp(&b.1.y_min)).then(a.0.cmp(&b.0))
    });
    assert_eq!(props.len(), n);
    for (p, (i, b)) in props.iter().zip(&expected) {
        assert_eq!(p.anchor_index, *i);
        assert_eq!(p.bbox, *b);
        assert_eq!(p.score, 0.5);
    }
}

#[test]
fn single_survivor_is_top_scored() {
    let mut r = rng(6);
    let grid = grid_64();
    let n = grid.len();
    let obj = rand_tensor(&[n, 2], &mut r);
    let del = Tensor::from_fn(&[n, 4], |_| r.random_range(-0.2..0.2));
    let cfg = ProposalConfig { post_nms_top_n: 1, ..Default::default() };
    let props = propose(&obj, &del, &grid, &cfg).unwrap();
    assert_eq!(props.len(), 1);
    let probs = softmax_rows(&obj).unwrap();
    let best = (0..n).map(|i| probs.row(i)[1]).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(props[0].score, best);
}

/// Straight-line restatement of proposal generation.
fn reference_propose(obj: &Tensor, del: &Tensor, anchors: &[BBox], side: f64, cfg: &ProposalConfig) -> Vec<(usize, [f64; 4], f64)> {
    let mut cands = Vec::new();
    for (i, a) in anchors.iter().enumerate() {
        let (l0, l1) = (obj.row(i)[0], obj.row(i)[1]);
        let score = 1.0 / (1.0 + (l0 - l1).exp());
        let d = del.row(i);
        let (aw, ah) = (a.x_max - a.x_min, a.y_max - a.y_min);
        let (acx, acy) = (a.x_min + aw / 2.0, a.y_min + ah / 2.0);
        let cx = acx + d[0] * aw;
        let cy = acy + d[1] * ah;
        let w = aw * d[2].min(cfg.delta_clamp).exp();
        let h = ah * d[3].min(cfg.delta_clamp).exp();
        let b = [
            (cx - w / 2.0).clamp(0.0, side),
            (cy - h / 2.0).clamp(0.0, side),
            (cx + w / 2.0).clamp(0.0, side),
            (cy + h / 2.0).clamp(0.0, side),
        ];
        if b[2] > b[0] && b[3] > b[1] {
            cands.push((i, b, score));
        }
    }
    // selection sort by (score desc, x_min, y_min, index)
    let mut ordered = Vec::new();
    while !cands.is_empty() {
        let mut best = 0;
        for j in 1..cands.len() {
            let (c, b) = (&cands[j], &cands[best]);
            let better = c.2 > b.2 || (c.2 == b.2 && (c.1[0] < b.1[0] || (c.1[0] == b.1[0] && c.1[1] < b.1[1])));
            if better {
                best = j;
            }
        }
        ordered.push(cands.remove(best));
    }
    ordered.truncate(cfg.pre_nms_top_n);
    let mut kept: Vec<(usize, [f64; 4], f64)> = Vec::new();
    for c in ordered {
        let area = |b: &[f64; 4]| (b[2] - b[0]) * (b[3] - b[1]);
        let suppressed = cfg.nms_iou.is_some_and(|t| {
            kept.iter().any(|k| {
                let iw = (k.1[2].min(c.1[2]) - k.1[0].max(c.1[0])).max(0.0);
                let ih = (k.1[3].min(c.1[3]) - k.1[1].max(c.1[1])).max(0.0);
                let inter = iw * ih;
                inter / (area(&k.1) + area(&c.1) - inter) > t
            })
        });
        if !suppressed {
            kept.push(c);
        }
    }
    kept.truncate(cfg.post_nms_top_n);
    kept
}

#[test]
fn propose_matches_reference() {
    let grid = grid_64();
    let n = grid.len();
    for seed in 0..20 {
        let mut r = rng(100 + seed);
        let obj = Tensor::from_fn(&[n, 2], |_| r.random_range(-3.0..3.0));
        let del = Tensor::from_fn(&[n, 4], |_| r.random_range(-1.5..1.5));
        let cfg = ProposalConfig {
            pre_nms_top_n: r.random_range(10..n),
            post_nms_top_n: r.random_range(1..40),
            nms_iou: if seed % 3 == 0 { None } else { Some(r.random_range(0.3..0.8)) },
            ..Default::default()
        };
        let got = propose(&obj, &del, &grid, &cfg).unwrap();
        let want = reference_propose(&obj, &del, &grid.anchors, 64.0, &cfg);
        assert_eq!(got.len(), want.len(), "seed {seed}");
        for (g, w) in got.iter().zip(&want) {
            assert_eq!(g.anchor_index, w.0);
            let b = [g.bbox.x_min, g.bbox.y_min, g.bbox.x_max, g.bbox.y_max];
            for (x, y) in b.iter().zip(&w.1) {
                assert!((x - y).abs() < 1e-9);
            }
            assert!((g.score - w.2).abs() < 1e-12);
        }
    }
}

fn small_head(r: &mut ChaCha8Rng) -> DetectionHead {
    let cfg = DetectionHeadConfig { pool_size: 2, channels: 3, block_count: 1, hidden: 5, ..Default::default() };
    DetectionHead::new(4, 8, cfg, r).unwrap()
}

#[test]
fn head_outputs() {
    let mut r = rng(7);
    let mut head = small_head(&mut r);
    let feat = rand_tensor(&[1, 4, 8, 8], &mut r);
    assert!(head.forward(&feat, &[]).unwrap().is_none());
    let roi = BBox::new(3.0, 5.0, 40.0, 33.0).unwrap();
    let other = BBox::new(10.0, 10.0, 60.0, 60.0).unwrap();
    let (cls, reg) = head.forward(&feat, &[roi, other, roi]).unwrap().unwrap();
    assert_eq!(cls.shape(), &[3, 7]);
    assert_eq!(reg.shape(), &[3, 4]);
    assert_eq!(cls.row(0), cls.row(2));
    assert_eq!(reg.row(0), reg.row(2));

    let mut pool = RoiPool::new(3, 1.0 / 8.0);
    let pooled = pool.forward(&Tensor::full(&[1, 4, 8, 8], 2.5), &[roi, other]).unwrap();
    assert!(pooled.data().iter().all(|&v| v == 2.5));
}

#[test]
fn binary_head_has_two_classes() {
    let mut r = rng(8);
    let cfg = DetectionHeadConfig { pool_size: 2, channels: 3, block_count: 0, hidden: 5, label_mode: HeadLabelMode::Binary, ..Default::default() };
    let mut head = DetectionHead::new(4, 8, cfg, &mut r).unwrap();
    let (cls, _) = head.forward(&rand_tensor(&[1, 4, 8, 8], &mut r), &[BBox::new(0.0, 0.0, 30.0, 30.0).unwrap()]).unwrap().unwrap();
    assert_eq!(cls.shape(), &[1, 2]);
}

fn rec_cfg() -> RecognitionConfig {
    RecognitionConfig {
        backbone: backbone_cfg(16, 2, 2),
        fpn: FpnConfig { lateral_channels: 3, levels: 2 },
        patch_size: 16,
    }
}

#[test]
fn recognition_shapes_and_fusion() {
    let mut r = rng(9);
    let mut net = RecognitionNet::new(rec_cfg(), &mut r).unwrap();
    let x = rand_tensor(&[2, 3, 16, 16], &mut r);
    assert_eq!(net.forward(&x).unwrap().shape(), &[2, 6]);
    let pyr = net.pyramid();
    assert_eq!(pyr[0].shape(), &[2, 3, 4, 4]);
    assert_eq!(pyr[1].shape(), &[2, 3, 2, 2]);
    assert!(net.forward(&Tensor::zeros(&[1, 3, 8, 8])).is_err());

    for l in &mut net.laterals[..1] {
        l.weight.value.fill(0.0);
        l.bias.value.fill(0.0);
    }
    net.forward(&x).unwrap();
    let pyr = net.pyramid();
    let up = crate::nn::UpsampleNearest::new(2).forward(&pyr[1]).unwrap();
    assert_eq!(pyr[0], up);
}

fn projection_loss(logits: &Tensor, proj: &Tensor) -> f64 {
    logits.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
}

#[test]
fn recognition_gradients_match_finite_differences() {
    for seed in 0..5 {
        let mut r = rng(200 + seed);
        let mut net = RecognitionNet::new(rec_cfg(), &mut r).unwrap();
        let x = rand_tensor(&[2, 3, 16, 16], &mut r);
        let proj = rand_tensor(&[2, 6], &mut r);
        net.zero_grad();
        net.forward(&x).unwrap();
        let dx = net.backward(&proj).unwrap();
        let analytic = net.flat_grads();
        let numeric = numeric_param_gradient(&mut net, DEFAULT_STEP, |n| Ok(projection_loss(&n.forward(&x)?, &proj))).unwrap();
        let err = relative_error(&analytic, &numeric);
        assert!(err < TOL, "seed {seed}: params {err}");
        let nx = numeric_gradient(x.data(), DEFAULT_STEP, |v| {
            Ok(projection_loss(&net.forward(&Tensor::new(x.shape().to_vec(), v.to_vec())?)?, &proj))
        })
        .unwrap();
        let err = relative_error(dx.data(), &nx);
        assert!(err < TOL, "seed {seed}: input {err}");
    }
}

#[test]
fn detection_head_gradients_match_finite_differences() {
    for seed in 0..5 {
        let mut r = rng(300 + seed);
        let mut head = small_head(&mut r);
        let feat = rand_tensor(&[1, 4, 8, 8], &mut r);
        let rois = [BBox::new(3.0, 5.0, 40.0, 33.0).unwrap(), BBox::new(12.0, 0.0, 64.0, 50.0).unwrap()];
        let pc = rand_tensor(&[2, 7], &mut r);
        let pr = rand_tensor(&[2, 4], &mut r);
        let loss = |h: &mut DetectionHead, f: &Tensor| -> crate::Result<f64> {
            let (c, d) = h.forward(f, &rois)?.expect("rois");
            Ok(projection_loss(&c, &pc) + projection_loss(&d, &pr))
        };
        head.zero_grad();
        head.forward(&feat, &rois).unwrap();
        let df = head.backward(&pc, &pr).unwrap();
        let analytic = head.flat_grads();
        let numeric = numeric_param_gradient(&mut head, DEFAULT_STEP, |h| loss(h, &feat)).unwrap();
        assert!(relative_error(&analytic, &numeric) < TOL, "seed {seed}");
        let nf = numeric_gradient(feat.data(), DEFAULT_STEP, |v| loss(&mut head, &Tensor::new(vec![1, 4, 8, 8], v.to_vec())?)).unwrap();
        assert!(relative_error(df.data(), &nf) < TOL, "seed {seed}");
    }
}

/// Backbone and RPN of a tiny detector, for checking the proposal loss
/// end to end.
struct BackboneRpn {
    backbone: Backbone,
    rpn: RpnHead,
}

impl Parameterized for BackboneRpn {
    fn named_params(&self) -> Vec<(String, &crate::nn::Param)> {
        let mut v = self.backbone.named_params();
        v.extend(self.rpn.named_params());
        v
    }
    fn named_params_mut(&mut self) -> Vec<(String, &mut crate::nn::Param)> {
        let mut v = self.backbone.named_params_mut();
        v.extend(self.rpn.named_params_mut());
        v
    }
}

#[test]
fn proposal_loss_gradients_through_backbone_and_rpn() {
    for seed in 0..5 {
        let mut r = rng(400 + seed);
        let mut net = BackboneRpn {
            backbone: Backbone::new(backbone_cfg(16, 2, 2), &mut r).unwrap(),
            rpn: RpnHead::new(8, RpnHeadConfig { intermediate_conv_count: 1, channels: 3, anchors_per_position: 2 }, &mut r).unwrap(),
        };
        // enlarge the output layers so the objectness term is not negligible
        net.rpn.cls.weight.value.scale(30.0);
        net.rpn.reg.weight.value.scale(300.0);
        let image = rand_tensor(&[1, 3, 16, 16], &mut r);
        let n = 2 * 2 * 2;
        let labels: Vec<usize> = (0..n).map(|i| (i % 3 == 0) as usize).collect();
        let targets: Vec<BoxDelta> = (0..n)
            .map(|_| BoxDelta { dx: r.random_range(-0.5..0.5), dy: r.random_range(-0.5..0.5), dw: r.random_range(-0.5..0.5), dh: r.random_range(-0.5..0.5) })
            .collect();
        let cfg = LossConfig::default();
        let loss_of = |net: &mut BackboneRpn, img: &Tensor| -> crate::Result<f64> {
            let f = net.backbone.forward(img)?;
            let (o, d) = net.rpn.forward(f.last().unwrap())?;
            let m = multitask_loss(&MultiTaskInput { logits: &o, labels: &labels, deltas: &d, target_deltas: &targets }, &cfg)?;
            Ok(m.cls + m.reg)
        };
        net.zero_grad();
        let f = net.backbone.forward(&image).unwrap();
        let (o, d) = net.rpn.forward(f.last().unwrap()).unwrap();
        let m = multitask_loss(&MultiTaskInput { logits: &o, labels: &labels, deltas: &d, target_deltas: &targets }, &cfg).unwrap();
        let g = net.rpn.backward(&m.grad_logits, &m.grad_deltas).unwrap();
        let dx = net.backbone.backward(vec![None, Some(g)]).unwrap();
        let analytic = net.flat_grads();
        let numeric = numeric_param_gradient(&mut net, DEFAULT_STEP, |n| loss_of(n, &image)).unwrap();
        let err = relative_error(&analytic, &numeric);
        assert!(err < TOL, "seed {seed}: params {err}");
        let nx = numeric_gradient(image.data(), DEFAULT_STEP, |v| loss_of(&mut net, &Tensor::new(vec![1, 3, 16, 16], v.to_vec())?)).unwrap();
        let err = relative_error(dx.data(), &nx);
        assert!(err < TOL, "seed {seed}: input {err}");
    }
}

#[test]
fn identical_seeds_give_identical_outputs() {
    let run = || {
        let mut r = rng(11);
        let mut det = Detector::new(DetectorConfig::desk(64), &mut r).unwrap();
        let img = rand_tensor(&[1, 3, 64, 64], &mut r);
        let out = det.detect(&img, 0.0).unwrap();
        (out.proposals, out.candidates)
    };
    assert_eq!(run(), run());
}

#[test]
fn desk_detector_candidates_are_valid() {
    let mut r = rng(12);
    let mut det = Detector::new(DetectorConfig::desk(64), &mut r).unwrap();
    let out = det.detect(&rand_tensor(&[1, 3, 64, 64], &mut r), 0.0).unwrap();
    assert!(out.candidates.len() <= out.proposals.len());
    for c in &out.candidates {
        assert!(c.bbox.x_max <= 64.0 && c.bbox.y_max <= 64.0 && !c.bbox.is_degenerate());
        assert!((0.0..=1.0).contains(&c.score));
    }
    assert!(det.detect(&Tensor::zeros(&[1, 3, 32, 32]), 0.5).is_err());
}
