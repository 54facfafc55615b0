use std::path::Path;

use anyhow::Result;
use lesion_cascade::cascade::{flatten_frames, recognition_sets, train_detection, train_recognition};
use lesion_cascade::data::{split_detection, AnnotatedFrame};
use lesion_cascade::eval::{render_svg, LinePlot, Plot, PlotKind, Series};
use lesion_cascade::nn::TransferReport;
use log::info;
use serde::Serialize;

use super::{load_checkpoint, load_patients, read_split, select, Subset};
use crate::config::RunConfig;
use crate::manifest::{RunDir, RunManifest, TIMING_FILE};

pub const DETECTOR_CHECKPOINT: &str = "detector.ckpt";
pub const RECOGNIZER_CHECKPOINT: &str = "recognizer.ckpt";
pub const TRACE_CSV: &str = "trace.csv";
pub const SUMMARY: &str = "summary.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Detect,
    Recognize,
}

#[derive(Serialize)]
struct DetectRow {
    epoch: usize,
    mean_overlaps: f64,
    rpn_accuracy: f64,
    l_rpn_cls: f64,
    l_rpn_reg: f64,
    l_det_cls: f64,
    l_det_reg: f64,
    total: f64,
}

#[derive(Serialize)]
struct RecognizeRow {
    epoch: usize,
    loss: f64,
    train_accuracy: f64,
    val_accuracy: f64,
}

#[derive(Serialize)]
struct Timing {
    epoch: usize,
    seconds: f64,
}

#[derive(Serialize)]
struct DetectSummary {
    train_frames: usize,
    val_frames: usize,
    best_epoch: Option<usize>,
    initial_loss: Option<f64>,
}

#[derive(Serialize)]
struct RecognizeSummary {
    train_patches: usize,
    val_patches: usize,
    best_epoch: Option<usize>,
    transfer: Option<TransferReport>,
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner()?)
}

fn curve_plot(name: &str, title: &str, y_label: &str, series: Vec<Series>) -> Plot {
    Plot {
        name: name.into(),
        kind: PlotKind::Line(LinePlot {
            title: title.into(),
            x_label: "epoch".into(),
            y_label: y_label.into(),
            series,
            x_range: None,
            y_range: None,
        }),
    }
}

/// Training frames after the detection train/validation split; both stages
/// use the same frames so patches never come from validation images.
fn stage_frames(data: &Path, cfg: &RunConfig) -> Result<(Vec<AnnotatedFrame>, Vec<AnnotatedFrame>)> {
    let split = read_split(data)?;
    let patients = select(load_patients(data, cfg)?, &split, Subset::Train);
    Ok(split_detection(flatten_frames(&patients), cfg.pipeline.cascade.detection_split, cfg.seed)?)
}

pub fn run(cfg: &RunConfig, stage: Stage, data: &Path, init: Option<&Path>, out: &Path) -> Result<RunManifest> {
    let (train, val) = stage_frames(data, cfg)?;
    let p = &cfg.pipeline;
    match stage {
        Stage::Detect => {
            let run = RunDir::create(out, "train detect", cfg)?;
            info!("detection training on {} frames, validating on {}", train.len(), val.len());
            let result = train_detection(&p.detector, &train, &val, &p.cascade.detection)?;
            result.checkpoint.save(&run.path(DETECTOR_CHECKPOINT))?;
            let recs = &result.trace.records;
            let rows: Vec<DetectRow> = recs
                .iter()
                .map(|r| DetectRow {
                    epoch: r.epoch,
                    mean_overlaps: r.mean_overlaps,
                    rpn_accuracy: r.rpn_accuracy,
                    l_rpn_cls: r.loss.l_rpn_cls,
                    l_rpn_reg: r.loss.l_rpn_reg,
                    l_det_cls: r.loss.l_det_cls,
                    l_det_reg: r.loss.l_det_reg,
                    total: r.loss.total,
                })
                .collect();
            run.write(TRACE_CSV, to_csv(&rows)?)?;
            let timing: Vec<Timing> = recs.iter().map(|r| Timing { epoch: r.epoch, seconds: r.seconds }).collect();
            run.write_json(TIMING_FILE, &timing)?;
            let series = |name: &str, f: fn(&lesion_cascade::cascade::EpochRecord) -> f64| Series {
                name: name.into(),
                points: recs.iter().map(|r| (r.epoch as f64, f(r))).collect(),
            };
            let loss = curve_plot(
                "loss",
                "Detection training loss",
                "loss",
                vec![
                    series("total", |r| r.loss.total),
                    series("rpn cls", |r| r.loss.l_rpn_cls),
                    series("rpn reg", |r| r.loss.l_rpn_reg),
                    series("head cls", |r| r.loss.l_det_cls),
                    series("head reg", |r| r.loss.l_det_reg),
                ],
            );
            let overlaps =
                curve_plot("overlaps", "Mean overlapping proposals", "proposals", vec![series("val", |r| r.mean_overlaps)]);
            for plot in [loss, overlaps] {
                run.write(&format!("{}.svg", plot.name), render_svg(&plot))?;
            }
            run.write_json(
                SUMMARY,
                &DetectSummary {
                    train_frames: train.len(),
                    val_frames: val.len(),
                    best_epoch: result.trace.best_epoch,
                    initial_loss: result.trace.initial_loss.map(|l| l.total),
                },
            )?;
            run.finish()
        }
        Stage::Recognize => {
            let init = init.map(|path| load_checkpoint(path, "detector checkpoint")).transpose()?;
            let run = RunDir::create(out, "train recognize", cfg)?;
            let (rec_train, rec_val) = recognition_sets(&train, &p.cascade, cfg.seed)?;
            info!("recognition training on {} patches, validating on {}", rec_train.len(), rec_val.len());
            let result = train_recognition(&p.recognizer, &rec_train, &rec_val, &p.cascade.recognition, init.as_ref())?;
            result.checkpoint.save(&run.path(RECOGNIZER_CHECKPOINT))?;
            let recs = &result.trace.records;
            let rows: Vec<RecognizeRow> = recs
                .iter()
                .map(|r| RecognizeRow {
                    epoch: r.epoch,
                    loss: r.loss,
                    train_accuracy: r.train_accuracy,
                    val_accuracy: r.val_accuracy,
                })
                .collect();
            run.write(TRACE_CSV, to_csv(&rows)?)?;
            let timing: Vec<Timing> = recs.iter().map(|r| Timing { epoch: r.epoch, seconds: r.seconds }).collect();
            run.write_json(TIMING_FILE, &timing)?;
            let acc = curve_plot(
                "accuracy",
                "Recognition accuracy",
                "accuracy",
                vec![
                    Series { name: "train".into(), points: recs.iter().map(|r| (r.epoch as f64, r.train_accuracy)).collect() },
                    Series { name: "val".into(), points: recs.iter().map(|r| (r.epoch as f64, r.val_accuracy)).collect() },
                ],
            );
            run.write("accuracy.svg", render_svg(&acc))?;
            run.write_json(
                SUMMARY,
                &RecognizeSummary {
                    train_patches: rec_train.len(),
                    val_patches: rec_val.len(),
                    best_epoch: result.trace.best_epoch,
                    transfer: result.transfer,
                },
            )?;
            run.finish()
        }
    }
}
