use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use lesion_cascade::cascade::StageEvaluation;
use lesion_cascade::data::{ClassLabel, PatientLabel, REFERENCE_SIZE};
use lesion_cascade::eval::{
    box_size_histogram, emit_report, image_level_cm, metrics, patient_level_cm, roc_over_iou, roc_plot, rpn_level_cm,
    threshold_sweep, EvalLevel, FrameDetections, FrameProposals, FrameTruth, HistogramPlot, MetricSet, PatientVerdict,
    Plot, PlotKind, Report, RocCurve, Section,
};
use lesion_cascade::geometry::BBox;
use serde::Serialize;

use super::infer::{FrameRecord, CASCADE, DETECTION_ONLY, ORACLE};
use super::{load_patients, require};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::{RunDir, RunManifest};

pub const METRICS_FILE: &str = "metrics.json";
const HISTOGRAM_BIN: f64 = 32.0;
const HISTOGRAM_BINS: usize = 8;

#[derive(Serialize)]
pub struct LevelSummary {
    pub cm: lesion_cascade::eval::ConfusionMatrix,
    pub metrics: MetricSet,
}

#[derive(Serialize)]
pub struct PipelineSummary {
    pub levels: BTreeMap<&'static str, LevelSummary>,
    pub roc_auc: f64,
}

fn display_name(pipeline: &str) -> String {
    match pipeline {
        DETECTION_ONLY => "detection only".into(),
        CASCADE => "cascade".into(),
        ORACLE => "oracle".into(),
        other => other.replace('_', " "),
    }
}

fn pipeline_rank(pipeline: &str) -> usize {
    [DETECTION_ONLY, CASCADE, ORACLE].iter().position(|p| *p == pipeline).unwrap_or(3)
}

pub fn read_records(path: &Path) -> Result<Vec<FrameRecord>> {
    require(path, "detections file")?;
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

pub fn run(cfg: &RunConfig, detections: &Path, data: &Path, out: &Path) -> Result<RunManifest> {
    let p = &cfg.pipeline;
    let records = read_records(detections)?;
    let patients = load_patients(data, cfg)?;
    let truth: HashMap<&str, FrameTruth> = patients
        .iter()
        .flat_map(|p| &p.frames)
        .map(|f| (f.frame_id.as_str(), FrameTruth::from(f)))
        .collect();
    let labels: HashMap<&str, PatientLabel> = patients.iter().map(|p| (p.patient_id.as_str(), p.label)).collect();

    let mut by_pipeline: BTreeMap<(usize, String), Vec<&FrameRecord>> = BTreeMap::new();
    for r in &records {
        by_pipeline.entry((pipeline_rank(&r.pipeline), r.pipeline.clone())).or_default().push(r);
    }
    if by_pipeline.is_empty() {
        return Err(CliError::Conflict(format!("{} holds no frames", detections.display())).into());
    }

    let run = RunDir::create(out, "eval", cfg)?;
    let mut report = Report { title: "Evaluation".into(), ..Report::default() };
    let mut summary = BTreeMap::new();
    let mut curves: Vec<(String, RocCurve)> = Vec::new();
    for ((_, name), recs) in &by_pipeline {
        let mut frame_truth = Vec::with_capacity(recs.len());
        for r in recs {
            let t = truth.get(r.frame_id.as_str()).ok_or_else(|| {
                CliError::Conflict(format!("frame {} is not in dataset {}", r.frame_id, data.display()))
            })?;
            frame_truth.push(t.clone());
        }
        let dets: Vec<FrameDetections> = recs
            .iter()
            .map(|r| FrameDetections { frame_id: r.frame_id.clone(), detections: r.detections.clone() })
            .collect();
        let props: Vec<FrameProposals> =
            recs.iter().map(|r| FrameProposals { frame_id: r.frame_id.clone(), boxes: r.proposals.clone() }).collect();
        let mut occupant: BTreeMap<&str, bool> = BTreeMap::new();
        for d in &dets {
            let pid = recs.iter().find(|r| r.frame_id == d.frame_id).map(|r| r.patient_id.as_str()).unwrap_or_default();
            *occupant.entry(pid).or_default() |= d.is_positive();
        }
        let verdicts: Vec<PatientVerdict> =
            occupant.iter().map(|(id, &o)| PatientVerdict { patient_id: id.to_string(), occupant: o }).collect();
        let mut patient_labels = Vec::new();
        for id in occupant.keys() {
            let label = labels
                .get(id)
                .ok_or_else(|| CliError::Conflict(format!("patient {id} is not in dataset {}", data.display())))?;
            patient_labels.push((id.to_string(), *label));
        }
        let stage = StageEvaluation {
            rpn: rpn_level_cm(&props, &frame_truth, &p.cascade.criterion)?,
            image: image_level_cm(&dets, &frame_truth)?,
            patient: patient_level_cm(&verdicts, &patient_labels)?,
        };
        let roc = roc_over_iou(&props, &frame_truth, &p.cascade.criterion, &threshold_sweep(p.roc_thresholds))?;
        let levels = [(EvalLevel::Rpn, stage.rpn), (EvalLevel::Image, stage.image), (EvalLevel::Patient, stage.patient)]
            .into_iter()
            .map(|(l, cm)| (l.name(), LevelSummary { cm, metrics: metrics(&cm) }))
            .collect();
        summary.insert(name.clone(), PipelineSummary { levels, roc_auc: roc.auc });
        report.stages.push(stage.to_stage_metrics(&display_name(name)));
        curves.push((display_name(name), roc));
    }

    let auc_lines: Vec<String> = curves.iter().map(|(n, c)| format!("- {n}: {:.4}", c.auc)).collect();
    report.sections.push(Section { heading: "Area under the IoU-threshold ROC".into(), body: auc_lines.join("\n") });
    let runs: Vec<(&str, &RocCurve)> = curves.iter().map(|(n, c)| (n.as_str(), c)).collect();
    report.plots.push(roc_plot("roc", &runs));

    let scale = REFERENCE_SIZE / p.synth.image_size as f64;
    let lesions: Vec<BBox> = patients
        .iter()
        .flat_map(|p| &p.frames)
        .flat_map(|f| &f.objects)
        .filter(|o| o.label == ClassLabel::SpaceOccupying)
        .map(|o| BBox { x_min: o.bbox.x_min * scale, y_min: o.bbox.y_min * scale, x_max: o.bbox.x_max * scale, y_max: o.bbox.y_max * scale })
        .collect();
    report.plots.push(Plot {
        name: "box_sizes".into(),
        kind: PlotKind::Histogram(HistogramPlot {
            title: format!("Space-occupying box sizes ({REFERENCE_SIZE}-pixel scale)"),
            histogram: box_size_histogram(&lesions, HISTOGRAM_BIN, HISTOGRAM_BINS)?,
        }),
    });

    emit_report(&report, &run.dir)?;
    run.write_json(METRICS_FILE, &summary)?;
    run.finish()
}
