//! Proposal-, image- and patient-level evaluation: confusion matrices,
//! rates, IoU-sweep ROC, box-size histograms and report files.

mod histogram;
mod levels;
mod metrics;
pub mod published;
mod report;

pub use histogram::{box_size_histogram, SizeHistogram};
pub use levels::{
    image_level_cm, patient_level_cm, roc_over_iou, rpn_level_cm, threshold_sweep, trapezoid_auc,
    FrameDetections, FrameProposals, FrameTruth, PatientVerdict, RocCurve, RocPoint,
};
pub use metrics::{metrics, ConfusionMatrix, EvalLevel, MetricSet};
pub use report::{
    emit_report, parse_report_csv, render_csv, render_histogram_svg, render_line_svg, render_markdown,
    render_svg, HistogramPlot, LinePlot, Plot, PlotKind, Report, ReportRow, Section, Series,
    StageMetrics, FPR_NOTE, REPORT_CSV, REPORT_MD, RPN_CONVENTION,
};

/// ROC plot with the closed curve of each named run.
pub fn roc_plot(name: &str, runs: &[(&str, &RocCurve)]) -> Plot {
    Plot {
        name: name.to_string(),
        kind: PlotKind::Line(LinePlot {
            title: "Proposal ROC over the match threshold".into(),
            x_label: "false positive rate".into(),
            y_label: "true positive rate".into(),
            series: runs
                .iter()
                .map(|(label, c)| Series {
                    name: format!("{label} (AUC {:.3})", c.auc),
                    points: c.closed_curve(),
                })
                .collect(),
            x_range: Some((0.0, 1.0)),
            y_range: Some((0.0, 1.0)),
        }),
    }
}

#[cfg(test)]
mod tests;
