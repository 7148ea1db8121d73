from mesh_sar.eval.metrics import (
    SampleSet,
    as_array,
    coefficient_of_determination,
    pdf_histogram,
    per_node_stats,
    positive_mode_fraction,
    r2_best_match,
    rss,
    sign_agreement,
    tke,
    w2_distance,
)
from mesh_sar.eval.plots import plot_metrics
from mesh_sar.eval.report import MetricReport, evaluate_samples, summary_frame, write_reports
