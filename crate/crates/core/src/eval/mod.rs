//! Task heads, downstream datasets, F1 metrics and evaluation reports.

mod dataset;
mod head;
mod metrics;
mod report;

pub use dataset::{classification_labels, tagging_labels, TaskDataset, TaskExample};
pub use head::{head_forward, HeadKind, TaskHead, TaskModel, TASK_DROPOUT_KEY, TASK_KIND_KEY, TASK_LABELS_KEY};
pub use metrics::{bio_spans, f1_from_counts, f1_score, F1Scheme, Span, OUTSIDE_TAG};
pub use report::{evaluate, predict, ClassCounts, EvalReport, REPORT_CSV_HEADER};
