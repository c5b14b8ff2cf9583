//! Classification metrics and inter-annotator agreement.

pub mod agreement;
mod metrics;

pub use agreement::{
    agreement_report, average_observed_agreement, fleiss_kappa, krippendorff_alpha, AgreementReport, AgreementStats,
    AnnotationSet, RatingMatrix,
};
pub use metrics::{classification_metrics, classification_metrics_indexed, MetricReport};
