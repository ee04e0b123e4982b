//! Crowd annotation: HIT bundling, a durable assignment store with an HTTP
//! front, quiz grading, majority aggregation and agreement statistics.

mod aggregate;
mod hits;
pub mod server;
pub mod simulate;
mod store;

pub use aggregate::{
    aggregate_majority, fleiss_kappa, grade_worker, grade_workers, harvest_new_labels, kappa_from_records, normalize_custom,
    vote_key, AggregateConfig, AggregateError, AggregationResult, AggregationSummary, AnnotationRecord, Choice, GatePolicy,
    KappaResult, NewLabel, QuizGrade, QUIZ_PASS,
};
pub use hits::{
    build_hits, Hit, HitBatch, HitConfig, HitError, HitItem, PartialPolicy, QuizQuestion, DIALOGUES_PER_HIT, QUIZZES_PER_HIT,
    WORKERS_PER_HIT,
};
pub use store::{
    AnnotationStore, HitProgress, LabelsView, Progress, QuizFeedback, StoreError, SubmitOutcome, WorkerProgress,
};
