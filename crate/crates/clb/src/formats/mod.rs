//! Dataset file formats: the sparse multi-label grammar and line-delimited
//! JSON records for multi-view and bag data.

mod multilabel;
mod records;

pub use multilabel::{load_multilabel, save_multilabel};
pub use records::{load_auto, load_bags, load_multiview, save_records};
