//! Corpus BLEU, length distance, content oracles for synthetic data and
//! complexity proxies.

mod bleu;
mod complexity;
mod content;
mod report;

pub use bleu::{bleu, BleuScore};
pub use complexity::{complexity_report, syllables, ComplexityReport};
pub use content::{admissible_references, avg_length_distance, budget_reference, content_metrics, source_content, ContentMetrics};
pub use report::Report;
