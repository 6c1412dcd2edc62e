//! Vocabulary, BPE, examples, batching and the synthetic corpus generator.

mod batch;
mod bpe;
mod corpus;
mod example;
pub mod synth;
mod vocab;

pub use batch::{make_batches, Batch, Batches};
pub use bpe::{bpe_apply, bpe_learn, bpe_undo, BpeMerges};
pub use corpus::{parallel_paths, read_lines, read_parallel, write_lines, write_parallel, ParallelLines};
pub use example::{
    add_language_tag, add_length_token, annotate_corpus, annotate_length, compute_target_length, Example,
};
pub use synth::{content_decode, synth_generate, Lang, LanguageViolation, SynthPair, SyntheticSpec};
pub use vocab::{len_form, tag_form, Vocabulary};
