//! Reserved vocabulary ids shared by every vocabulary.

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;

pub const PAD_FORM: &str = "<pad>";
pub const UNK_FORM: &str = "<unk>";
pub const BOS_FORM: &str = "<s>";
pub const EOS_FORM: &str = "</s>";

/// BPE continuation marker appended to non-final subword pieces.
pub const CONTINUATION: &str = "@@";

pub fn is_continuation(form: &str) -> bool {
    form.ends_with(CONTINUATION)
}
