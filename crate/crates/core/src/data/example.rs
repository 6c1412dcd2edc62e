use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::tokens::UNK;

/// One training or decoding unit.
///
/// `src_ids` holds the encoder input without EOS (tags and length tokens
/// included once added); `tgt_ids` holds `y_1..y_J` without BOS/EOS.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Example {
    pub src_ids: Vec<usize>,
    pub tgt_ids: Vec<usize>,
    pub target_length: Option<usize>,
    pub lang_tag: Option<usize>,
}

impl Example {
    pub fn new(src_ids: Vec<usize>, tgt_ids: Vec<usize>) -> Self {
        Example { src_ids, tgt_ids, target_length: None, lang_tag: None }
    }

    /// Source subword count `I`: tags and length tokens excluded.
    pub fn source_length(&self, vocab: &Vocabulary) -> usize {
        self.src_ids.iter().filter(|&&id| id == UNK || vocab.is_corpus(id)).count()
    }
}

/// Sets `J` to the reference length.
pub fn annotate_length(mut example: Example, l_max: usize) -> Result<Example> {
    let j = example.tgt_ids.len();
    if j == 0 {
        return Err(Error::data("empty target cannot be length-annotated"));
    }
    if j > l_max {
        return Err(Error::data(format!("target length {j} exceeds L_max {l_max}")));
    }
    example.target_length = Some(j);
    Ok(example)
}

/// Annotates a corpus, dropping (and counting) over-long targets. Empty
/// targets are an error.
pub fn annotate_corpus(examples: Vec<Example>, l_max: usize) -> Result<(Vec<Example>, usize)> {
    let mut kept = Vec::with_capacity(examples.len());
    let mut dropped = 0;
    for (i, ex) in examples.into_iter().enumerate() {
        if ex.tgt_ids.is_empty() {
            return Err(Error::data(format!("example {i} has an empty target")));
        }
        match annotate_length(ex, l_max) {
            Ok(ex) => kept.push(ex),
            Err(_) => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} examples with target length > {l_max}");
    }
    Ok((kept, dropped))
}

/// Inserts `<len_J>` after any leading language tag.
pub fn add_length_token(mut example: Example, vocab: &Vocabulary) -> Result<Example> {
    let j = example.target_length.ok_or_else(|| Error::data("add_length_token needs an annotated target length"))?;
    let tok = vocab.len_token(j)?;
    let at = example.src_ids.iter().take_while(|&&id| vocab.is_tag(id)).count();
    example.src_ids.insert(at, tok);
    Ok(example)
}

pub fn add_language_tag(mut example: Example, vocab: &Vocabulary, target_lang: &str) -> Result<Example> {
    let tag = vocab.tag(target_lang)?;
    example.src_ids.insert(0, tag);
    example.lang_tag = Some(tag);
    Ok(example)
}

/// `max(1, round_half_up(ratio * I))`.
pub fn compute_target_length(source_len: usize, ratio: f64) -> usize {
    ((ratio * source_len as f64 + 0.5).floor() as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::build(&["en", "E"], Some(24), ["s1", "s2", "mar@@", "shm@@", "allow", "a", "b", "c"]).unwrap()
    }

    #[test]
    fn annotation_counts_subwords() {
        let v = vocab();
        let ex = Example::new(vec![], v.encode(&["a", "b", "c"]));
        assert_eq!(annotate_length(ex, 24).unwrap().target_length, Some(3));
        let ex = Example::new(vec![], v.encode(&["mar@@", "shm@@", "allow"]));
        let ex = annotate_length(ex, 24).unwrap();
        assert_eq!(ex.target_length, Some(3));
        assert_eq!(annotate_length(ex.clone(), 24).unwrap(), ex);
        assert!(annotate_length(Example::new(vec![], vec![]), 24).is_err());
        assert!(annotate_length(ex, 2).is_err());
    }

    #[test]
    fn length_token_goes_after_the_tag() {
        let v = vocab();
        let mut ex = Example::new(v.encode(&["s1", "s2"]), vec![]);
        ex.target_length = Some(8);
        let plain = add_length_token(ex.clone(), &v).unwrap();
        assert_eq!(v.decode(&plain.src_ids), ["<len_8>", "s1", "s2"]);

        let mut tagged = add_language_tag(Example::new(v.encode(&["s1"]), vec![]), &v, "en").unwrap();
        tagged.target_length = Some(5);
        let tagged = add_length_token(tagged, &v).unwrap();
        assert_eq!(v.decode(&tagged.src_ids), ["<2en>", "<len_5>", "s1"]);
        assert_eq!(tagged.source_length(&v), 1);

        ex.target_length = Some(25);
        assert!(add_length_token(ex.clone(), &v).is_err());
        ex.target_length = None;
        assert!(add_length_token(ex, &v).is_err());
        assert!(add_language_tag(Example::default(), &v, "fr").is_err());
    }

    #[test]
    fn target_length_rounds_half_up_and_clamps() {
        assert_eq!(compute_target_length(10, 0.8), 8);
        assert_eq!(compute_target_length(5, 0.5), 3);
        assert_eq!(compute_target_length(1, 0.5), 1);
        assert_eq!(compute_target_length(7, 0.5), 4);
    }
}
