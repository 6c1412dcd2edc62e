use super::example::Example;
use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tokens::{BOS, EOS, PAD};

/// Padded, teacher-forced batch. All id buffers are row-major `[size, len]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub size: usize,
    /// Padded encoder length (source + EOS).
    pub src_len: usize,
    /// Padded decoder length (target + EOS).
    pub tgt_len: usize,
    pub src_ids: Vec<usize>,
    /// True at real (non-PAD) source positions.
    pub src_mask: Vec<bool>,
    /// Positions eligible for word dropout.
    pub src_droppable: Vec<bool>,
    /// `BOS y_1 .. y_J PAD..`
    pub dec_input: Vec<usize>,
    /// `y_1 .. y_J EOS PAD..`
    pub dec_target: Vec<usize>,
    pub dec_droppable: Vec<bool>,
    pub target_lengths: Vec<Option<usize>>,
}

impl Batch {
    pub fn from_examples(examples: &[&Example], vocab: &Vocabulary) -> Result<Batch> {
        if examples.is_empty() {
            return Err(Error::Empty { op: "batch" });
        }
        let size = examples.len();
        let src_len = examples.iter().map(|e| e.src_ids.len() + 1).max().unwrap();
        let tgt_len = examples.iter().map(|e| e.tgt_ids.len() + 1).max().unwrap();
        let mut b = Batch {
            size,
            src_len,
            tgt_len,
            src_ids: vec![PAD; size * src_len],
            src_mask: vec![false; size * src_len],
            src_droppable: vec![false; size * src_len],
            dec_input: vec![PAD; size * tgt_len],
            dec_target: vec![PAD; size * tgt_len],
            dec_droppable: vec![false; size * tgt_len],
            target_lengths: examples.iter().map(|e| e.target_length).collect(),
        };
        for (r, ex) in examples.iter().enumerate() {
            let s = r * src_len;
            for (i, &id) in ex.src_ids.iter().chain([EOS].iter()).enumerate() {
                if id >= vocab.len() {
                    return Err(Error::data(format!("token id {id} outside vocabulary of {}", vocab.len())));
                }
                b.src_ids[s + i] = id;
                b.src_mask[s + i] = true;
                b.src_droppable[s + i] = vocab.is_corpus(id);
            }
            let t = r * tgt_len;
            b.dec_input[t] = BOS;
            for (i, &id) in ex.tgt_ids.iter().enumerate() {
                if id >= vocab.len() {
                    return Err(Error::data(format!("token id {id} outside vocabulary of {}", vocab.len())));
                }
                b.dec_input[t + i + 1] = id;
                b.dec_droppable[t + i + 1] = vocab.is_corpus(id);
                b.dec_target[t + i] = id;
            }
            b.dec_target[t + ex.tgt_ids.len()] = EOS;
        }
        Ok(b)
    }

    /// Non-PAD target tokens (the cross-entropy denominator).
    pub fn target_tokens(&self) -> usize {
        self.dec_target.iter().filter(|&&id| id != PAD).count()
    }
}

#[derive(Debug, Clone)]
pub struct Batches {
    pub batches: Vec<Batch>,
    /// Examples skipped because they exceed `max_seq_len`.
    pub dropped: usize,
}

/// Length-bucketed batches holding at most `max_tokens` padded positions
/// (`size * max(src_len, tgt_len)`) each, in an order shuffled by `rng`.
pub fn make_batches(
    examples: &[Example],
    vocab: &Vocabulary,
    max_tokens: usize,
    max_seq_len: usize,
    rng: &mut Rng,
) -> Result<Batches> {
    let mut order: Vec<usize> = Vec::with_capacity(examples.len());
    let mut dropped = 0;
    for (i, ex) in examples.iter().enumerate() {
        if ex.src_ids.len() + 1 > max_seq_len || ex.tgt_ids.len() > max_seq_len {
            dropped += 1;
        } else {
            order.push(i);
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} examples longer than max_seq_len {max_seq_len}");
    }
    rng.shuffle(&mut order);
    order.sort_by_key(|&i| (examples[i].src_ids.len(), examples[i].tgt_ids.len()));
    let mut batches = Vec::new();
    let mut current: Vec<&Example> = Vec::new();
    let mut width = 0;
    for i in order {
        let ex = &examples[i];
        let w = (ex.src_ids.len() + 1).max(ex.tgt_ids.len() + 1);
        let new_width = width.max(w);
        if !current.is_empty() && new_width * (current.len() + 1) > max_tokens {
            batches.push(Batch::from_examples(&current, vocab)?);
            current.clear();
            width = w;
        } else {
            width = new_width;
        }
        current.push(ex);
    }
    if !current.is_empty() {
        batches.push(Batch::from_examples(&current, vocab)?);
    }
    rng.shuffle(&mut batches);
    Ok(Batches { batches, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Vocabulary, Vec<Example>) {
        let v = Vocabulary::build(&[], None, ["a", "b", "c", "d"]).unwrap();
        let exs = vec![
            Example { src_ids: v.encode(&["a", "b"]), tgt_ids: v.encode(&["c"]), target_length: Some(1), lang_tag: None },
            Example { src_ids: v.encode(&["a"]), tgt_ids: v.encode(&["c", "d", "d"]), target_length: Some(3), lang_tag: None },
        ];
        (v, exs)
    }

    #[test]
    fn shapes_padding_and_masks() {
        let (v, exs) = setup();
        let b = Batch::from_examples(&[&exs[0], &exs[1]], &v).unwrap();
        assert_eq!((b.size, b.src_len, b.tgt_len), (2, 3, 4));
        let a = v.id("a").unwrap();
        let bb = v.id("b").unwrap();
        let c = v.id("c").unwrap();
        let d = v.id("d").unwrap();
        assert_eq!(b.src_ids, [a, bb, EOS, a, EOS, PAD]);
        assert_eq!(b.src_mask, [true, true, true, true, true, false]);
        assert_eq!(b.dec_input, [BOS, c, PAD, PAD, BOS, c, d, d]);
        assert_eq!(b.dec_target, [c, EOS, PAD, PAD, c, d, d, EOS]);
        assert_eq!(b.target_tokens(), 6);
        assert_eq!(b.src_droppable, [true, true, false, true, false, false]);
        assert_eq!(b.target_lengths, [Some(1), Some(3)]);
    }

    #[test]
    fn token_budget_and_overlong_examples() {
        let (v, mut exs) = setup();
        exs.push(Example::new(vec![v.id("a").unwrap(); 30], vec![v.id("b").unwrap()]));
        let plan = make_batches(&exs, &v, 4, 24, &mut Rng::new(1)).unwrap();
        assert_eq!(plan.dropped, 1);
        assert_eq!(plan.batches.len(), 2);
        for b in &plan.batches {
            assert!(b.size * b.src_len.max(b.tgt_len) <= 4);
        }
    }

    #[test]
    fn order_is_deterministic_given_seed() {
        let (v, exs) = setup();
        let many: Vec<Example> = (0..50).map(|i| exs[i % 2].clone()).collect();
        let a = make_batches(&many, &v, 16, 24, &mut Rng::new(9)).unwrap();
        let b = make_batches(&many, &v, 16, 24, &mut Rng::new(9)).unwrap();
        assert_eq!(a.batches, b.batches);
        assert_eq!(a.batches.iter().map(|b| b.size).sum::<usize>(), 50);
    }
}
