#![allow(dead_code)]

pub mod gradcheck;

use lcmt::data::synth::{render, Lang};
use lcmt::data::{add_length_token, annotate_length, Batch, Example, Vocabulary};
use lcmt::eval::{admissible_references, bleu, content_metrics};
use lcmt::{LengthMode, ModelConfig, Rng};

/// Brute-force corpus BLEU: n-grams are compared as slices with nested loops
/// and clipping is done by marking used reference positions.
pub fn bleu_oracle(hyps: &[Vec<String>], refs: &[Vec<String>], max_n: usize) -> f64 {
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hyps.iter().zip(refs) {
        c += h.len();
        r += rf.len();
        for n in 1..=max_n {
            if h.len() < n {
                continue;
            }
            total[n - 1] += h.len() - n + 1;
            if rf.len() < n {
                continue;
            }
            let mut used = vec![false; rf.len() - n + 1];
            for i in 0..=h.len() - n {
                for j in 0..=rf.len() - n {
                    if !used[j] && (0..n).all(|k| h[i + k] == rf[j + k]) {
                        used[j] = true;
                        matched[n - 1] += 1;
                        break;
                    }
                }
            }
        }
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        if matched[n] == 0 {
            return 0.0;
        }
        log_sum += (matched[n] as f64 / total[n] as f64).ln();
    }
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    100.0 * bp * (log_sum / max_n as f64).exp()
}

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Vocabulary `a0..a{n-1}` plus `<len_*>` tokens up to `l_max`.
pub fn toy_vocab(n: usize, l_max: usize) -> Vocabulary {
    let forms: Vec<String> = (0..n).map(|i| format!("a{i}")).collect();
    Vocabulary::build(&[], Some(l_max), forms.iter().map(String::as_str)).unwrap()
}

/// A tiny model configuration for gradient and determinism checks.
pub fn tiny_config(vocab_size: usize, mode: LengthMode) -> ModelConfig {
    let mut cfg = ModelConfig::desk(vocab_size, mode);
    cfg.n_layers = 1;
    cfg.d_model = 4;
    cfg.d_ff = 6;
    cfg.n_heads = 2;
    cfg.d_len = 2;
    cfg.max_seq_len = 6;
    cfg.max_len_index = 6;
    cfg
}

/// Random annotated examples over `vocab` with sources and targets of 1..=4 tokens.
pub fn random_examples(vocab: &Vocabulary, n: usize, mode: LengthMode, rng: &mut Rng) -> Vec<Example> {
    let first = vocab.first_corpus_id();
    let span = vocab.len() - first;
    (0..n)
        .map(|_| {
            let src = (0..rng.range(1, 4)).map(|_| first + rng.below(span)).collect();
            let tgt = (0..rng.range(1, 4)).map(|_| first + rng.below(span)).collect();
            let ex = annotate_length(Example::new(src, tgt), 6).unwrap();
            if mode == LengthMode::SourceToken {
                add_length_token(ex, vocab).unwrap()
            } else {
                ex
            }
        })
        .collect()
}

pub fn batch_of(examples: &[Example], vocab: &Vocabulary) -> Batch {
    let refs: Vec<&Example> = examples.iter().collect();
    Batch::from_examples(&refs, vocab).unwrap()
}

pub const REFERENCE: &str = "So CEOs , a little bit better than average , but here 's where it gets interesting .";
/// Unconstrained output: a fluent prefix of the reference.
pub const BASELINE: &str = "CEOs are a little bit";
/// Length-constrained output that keeps the end of the sentence.
pub const CONSTRAINT: &str = "the CEOs are interesting .";

#[derive(Debug, Clone, Copy)]
pub struct Scored {
    pub bleu: f64,
    pub exact: f64,
    pub suffix_recall: f64,
}

/// The same six-token budget spent on a prefix of a long-form pivot
/// reference and on a compression that keeps its four most salient symbols.
pub fn prefix_versus_compression() -> [Scored; 2] {
    let content = vec![11, 12, 13, 14, 15, 16];
    let reference = render(&content, Lang::Pivot, &[false; 6]);
    let j = 6;
    let prefix: Vec<String> = reference[..j].to_vec();
    let compressed = render(&content[content.len() - 4..], Lang::Pivot, &[true, false, false, true]);
    assert_eq!(compressed.len(), j);
    let refs = [admissible_references(&content, Some(j))];
    [prefix, compressed].map(|h| {
        let m = content_metrics(std::slice::from_ref(&h), &refs).unwrap();
        Scored { bleu: bleu(&[h], std::slice::from_ref(&reference), 4).unwrap().score, exact: m.exact, suffix_recall: m.suffix_recall }
    })
}
