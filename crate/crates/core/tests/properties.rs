mod common;

use std::sync::OnceLock;

use lcmt::data::{bpe_apply, bpe_learn, bpe_undo, BpeMerges, Vocabulary};
use lcmt::decode::{beam_search, complexity_mask, eos_mask_renormalize, greedy_decode, Constraint, TokenClasses};
use lcmt::tokens::EOS;
use lcmt::{LengthMode, Model32, ModelConfig, Rng};
use proptest::prelude::*;

fn merges() -> &'static BpeMerges {
    static M: OnceLock<BpeMerges> = OnceLock::new();
    M.get_or_init(|| {
        let corpus = ["lower lowest newer newest", "low low low wider widest", "marshmallow shallow hallow"];
        bpe_learn(corpus, 40).unwrap()
    })
}

fn random_model() -> &'static (Model32, Vocabulary) {
    static M: OnceLock<(Model32, Vocabulary)> = OnceLock::new();
    M.get_or_init(|| {
        let forms = ["x", "y@@", "z", "w@@", "v"];
        let vocab = Vocabulary::build(&[], None, forms).unwrap();
        let mut cfg = ModelConfig::desk(vocab.len(), LengthMode::DecoderEmbedding);
        cfg.max_seq_len = 12;
        cfg.max_len_index = 12;
        (Model32::new(cfg, &mut Rng::new(5)).unwrap(), vocab)
    })
}

prop_compose! {
    fn distribution(n: usize)(raw in prop::collection::vec(0.0f64..1.0, n), spike in 0..n, mode in 0..3u8) -> Vec<f64> {
        let mut w = raw;
        match mode {
            0 => {}
            1 => { w.iter_mut().for_each(|x| *x = 0.0); w[spike] = 1.0; }
            _ => { w[EOS] = 0.0; }
        }
        let total: f64 = w.iter().sum();
        if total == 0.0 { w[4] = 1.0; return w; }
        w.iter().map(|x| x / total).collect()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn bpe_round_trip(words in prop::collection::vec("[a-z]{1,12}", 1..12)) {
        let sentence = words.join(" ");
        let pieces = bpe_apply(&sentence, merges());
        prop_assert_eq!(bpe_undo(&pieces), sentence);
    }

    #[test]
    fn eos_mask_is_a_distribution(p in distribution(8), j in 1usize..10, big_j in 1usize..10) {
        let m = eos_mask_renormalize(&p, j, big_j);
        prop_assert!((m.sum() - 1.0).abs() < 1e-6);
        let expected = if j > big_j { 1.0 } else { 0.0 };
        prop_assert_eq!(m.probs()[EOS], expected);
    }

    #[test]
    fn complexity_then_length_is_a_distribution(
        p in distribution(8),
        cont in prop::collection::vec(any::<bool>(), 8),
        used in 0usize..4,
        budget in prop::option::of(0usize..4),
        gamma in 0.0f64..5.0,
        j in 1usize..10,
        big_j in 1usize..10,
    ) {
        let mut cont = cont;
        cont[EOS] = false;
        let c = complexity_mask(&p, &cont, used, budget, gamma);
        prop_assert!((c.sum() - 1.0).abs() < 1e-6);
        if budget.is_some_and(|b| used >= b) {
            prop_assert!(cont.iter().zip(c.probs()).all(|(&k, &q)| !k || q == 0.0));
        }
        let m = eos_mask_renormalize(c.probs(), j, big_j);
        prop_assert!((m.sum() - 1.0).abs() < 1e-6);
        prop_assert_eq!(m.probs()[EOS], if j > big_j { 1.0 } else { 0.0 });
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hard_length_is_total_for_random_weights(
        src in prop::collection::vec(4usize..9, 1..8),
        big_j in 1usize..=12,
        budget in prop::option::of(0usize..3),
        beam in 1usize..4,
    ) {
        let (model, vocab) = random_model();
        let classes = TokenClasses::from_vocab(vocab);
        let mut c = Constraint::hard(big_j);
        if let Some(b) = budget {
            c = c.with_budget(Some(b), 0.5);
        }
        let sources = vec![src];
        let h = &greedy_decode(model, &classes, &sources, &[c]).unwrap()[0];
        prop_assert_eq!(h.output().len(), big_j);
        prop_assert_eq!(h.tokens.last(), Some(&EOS));
        if let Some(b) = budget {
            prop_assert!(h.continuation_count <= b);
        }
        for h in &beam_search(model, &classes, &sources, &[c], beam).unwrap()[0] {
            prop_assert_eq!(h.output().len(), big_j);
            prop_assert!(h.output().iter().all(|&t| t != EOS && classes.allowed[t]));
        }
    }
}

#[test]
fn beam_of_one_equals_greedy() {
    let (model, vocab) = random_model();
    let classes = TokenClasses::from_vocab(vocab);
    let mut rng = Rng::new(3);
    let sources: Vec<Vec<usize>> = (0..20).map(|_| (0..rng.range(1, 6)).map(|_| 4 + rng.below(5)).collect()).collect();
    let cs: Vec<Constraint> = (0..20).map(|i| Constraint::hard(1 + i % 10)).collect();
    let g = greedy_decode(model, &classes, &sources, &cs).unwrap();
    let b = beam_search(model, &classes, &sources, &cs, 1).unwrap();
    for (g, b) in g.iter().zip(&b) {
        assert_eq!(g.tokens, b[0].tokens);
    }
}
