use super::*;
use crate::data::{Batch, Example, Vocabulary};
use crate::optim::{adam_step, AdamConfig, AdamState, LrSchedule};

fn tiny(vocab: usize, mode: LengthMode) -> ModelConfig {
    ModelConfig {
        n_layers: 1,
        d_model: 16,
        d_ff: 32,
        n_heads: 2,
        dropout: 0.0,
        word_dropout: 0.0,
        max_seq_len: 12,
        max_len_index: 12,
        d_len: 4,
        vocab_size: vocab,
        length_mode: mode,
        precision: crate::scalar::Precision::F64,
    }
}

fn toy_vocab() -> Vocabulary {
    Vocabulary::build(&[], None, ["a", "b", "c", "d", "e"]).unwrap()
}

fn toy_batch(v: &Vocabulary, lengths: Option<usize>) -> Batch {
    let ex = |s: &[&str], t: &[&str]| Example {
        src_ids: v.encode(s),
        tgt_ids: v.encode(t),
        target_length: lengths.or(Some(t.len())),
        lang_tag: None,
    };
    let exs = [ex(&["a", "b", "c"], &["c", "d"]), ex(&["e"], &["a", "a", "b"])];
    Batch::from_examples(&[&exs[0], &exs[1]], v).unwrap()
}

#[test]
fn positional_encoding_properties() {
    let d = 16;
    let p0: Vec<f64> = positional_encoding(0, d).unwrap();
    for (i, v) in p0.iter().enumerate() {
        assert_eq!(*v, if i % 2 == 0 { 0.0 } else { 1.0 });
    }
    let all: Vec<Vec<f64>> = (0..=24).map(|p| positional_encoding(p, d).unwrap()).collect();
    for (p, row) in all.iter().enumerate() {
        let norm: f64 = row.iter().map(|x| x * x).sum();
        assert!((norm - d as f64 / 2.0).abs() < 1e-12, "position {p}: {norm}");
        for q in 0..p {
            assert_ne!(&all[q], row, "positions {q} and {p} collide");
        }
    }
    assert!(positional_encoding::<f64>(-1, d).is_err());
}

#[test]
fn reverse_positional_component_is_pe_of_remaining_length() {
    let cfg = tiny(9, LengthMode::ReversePositional);
    let m: TransformerModel<f64> = TransformerModel::new(cfg.clone(), &mut Rng::new(0)).unwrap();
    for big_j in 1..=cfg.max_len_index {
        for j in 1..=big_j {
            let got = m.decoder_positional_component(j, Some(big_j));
            assert_eq!(got, positional_encoding::<f64>((big_j - j) as i64, cfg.d_model).unwrap());
        }
        assert_eq!(m.decoder_positional_component(big_j, Some(big_j)), positional_encoding::<f64>(0, cfg.d_model).unwrap());
    }
}

#[test]
fn decoder_input_by_mode() {
    for (d, d_len) in [(16, 4), (8, 1), (12, 12)] {
        let mut cfg = tiny(9, LengthMode::DecoderEmbedding);
        cfg.d_model = d;
        cfg.d_len = d_len;
        cfg.n_heads = 4;
        let m: TransformerModel<f64> = TransformerModel::new(cfg, &mut Rng::new(1)).unwrap();
        let h = m.decoder_input(5, 3, 7).unwrap();
        assert_eq!(h.len(), d);
        assert!(h.iter().all(|&x| x >= 0.0));
    }
    let cfg = tiny(9, LengthMode::ReversePositional);
    let m: TransformerModel<f64> = TransformerModel::new(cfg.clone(), &mut Rng::new(2)).unwrap();
    let table = m.params().get("embed.tokens").unwrap();
    let scale = (cfg.d_model as f64).sqrt();
    let h = m.decoder_input(6, 2, 5).unwrap();
    let pe: Vec<f64> = positional_encoding(3, cfg.d_model).unwrap();
    for i in 0..cfg.d_model {
        let want = table.data()[6 * cfg.d_model + i] * scale + pe[i];
        assert!((h[i] - want).abs() < 1e-12);
    }
    assert!(m.decoder_input(6, 0, 5).is_err());
}

#[test]
fn parameter_counts_by_mode() {
    let count = |mode| TransformerModel::<f32>::new(tiny(11, mode), &mut Rng::new(0)).unwrap().parameter_count();
    let base = count(LengthMode::None);
    assert_eq!(count(LengthMode::ReversePositional), base);
    assert_eq!(count(LengthMode::SourceToken), base);
    let cfg = tiny(11, LengthMode::DecoderEmbedding);
    let extra = (cfg.max_len_index + 1) * cfg.d_len + (cfg.d_model + cfg.d_len) * cfg.d_model + cfg.d_model;
    assert_eq!(count(LengthMode::DecoderEmbedding), base + extra);
    let shapes_total: usize = parameter_shapes(&cfg).iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    assert_eq!(shapes_total, base + extra);
}

#[test]
fn mode_none_ignores_target_length() {
    let v = toy_vocab();
    let m: TransformerModel<f32> = TransformerModel::new(tiny(v.len(), LengthMode::None), &mut Rng::new(3)).unwrap();
    let a = m.forward_loss(&toy_batch(&v, Some(2))).unwrap();
    let b = m.forward_loss(&toy_batch(&v, Some(9))).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn length_modes_require_annotations() {
    let v = toy_vocab();
    let m: TransformerModel<f32> =
        TransformerModel::new(tiny(v.len(), LengthMode::DecoderEmbedding), &mut Rng::new(3)).unwrap();
    let mut batch = toy_batch(&v, None);
    batch.target_lengths[1] = None;
    assert!(m.forward_loss(&batch).is_err());
    let memory = m.encode(&[vec![5, 6]]).unwrap();
    assert!(m.decode_step(&memory, &[DecoderState::new(0, None)]).is_err());
}

#[test]
fn decode_step_is_a_distribution_and_causal() {
    let v = toy_vocab();
    let m: TransformerModel<f64> =
        TransformerModel::new(tiny(v.len(), LengthMode::DecoderEmbedding), &mut Rng::new(4)).unwrap();
    let memory = m.encode(&[vec![4, 5, 6, 3], vec![7, 3]]).unwrap();
    let prefix = vec![5, 6, 7, 8];
    let states: Vec<DecoderState> = (0..=prefix.len())
        .map(|n| DecoderState { memory_row: 0, prefix: prefix[..n].to_vec(), target_len: Some(6) })
        .collect();
    let out = m.decode_step(&memory, &states).unwrap();
    for row in &out {
        let total: f64 = row.iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-5);
    }
    // Perturb y_2: distributions at steps <= 2 (prefix lengths 0 and 1) must not move.
    let mut changed = prefix.clone();
    changed[1] = 4;
    let states2: Vec<DecoderState> = (0..=changed.len())
        .map(|n| DecoderState { memory_row: 0, prefix: changed[..n].to_vec(), target_len: Some(6) })
        .collect();
    let out2 = m.decode_step(&memory, &states2).unwrap();
    assert_eq!(out[0], out2[0]);
    assert_eq!(out[1], out2[1]);
    for n in 2..out.len() {
        assert_ne!(out[n], out2[n], "step {}", n + 1);
    }
}

#[test]
fn batched_decode_matches_single_rows() {
    let v = toy_vocab();
    let m: TransformerModel<f64> = TransformerModel::new(tiny(v.len(), LengthMode::None), &mut Rng::new(5)).unwrap();
    let memory = m.encode(&[vec![4, 5, 6, 3], vec![7, 3]]).unwrap();
    let a = DecoderState { memory_row: 1, prefix: vec![4], target_len: None };
    let b = DecoderState { memory_row: 0, prefix: vec![5, 6, 7], target_len: None };
    let both = m.decode_step(&memory, &[a.clone(), b.clone()]).unwrap();
    let single_mem = m.encode(&[vec![7, 3]]).unwrap();
    let alone = m.decode_step(&single_mem, &[DecoderState { memory_row: 0, ..a }]).unwrap();
    for (x, y) in both[0].iter().zip(&alone[0]) {
        assert!((x - y).abs() < 1e-9);
    }
    let alone_b = m.decode_step(&memory, &[b]).unwrap();
    for (x, y) in both[1].iter().zip(&alone_b[0]) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn length_embedding_receives_gradient() {
    let v = toy_vocab();
    let m: TransformerModel<f64> =
        TransformerModel::new(tiny(v.len(), LengthMode::DecoderEmbedding), &mut Rng::new(6)).unwrap();
    let (_, grads) = m.gradients(&toy_batch(&v, None), None).unwrap();
    let id = m.params().id("len.emb").unwrap();
    let g = grads[id].as_ref().unwrap();
    assert!(g.iter().any(|&x| x != 0.0));
    let plain: TransformerModel<f64> = TransformerModel::new(tiny(v.len(), LengthMode::None), &mut Rng::new(6)).unwrap();
    assert!(plain.params().id("len.emb").is_none());
}

#[test]
fn fixed_token_task_is_learned() {
    let v = toy_vocab();
    let e = v.id("e").unwrap();
    let mut data_rng = Rng::new(7);
    let examples: Vec<Example> = (0..8)
        .map(|_| {
            let n = data_rng.range(1, 4);
            let src = (0..n).map(|_| 5 + data_rng.below(4)).collect();
            Example { src_ids: src, tgt_ids: vec![e], target_length: Some(1), lang_tag: None }
        })
        .collect();
    let refs: Vec<&Example> = examples.iter().collect();
    let batch = Batch::from_examples(&refs, &v).unwrap();
    let mut model: TransformerModel<f32> =
        TransformerModel::new(tiny(v.len(), LengthMode::DecoderEmbedding), &mut Rng::new(8)).unwrap();
    let cfg = AdamConfig { schedule: LrSchedule::InverseSqrt { peak: 3e-3, warmup: 20 }, ..AdamConfig::default() };
    let mut state = AdamState::new(model.params());
    let mut rng = Rng::new(9);
    for _ in 0..200 {
        let (_, grads) = model.loss_and_grads(&batch, &mut rng).unwrap();
        adam_step(model.params_mut(), &grads, &mut state, &cfg).unwrap();
    }
    let loss = model.forward_loss(&batch).unwrap();
    assert!(loss < 0.1, "loss after 200 steps: {loss}");
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let cfg = tiny(13, LengthMode::DecoderEmbedding);
    let m: TransformerModel<f32> = TransformerModel::new(cfg, &mut Rng::new(10)).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, m.config(), m.params()).unwrap();
    assert_eq!(&buf[..4], CHECKPOINT_MAGIC);
    let (cfg2, params2) = read_checkpoint::<f32>(&mut buf.as_slice()).unwrap();
    let back = TransformerModel::from_params(cfg2, params2).unwrap();
    assert_eq!(back, m);
    let mut buf2 = Vec::new();
    write_checkpoint(&mut buf2, back.config(), back.params()).unwrap();
    assert_eq!(buf, buf2);
    assert!(read_checkpoint::<f32>(&mut &buf[..buf.len() - 1]).is_err());
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(read_checkpoint::<f32>(&mut bad.as_slice()).is_err());
}
