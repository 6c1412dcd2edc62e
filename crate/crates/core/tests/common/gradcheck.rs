//! Central finite-difference checks of tape gradients in 64-bit.
//!
//! Every check reduces the op output to a scalar with fixed random weights,
//! `L = sum(w * op(x))`, and compares the analytic gradient of `L` with
//! `(L(x + h e_i) - L(x - h e_i)) / 2h` for every input coordinate. The error
//! of one instance is `||g - g_fd|| / max(||g||, ||g_fd||)` over all inputs
//! (the plain difference norm when both are below 1e-10).

use lcmt::data::Vocabulary;
use lcmt::{LengthMode, Model64, Rng, Tape, Tensor64, Var};

use super::{batch_of, random_examples, tiny_config, toy_vocab};

pub const GRAD_TOL: f64 = 1e-3;
pub const INSTANCES: usize = 100;
const H: f64 = 1e-6;

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>;

pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

fn normal(shape: &[usize], rng: &mut Rng) -> Tensor64 {
    Tensor64::normal(shape.to_vec(), 1.0, rng)
}

fn projected(inputs: &[Tensor64], weights: &Tensor64, build: &Build, tape: &mut Tape<f64>) -> (Var, Vec<Var>) {
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(tape, &leaves);
    assert_eq!(tape.shape(out), weights.shape(), "weights must match the op output");
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w).unwrap();
    (tape.sum(prod), leaves)
}

fn check(inputs: Vec<Tensor64>, build: Build, rng: &mut Rng) -> f64 {
    let shape = {
        let mut probe = Tape::new();
        let leaves: Vec<Var> = inputs.iter().map(|t| probe.constant(t.clone())).collect();
        let out = build(&mut probe, &leaves);
        probe.shape(out).to_vec()
    };
    let weights = normal(&shape, rng);
    let mut tape = Tape::new();
    let (loss, leaves) = projected(&inputs, &weights, &build, &mut tape);
    tape.backward(loss).unwrap();
    let mut analytic = Vec::new();
    for (v, t) in leaves.iter().zip(&inputs) {
        match tape.grad_slice(*v) {
            Some(g) => analytic.extend_from_slice(g),
            None => analytic.extend(std::iter::repeat_n(0.0, t.len())),
        }
    }
    let eval = |inputs: &[Tensor64]| {
        let mut tape = Tape::inference();
        let (loss, _) = projected(inputs, &weights, &build, &mut tape);
        tape.value(loss).data()[0]
    };
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut work = inputs.clone();
    for i in 0..inputs.len() {
        for k in 0..inputs[i].len() {
            let x = inputs[i].data()[k];
            work[i].data_mut()[k] = x + H;
            let up = eval(&work);
            work[i].data_mut()[k] = x - H;
            let down = eval(&work);
            work[i].data_mut()[k] = x;
            numeric.push((up - down) / (2.0 * H));
        }
    }
    rel_error(&analytic, &numeric)
}

fn dim(rng: &mut Rng) -> usize {
    rng.range(1, 4)
}

/// One random instance of the named op; returns its relative error.
fn instance(op: &str, rng: &mut Rng) -> f64 {
    let (inputs, build): (Vec<Tensor64>, Build) = match op {
        "matmul" => {
            let (b, m, k, n) = (dim(rng), dim(rng), dim(rng), dim(rng));
            let a = if rng.bernoulli(0.5) { normal(&[b, m, k], rng) } else { normal(&[m, k], rng) };
            (vec![a, normal(&[k, n], rng)], Box::new(|t, v| t.matmul(v[0], v[1]).unwrap()))
        }
        "batch_matmul" => {
            let (b, m, k, n) = (dim(rng), dim(rng), dim(rng), dim(rng));
            let trans = rng.bernoulli(0.5);
            let rhs = if trans { normal(&[b, n, k], rng) } else { normal(&[b, k, n], rng) };
            (vec![normal(&[b, m, k], rng), rhs], Box::new(move |t, v| t.batch_matmul(v[0], v[1], trans).unwrap()))
        }
        "add" | "mul" => {
            let s = [dim(rng), dim(rng)];
            let mul = op == "mul";
            (
                vec![normal(&s, rng), normal(&s, rng)],
                Box::new(move |t, v| if mul { t.mul(v[0], v[1]).unwrap() } else { t.add(v[0], v[1]).unwrap() }),
            )
        }
        "add_bias" => {
            let (r, n) = (dim(rng), dim(rng));
            (vec![normal(&[r, 2, n], rng), normal(&[n], rng)], Box::new(|t, v| t.add_bias(v[0], v[1]).unwrap()))
        }
        "scale" => {
            let f = rng.normal() * 2.0;
            (vec![normal(&[dim(rng), dim(rng)], rng)], Box::new(move |t, v| t.scale(v[0], f)))
        }
        "relu" => {
            let mut x = normal(&[dim(rng), dim(rng) + 1], rng);
            // keep every coordinate at least 100 h away from the kink
            for v in x.data_mut() {
                if v.abs() < 1e-4 {
                    *v = 0.5;
                }
            }
            (vec![x], Box::new(|t, v| t.relu(v[0])))
        }
        "softmax" => (vec![normal(&[dim(rng), dim(rng) + 1], rng)], Box::new(|t, v| t.softmax(v[0]))),
        "log_softmax" => (vec![normal(&[dim(rng), dim(rng) + 1], rng)], Box::new(|t, v| t.log_softmax(v[0]))),
        "layer_norm" => {
            let (r, n) = (dim(rng), dim(rng) + 1);
            (
                vec![normal(&[r, n], rng), normal(&[n], rng), normal(&[n], rng)],
                Box::new(|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()),
            )
        }
        "embedding" => {
            let (vocab, d, len) = (dim(rng) + 1, dim(rng), dim(rng) + 2);
            let ids: Vec<usize> = (0..len).map(|_| rng.below(vocab)).collect();
            (vec![normal(&[vocab, d], rng)], Box::new(move |t, v| t.embedding(v[0], &ids, &[1, len]).unwrap()))
        }
        "concat_last" => {
            let r = dim(rng);
            (
                vec![normal(&[r, dim(rng)], rng), normal(&[r, dim(rng)], rng)],
                Box::new(|t, v| t.concat_last(v[0], v[1]).unwrap()),
            )
        }
        "dropout" => {
            let p = rng.uniform() * 0.8;
            let seed = rng.next_u64();
            (
                vec![normal(&[dim(rng), dim(rng)], rng)],
                Box::new(move |t, v| t.dropout(v[0], p, &mut Rng::new(seed), true).unwrap()),
            )
        }
        "cross_entropy" => {
            let (rows, classes) = (dim(rng) + 1, dim(rng) + 1);
            let mut targets: Vec<Option<usize>> =
                (0..rows).map(|_| rng.bernoulli(0.7).then(|| rng.below(classes))).collect();
            targets[0] = Some(rng.below(classes));
            (vec![normal(&[rows, classes], rng)], Box::new(move |t, v| t.cross_entropy(v[0], &targets).unwrap()))
        }
        "reshape" => {
            let (a, b) = (dim(rng), dim(rng));
            (vec![normal(&[a, b], rng)], Box::new(move |t, v| t.reshape(v[0], &[b, a]).unwrap()))
        }
        "split_heads" => {
            let (b, s, h, dh) = (dim(rng), dim(rng), dim(rng), dim(rng));
            (vec![normal(&[b, s, h * dh], rng)], Box::new(move |t, v| t.split_heads(v[0], h).unwrap()))
        }
        "merge_heads" => {
            let (b, s, h, dh) = (dim(rng), dim(rng), dim(rng), dim(rng));
            (vec![normal(&[b * h, s, dh], rng)], Box::new(move |t, v| t.merge_heads(v[0], h).unwrap()))
        }
        "gather_rows" => {
            let (r, d) = (dim(rng) + 1, dim(rng));
            let rows: Vec<usize> = (0..dim(rng) + 1).map(|_| rng.below(r)).collect();
            (vec![normal(&[r, d], rng)], Box::new(move |t, v| t.gather_rows(v[0], &rows).unwrap()))
        }
        "sum" => (vec![normal(&[dim(rng), dim(rng)], rng)], Box::new(|t, v| t.sum(v[0]))),
        other => panic!("no gradient check for op '{other}'"),
    };
    check(inputs, build, rng)
}

pub const OPS: [&str; 20] = [
    "matmul",
    "batch_matmul",
    "add",
    "add_bias",
    "mul",
    "scale",
    "relu",
    "softmax",
    "log_softmax",
    "layer_norm",
    "embedding",
    "concat_last",
    "dropout",
    "cross_entropy",
    "reshape",
    "split_heads",
    "merge_heads",
    "gather_rows",
    "sum",
    "model",
];

/// Worst relative error of `instances` random instances of `op`.
pub fn worst_error(op: &str, instances: usize, seed: u64) -> f64 {
    let mut rng = Rng::stream(seed, &format!("gradcheck/{op}"));
    (0..instances)
        .map(|i| if op == "model" { model_instance(LengthMode::ALL[i % 4], &mut rng) } else { instance(op, &mut rng) })
        .fold(0.0, f64::max)
}

/// Full one-layer encoder-decoder loss with dropout and word dropout active
/// (the same dropout stream for every evaluation).
pub fn model_instance(mode: LengthMode, rng: &mut Rng) -> f64 {
    let vocab: Vocabulary = toy_vocab(4, 6);
    let cfg = tiny_config(vocab.len(), mode);
    let model = Model64::new(cfg.clone(), rng).unwrap();
    let n = rng.range(1, 3);
    let batch = batch_of(&random_examples(&vocab, n, mode, rng), &vocab);
    let seed = rng.next_u64();
    let (_, grads) = model.gradients(&batch, Some(&mut Rng::new(seed))).unwrap();
    let loss = |m: &Model64| {
        let (tape, loss, _) = m.loss_graph(&batch, Tape::inference(), Some(&mut Rng::new(seed))).unwrap();
        tape.value(loss).data()[0]
    };
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut work = model.clone();
    for id in 0..model.params().len() {
        let len = model.params().by_id(id).len();
        match &grads[id] {
            Some(g) => analytic.extend_from_slice(g),
            None => analytic.extend(std::iter::repeat_n(0.0, len)),
        }
        for k in 0..len {
            let x = model.params().by_id(id).data()[k];
            work.params_mut().by_id_mut(id).data_mut()[k] = x + H;
            let up = loss(&work);
            work.params_mut().by_id_mut(id).data_mut()[k] = x - H;
            let down = loss(&work);
            work.params_mut().by_id_mut(id).data_mut()[k] = x;
            numeric.push((up - down) / (2.0 * H));
        }
    }
    rel_error(&analytic, &numeric)
}
