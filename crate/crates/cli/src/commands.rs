use std::io::Write;
use std::path::{Path, PathBuf};

use lcmt::data::synth::{synth_generate, Lang, SyntheticSpec};
use lcmt::data::{bpe_apply, bpe_learn, bpe_undo, compute_target_length, read_lines, write_lines, BpeMerges, ParallelLines, Vocabulary};
use lcmt::decode::LengthRequest;
use lcmt::eval::{admissible_references, avg_length_distance, bleu, complexity_report, content_metrics, source_content, Report};
use lcmt::experiment::{run_table, ExperimentConfig, Lab, Table};
use lcmt::model::{load_checkpoint, save_checkpoint};
use lcmt::optim::LrSchedule;
use lcmt::pipeline::{make_examples, synthetic_vocabulary, System, TranslateOptions};
use lcmt::train::{TrainConfig, TrainLog, Trainer};
use lcmt::{LengthMode, ModelConfig, Precision, Rng, Scalar, TransformerModel};

use crate::{BpeArgs, Cli, CliError, CliResult, Command, EvaluateArgs, ExperimentArgs, GenDataArgs, TrainArgs, TranslateArgs};

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::GenData(a) => gen_data(cli, a),
        Command::Bpe(a) => bpe(a),
        Command::Train(a) => match cli.precision {
            Precision::F32 => train::<f32>(cli, a),
            Precision::F64 => train::<f64>(cli, a),
        },
        Command::Translate(a) => match cli.precision {
            Precision::F32 => translate::<f32>(a),
            Precision::F64 => translate::<f64>(a),
        },
        Command::Evaluate(a) => evaluate(a),
        Command::Experiment(a) => experiment(cli, a),
    }
}

/// A direction named by two language labels, `SRC-TGT`.
#[derive(Debug, Clone, PartialEq)]
struct Pair {
    src: String,
    tgt: String,
}

impl std::fmt::Display for Pair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.src, self.tgt)
    }
}

fn parse_pairs(s: &str) -> CliResult<Vec<Pair>> {
    let mut out = Vec::new();
    for p in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (a, b) = p
            .split_once('-')
            .filter(|(a, b)| !a.is_empty() && !b.is_empty())
            .ok_or_else(|| CliError::Usage(format!("language pair '{p}' should look like L1-E")))?;
        out.push(Pair { src: a.into(), tgt: b.into() });
    }
    if out.is_empty() {
        return Err(CliError::Usage("empty language-pair list".into()));
    }
    Ok(out)
}

fn split_paths(dir: &Path, split: &str, pair: &Pair) -> (PathBuf, PathBuf) {
    (dir.join(format!("{split}.{pair}.src")), dir.join(format!("{split}.{pair}.tgt")))
}

fn read_split(dir: &Path, split: &str, pair: &Pair) -> CliResult<ParallelLines> {
    let (s, t) = split_paths(dir, split, pair);
    let (src, tgt) = (read_lines(&s)?, read_lines(&t)?);
    if src.len() != tgt.len() {
        return Err(CliError::Data(format!("{} has {} lines but {} has {}", s.display(), src.len(), t.display(), tgt.len())));
    }
    Ok((src, tgt))
}

fn write_output(path: Option<&Path>, lines: &[String]) -> CliResult<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(l);
        text.push('\n');
    }
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn gen_data(cli: &Cli, a: &GenDataArgs) -> CliResult<()> {
    let spec = SyntheticSpec {
        alphabet_size: a.alphabet_size,
        min_symbols: a.min_symbols,
        max_symbols: a.max_symbols,
        n_satellites: a.satellites,
        p_short: a.p_short,
        p_drop: a.p_drop,
        seed: cli.seed,
    };
    spec.validate()?;
    let mut dirs = Vec::new();
    for p in parse_pairs(&a.langs)? {
        let (src, tgt): (Lang, Lang) = (p.src.parse()?, p.tgt.parse()?);
        dirs.push((p, src, tgt));
    }
    std::fs::create_dir_all(&a.out)?;
    for (split, n) in [("train", a.train), ("valid", a.valid), ("test", a.test)] {
        for (p, src, tgt) in &dirs {
            let pairs = synth_generate(&spec, n, *src, *tgt, &format!("{split}/{p}"))?;
            let (s, t) = split_paths(&a.out, split, p);
            write_lines(s, &pairs.iter().map(|x| x.src.clone()).collect::<Vec<_>>())?;
            write_lines(t, &pairs.iter().map(|x| x.tgt.clone()).collect::<Vec<_>>())?;
        }
    }
    let json = serde_json::to_string_pretty(&spec).map_err(|e| CliError::Internal(e.to_string()))?;
    std::fs::write(a.out.join("spec.json"), json + "\n")?;
    log::info!("wrote {} directions to {}", dirs.len(), a.out.display());
    Ok(())
}

fn bpe(a: &BpeArgs) -> CliResult<()> {
    let mut lines = Vec::new();
    for p in &a.input {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::Data(format!("cannot read {}: {e}", p.display())))?;
        lines.extend(text.lines().map(str::to_string));
    }
    if a.learn {
        let codes = a.codes.as_ref().ok_or_else(|| CliError::Usage("--learn needs --codes FILE".into()))?;
        let merges = bpe_learn(lines.iter().map(String::as_str), a.merges)?;
        log::info!("learned {} merges", merges.len());
        merges.save(codes)?;
        return Ok(());
    }
    let out: Vec<String> = if a.apply {
        let codes = a.codes.as_ref().ok_or_else(|| CliError::Usage("--apply needs --codes FILE".into()))?;
        let merges = BpeMerges::load(codes)?;
        lines.iter().map(|l| bpe_apply(l, &merges).join(" ")).collect()
    } else {
        lines.iter().map(|l| bpe_undo(&l.split_whitespace().collect::<Vec<_>>())).collect()
    };
    write_output(a.out.as_deref(), &out)
}

fn read_spec(path: &Path) -> CliResult<SyntheticSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Synthetic surface vocabulary when the data directory has a `spec.json`,
/// otherwise every token of the training data in first-seen order.
fn build_vocab(
    data: &Path,
    pairs: &[Pair],
    train: &[(Vec<String>, Vec<String>)],
    tagged: bool,
    len_tokens: Option<usize>,
) -> CliResult<Vocabulary> {
    let spec_path = data.join("spec.json");
    if spec_path.exists() {
        let spec = read_spec(&spec_path)?;
        let mut langs: Vec<Lang> = Vec::new();
        for p in pairs {
            for l in [&p.src, &p.tgt] {
                let l: Lang = l.parse()?;
                if !langs.contains(&l) {
                    langs.push(l);
                }
            }
        }
        return Ok(synthetic_vocabulary(&spec, &langs, tagged, len_tokens)?);
    }
    let mut names: Vec<&str> = Vec::new();
    if tagged {
        names = pairs.iter().flat_map(|p| [p.src.as_str(), p.tgt.as_str()]).collect();
        names.sort_unstable();
        names.dedup();
    }
    let tokens = train.iter().flat_map(|(s, t)| s.iter().chain(t)).map(String::as_str);
    Ok(Vocabulary::build(&names, len_tokens, tokens)?)
}

fn write_train_log(path: &Path, log: &TrainLog) -> CliResult<()> {
    let mut text = String::from("step\tsplit\tloss\n");
    for (s, l) in &log.train_loss {
        text.push_str(&format!("{s}\ttrain\t{l}\n"));
    }
    for (s, l) in &log.validation {
        text.push_str(&format!("{s}\tvalid\t{l}\n"));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn train<T: Scalar>(cli: &Cli, a: &TrainArgs) -> CliResult<()> {
    let pairs = parse_pairs(&a.langs)?;
    let mode: LengthMode = a.mode.parse()?;
    let mut targets: Vec<&str> = pairs.iter().map(|p| p.tgt.as_str()).collect();
    targets.sort_unstable();
    targets.dedup();
    let tagged = a.tagged || targets.len() > 1;
    let mut train_by_pair = Vec::new();
    let mut valid_by_pair = Vec::new();
    for p in &pairs {
        let (s, t) = read_split(&a.data, "train", p)?;
        train_by_pair.push(s.into_iter().zip(t).collect::<Vec<_>>());
        let (s, t) = read_split(&a.data, "valid", p)?;
        valid_by_pair.push(s.into_iter().zip(t).collect::<Vec<_>>());
    }
    let all_train: Vec<_> = train_by_pair.iter().flatten().cloned().collect();
    let len_tokens = (mode == LengthMode::SourceToken).then_some(a.max_seq_len);
    let vocab = build_vocab(&a.data, &pairs, &all_train, tagged, len_tokens)?;

    let mut cfg = ModelConfig::desk(vocab.len(), mode);
    cfg.n_layers = a.layers;
    cfg.d_model = a.d_model;
    cfg.d_ff = a.d_ff;
    cfg.n_heads = a.heads;
    cfg.d_len = a.d_len.unwrap_or(a.d_model / 8);
    cfg.dropout = a.dropout;
    cfg.word_dropout = a.word_dropout;
    cfg.max_seq_len = a.max_seq_len;
    cfg.max_len_index = a.max_seq_len;
    cfg.precision = cli.precision;
    cfg.validate()?;

    let (mut train_set, mut valid_set) = (Vec::new(), Vec::new());
    for (p, (tr, va)) in pairs.iter().zip(train_by_pair.iter().zip(&valid_by_pair)) {
        let tag = tagged.then_some(p.tgt.as_str());
        train_set.extend(make_examples(tr, tag, &vocab, mode, cfg.max_len_index)?.0);
        valid_set.extend(make_examples(va, tag, &vocab, mode, cfg.max_len_index)?.0);
    }
    let train_cfg = TrainConfig {
        steps: a.steps,
        max_tokens: a.max_tokens,
        adam: lcmt::optim::AdamConfig {
            schedule: LrSchedule::InverseSqrt { peak: a.lr, warmup: a.warmup },
            ..Default::default()
        },
        eval_every: a.save_every,
        average_k: a.average_k,
        seed: cli.seed,
    };
    std::fs::create_dir_all(&a.out)?;
    let state = a.out.join("state");
    let mut trainer = if a.resume {
        if !state.join("trainer.json").exists() {
            return Err(CliError::Data(format!("nothing to resume in {}", state.display())));
        }
        let t = Trainer::<T>::resume(&state, &vocab, &train_set, &valid_set, train_cfg)?;
        if t.model().config() != &cfg {
            return Err(CliError::Usage("model flags differ from the saved run".into()));
        }
        log::info!("resuming at step {}", t.step());
        t
    } else {
        let model = TransformerModel::<T>::new(cfg, &mut Rng::stream(cli.seed, "init/model"))?;
        Trainer::new(model, &vocab, &train_set, &valid_set, train_cfg)?
    };
    log::info!("training on {} examples, vocabulary {}", train_set.len(), vocab.len());
    trainer.run(Some(&state))?;
    let (model, log) = trainer.finish()?;
    save_checkpoint(a.out.join("model.ckpt"), &model)?;
    vocab.save(a.out.join("vocab.txt"))?;
    write_train_log(&a.out.join("train_log.tsv"), &log)?;
    if let Some((s, l)) = log.validation.last() {
        log::info!("final validation loss {l:.4} at step {s}");
    }
    Ok(())
}

fn load_system<T: Scalar>(dir: &Path) -> CliResult<System<T>> {
    let model = load_checkpoint::<T>(dir.join("model.ckpt"))?;
    let vocab = Vocabulary::load(dir.join("vocab.txt"))?;
    Ok(System::new(model, vocab)?)
}

/// `--constraint` with an optional separate `--ratio`.
fn length_request(constraint: &str, ratio: Option<f64>) -> CliResult<LengthRequest> {
    let spelled = match (constraint, ratio) {
        ("soft" | "hard", Some(r)) => format!("{constraint}:{r}"),
        ("soft" | "hard", None) => return Err(CliError::Usage(format!("constraint '{constraint}' needs a ratio"))),
        (c, Some(_)) if c.contains(':') => return Err(CliError::Usage("ratio given twice".into())),
        (c, Some(_)) => return Err(CliError::Usage(format!("--ratio does not apply to '{c}'"))),
        (c, None) => c.to_string(),
    };
    Ok(spelled.parse()?)
}

fn translate<T: Scalar>(a: &TranslateArgs) -> CliResult<()> {
    let system = load_system::<T>(&a.model)?;
    let length = length_request(&a.constraint, a.ratio)?;
    let sources = read_lines(&a.input)?;
    if sources.is_empty() {
        return Err(CliError::Data(format!("{} is empty", a.input.display())));
    }
    let refs = a.refs.as_ref().map(read_lines).transpose()?;
    if a.beam == 0 {
        return Err(CliError::Usage("beam must be at least 1".into()));
    }
    if a.gamma < 0.0 || !a.gamma.is_finite() {
        return Err(CliError::Usage(format!("gamma must be a non-negative number, got {}", a.gamma)));
    }
    let opts = TranslateOptions {
        length,
        target_lang: a.target_lang.clone(),
        budgets: a.complexity_budget.map(|b| vec![Some(b)]),
        gamma: a.gamma,
        beam: a.beam,
        explicit_lengths: None,
    };
    let out = system.translate(&sources, refs.as_deref(), &opts)?;
    let capped = out.iter().filter(|t| t.capped).count();
    if capped > 0 {
        log::warn!("{capped} of {} outputs hit the length cap", out.len());
    }
    write_output(a.out.as_deref(), &out.iter().map(|t| t.tokens.join(" ")).collect::<Vec<_>>())
}

fn is_corpus_token(t: &str) -> bool {
    !(t.starts_with('<') && t.ends_with('>'))
}

/// Per-sentence `J` for `constraint`, or `None` without one.
fn eval_targets(
    constraint: Option<&str>,
    src: Option<&[Vec<String>]>,
    refs: Option<&[Vec<String>]>,
) -> CliResult<Option<Vec<usize>>> {
    let Some(c) = constraint else { return Ok(None) };
    match c.parse::<LengthRequest>()? {
        LengthRequest::None => Ok(None),
        LengthRequest::Oracle => {
            let refs = refs.ok_or_else(|| CliError::Usage("oracle lengths need --refs".into()))?;
            Ok(Some(refs.iter().map(Vec::len).collect()))
        }
        LengthRequest::Soft(r) | LengthRequest::Hard(r) => {
            let src = src.ok_or_else(|| CliError::Usage("a length ratio needs --src".into()))?;
            Ok(Some(src.iter().map(|s| compute_target_length(s.iter().filter(|t| is_corpus_token(t)).count(), r)).collect()))
        }
    }
}

fn check_len(what: &str, n: usize, hyps: usize) -> CliResult<()> {
    if n == hyps {
        Ok(())
    } else {
        Err(CliError::Data(format!("{hyps} hypotheses vs {n} {what} lines")))
    }
}

fn evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let hyps = read_lines(&a.hyps)?;
    if hyps.is_empty() {
        return Err(CliError::Data(format!("{} is empty", a.hyps.display())));
    }
    let refs = a.refs.as_ref().map(read_lines).transpose()?;
    let src = a.src.as_ref().map(read_lines).transpose()?;
    if let Some(r) = &refs {
        check_len("reference", r.len(), hyps.len())?;
    }
    if let Some(s) = &src {
        check_len("source", s.len(), hyps.len())?;
    }
    let targets = eval_targets(a.constraint.as_deref(), src.as_deref(), refs.as_deref())?;
    let mut report = Report::new();
    for metric in a.metrics.split(',').map(str::trim).filter(|m| !m.is_empty()) {
        match metric {
            "bleu" => {
                let refs = refs.as_ref().ok_or_else(|| CliError::Usage("bleu needs --refs".into()))?;
                let b = bleu(&hyps, refs, 4)?;
                report.push("bleu", b.score);
                for (n, p) in b.precisions.iter().enumerate() {
                    report.push(format!("bleu_p{}", n + 1), *p);
                }
                report.push("brevity_penalty", b.brevity_penalty);
            }
            "length" => {
                let js = match (&targets, &refs) {
                    (Some(js), _) => js.clone(),
                    (None, Some(r)) => r.iter().map(Vec::len).collect(),
                    (None, None) => return Err(CliError::Usage("length needs --constraint or --refs".into())),
                };
                let lens: Vec<usize> = hyps.iter().map(Vec::len).collect();
                report.push("len_dist", avg_length_distance(&lens, &js)?);
                report.push("mean_len", lens.iter().sum::<usize>() as f64 / lens.len() as f64);
            }
            "content" => {
                let src = src.as_ref().ok_or_else(|| CliError::Usage("content needs --src".into()))?;
                let mut sets = Vec::with_capacity(src.len());
                for (i, s) in src.iter().enumerate() {
                    sets.push(admissible_references(&source_content(s)?, targets.as_ref().map(|t| t[i])));
                }
                let c = content_metrics(&hyps, &sets)?;
                report.push("exact", c.exact);
                report.push("exact_overall", c.exact_overall);
                report.push("recall", c.recall);
                report.push("precision", c.precision);
                report.push("validity", c.language_validity);
                report.push("prefix_recall", c.prefix_recall);
                report.push("suffix_recall", c.suffix_recall);
            }
            "complexity" => {
                let c = complexity_report(&hyps)?;
                report.push("bpe_tokens", c.bpe_token_count as f64);
                report.push("continuations", c.continuation_count as f64);
                report.push("complex_word_ratio", c.complex_word_ratio);
                report.push("fre", c.fre_approx);
            }
            other => return Err(CliError::Usage(format!("unknown metric '{other}' (bleu, length, content, complexity)"))),
        }
    }
    print!("{}", report.to_tsv());
    if let Some(stem) = &a.out {
        report.write(stem)?;
    }
    Ok(())
}

fn experiment(cli: &Cli, a: &ExperimentArgs) -> CliResult<()> {
    let tables: Vec<Table> = if a.table == "all" { Table::ALL.to_vec() } else { vec![a.table.parse()?] };
    let mut config = match a.scale.as_str() {
        "desk" => ExperimentConfig::desk(cli.seed),
        "smoke" => ExperimentConfig::smoke(cli.seed),
        other => return Err(CliError::Usage(format!("unknown scale '{other}' (desk or smoke)"))),
    };
    if let Some(s) = a.steps {
        config.train.steps = s;
    }
    if cli.precision == Precision::F64 {
        log::warn!("experiments always run in f32");
    }
    let mut lab = Lab::new(config);
    if let Some(dir) = &a.cache {
        lab = lab.with_cache(dir);
    }
    if let Some(out) = &a.out {
        std::fs::create_dir_all(out)?;
    }
    for t in tables {
        let table = run_table(&mut lab, t)?;
        println!("{table}");
        if let Some(out) = &a.out {
            table.report().write(out.join(t.as_str()))?;
        }
    }
    Ok(())
}
