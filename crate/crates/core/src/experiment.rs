//! Desk-scale experiment drivers on synthetic corpora.
//!
//! Each table trains (or reuses) small systems and reports one row per
//! system or configuration. Systems are cached in a [`Lab`] so tables that
//! share a system train it once.

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::synth::{synth_generate, Lang, SynthPair, SyntheticSpec};
use crate::data::Vocabulary;
use crate::decode::{count_continuation, LengthRequest};
use crate::error::{Error, Result};
use crate::eval::{admissible_references, avg_length_distance, bleu, complexity_report, content_metrics, source_content, Report};
use crate::model::{load_checkpoint, save_checkpoint, LengthMode, ModelConfig, TransformerModel};
use crate::pipeline::{languages_of, make_examples, synthetic_vocabulary, Direction, System, TranslateOptions, Translation};
use crate::rng::Rng;
use crate::train::{train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Table {
    LengthDistance,
    Quality,
    Multilingual,
    Cascade,
    Simplification,
}

impl Table {
    pub const ALL: [Table; 5] = [Table::LengthDistance, Table::Quality, Table::Multilingual, Table::Cascade, Table::Simplification];

    pub fn as_str(self) -> &'static str {
        match self {
            Table::LengthDistance => "length_distance",
            Table::Quality => "quality",
            Table::Multilingual => "multilingual",
            Table::Cascade => "cascade",
            Table::Simplification => "simplification",
        }
    }
}

impl FromStr for Table {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Table::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown table '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub spec: SyntheticSpec,
    /// Training pairs per system, split evenly across its directions.
    pub train_pairs: usize,
    pub valid_pairs: usize,
    pub test_pairs: usize,
    /// Architecture template; vocabulary size and length mode are filled in per system.
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Multilingual systems see more directions and get this many times the steps.
    pub multilingual_step_factor: f64,
    pub beam: usize,
    /// Second beam width reported by the quality table.
    pub wide_beam: usize,
    /// `p_short` of the complex-register corpus used by the simplification table.
    pub complex_p_short: f64,
    /// Soft continuation penalty used alongside the simplification budget.
    pub complexity_gamma: f64,
}

impl ExperimentConfig {
    /// Full desk-scale setting.
    pub fn desk(seed: u64) -> Self {
        ExperimentConfig {
            spec: SyntheticSpec { seed, ..SyntheticSpec::default() },
            train_pairs: 20_000,
            valid_pairs: 500,
            test_pairs: 500,
            model: ModelConfig::desk(1, LengthMode::None),
            train: TrainConfig { steps: 4000, seed, ..TrainConfig::default() },
            multilingual_step_factor: 2.5,
            beam: 1,
            wide_beam: 4,
            complex_p_short: 0.25,
            complexity_gamma: 2.0,
        }
    }

    /// Seconds-scale setting for smoke tests; results are not meaningful.
    pub fn smoke(seed: u64) -> Self {
        let mut cfg = Self::desk(seed);
        cfg.train_pairs = 200;
        cfg.valid_pairs = 20;
        cfg.test_pairs = 20;
        cfg.model.n_layers = 1;
        cfg.model.d_model = 16;
        cfg.model.d_ff = 32;
        cfg.model.n_heads = 2;
        cfg.model.d_len = 2;
        cfg.train.steps = 10;
        cfg.train.eval_every = 5;
        cfg.train.adam.schedule = crate::optim::LrSchedule::InverseSqrt { peak: 1e-3, warmup: 5 };
        cfg
    }
}

/// Systems used by the tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SystemKind {
    /// `L1 -> E` with the given length representation.
    Single(LengthMode),
    /// Tagged, every direction among `E`, `L1`, `L2` except `E -> E`;
    /// decoder-embedding length input.
    Multilingual,
    /// Tagged `E <-> L1`, no length input.
    Bilingual,
    /// `L1 -> E` on a corpus that prefers long forms, no length input.
    Complex,
}

impl SystemKind {
    pub fn key(self) -> String {
        match self {
            SystemKind::Single(m) => format!("l1e-{m}"),
            SystemKind::Multilingual => "multi".into(),
            SystemKind::Bilingual => "bi".into(),
            SystemKind::Complex => "complex".into(),
        }
    }

    fn directions(self) -> Vec<Direction> {
        use Lang::{Pivot as E, Satellite as L};
        match self {
            SystemKind::Single(_) | SystemKind::Complex => vec![Direction::new(L(1), E)],
            SystemKind::Multilingual => vec![
                Direction::new(L(1), E),
                Direction::new(E, L(1)),
                Direction::new(L(2), E),
                Direction::new(E, L(2)),
                Direction::new(L(1), L(2)),
                Direction::new(L(2), L(1)),
            ],
            SystemKind::Bilingual => vec![Direction::new(L(1), E), Direction::new(E, L(1))],
        }
    }

    fn mode(self) -> LengthMode {
        match self {
            SystemKind::Single(m) => m,
            SystemKind::Multilingual => LengthMode::DecoderEmbedding,
            SystemKind::Bilingual | SystemKind::Complex => LengthMode::None,
        }
    }

    fn tagged(self) -> bool {
        matches!(self, SystemKind::Multilingual | SystemKind::Bilingual)
    }
}

/// Trains systems on demand and keeps them for reuse. With a cache
/// directory, trained systems are also stored on disk (checkpoint plus
/// vocabulary) and reloaded by later runs with the same configuration.
pub struct Lab {
    pub config: ExperimentConfig,
    systems: HashMap<SystemKind, Arc<System<f32>>>,
    cache_dir: Option<PathBuf>,
}

impl Lab {
    pub fn new(config: ExperimentConfig) -> Self {
        Lab { config, systems: HashMap::new(), cache_dir: None }
    }

    pub fn with_cache(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    fn spec_for(&self, kind: SystemKind) -> SyntheticSpec {
        let mut spec = self.config.spec.clone();
        if kind == SystemKind::Complex {
            spec.p_short = self.config.complex_p_short;
        }
        spec
    }

    fn cache_paths(&self, kind: SystemKind) -> Option<(PathBuf, PathBuf)> {
        let dir = self.cache_dir.as_ref()?;
        let fingerprint = serde_json::to_string(&self.config).expect("config serializes");
        let hash = fingerprint.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3));
        let stem = dir.join(format!("{}-{hash:016x}", kind.key()));
        Some((stem.with_extension("ckpt"), stem.with_extension("vocab")))
    }

    pub fn system(&mut self, kind: SystemKind) -> Result<Arc<System<f32>>> {
        if let Some(s) = self.systems.get(&kind) {
            return Ok(s.clone());
        }
        let cached = self.cache_paths(kind);
        let system = match &cached {
            Some((ckpt, vocab)) if ckpt.exists() && vocab.exists() => {
                System::new(load_checkpoint(ckpt)?, Vocabulary::load(vocab)?)?
            }
            _ => {
                let s = self.train_system(kind)?;
                if let Some((ckpt, vocab)) = &cached {
                    std::fs::create_dir_all(ckpt.parent().expect("cache file has a parent"))?;
                    save_checkpoint(ckpt, &s.model)?;
                    s.vocab.save(vocab)?;
                }
                s
            }
        };
        let system = Arc::new(system);
        self.systems.insert(kind, system.clone());
        Ok(system)
    }

    fn train_system(&self, kind: SystemKind) -> Result<System<f32>> {
        let cfg = &self.config;
        let spec = self.spec_for(kind);
        let dirs = kind.directions();
        let mode = kind.mode();
        let len_tokens = (mode == LengthMode::SourceToken).then_some(cfg.model.max_len_index);
        let vocab = synthetic_vocabulary(&spec, &languages_of(&dirs), kind.tagged(), len_tokens)?;
        let mut model_cfg = cfg.model.clone();
        model_cfg.vocab_size = vocab.len();
        model_cfg.length_mode = mode;
        let (mut train_set, mut valid_set) = (Vec::new(), Vec::new());
        let tag_corpus = if kind == SystemKind::Complex { "complex/" } else { "" };
        for d in &dirs {
            let tag = kind.tagged().then(|| d.tgt.to_string());
            for (n, split, out) in [
                (cfg.train_pairs / dirs.len(), "train", &mut train_set),
                (cfg.valid_pairs / dirs.len(), "valid", &mut valid_set),
            ] {
                let pairs = synth_generate(&spec, n.max(1), d.src, d.tgt, &format!("{tag_corpus}{split}/{d}"))?;
                let pairs: Vec<_> = pairs.into_iter().map(|p| (p.src, p.tgt)).collect();
                out.extend(make_examples(&pairs, tag.as_deref(), &vocab, mode, model_cfg.max_len_index)?.0);
            }
        }
        let mut train_cfg = cfg.train.clone();
        if dirs.len() > 2 {
            train_cfg.steps = (train_cfg.steps as f64 * cfg.multilingual_step_factor).round() as u64;
        }
        let model = TransformerModel::new(model_cfg, &mut Rng::stream(cfg.spec.seed, &format!("init/{}", kind.key())))?;
        log::info!("training {} on {} examples for {} steps", kind.key(), train_set.len(), train_cfg.steps);
        let (model, _) = train(model, &vocab, &train_set, &valid_set, train_cfg)?;
        System::new(model, vocab)
    }

    /// Held-out pairs for a direction.
    pub fn test_set(&self, src: Lang, tgt: Lang) -> Result<Vec<SynthPair>> {
        synth_generate(&self.config.spec, self.config.test_pairs, src, tgt, &format!("test/{}", Direction::new(src, tgt)))
    }
}

/// A printable result table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl ResultTable {
    fn new(title: &str, columns: &[&str]) -> Self {
        ResultTable { title: title.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: impl Into<String>, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push((row.into(), values));
    }

    pub fn get(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter().find(|(r, _)| r == row).map(|(_, v)| v[c])
    }

    /// Flattened `row/column` metrics.
    pub fn report(&self) -> Report {
        let mut r = Report::new();
        for (row, values) in &self.rows {
            for (c, v) in self.columns.iter().zip(values) {
                r.push(format!("{}/{}", row.replace(' ', "_"), c), *v);
            }
        }
        r
    }
}

impl fmt::Display for ResultTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w0 = self.rows.iter().map(|(r, _)| r.len()).chain([6]).max().unwrap_or(6);
        writeln!(f, "{}", self.title)?;
        write!(f, "{:w0$}", "system")?;
        for c in &self.columns {
            write!(f, "  {c:>12}")?;
        }
        writeln!(f)?;
        for (r, values) in &self.rows {
            write!(f, "{r:w0$}")?;
            for v in values {
                write!(f, "  {v:>12.4}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn sources(pairs: &[SynthPair]) -> Vec<Vec<String>> {
    pairs.iter().map(|p| p.src.clone()).collect()
}

fn references(pairs: &[SynthPair]) -> Vec<Vec<String>> {
    pairs.iter().map(|p| p.tgt.clone()).collect()
}

fn outputs(ts: &[Translation]) -> Vec<Vec<String>> {
    ts.iter().map(|t| t.tokens.clone()).collect()
}

/// Admissible content references for the `J` of each translation.
fn content_refs(pairs: &[SynthPair], ts: &[Translation]) -> Vec<Vec<Vec<usize>>> {
    pairs.iter().zip(ts).map(|(p, t)| admissible_references(&p.content, t.target_len)).collect()
}

fn length_distance_of(ts: &[Translation]) -> Result<f64> {
    let lens: Vec<usize> = ts.iter().map(|t| t.tokens.len()).collect();
    let js: Vec<usize> = ts.iter().map(|t| t.target_len.unwrap_or(0)).collect();
    avg_length_distance(&lens, &js)
}

fn options(length: LengthRequest, target: Option<Lang>, beam: usize) -> TranslateOptions {
    TranslateOptions { length, target_lang: target.map(|l| l.to_string()), beam, ..TranslateOptions::default() }
}

pub const LENGTH_SYSTEMS: [(&str, LengthMode); 4] = [
    ("Baseline", LengthMode::None),
    ("Source Emb", LengthMode::SourceToken),
    ("Decoder Emb", LengthMode::DecoderEmbedding),
    ("Decoder Pos", LengthMode::ReversePositional),
];

/// Mean `|len - J|` under soft decoding for the four length representations.
pub fn length_distance_table(lab: &mut Lab) -> Result<ResultTable> {
    let test = lab.test_set(Lang::Satellite(1), Lang::Pivot)?;
    let src = sources(&test);
    let mut table = ResultTable::new("Average length distance, soft constraint (L1 -> E)", &["ratio_0.8", "ratio_0.5", "cap_hits"]);
    for (name, mode) in LENGTH_SYSTEMS {
        let sys = lab.system(SystemKind::Single(mode))?;
        let mut row = Vec::new();
        let mut caps = 0;
        for r in [0.8, 0.5] {
            let ts = sys.translate(&src, None, &options(LengthRequest::Soft(r), None, lab.config.beam))?;
            caps += ts.iter().filter(|t| t.capped).count();
            row.push(length_distance_of(&ts)?);
        }
        row.push(caps as f64);
        table.push(name, row);
    }
    Ok(table)
}

/// BLEU and content preservation under the hard length constraint.
pub fn quality_table(lab: &mut Lab) -> Result<ResultTable> {
    let test = lab.test_set(Lang::Satellite(1), Lang::Pivot)?;
    let (src, refs) = (sources(&test), references(&test));
    let mut table = ResultTable::new(
        "Quality under the hard length constraint (L1 -> E)",
        &["bleu", "exact", "recall", "prefix_recall", "suffix_recall", "len_dist"],
    );
    let beams = [(lab.config.beam, String::new()), (lab.config.wide_beam, format!(" beam{}", lab.config.wide_beam))];
    for (beam, suffix) in beams {
        for r in [0.8, 0.5] {
            for (name, mode) in LENGTH_SYSTEMS {
                let sys = lab.system(SystemKind::Single(mode))?;
                let ts = sys.translate(&src, None, &options(LengthRequest::Hard(r), None, beam))?;
                let hyps = outputs(&ts);
                let c = content_metrics(&hyps, &content_refs(&test, &ts))?;
                let b = bleu(&hyps, &refs, 4)?.score;
                table.push(
                    format!("{name} @{r}{suffix}"),
                    vec![b, c.exact, c.recall, c.prefix_recall, c.suffix_recall, length_distance_of(&ts)?],
                );
            }
        }
    }
    Ok(table)
}

/// Zero-shot `E -> E` compression with the multilingual and bilingual systems.
pub fn multilingual_table(lab: &mut Lab) -> Result<ResultTable> {
    let test = lab.test_set(Lang::Pivot, Lang::Pivot)?;
    let src = sources(&test);
    let mut table = ResultTable::new(
        "Zero-shot E -> E compression, hard length constraint",
        &["validity", "exact", "exact_overall", "recall", "precision"],
    );
    for r in [0.8, 0.5] {
        for (name, kind) in [("Multilingual", SystemKind::Multilingual), ("Bilingual", SystemKind::Bilingual)] {
            let sys = lab.system(kind)?;
            let ts = sys.translate(&src, None, &options(LengthRequest::Hard(r), Some(Lang::Pivot), lab.config.beam))?;
            let c = content_metrics(&outputs(&ts), &content_refs(&test, &ts))?;
            table.push(format!("{name} @{r}"), vec![c.language_validity, c.exact, c.exact_overall, c.recall, c.precision]);
        }
    }
    Ok(table)
}

/// End-to-end `E -> E` compression against a cascade through `L1`.
pub fn cascade_table(lab: &mut Lab) -> Result<ResultTable> {
    let test = lab.test_set(Lang::Pivot, Lang::Pivot)?;
    let src = sources(&test);
    let multi = lab.system(SystemKind::Multilingual)?;
    let first_leg = lab.system(SystemKind::Bilingual)?;
    let beam = lab.config.beam;
    let mut table =
        ResultTable::new("End-to-end vs cascaded compression (E -> E)", &["exact_overall", "recall", "validity", "len_dist"]);
    for r in [0.8, 0.5] {
        let end2end = multi.translate(&src, None, &options(LengthRequest::Hard(r), Some(Lang::Pivot), beam))?;
        let js: Vec<usize> = end2end.iter().map(|t| t.target_len.expect("hard request sets J")).collect();
        let pivot = first_leg.translate(&src, None, &options(LengthRequest::None, Some(Lang::Satellite(1)), beam))?;
        let fixed_pivot = first_leg.translate(&src, None, &options(LengthRequest::Hard(r), Some(Lang::Satellite(1)), beam))?;
        let mut row_for = |name: &str, ts: &[Translation]| -> Result<()> {
            let c = content_metrics(&outputs(ts), &content_refs(&test, ts))?;
            table.push(format!("{name} @{r}"), vec![c.exact_overall, c.recall, c.language_validity, length_distance_of(ts)?]);
            Ok(())
        };
        row_for("End2End", &end2end)?;
        for (name, leg1) in [("Cascade", &pivot), ("Cascade Fix. Pivot", &fixed_pivot)] {
            let mid = outputs(leg1);
            let mid: Vec<Vec<String>> =
                mid.into_iter().map(|m| if m.is_empty() { vec!["<unk>".to_string()] } else { m }).collect();
            let opts = TranslateOptions { explicit_lengths: Some(js.clone()), ..options(LengthRequest::Hard(r), Some(Lang::Pivot), beam) };
            let ts = multi.translate(&mid, None, &opts)?;
            row_for(name, &ts)?;
        }
    }
    Ok(table)
}

/// Continuation-token budget on a system trained on long-form-heavy output.
pub fn simplification_table(lab: &mut Lab) -> Result<ResultTable> {
    let test = lab.test_set(Lang::Satellite(1), Lang::Pivot)?;
    let src = sources(&test);
    let sys = lab.system(SystemKind::Complex)?;
    let beam = lab.config.beam;
    let gamma = lab.config.complexity_gamma;
    let mut table = ResultTable::new(
        "Complexity budget (L1 -> E)",
        &["bpe_tokens", "continuations", "complex_word_ratio", "fre", "violations", "recall"],
    );
    let plain = sys.translate(&src, None, &options(LengthRequest::None, None, beam))?;
    let half: Vec<Option<usize>> = plain.iter().map(|t| Some(count_continuation(&t.tokens) / 2)).collect();
    let runs = [
        ("Unconstrained", None, 0.0),
        ("Budget 50%", Some(half), gamma),
        ("Budget 0", Some(vec![Some(0)]), 0.0),
    ];
    for (name, budgets, g) in runs {
        let ts = match &budgets {
            None => plain.clone(),
            Some(b) => sys.translate(&src, None, &TranslateOptions { budgets: Some(b.clone()), gamma: g, ..options(LengthRequest::None, None, beam) })?,
        };
        let hyps = outputs(&ts);
        let rep = complexity_report(&hyps)?;
        let violations = match &budgets {
            None => 0,
            Some(b) => hyps
                .iter()
                .enumerate()
                .filter(|(i, h)| b[if b.len() == 1 { 0 } else { *i }].is_some_and(|cap| count_continuation(h) > cap))
                .count(),
        };
        let refs: Vec<Vec<Vec<usize>>> = test.iter().map(|p| vec![p.content.clone()]).collect();
        let c = content_metrics(&hyps, &refs)?;
        table.push(
            name,
            vec![rep.bpe_token_count as f64, rep.continuation_count as f64, rep.complex_word_ratio, rep.fre_approx, violations as f64, c.recall],
        );
    }
    Ok(table)
}

pub fn run_table(lab: &mut Lab, table: Table) -> Result<ResultTable> {
    match table {
        Table::LengthDistance => length_distance_table(lab),
        Table::Quality => quality_table(lab),
        Table::Multilingual => multilingual_table(lab),
        Table::Cascade => cascade_table(lab),
        Table::Simplification => simplification_table(lab),
    }
}

/// Content symbols of every source, for callers that score without a spec.
pub fn source_contents(srcs: &[Vec<String>]) -> Result<Vec<Vec<usize>>> {
    srcs.iter().map(|s| source_content(s)).collect()
}
