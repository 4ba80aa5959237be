//! The `slm` command line: stats, train, sweep, segment, eval, selfcheck
//! and synth. Every command that is given an output directory leaves a
//! `manifest.json` there.

mod manifest;
pub mod selfcheck;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::corpus::synthetic::{Lexicon, LexiconSpec};
use crate::corpus::{
    build_vocab, corpus_stats, load_corpus, parse_embeddings, pretrain_cbow, write_embeddings, CorpusError, TextLine,
    Vocabulary,
};
use crate::eval::{boundary_stats, evaluate, parse_pairs, word_prf, EvalError, MetricsReport};
use crate::lattice::Segmentation;
use crate::numerics::FloatMode;
use crate::training::{
    model_from_checkpoint, train, two_stage_sweep, Checkpoint, CheckpointError, ConfigError, RunOptions, TrainConfig,
    TrainData, TrainError,
};

pub use manifest::Manifest;

/// Exit status contract.
pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config or input data.
    #[error("{0}")]
    Invalid(String),
    /// Anything that went wrong while doing the work.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Failed(_) => EXIT_FAILURE,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { .. } => CliError::Failed(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } => CliError::Failed(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(_) => CliError::Failed(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(c) => c.into(),
            TrainError::Invalid(_) => CliError::Invalid(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Failed(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "slm", version, about = "Segmental language models for unsupervised word segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corpus statistics: tokens, words, lines, characters per word, vocabulary.
    Stats {
        corpus: PathBuf,
        /// The file is unsegmented text; skip word statistics.
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one configuration.
    Train(RunArgs),
    /// Tune the learning rate on the first seed, then rerun the finalists.
    Sweep(RunArgs),
    /// Write the most probable segmentation of every input line.
    Segment {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Vocabulary file; defaults to `vocab.txt` beside the checkpoint.
        #[arg(long)]
        vocab: Option<PathBuf>,
        input: PathBuf,
        /// Output file; defaults to stdout, or `segmented.txt` under `--out`.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a segmentation, or a checkpoint, against gold text.
    Eval {
        #[arg(long)]
        reference: PathBuf,
        /// Segmented hypothesis file.
        #[arg(long, conflicts_with = "checkpoint")]
        hyp: Option<PathBuf>,
        /// Checkpoint to segment the reference with (also reports bpc).
        #[arg(long, required_unless_present = "hyp")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in oracle checks.
    Selfcheck {
        #[arg(long, value_parser = parse_float, default_value = "64")]
        float: FloatMode,
        /// Unblock one segmental mask entry before the leakage check, which
        /// must then fail.
        #[arg(long)]
        corrupt_mask: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a seeded synthetic lexicon corpus (train/valid/test).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        sentences: usize,
        #[arg(long, default_value_t = 20)]
        words: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// `key=value` override with a dotted key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_float)]
    pub float: Option<FloatMode>,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint (train only).
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

fn parse_float(s: &str) -> Result<FloatMode, String> {
    s.parse::<u32>()
        .ok()
        .and_then(FloatMode::from_bits)
        .ok_or_else(|| format!("expected 32 or 64, got {s:?}"))
}

/// Parses `args` and runs the command, returning the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let echoed: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli, &echoed) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, args: &[String]) -> Result<(), CliError> {
    match cli.command {
        Command::Stats { corpus, raw, out } => cmd_stats(&corpus, !raw, out.as_deref(), args),
        Command::Train(a) => cmd_train(&a, args),
        Command::Sweep(a) => cmd_sweep(&a, args),
        Command::Segment {
            checkpoint,
            vocab,
            input,
            output,
            out,
        } => cmd_segment(&checkpoint, vocab.as_deref(), &input, output.as_deref(), out.as_deref(), args),
        Command::Eval {
            reference,
            hyp,
            checkpoint,
            vocab,
            out,
        } => cmd_eval(&reference, hyp.as_deref(), checkpoint.as_deref(), vocab.as_deref(), out.as_deref(), args),
        Command::Selfcheck {
            float,
            corrupt_mask,
            out,
        } => cmd_selfcheck(float, corrupt_mask, out.as_deref(), args),
        Command::Synth {
            out,
            sentences,
            words,
            seed,
        } => cmd_synth(&out, sentences, words, seed, args),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn load_lines(path: &Path, has_gold: bool) -> Result<Vec<TextLine>, CliError> {
    let corpus = load_corpus(path, has_gold)?;
    if corpus.lines.is_empty() {
        return Err(CliError::Invalid(format!("{} has no text", path.display())));
    }
    Ok(corpus.lines)
}

pub fn cmd_stats(path: &Path, has_gold: bool, out: Option<&Path>, args: &[String]) -> Result<(), CliError> {
    let lines = load_lines(path, has_gold)?;
    let s = corpus_stats(&lines);
    let fmt_opt = |v: Option<usize>| v.map_or("-".to_string(), |w| w.to_string());
    println!("tokens            {}", s.tokens);
    println!("words             {}", fmt_opt(s.words));
    println!("lines             {}", s.lines);
    println!(
        "chars per word    {}",
        s.avg_chars_per_word.map_or("-".to_string(), |a| format!("{a:.2}"))
    );
    println!("character vocab   {}", s.vocab_size);
    if let Some(dir) = out {
        create_dir(dir)?;
        let json = serde_json::to_string_pretty(&s).expect("stats serialize");
        write_file(&dir.join("stats.json"), &json)?;
        Manifest::new("stats", args).write(dir)?;
    }
    Ok(())
}

fn resolve_config(a: &RunArgs) -> Result<(TrainConfig, Vec<String>), CliError> {
    let text = read_file(&a.config)?;
    let mut overrides = a.set.clone();
    if let Some(seed) = a.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(f) = a.float {
        overrides.push(format!("float=\"{}\"", f.name()));
    }
    let cfg = TrainConfig::from_toml(&text, &overrides)?;
    Ok((cfg, overrides))
}

/// Resolves a data path from the config relative to the config file.
fn data_path(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn prepare_data(a: &RunArgs, cfg: &TrainConfig) -> Result<(TrainData, Vocabulary), CliError> {
    let train_path = cfg
        .data
        .train
        .as_ref()
        .ok_or_else(|| CliError::Invalid("data.train: required".into()))?;
    let train_lines = load_lines(&data_path(&a.config, train_path), cfg.data.gold)?;
    let vocab = build_vocab(&train_lines, cfg.data.min_count);
    let (train_seqs, unknown) = vocab.encode_all(&train_lines);
    if unknown > 0 {
        log::warn!("{unknown} training characters fall below min_count and map to UNK");
    }
    let valid = match &cfg.data.valid {
        Some(p) => {
            let lines = load_lines(&data_path(&a.config, p), cfg.data.gold)?;
            let (seqs, unknown) = vocab.encode_all(&lines);
            if unknown > 0 {
                log::warn!("{unknown} validation characters are unknown and map to UNK");
            }
            seqs
        }
        None => Vec::new(),
    };
    Ok((
        TrainData {
            train: train_seqs,
            valid,
            vocab_size: vocab.len(),
        },
        vocab,
    ))
}

fn initial_embeddings(
    a: &RunArgs,
    cfg: &TrainConfig,
    data: &TrainData,
    out: &Path,
) -> Result<Option<ndarray::Array2<f64>>, CliError> {
    if let Some(p) = &cfg.data.embeddings {
        let m = parse_embeddings(&read_file(&data_path(&a.config, p))?)?;
        return Ok(Some(m));
    }
    if cfg.cbow.enabled {
        let m = pretrain_cbow(&data.train, data.vocab_size, &cfg.cbow_config());
        write_file(&out.join("embeddings.txt"), &write_embeddings(&m))?;
        return Ok(Some(m));
    }
    Ok(None)
}

pub fn cmd_train(a: &RunArgs, args: &[String]) -> Result<(), CliError> {
    let (cfg, overrides) = resolve_config(a)?;
    let (data, vocab) = prepare_data(a, &cfg)?;
    create_dir(&a.out)?;
    write_file(&a.out.join("vocab.txt"), &vocab.to_file_string())?;
    write_file(&a.out.join("config.toml"), &cfg.to_toml())?;
    let resume = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    let init_embeddings = if resume.is_some() {
        None
    } else {
        initial_embeddings(a, &cfg, &data, &a.out)?
    };
    let outcome = train(
        &cfg,
        &data,
        RunOptions {
            out_dir: Some(a.out.clone()),
            resume,
            init_embeddings,
            stop_after: None,
        },
    )?;
    if let Some(last) = outcome.records.last() {
        println!(
            "{} step {} loss {:.4} val bpc {:.4}",
            outcome.run_id, last.step, last.train_loss, last.val_bpc
        );
    }
    for (name, snap) in [("mcc", &outcome.best_mcc), ("bpc", &outcome.best_bpc)] {
        if let Some(s) = snap {
            println!("best {name} {:.4} at step {}", s.value, s.step);
        }
    }
    Manifest::new("train", args).with_config(&cfg, overrides).write(&a.out)
}

pub fn cmd_sweep(a: &RunArgs, args: &[String]) -> Result<(), CliError> {
    let (cfg, overrides) = resolve_config(a)?;
    let (data, vocab) = prepare_data(a, &cfg)?;
    create_dir(&a.out)?;
    write_file(&a.out.join("vocab.txt"), &vocab.to_file_string())?;
    write_file(&a.out.join("config.toml"), &cfg.to_toml())?;
    let init = initial_embeddings(a, &cfg, &data, &a.out)?;
    let report = two_stage_sweep(&cfg, &data, Some(&a.out), init.as_ref())?;
    for (name, choice) in [("mcc", &report.mcc_choice), ("bpc", &report.bpc_choice)] {
        match choice {
            Some(s) => println!(
                "by {name}: lr {} seed {} step {} value {:.4}",
                s.lr, s.seed, s.step, s.value
            ),
            None => println!("by {name}: no candidate"),
        }
    }
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&a.out.join("sweep.json"), &json)?;
    Manifest::new("sweep", args).with_config(&cfg, overrides).write(&a.out)
}

fn load_vocab(checkpoint: &Path, vocab: Option<&Path>) -> Result<Vocabulary, CliError> {
    let path = match vocab {
        Some(p) => p.to_path_buf(),
        None => checkpoint.parent().unwrap_or(Path::new(".")).join("vocab.txt"),
    };
    Ok(Vocabulary::parse(&read_file(&path)?)?)
}

/// Segments `lines` with the model stored in `ckpt`.
fn segment_lines(ckpt: &Checkpoint, vocab: &Vocabulary, lines: &[TextLine]) -> Result<Vec<Segmentation>, CliError> {
    if ckpt.meta.vocab_size != vocab.len() {
        return Err(CliError::Invalid(format!(
            "vocabulary has {} entries but the checkpoint expects {}",
            vocab.len(),
            ckpt.meta.vocab_size
        )));
    }
    let (seqs, unknown) = vocab.encode_all(lines);
    if unknown > 0 {
        log::warn!("{unknown} characters are not in the vocabulary and map to UNK");
    }
    let refs: Vec<&[usize]> = seqs.iter().map(|s| s.ids.as_slice()).collect();
    let budget = ckpt.meta.config.char_budget;
    let segs = match ckpt.float {
        FloatMode::F32 => model_from_checkpoint::<f32>(ckpt)?.segment(&refs, budget),
        FloatMode::F64 => model_from_checkpoint::<f64>(ckpt)?.segment(&refs, budget),
    };
    segs.map_err(|e| CliError::Failed(e.to_string()))
}

pub fn cmd_segment(
    checkpoint: &Path,
    vocab: Option<&Path>,
    input: &Path,
    output: Option<&Path>,
    out: Option<&Path>,
    args: &[String],
) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let vocab = load_vocab(checkpoint, vocab)?;
    let lines = load_lines(input, false)?;
    let segs = segment_lines(&ckpt, &vocab, &lines)?;
    let mut text = String::new();
    for (line, seg) in lines.iter().zip(&segs) {
        text.push_str(&seg.render(&line.chars));
        text.push('\n');
    }
    let target = match (output, out) {
        (Some(p), _) => Some(p.to_path_buf()),
        (None, Some(dir)) => Some(dir.join("segmented.txt")),
        (None, None) => None,
    };
    match target {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            write_file(&p, &text)?;
        }
        None => print!("{text}"),
    }
    if let Some(dir) = out {
        create_dir(dir)?;
        Manifest::new("segment", args).write(dir)?;
    }
    Ok(())
}

pub fn cmd_eval(
    reference: &Path,
    hyp: Option<&Path>,
    checkpoint: Option<&Path>,
    vocab: Option<&Path>,
    out: Option<&Path>,
    args: &[String],
) -> Result<(), CliError> {
    let report = match (hyp, checkpoint) {
        (Some(h), _) => {
            let (h_text, r_text) = (read_file(h)?, read_file(reference)?);
            let h_lines: Vec<&str> = h_text.lines().filter(|l| !l.trim().is_empty()).collect();
            let r_lines: Vec<&str> = r_text.lines().filter(|l| !l.trim().is_empty()).collect();
            let (hs, rs) = parse_pairs(&h_lines, &r_lines)?;
            let words = word_prf(&hs, &rs)?;
            let bounds = boundary_stats(&hs, &rs)?;
            MetricsReport::from_parts(&words, &bounds, f64::NAN, crate::eval::avg_word_length(&hs)?)
        }
        (None, Some(c)) => {
            let ckpt = Checkpoint::load(c)?;
            let vocab = load_vocab(c, vocab)?;
            let lines = load_lines(reference, true)?;
            let (seqs, unknown) = vocab.encode_all(&lines);
            if unknown > 0 {
                log::warn!("{unknown} characters are not in the vocabulary and map to UNK");
            }
            let budget = ckpt.meta.config.char_budget;
            match ckpt.float {
                FloatMode::F32 => evaluate(&model_from_checkpoint::<f32>(&ckpt)?, &seqs, budget)?.0,
                FloatMode::F64 => evaluate(&model_from_checkpoint::<f64>(&ckpt)?, &seqs, budget)?.0,
            }
        }
        (None, None) => return Err(CliError::Invalid("either --hyp or --checkpoint is required".into())),
    };
    print!("{report}");
    if let Some(dir) = out {
        create_dir(dir)?;
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        write_file(&dir.join("metrics.json"), &json)?;
        Manifest::new("eval", args).write(dir)?;
    }
    Ok(())
}

pub fn cmd_selfcheck(float: FloatMode, corrupt_mask: bool, out: Option<&Path>, args: &[String]) -> Result<(), CliError> {
    let results = selfcheck::run_all(float, corrupt_mask);
    let mut failed = 0;
    for r in &results {
        println!("{r}");
        if !r.passed {
            failed += 1;
        }
    }
    if let Some(dir) = out {
        create_dir(dir)?;
        let json = serde_json::to_string_pretty(&results).expect("results serialize");
        write_file(&dir.join("selfcheck.json"), &json)?;
        Manifest::new("selfcheck", args).with_float(float).write(dir)?;
    }
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} of {} checks failed", results.len())));
    }
    Ok(())
}

pub fn cmd_synth(out: &Path, sentences: usize, words: usize, seed: u64, args: &[String]) -> Result<(), CliError> {
    if sentences < 10 || words == 0 {
        return Err(CliError::Invalid("need at least 10 sentences and 1 word".into()));
    }
    let lex = Lexicon::generate(&LexiconSpec {
        words,
        seed,
        ..LexiconSpec::default()
    });
    let all = lex.sentences(sentences, 0);
    // 90/5/5 split
    let n_valid = sentences / 20;
    let n_train = sentences - 2 * n_valid;
    create_dir(out)?;
    let render = |lines: &[TextLine]| -> String { lines.iter().map(|l| l.to_gold_string() + "\n").collect() };
    write_file(&out.join("train.txt"), &render(&all[..n_train]))?;
    write_file(&out.join("valid.txt"), &render(&all[n_train..n_train + n_valid]))?;
    write_file(&out.join("test.txt"), &render(&all[n_train + n_valid..]))?;
    write_file(&out.join("lexicon.txt"), &(lex.words.join("\n") + "\n"))?;
    let mut m = Manifest::new("synth", args);
    m.seed = Some(seed);
    m.write(out)
}
