//! Command-line front end.
//!
//! Settings come from three layers: built-in defaults, an optional
//! `key=value` config file (`--config`), then command-line flags. Keys use the
//! long flag names, with `-` or `_`.

use std::collections::HashMap;
use std::fmt::Display;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::corpus::{load_cloze, tokenize, EncodedCorpus, Split, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{attention_profile, cloze_accuracy, perplexity, EvalReport};
use crate::models::{
    count_params, load_checkpoint, match_hidden_size, save_checkpoint, HiddenSizeMatch, Model,
    ModelConfig, Variant,
};
use crate::numerics::{Precision, Scalar};
use crate::trainer::{train, LogEntry, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Unsupported(_) => EXIT_CONFIG,
        Error::NonFinite(_) => EXIT_NUMERIC,
        Error::Shape { .. }
        | Error::Parse { .. }
        | Error::Format { .. }
        | Error::InsufficientData(_)
        | Error::Io { .. } => EXIT_DATA,
    }
}

#[derive(Debug, Parser)]
#[command(name = "kvplm", version, about = "Word-level LSTM language models with output memories")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub shared: Shared,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Shared {
    /// key=value settings file; flags override it
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// lstm, attention, kv, kvp or ngram
    #[arg(long, global = true)]
    pub variant: Option<Variant>,
    /// LSTM output size k
    #[arg(long, global = true)]
    pub hidden: Option<usize>,
    /// Attention window L
    #[arg(long, global = true)]
    pub window: Option<usize>,
    /// N-gram order N
    #[arg(long, global = true)]
    pub order: Option<usize>,
    /// Target model-parameter count (embeddings excluded); picks k
    #[arg(long, global = true)]
    pub budget: Option<f64>,
    #[arg(long, global = true)]
    pub precision: Option<Precision>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a vocabulary and encode corpus files
    Preprocess(PreprocessArgs),
    /// Train a model and keep the best dev-perplexity checkpoint
    Train(TrainArgs),
    /// Perplexity of a checkpoint on an encoded corpus
    Eval(EvalArgs),
    /// Cloze accuracy per word category
    Cloze(ClozeArgs),
    /// Mean attention per memory position
    InspectAttention(EvalArgs),
    /// Parameter counts for a configuration
    CountParams(CountArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct PreprocessArgs {
    /// Raw training text; the vocabulary is built from it
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Vocabulary size cap
    #[arg(long)]
    pub cap: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// Encoded training corpus
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    /// Encoded dev corpus
    #[arg(long)]
    pub dev_data: Option<PathBuf>,
    /// Vocabulary file (sets |V|)
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Embedding size w
    #[arg(long)]
    pub embed: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub unroll: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Validate every this many batches
    #[arg(long)]
    pub validate_every: Option<usize>,
    /// Parallel lanes for dev perplexity
    #[arg(long)]
    pub lanes: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Encoded corpus
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub lanes: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ClozeArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Cloze file
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CountArgs {
    /// Embedding size w
    #[arg(long)]
    pub embed: Option<usize>,
    /// Vocabulary size |V|
    #[arg(long)]
    pub vocab_size: Option<usize>,
}

/// Parsed `key=value` file.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    path: PathBuf,
    values: HashMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut values = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected key=value, found {line:?}"),
            })?;
            values.insert(key.trim().replace('-', "_"), (i + 1, value.trim().to_string()));
        }
        Ok(ConfigFile {
            path: path.to_path_buf(),
            values,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Typed value for `key`, if present.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| Error::Parse {
                path: self.path.clone(),
                line: *line,
                message: format!("{key}: {e}"),
            }),
        }
    }
}

fn pick<T: FromStr>(flag: Option<T>, file: &ConfigFile, key: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    match flag {
        Some(v) => Ok(Some(v)),
        None => file.get(key),
    }
}

fn required<T>(value: Option<T>, key: &str) -> Result<T> {
    value.ok_or_else(|| Error::Config(vec![format!("missing setting `{key}`")]))
}

/// Settings after merging defaults, the config file and flags.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub variant: Variant,
    pub hidden: Option<usize>,
    pub window: usize,
    pub order: usize,
    pub budget: Option<f64>,
    pub precision: Precision,
}

impl RunConfig {
    pub fn resolve(shared: &Shared, file: &ConfigFile) -> Result<Self> {
        Ok(RunConfig {
            seed: pick(shared.seed, file, "seed")?.unwrap_or(1),
            out: pick(shared.out.clone(), file, "out")?.unwrap_or_else(|| PathBuf::from(".")),
            variant: pick(shared.variant, file, "variant")?.unwrap_or(Variant::Lstm),
            hidden: pick(shared.hidden, file, "hidden")?,
            window: pick(shared.window, file, "window")?.unwrap_or(5),
            order: pick(shared.order, file, "order")?.unwrap_or(4),
            budget: pick(shared.budget, file, "budget")?,
            precision: pick(shared.precision, file, "precision")?.unwrap_or(Precision::F32),
        })
    }

    /// Model configuration; a budget (when given) decides `k`.
    pub fn model_config(&self, embed: usize, vocab_size: usize) -> Result<(ModelConfig, Option<HiddenSizeMatch>)> {
        let window = if self.variant.is_attentive() { self.window } else { 0 };
        let order = if self.variant == Variant::Ngram { self.order } else { 0 };
        let mut cfg = ModelConfig::new(self.variant, embed, self.hidden.unwrap_or(0), vocab_size)
            .with_window(window)
            .with_order(order);
        let mut matched = None;
        if let Some(budget) = self.budget {
            let m = match_hidden_size(&cfg, budget)?;
            cfg.hidden = m.hidden;
            matched = Some(m);
        } else if self.hidden.is_none() {
            return Err(Error::Config(vec![
                "either `hidden` or `budget` must be set".to_string(),
            ]));
        }
        cfg.validate()?;
        Ok((cfg, matched))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Runs a parsed command; human-readable output goes to `stdout`.
pub fn run(cli: &Cli, stdout: &mut dyn std::io::Write) -> Result<()> {
    let file = match &cli.shared.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let run = RunConfig::resolve(&cli.shared, &file)?;
    let mut say = |line: String| {
        let _ = writeln!(stdout, "{line}");
    };
    match &cli.command {
        Command::Preprocess(a) => preprocess(a, &file, &run, &mut say),
        Command::Train(a) => match run.precision {
            Precision::F32 => train_cmd::<f32>(a, &file, &run, &mut say),
            Precision::F64 => train_cmd::<f64>(a, &file, &run, &mut say),
        },
        Command::Eval(a) => eval_cmd(a, &file, &run, &mut say),
        Command::Cloze(a) => cloze_cmd(a, &file, &run, &mut say),
        Command::InspectAttention(a) => inspect_cmd(a, &file, &run, &mut say),
        Command::CountParams(a) => count_cmd(a, &file, &run, &mut say),
    }
}

fn preprocess(a: &PreprocessArgs, file: &ConfigFile, run: &RunConfig, say: &mut dyn FnMut(String)) -> Result<()> {
    let train_path: PathBuf = required(pick(a.train.clone(), file, "train")?, "train")?;
    let cap: usize = pick(a.cap, file, "cap")?.unwrap_or(77_000);
    let text = fs::read_to_string(&train_path).map_err(|e| Error::io(&train_path, e))?;
    let tokens = tokenize(&text);
    let vocab = Vocabulary::build(&tokens, cap)?;
    create_dir(&run.out)?;
    vocab.write(&run.out.join("vocab.txt"))?;
    crate::corpus::encode(&tokens, &vocab, Split::Train).write(&run.out.join("train.bin"))?;
    for (split, name, path) in [
        (Split::Dev, "dev", pick(a.dev.clone(), file, "dev")?),
        (Split::Test, "test", pick(a.test.clone(), file, "test")?),
    ] {
        if let Some(p) = path {
            EncodedCorpus::from_text_file(&p, &vocab, split)?.write(&run.out.join(format!("{name}.bin")))?;
        }
    }
    say(format!("vocabulary\t{}", vocab.len()));
    say(format!("coverage\t{:.4}", vocab.coverage()));
    Ok(())
}

fn train_cmd<T: Scalar>(a: &TrainArgs, file: &ConfigFile, run: &RunConfig, say: &mut dyn FnMut(String)) -> Result<()> {
    let train_path: PathBuf = required(pick(a.train_data.clone(), file, "train_data")?, "train_data")?;
    let dev_path: PathBuf = required(pick(a.dev_data.clone(), file, "dev_data")?, "dev_data")?;
    let vocab_path: PathBuf = required(pick(a.vocab.clone(), file, "vocab")?, "vocab")?;
    let defaults = TrainConfig::default();
    let tc = TrainConfig {
        learning_rate: pick(a.learning_rate, file, "learning_rate")?.unwrap_or(defaults.learning_rate),
        batch_size: pick(a.batch_size, file, "batch_size")?.unwrap_or(defaults.batch_size),
        unroll: pick(a.unroll, file, "unroll")?.unwrap_or(defaults.unroll),
        clip_norm: pick(a.clip_norm, file, "clip_norm")?.unwrap_or(defaults.clip_norm),
        epochs: pick(a.epochs, file, "epochs")?.unwrap_or(defaults.epochs),
        validate_every: pick(a.validate_every, file, "validate_every")?.unwrap_or(defaults.validate_every),
        eval_lanes: pick(a.lanes, file, "lanes")?.unwrap_or(defaults.eval_lanes),
        seed: run.seed,
    };
    let embed = pick(a.embed, file, "embed")?.unwrap_or(300);
    let vocab = Vocabulary::read(&vocab_path)?;
    let (cfg, matched) = run.model_config(embed, vocab.len())?;
    tc.validate()?;
    if let Some(m) = matched {
        say(format!(
            "resolved hidden size k={} (θ_M={}, θ_W+M={})",
            m.hidden, m.count.model, m.count.with_embeddings
        ));
    }
    let train_corpus = EncodedCorpus::read(&train_path)?;
    let dev_corpus = EncodedCorpus::read(&dev_path)?;
    create_dir(&run.out)?;
    let log_path = run.out.join("metrics.tsv");
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log, "{}", LogEntry::HEADER).map_err(|e| Error::io(&log_path, e))?;
    let mut log_err = None;
    let model = Model::<T>::init(cfg, run.seed)?;
    let outcome = train(model, &train_corpus, &dev_corpus, &tc, |entry| {
        if let Err(e) = writeln!(log, "{entry}").and_then(|_| log.flush()) {
            log_err.get_or_insert(e);
        }
        say(entry.to_string());
    })?;
    if let Some(e) = log_err {
        return Err(Error::io(&log_path, e));
    }
    save_checkpoint(&outcome.best, &run.out.join("checkpoint.bin"))?;
    say(format!(
        "best dev perplexity {:.4} at step {}",
        outcome.best_dev_ppl, outcome.best_step
    ));
    Ok(())
}

fn load_model(path: Option<PathBuf>, file: &ConfigFile) -> Result<Model<f64>> {
    let path: PathBuf = required(pick(path, file, "checkpoint")?, "checkpoint")?;
    load_checkpoint(&path)?.into_model()
}

fn write_report(run: &RunConfig, stem: &str, report: &EvalReport, say: &mut dyn FnMut(String)) -> Result<()> {
    create_dir(&run.out)?;
    write_file(&run.out.join(format!("{stem}.json")), report.to_json())?;
    let tsv = report.to_tsv();
    write_file(&run.out.join(format!("{stem}.tsv")), &tsv)?;
    for line in tsv.lines() {
        say(line.to_string());
    }
    Ok(())
}

fn eval_cmd(a: &EvalArgs, file: &ConfigFile, run: &RunConfig, say: &mut dyn FnMut(String)) -> Result<()> {
    let model = load_model(a.checkpoint.clone(), file)?;
    let data: PathBuf = required(pick(a.data.clone(), file, "data")?, "data")?;
    let lanes = pick(a.lanes, file, "lanes")?.unwrap_or(64);
    let corpus = EncodedCorpus::read(&data)?;
    let p = perplexity(&model, &corpus, lanes)?;
    write_report(run, "eval", &EvalReport::default().with_perplexity(p), say)
}

fn cloze_cmd(a: &ClozeArgs, file: &ConfigFile, run: &RunConfig, say: &mut dyn FnMut(String)) -> Result<()> {
    let model = load_model(a.checkpoint.clone(), file)?;
    let data: PathBuf = required(pick(a.data.clone(), file, "data")?, "data")?;
    let vocab_path: PathBuf = required(pick(a.vocab.clone(), file, "vocab")?, "vocab")?;
    let vocab = Vocabulary::read(&vocab_path)?;
    if vocab.len() != model.config().vocab_size {
        return Err(Error::shape(
            "cloze",
            format!(
                "vocabulary has {} entries, checkpoint expects {}",
                vocab.len(),
                model.config().vocab_size
            ),
        ));
    }
    let instances = load_cloze(&data, &vocab)?;
    let result = cloze_accuracy(&model, &instances)?;
    let report = EvalReport {
        cloze: Some(result.by_category),
        ..EvalReport::default()
    };
    write_report(run, "cloze", &report, say)
}

fn inspect_cmd(a: &EvalArgs, file: &ConfigFile, run: &RunConfig, say: &mut dyn FnMut(String)) -> Result<()> {
    let model = load_model(a.checkpoint.clone(), file)?;
    if !model.config().variant.is_attentive() {
        return Err(Error::Unsupported("variant has no attention".into()));
    }
    let data: PathBuf = required(pick(a.data.clone(), file, "data")?, "data")?;
    let lanes = pick(a.lanes, file, "lanes")?.unwrap_or(64);
    let corpus = EncodedCorpus::read(&data)?;
    let profile = attention_profile(&model, &corpus, lanes)?;
    let report = EvalReport {
        attention_profile: Some(profile),
        ..EvalReport::default()
    };
    create_dir(&run.out)?;
    write_file(
        &run.out.join("attention.csv"),
        report.profile_csv().expect("profile present"),
    )?;
    write_report(run, "attention", &report, say)
}

fn count_cmd(a: &CountArgs, file: &ConfigFile, run: &RunConfig, say: &mut dyn FnMut(String)) -> Result<()> {
    let embed = pick(a.embed, file, "embed")?.unwrap_or(300);
    let vocab_size = pick(a.vocab_size, file, "vocab_size")?.unwrap_or(77_000);
    let (cfg, _) = run.model_config(embed, vocab_size)?;
    let count = count_params(&cfg);
    say(format!("variant\t{}", cfg.variant));
    say(format!("hidden\t{}", cfg.hidden));
    say(format!("theta_M\t{}\t{:.1}M", count.model, count.model as f64 / 1e6));
    say(format!(
        "theta_W+M\t{}\t{:.1}M",
        count.with_embeddings,
        count.with_embeddings as f64 / 1e6
    ));
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, S>(args: I, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{text}");
            } else {
                let _ = write!(stdout, "{text}");
            }
            return code;
        }
    };
    match run(&cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_parsing() {
        let f = ConfigFile::parse("# run\nvariant = kvp\nhidden=9\n\nbatch-size=4\n", Path::new("x.conf")).unwrap();
        assert_eq!(f.get::<Variant>("variant").unwrap(), Some(Variant::KeyValuePredict));
        assert_eq!(f.get::<usize>("hidden").unwrap(), Some(9));
        assert_eq!(f.get::<usize>("batch_size").unwrap(), Some(4));
        assert_eq!(f.get::<usize>("window").unwrap(), None);
        let err = f.get::<usize>("variant").unwrap_err();
        assert!(err.to_string().contains("x.conf:2"), "{err}");
        assert!(ConfigFile::parse("hidden 9", Path::new("y")).is_err());
    }

    #[test]
    fn flags_win_over_the_file() {
        let f = ConfigFile::parse("hidden=9\nseed=4\n", Path::new("c")).unwrap();
        let shared = Shared {
            hidden: Some(12),
            ..Shared::default()
        };
        let run = RunConfig::resolve(&shared, &f).unwrap();
        assert_eq!(run.hidden, Some(12));
        assert_eq!(run.seed, 4);
    }

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&Error::Config(vec![])), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::InsufficientData(String::new())), EXIT_DATA);
        assert_eq!(exit_code(&Error::NonFinite(String::new())), EXIT_NUMERIC);
    }
}
