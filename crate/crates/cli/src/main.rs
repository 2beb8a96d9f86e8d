use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use rstsplit_core::corpus::{
    convert_record, load_corpus, load_records, write_corpus, write_records, CorpusRecord, TreeFormat,
};
use rstsplit_core::infer::{parse_corpus, score_parses, DecodeOptions, Parse};
use rstsplit_core::nn::{
    load_checkpoint, load_pretrained_embeddings, save_checkpoint, Model, ModelConfig, ParseMode, Vocab,
};
use rstsplit_core::synth::generate_synthetic_corpus;
use rstsplit_core::train::{split_dev, train, TrainConfig, TrainEvent};
use rstsplit_core::tree::{splits_to_tree, tree_to_splits_e2e, tree_to_splits_edu};
use rstsplit_core::{Document, LabelSet};

const CONFIG_ENV: &str = "RSTSPLIT_CONFIG";

#[derive(Parser, Debug)]
#[command(name = "rstsplit", version, about = "Top-down RST discourse parser")]
struct Cli {
    /// TOML config file with `[model]` and `[train]` tables; flags win.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Worker threads for per-document work (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus.
    Gen(GenArgs),
    /// Check corpus files.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Train a parser and keep the best checkpoint on dev.
    Train(TrainArgs),
    /// Parse a corpus with a trained checkpoint.
    Parse(ParseArgs),
    /// Score predictions against gold trees.
    Eval(EvalArgs),
    /// Rewrite tree fields between split-list and bracket form.
    Convert(ConvertArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 50)]
    docs: usize,
    #[arg(long, default_value_t = 200)]
    vocab: usize,
    #[arg(long, default_value_t = 30)]
    mean_tokens: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct DecodeFlags {
    #[arg(long)]
    mode: Option<ParseMode>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    no_sentence_guidance: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    /// Held-out corpus; without it a seeded fraction of the training data is used.
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    decode: DecodeFlags,
    #[arg(long)]
    seed: Option<u64>,
    /// Whitespace-separated word vectors; matched rows are frozen.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    no_boundary_lstm: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_tokens: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct ParseArgs {
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    decode: DecodeFlags,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    mode: Option<ParseMode>,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Splits,
    Brackets,
}

#[derive(Args, Debug)]
struct ConvertArgs {
    input: PathBuf,
    #[arg(long, value_enum)]
    to: Format,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    model: ModelConfig,
    train: TrainConfig,
    workers: Option<usize>,
}

/// Error with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type Result<T, E = Failure> = std::result::Result<T, E>;

trait Classify<T> {
    fn usage(self) -> Result<T>;
    fn data(self) -> Result<T>;
    fn runtime(self) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for std::result::Result<T, E> {
    fn usage(self) -> Result<T> {
        self.map_err(|e| Failure { code: 1, error: e.into() })
    }
    fn data(self) -> Result<T> {
        self.map_err(|e| Failure { code: 2, error: e.into() })
    }
    fn runtime(self) -> Result<T> {
        self.map_err(|e| Failure { code: 3, error: e.into() })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => read_config(path)?,
        None => FileConfig::default(),
    };
    if let Some(n) = cli.workers.or(file.workers) {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("cannot start worker pool").runtime()?;
    }
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Validate { files } => cmd_validate(&files),
        Command::Train(a) => cmd_train(a, file),
        Command::Parse(a) => cmd_parse(a, &file),
        Command::Eval(a) => cmd_eval(a, &file),
        Command::Convert(a) => cmd_convert(a),
    }
}

fn read_config(path: &Path) -> Result<FileConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display())).usage()?;
    toml::from_str(&text).with_context(|| format!("bad config {}", path.display())).usage()
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display())).runtime()?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load(path: &Path) -> Result<Vec<Document>> {
    load_corpus(path).with_context(|| format!("{}", path.display())).data()
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let docs = generate_synthetic_corpus(a.docs, a.vocab, a.mean_tokens, a.seed).usage()?;
    let mut out = output(a.output.as_deref())?;
    write_corpus(&mut out, &docs).and_then(|_| out.flush()).context("cannot write corpus").runtime()
}

fn cmd_validate(files: &[PathBuf]) -> Result<()> {
    for f in files {
        let docs = load(f)?;
        let trees = docs.iter().filter(|d| d.gold_tree.is_some()).count();
        println!("{}: {} documents, {} with trees", f.display(), docs.len(), trees);
    }
    Ok(())
}

fn decode_options(flags: &DecodeFlags, cfg: &TrainConfig) -> Result<DecodeOptions> {
    let opts = DecodeOptions {
        mode: flags.mode.unwrap_or(cfg.mode),
        beam: flags.beam.unwrap_or(cfg.beam_width_eval),
        sentence_guidance: cfg.sentence_guidance && !flags.no_sentence_guidance,
        ..DecodeOptions::default()
    };
    if opts.beam == 0 {
        return Err(anyhow!("--beam must be at least 1")).usage();
    }
    Ok(opts)
}

fn check_mode(docs: &[Document], mode: ParseMode, path: &Path) -> Result<()> {
    if mode == ParseMode::GoldEdu {
        if let Some(d) = docs.iter().find(|d| d.edu_boundaries.is_none()) {
            return Err(anyhow!("{}: document `{}` has no edu_ends, required in gold-edu mode", path.display(), d.id))
                .data();
        }
    }
    Ok(())
}

fn cmd_train(a: TrainArgs, file: FileConfig) -> Result<()> {
    let FileConfig { model: mut mcfg, train: mut tcfg, .. } = file;
    let opts = decode_options(&a.decode, &tcfg)?;
    tcfg.mode = opts.mode;
    tcfg.beam_width_eval = opts.beam;
    tcfg.sentence_guidance = opts.sentence_guidance;
    if let Some(s) = a.seed {
        tcfg.seed = s;
    }
    if let Some(e) = a.epochs {
        tcfg.max_epochs = e;
    }
    if let Some(lr) = a.lr {
        tcfg.learning_rate = lr;
    }
    if let Some(b) = a.batch_tokens {
        tcfg.batch_size_tokens = b;
    }
    if let Some(h) = a.hidden {
        mcfg.hidden = h;
    }
    if a.no_boundary_lstm {
        mcfg.boundary_lstm = false;
    }
    tcfg.check().usage()?;
    mcfg.check().usage()?;

    let docs = load(&a.train)?;
    if let Some(d) = docs.iter().find(|d| d.gold_tree.is_none()) {
        return Err(anyhow!("{}: document `{}` has no tree", a.train.display(), d.id)).data();
    }
    check_mode(&docs, tcfg.mode, &a.train)?;
    let (train_docs, dev_docs) = match &a.dev {
        Some(p) => {
            let dev = load(p)?;
            check_mode(&dev, tcfg.mode, p)?;
            (docs, dev)
        }
        None => split_dev(docs, tcfg.dev_fraction, tcfg.dev_seed),
    };
    if train_docs.is_empty() {
        return Err(anyhow!("no training documents")).data();
    }
    let mut labels = LabelSet::from_documents(&train_docs);
    if labels.is_empty() {
        labels = LabelSet::full();
    }
    let chars = mcfg.use_chars.then(|| Vocab::chars_of(&train_docs));
    let mut model = Model::<f32>::new(mcfg, Vocab::from_documents(&train_docs), chars, labels, tcfg.seed).usage()?;
    if let Some(p) = &a.embeddings {
        let n = load_pretrained_embeddings(&mut model, p).data()?;
        eprintln!("loaded {n} pretrained word vectors (frozen)");
    }
    eprintln!(
        "training on {} documents, dev {}, {} parameters, mode {}",
        train_docs.len(),
        dev_docs.len(),
        model.num_parameters(),
        tcfg.mode
    );
    let quiet = a.quiet;
    let mut on_event = |e: TrainEvent<'_>| {
        if let TrainEvent::Epoch(log) = e {
            if quiet {
                return;
            }
            let dev = match &log.dev {
                Some(r) => format!(
                    "dev Span {:.2} Nuc {:.2} Rel {:.2} Full {:.2}",
                    r.parseval.span_f1, r.parseval.nuc_f1, r.parseval.rel_f1, r.parseval.full_f1
                ),
                None => "no dev".to_string(),
            };
            let mark = if log.improved { " *" } else { "" };
            eprintln!("epoch {:>3} steps {:>5} loss {:.4} {dev}{mark}", log.epoch + 1, log.steps, log.mean_loss);
        }
    };
    let (best, report) = train(model, &train_docs, &dev_docs, &tcfg, Some(&a.checkpoint), &mut on_event).runtime()?;
    if report.checkpoint.is_none() {
        save_checkpoint(&best, &a.checkpoint).runtime()?;
    }
    match (report.best_epoch, report.best_f1) {
        (Some(e), Some(f)) => {
            println!("best epoch {} dev Full F1 {:.2}; checkpoint {}", e + 1, f, a.checkpoint.display())
        }
        _ => println!("checkpoint {}", a.checkpoint.display()),
    }
    Ok(())
}

fn prediction_record(doc: &Document, parse: &Parse, mode: ParseMode) -> CorpusRecord {
    let mut rec = CorpusRecord::from_document(doc);
    let seq = match mode {
        ParseMode::EndToEnd => tree_to_splits_e2e(&parse.tree),
        ParseMode::GoldEdu => tree_to_splits_edu(&parse.tree),
    };
    rec.tree = Some(rstsplit_core::corpus::split_records(&seq));
    rec.brackets = None;
    rec.edu_ends = Some(parse.edus.clone());
    rec
}

fn cmd_parse(a: ParseArgs, file: &FileConfig) -> Result<()> {
    let opts = decode_options(&a.decode, &file.train)?;
    let model = load_checkpoint(&a.checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", a.checkpoint.display()))
        .data()?;
    let docs = load(&a.input)?;
    check_mode(&docs, opts.mode, &a.input)?;
    let parses = parse_corpus(&model, &docs, &opts).runtime()?;
    let records: Vec<CorpusRecord> =
        docs.iter().zip(&parses).map(|(d, p)| prediction_record(d, p, opts.mode)).collect();
    let mut out = output(a.output.as_deref())?;
    write_records(&mut out, &records).and_then(|_| out.flush()).context("cannot write predictions").runtime()
}

fn cmd_eval(a: EvalArgs, file: &FileConfig) -> Result<()> {
    let mode = a.mode.unwrap_or(file.train.mode);
    let gold = load(&a.gold)?;
    let preds = load_records(&a.pred).with_context(|| format!("{}", a.pred.display())).data()?;
    let mut by_id = std::collections::HashMap::new();
    for (line, rec) in preds {
        let id = rec.id.clone();
        if by_id.insert(id.clone(), (line, rec)).is_some() {
            return Err(anyhow!("{}: line {line}: duplicate document id `{id}`", a.pred.display())).data();
        }
    }
    let mut parses = Vec::with_capacity(gold.len());
    for g in &gold {
        if g.gold_tree.is_none() {
            return Err(anyhow!("{}: document `{}` has no gold tree", a.gold.display(), g.id)).data();
        }
        let Some((line, rec)) = by_id.remove(&g.id) else {
            return Err(anyhow!("{}: no prediction for document `{}`", a.pred.display(), g.id)).data();
        };
        let doc = rec.to_document(line).data()?;
        if doc.len() != g.len() {
            return Err(anyhow!("line {line}: document `{}` has {} tokens, gold has {}", g.id, doc.len(), g.len()))
                .data();
        }
        let seq =
            doc.gold_tree.as_ref().ok_or_else(|| anyhow!("line {line}: document `{}` has no tree", g.id)).data()?;
        let edus = match mode {
            ParseMode::GoldEdu => doc.edu_boundaries.clone().or_else(|| g.edu_boundaries.clone()),
            ParseMode::EndToEnd => doc.edu_boundaries.clone(),
        };
        let tree = splits_to_tree(seq, doc.len(), edus.as_deref())
            .with_context(|| format!("line {line}: document `{}`", g.id))
            .data()?;
        parses.push(Parse { edus: tree.edu_boundaries(), tree, log_prob: 0.0, steps: 0 });
    }
    if let Some(id) = by_id.keys().min() {
        return Err(anyhow!("{}: document `{id}` is not in the gold corpus", a.pred.display())).data();
    }
    let report = score_parses(&gold, &parses, mode).data()?;
    if a.json {
        let text = serde_json::to_string_pretty(&report).context("cannot serialize report").runtime()?;
        println!("{text}");
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn cmd_convert(a: ConvertArgs) -> Result<()> {
    let to = match a.to {
        Format::Splits => TreeFormat::Splits,
        Format::Brackets => TreeFormat::Brackets,
    };
    let records = load_records(&a.input).with_context(|| format!("{}", a.input.display())).data()?;
    let mut out = Vec::with_capacity(records.len());
    for (line, rec) in &records {
        let converted = convert_record(rec, *line, to).with_context(|| format!("{}", a.input.display())).data()?;
        out.push(converted);
    }
    let mut w = output(a.output.as_deref())?;
    write_records(&mut w, &out).and_then(|_| w.flush()).context("cannot write corpus").runtime()
}
