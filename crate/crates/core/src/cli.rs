//! Command-line front end. Exit codes: 0 success, 1 usage, 2 numerical
//! failure, 3 I/O.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::generate::generate;
use crate::gradcheck::{check_variant, GradCheckConfig};
use crate::numerics::{Precision, Real};
use crate::sflstm::{MaskMode, ModelParams, Variant};
use crate::trace::{cell_change_stats, export_all, trace_sequence, DEFAULT_WINDOW};
use crate::training::checkpoint::{checkpoint_precision, decode_checkpoint};
use crate::training::{evaluate_bpc, train, Checkpoint, Corpus, Split, TrainConfig, TrainOutputs, Trainer};

#[derive(Parser, Debug)]
#[command(name = "szo", version, about = "Character LSTM with surprisal-gated cell updates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Model and run shape. Each subcommand rejects the ones it cannot use.
#[derive(Args, Debug, Default, Clone)]
struct ModelFlags {
    #[arg(long)]
    seed: Option<u64>,
    /// standard, sf, fixed:<r> or adaptive
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    chunk_len: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    /// f32 or f64
    #[arg(long)]
    precision: Option<Precision>,
}

impl ModelFlags {
    fn given(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let flags = [
            ("--seed", self.seed.is_some()),
            ("--variant", self.variant.is_some()),
            ("--tau", self.tau.is_some()),
            ("--hidden", self.hidden.is_some()),
            ("--batch", self.batch.is_some()),
            ("--seq-len", self.seq_len.is_some()),
            ("--chunk-len", self.chunk_len.is_some()),
            ("--steps", self.steps.is_some()),
            ("--precision", self.precision.is_some()),
        ];
        for (name, set) in flags {
            if set {
                out.push(name);
            }
        }
        out
    }

    /// Fails on the first given flag not in `allowed`.
    fn only(&self, command: &str, allowed: &[&str]) -> Result<()> {
        match self.given().into_iter().find(|f| !allowed.contains(f)) {
            Some(flag) => Err(Error::Config(format!("{flag} does not apply to `{command}`"))),
            None => Ok(()),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on a byte corpus.
    Train(TrainArgs),
    /// Bits per character of a checkpoint on one split.
    Eval(EvalArgs),
    /// Compare the backward pass against finite differences.
    Gradcheck(GradcheckArgs),
    /// Record one lane's internals over a stretch of text and export CSVs.
    Trace(TraceArgs),
    /// Generate text from a checkpoint.
    Sample(SampleArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Corpus file (raw bytes).
    #[arg(long)]
    corpus: PathBuf,
    /// key=value file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from this checkpoint. Only --steps may change.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    /// Gradient norm bound, 0 to disable.
    #[arg(long)]
    clip: Option<f64>,
    /// Use only the first N bytes of the corpus, 0 for all.
    #[arg(long)]
    corpus_bytes: Option<usize>,
    #[arg(long)]
    eval_mask: Option<MaskMode>,
    #[arg(long)]
    valid_prefix: Option<usize>,
    #[arg(long)]
    log_every: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// expected or sampled; defaults to the run's setting.
    #[arg(long)]
    mask: Option<MaskMode>,
    /// Score only the first N symbols of the split.
    #[arg(long)]
    limit: Option<usize>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 5)]
    vocab: usize,
    /// Probe at most this many coordinates per block.
    #[arg(long)]
    per_block: Option<usize>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args, Debug)]
struct TraceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// First symbol of the traced stretch within the split.
    #[arg(long, default_value_t = 0)]
    offset: usize,
    /// Steps kept in the buffer.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    /// Steps run; defaults to the window.
    #[arg(long)]
    length: Option<usize>,
    #[arg(long, default_value = "sampled")]
    mask: MaskMode,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    run_id: Option<String>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "The ")]
    prompt: String,
    #[arg(long, default_value_t = 200)]
    length: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long)]
    mask: Option<MaskMode>,
    #[command(flatten)]
    model: ModelFlags,
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn dispatch<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Trace(a) => cmd_trace(a),
        Command::Sample(a) => cmd_sample(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn nonzero(n: usize) -> Option<usize> {
    (n > 0).then_some(n)
}

fn default_run_id(cfg: &TrainConfig) -> String {
    format!("{}-s{}", cfg.variant, cfg.seed).replace(':', "")
}

fn build_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("--config {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    let m = &a.model;
    macro_rules! set {
        ($($field:ident <- $value:expr),* $(,)?) => {
            $(if let Some(v) = $value { cfg.$field = v; })*
        };
    }
    set!(
        seed <- m.seed,
        variant <- m.variant,
        tau <- m.tau,
        hidden <- m.hidden,
        batch <- m.batch,
        seq_len <- m.seq_len,
        chunk_len <- m.chunk_len,
        steps <- m.steps,
        precision <- m.precision,
        lr <- a.lr,
        rho <- a.rho,
        eps <- a.eps,
        clip <- a.clip,
        corpus_bytes <- a.corpus_bytes,
        eval_mask <- a.eval_mask,
        valid_prefix <- a.valid_prefix,
        log_every <- a.log_every,
        checkpoint_every <- a.checkpoint_every,
    );
    cfg.validate()?;
    Ok(cfg)
}

/// Writes to stdout and a log file.
struct Tee {
    file: fs::File,
}

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        io::stdout().write_all(buf)?;
        self.file.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        io::stdout().flush()?;
        self.file.flush()
    }
}

fn load_corpus_for(path: &Path, cfg: &TrainConfig, vocab: Option<&[u8]>) -> Result<Corpus> {
    let corpus = Corpus::load(path, nonzero(cfg.corpus_bytes))?;
    if let Some(v) = vocab {
        if corpus.vocab() != v {
            return Err(Error::Corpus(format!(
                "{} (first {} bytes) has a vocabulary of {}, the checkpoint expects {}",
                path.display(),
                cfg.corpus_bytes,
                corpus.vocab_size(),
                v.len()
            )));
        }
    }
    Ok(corpus)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    if let Some(resume) = &a.resume {
        a.model.only("train --resume", &["--steps"])?;
        let flagged = [
            ("--config", a.config.is_some()),
            ("--lr", a.lr.is_some()),
            ("--rho", a.rho.is_some()),
            ("--eps", a.eps.is_some()),
            ("--clip", a.clip.is_some()),
            ("--corpus-bytes", a.corpus_bytes.is_some()),
            ("--eval-mask", a.eval_mask.is_some()),
            ("--valid-prefix", a.valid_prefix.is_some()),
            ("--log-every", a.log_every.is_some()),
            ("--checkpoint-every", a.checkpoint_every.is_some()),
        ];
        if let Some((flag, _)) = flagged.iter().find(|(_, set)| *set) {
            return Err(Error::Config(format!("{flag} cannot be combined with --resume")));
        }
        let bytes = fs::read(resume)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", resume.display())))?;
        return match checkpoint_precision(&bytes)? {
            Precision::F32 => resume_train::<f32>(&a, &bytes),
            Precision::F64 => resume_train::<f64>(&a, &bytes),
        };
    }
    let cfg = build_config(&a)?;
    let corpus = load_corpus_for(&a.corpus, &cfg, None)?;
    match cfg.precision {
        Precision::F32 => run_train(&a, Trainer::<f32>::new(cfg, corpus.vocab_size())?, &corpus),
        Precision::F64 => run_train(&a, Trainer::<f64>::new(cfg, corpus.vocab_size())?, &corpus),
    }
}

fn resume_train<T: Real>(a: &TrainArgs, bytes: &[u8]) -> Result<()> {
    let ck: Checkpoint<T> = decode_checkpoint(bytes)?;
    let corpus = load_corpus_for(&a.corpus, &ck.config, Some(&ck.vocab))?;
    let mut trainer = Trainer::from_checkpoint(ck)?;
    if let Some(steps) = a.model.steps {
        trainer.config.steps = steps;
    }
    run_train(a, trainer, &corpus)
}

fn run_train<T: Real>(a: &TrainArgs, mut trainer: Trainer<T>, corpus: &Corpus) -> Result<()> {
    let run_id = a.run_id.clone().unwrap_or_else(|| default_run_id(&trainer.config));
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join(format!("{run_id}.cfg")), trainer.config.to_text())?;
    let log_path = a.out.join(format!("{run_id}.log"));
    let file = if trainer.step == 0 {
        fs::File::create(&log_path)?
    } else {
        fs::OpenOptions::new().append(true).create(true).open(&log_path)?
    };
    let mut tee = Tee { file };
    let checkpoint = a.out.join(format!("{run_id}.ckpt"));
    eprintln!(
        "corpus: {} bytes, vocab {}; run {run_id}; checkpoint {}",
        corpus.len(),
        corpus.vocab_size(),
        checkpoint.display()
    );
    train(
        &mut trainer,
        corpus,
        TrainOutputs { log: Some(&mut tee), checkpoint: Some(checkpoint), dump_dir: Some(a.out.clone()) },
    )?;
    Ok(())
}

fn load_any(path: &Path) -> Result<(Vec<u8>, Precision)> {
    let bytes =
        fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let p = checkpoint_precision(&bytes)?;
    Ok((bytes, p))
}

/// Applies `--variant`/`--tau` overrides to loaded parameters.
fn override_model<T: Real>(params: &mut ModelParams<T>, m: &ModelFlags, stored: Precision) -> Result<()> {
    if let Some(p) = m.precision {
        if p != stored {
            return Err(Error::Config(format!("--precision {p} but the checkpoint holds {stored}")));
        }
    }
    if let Some(v) = m.variant {
        params.variant = v;
    }
    if let Some(t) = m.tau {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::Config(format!("--tau must be finite and nonnegative, got {t}")));
        }
        params.tau = t;
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    a.model.only("eval", &["--seed", "--variant", "--tau", "--precision"])?;
    let (bytes, p) = load_any(&a.checkpoint)?;
    match p {
        Precision::F32 => eval_with::<f32>(&a, &bytes),
        Precision::F64 => eval_with::<f64>(&a, &bytes),
    }
}

fn eval_with<T: Real>(a: &EvalArgs, bytes: &[u8]) -> Result<()> {
    let mut ck: Checkpoint<T> = decode_checkpoint(bytes)?;
    override_model(&mut ck.params, &a.model, T::PRECISION)?;
    let corpus = load_corpus_for(&a.corpus, &ck.config, Some(&ck.vocab))?;
    let split = corpus.split(a.split);
    let split = match a.limit {
        Some(n) => &split[..n.min(split.len())],
        None => split,
    };
    let mode = a.mask.unwrap_or(ck.config.eval_mask);
    let seed = a.model.seed.unwrap_or(ck.config.seed);
    let bpc = evaluate_bpc(&ck.params, split, mode, seed)?;
    println!("split\tsymbols\tmask\tvariant\tbpc");
    println!("{}\t{}\t{mode}\t{}\t{bpc:.6}", a.split, split.len(), ck.params.variant);
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let m = &a.model;
    m.only(
        "gradcheck",
        &["--seed", "--variant", "--tau", "--hidden", "--batch", "--seq-len", "--precision"],
    )?;
    if m.precision == Some(Precision::F32) {
        return Err(Error::Config("--precision f32: finite-difference checks run in f64 only".into()));
    }
    let defaults = GradCheckConfig::default();
    let cfg = GradCheckConfig {
        steps: m.seq_len.unwrap_or(defaults.steps),
        batch: m.batch.unwrap_or(defaults.batch),
        hidden: m.hidden.unwrap_or(defaults.hidden),
        vocab: a.vocab,
        tau: m.tau.unwrap_or(defaults.tau),
        seed: m.seed.unwrap_or(defaults.seed),
        per_block: a.per_block,
        ..defaults
    };
    if cfg.steps == 0 || cfg.batch == 0 || cfg.hidden == 0 || cfg.vocab == 0 {
        return Err(Error::Config("gradcheck shapes must be positive".into()));
    }
    let variants = match m.variant {
        Some(v) => vec![v],
        None => {
            vec![Variant::Standard, Variant::SurprisalFeedback, Variant::FixedZoneout(0.5), Variant::Adaptive]
        }
    };
    let tol = 1e-5;
    let mut worst: f64 = 0.0;
    for (k, v) in variants.iter().enumerate() {
        let run = check_variant(*v, &cfg)?;
        let table = run.report.to_string();
        for line in table.lines().skip(usize::from(k > 0)) {
            println!("{line}");
        }
        worst = worst.max(run.report.max_rel());
    }
    if worst < tol {
        println!("max relative error {worst:.3e} < {tol:e}: pass");
        Ok(())
    } else {
        Err(Error::GradCheck(format!("max relative error {worst:.3e} is not below {tol:e}")))
    }
}

fn cmd_trace(a: TraceArgs) -> Result<()> {
    a.model.only("trace", &["--seed", "--variant", "--tau", "--precision"])?;
    let (bytes, p) = load_any(&a.checkpoint)?;
    match p {
        Precision::F32 => trace_with::<f32>(&a, &bytes),
        Precision::F64 => trace_with::<f64>(&a, &bytes),
    }
}

fn trace_with<T: Real>(a: &TraceArgs, bytes: &[u8]) -> Result<()> {
    let mut ck: Checkpoint<T> = decode_checkpoint(bytes)?;
    override_model(&mut ck.params, &a.model, T::PRECISION)?;
    let corpus = load_corpus_for(&a.corpus, &ck.config, Some(&ck.vocab))?;
    let split = corpus.split(a.split);
    let length = a.length.unwrap_or(a.window);
    let end = a.offset.checked_add(length).filter(|&e| e <= split.len()).ok_or_else(|| {
        Error::Config(format!(
            "--offset {} + --length {length} exceeds the {} split ({} symbols)",
            a.offset,
            a.split,
            split.len()
        ))
    })?;
    let seed = a.model.seed.unwrap_or(ck.config.seed);
    let buffer = trace_sequence(&ck.params, &split[a.offset..end], a.window, a.mask, seed)?;
    let run_id = match &a.run_id {
        Some(id) => id.clone(),
        None => a
            .checkpoint
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "trace".into()),
    };
    fs::create_dir_all(&a.out)?;
    for path in export_all(&buffer, &a.out, &run_id)? {
        println!("wrote {}", path.display());
    }
    if let Some(stats) = cell_change_stats(&buffer) {
        println!("mean cell change per step: {:.6}", stats.mean);
    }
    Ok(())
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    a.model.only("sample", &["--seed", "--variant", "--tau", "--precision"])?;
    let (bytes, p) = load_any(&a.checkpoint)?;
    match p {
        Precision::F32 => sample_with::<f32>(&a, &bytes),
        Precision::F64 => sample_with::<f64>(&a, &bytes),
    }
}

fn sample_with<T: Real>(a: &SampleArgs, bytes: &[u8]) -> Result<()> {
    let mut ck: Checkpoint<T> = decode_checkpoint(bytes)?;
    override_model(&mut ck.params, &a.model, T::PRECISION)?;
    let mut index = [None; 256];
    for (k, &b) in ck.vocab.iter().enumerate() {
        index[b as usize] = Some(k as u8);
    }
    let prompt = a
        .prompt
        .bytes()
        .map(|b| {
            index[b as usize]
                .ok_or_else(|| Error::Config(format!("--prompt byte {b:#04x} is not in the vocabulary")))
        })
        .collect::<Result<Vec<u8>>>()?;
    let mode = a.mask.unwrap_or(ck.config.eval_mask);
    let seed = a.model.seed.unwrap_or(ck.config.seed);
    let symbols = generate(&ck.params, &prompt, a.length, a.temperature, mode, seed)?;
    let text = crate::training::corpus::decode_with(&ck.vocab, &symbols);
    let mut out = io::stdout();
    out.write_all(a.prompt.as_bytes())?;
    out.write_all(&text)?;
    out.write_all(b"\n")?;
    Ok(())
}
