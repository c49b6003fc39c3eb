use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::numerics::{Real, RngState};
use crate::optimizer::{adadelta_step, clip_gradients, xavier_init, AdadeltaState};
use crate::sflstm::{cross_entropy_bpc, forward_step, GradientSet, MaskMode, ModelParams, RecurrentState};

use super::checkpoint::{save_checkpoint, Checkpoint};
use super::config::TrainConfig;
use super::corpus::{Corpus, Split};
use super::window::{run_tbptt_window, WindowMasks};

/// Random streams derived from the run seed.
pub const INIT_STREAM: u64 = 0;
pub const DATA_STREAM: u64 = 2;
pub const MASK_STREAM: u64 = 3;
pub const EVAL_STREAM: u64 = 4;

/// `batch` uniform chunk starts such that `chunk_len + 1` symbols fit.
pub fn sample_training_chunks(train_len: usize, cfg: &TrainConfig, rng: &mut RngState) -> Result<Vec<usize>> {
    if cfg.chunk_len + 1 > train_len {
        return Err(Error::Corpus(format!(
            "train split has {train_len} symbols, a chunk needs {}",
            cfg.chunk_len + 1
        )));
    }
    let span = train_len - cfg.chunk_len;
    Ok((0..cfg.batch).map(|_| rng.below(span)).collect())
}

/// Position inside the current batch of chunks.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Cursor {
    /// Start of each lane's chunk in the train split. Empty before the first
    /// chunk is drawn.
    pub offsets: Vec<usize>,
    /// Index of the next window inside the chunk.
    pub window: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub step: u64,
    pub loss_nats: f64,
    pub bpc: f64,
    pub mean_rate: f64,
    pub mean_update: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// All mutable state of a training run.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub params: ModelParams<T>,
    pub optimizer: AdadeltaState<T>,
    pub data_rng: RngState,
    pub mask_rng: RngState,
    pub cursor: Cursor,
    pub lanes: RecurrentState<T>,
    /// Optimizer steps taken.
    pub step: u64,
    grads: GradientSet<T>,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: TrainConfig, vocab: usize) -> Result<Self> {
        config.validate()?;
        let mut params = ModelParams::zeros(config.hidden, vocab, config.variant, config.tau)?;
        xavier_init(&mut params, &mut RngState::with_stream(config.seed, INIT_STREAM));
        let optimizer = AdadeltaState::new(&params.weights, config.optimizer());
        Ok(Self {
            data_rng: RngState::with_stream(config.seed, DATA_STREAM),
            mask_rng: RngState::with_stream(config.seed, MASK_STREAM),
            cursor: Cursor::default(),
            lanes: RecurrentState::initial(config.batch, config.hidden, vocab),
            grads: params.weights.zeros_like(),
            step: 0,
            optimizer,
            params,
            config,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint<T>) -> Result<Self> {
        ck.config.validate()?;
        Ok(Self {
            grads: ck.params.weights.zeros_like(),
            config: ck.config,
            params: ck.params,
            optimizer: ck.optimizer,
            data_rng: ck.data_rng,
            mask_rng: ck.mask_rng,
            cursor: ck.cursor,
            lanes: ck.lanes,
            step: ck.step,
        })
    }

    pub fn checkpoint(&self, vocab: &[u8]) -> Checkpoint<T> {
        Checkpoint {
            config: self.config.clone(),
            step: self.step,
            vocab: vocab.to_vec(),
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
            data_rng: self.data_rng.clone(),
            mask_rng: self.mask_rng.clone(),
            cursor: self.cursor.clone(),
            lanes: self.lanes.clone(),
        }
    }

    fn window_symbols(&self, train: &[u8]) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let base = self.cursor.window * self.config.seq_len;
        let at = |t: usize| -> Vec<usize> {
            self.cursor.offsets.iter().map(|&o| train[o + base + t] as usize).collect()
        };
        let inputs = (0..self.config.seq_len).map(at).collect();
        let targets = (1..=self.config.seq_len).map(at).collect();
        (inputs, targets)
    }

    /// Text describing the window about to run (or that just failed).
    pub fn dump_window(&self, train: &[u8], reason: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "reason: {reason}");
        let _ = writeln!(out, "step: {}", self.step);
        let _ = writeln!(out, "window: {}", self.cursor.window);
        let _ = writeln!(out, "offsets: {:?}", self.cursor.offsets);
        if !self.cursor.offsets.is_empty() {
            let (inputs, _) = self.window_symbols(train);
            for lane in 0..self.cursor.offsets.len() {
                let symbols: Vec<usize> = inputs.iter().map(|row| row[lane]).collect();
                let _ = writeln!(out, "lane {lane}: {symbols:?}");
            }
        }
        let _ = writeln!(out, "params finite: {}", self.params.is_finite());
        out
    }

    /// One optimizer step on the next window of every lane. Draws new chunks
    /// and resets the lanes at chunk boundaries.
    pub fn step(&mut self, train: &[u8]) -> Result<StepStats> {
        if self.cursor.window == 0 || self.cursor.offsets.len() != self.config.batch {
            self.cursor.offsets = sample_training_chunks(train.len(), &self.config, &mut self.data_rng)?;
            self.cursor.window = 0;
            self.lanes = RecurrentState::initial(self.config.batch, self.config.hidden, self.params.vocab());
        }
        let (inputs, targets) = self.window_symbols(train);
        self.grads.set_zero();
        let out = run_tbptt_window(
            &self.lanes,
            &inputs,
            &targets,
            &self.params,
            WindowMasks::Sampled(&mut self.mask_rng),
            &mut self.grads,
        )
        .map_err(|e| self.numerical_failure(train, e))?;
        if !out.loss_nats.is_finite() {
            let reason = format!("loss is {}", out.loss_nats);
            return Err(Error::NonFiniteLoss(self.dump_window(train, &reason)));
        }
        let grad_norm = if self.config.clip > 0.0 {
            clip_gradients(&mut self.grads, self.config.clip)
        } else {
            self.grads.global_norm()
        };
        adadelta_step(&mut self.params, &self.grads, &mut self.optimizer)
            .map_err(|e| self.numerical_failure(train, e))?;

        self.lanes = out.state;
        self.cursor.window = (self.cursor.window + 1) % self.config.windows_per_chunk();
        self.step += 1;
        Ok(StepStats {
            step: self.step,
            loss_nats: out.loss_nats,
            bpc: cross_entropy_bpc(out.loss_nats),
            mean_rate: out.mean_rate,
            mean_update: out.mean_update,
            grad_norm,
        })
    }

    fn numerical_failure(&self, train: &[u8], e: Error) -> Error {
        match e.exit_code() {
            2 => Error::NonFiniteLoss(self.dump_window(train, &e.to_string())),
            _ => e,
        }
    }
}

/// Mean bits per symbol of one sequential pass over `symbols`, predicting
/// each symbol from the ones before it. Weights are not touched.
pub fn evaluate_bpc<T: Real>(
    params: &ModelParams<T>,
    symbols: &[u8],
    mode: MaskMode,
    seed: u64,
) -> Result<f64> {
    if symbols.len() < 2 {
        return Err(Error::Corpus(format!(
            "cannot evaluate {} symbols; at least 2 are needed",
            symbols.len()
        )));
    }
    let mut rng = RngState::with_stream(seed, EVAL_STREAM);
    let mut state = RecurrentState::initial(1, params.hidden(), params.vocab());
    let mut nats = 0.0;
    for pair in symbols.windows(2) {
        let out = forward_step(&state, &[pair[0] as usize], &[pair[1] as usize], params, &mut rng, mode)?;
        nats += out.loss_nats;
        state = out.state;
    }
    Ok(cross_entropy_bpc(nats / (symbols.len() - 1) as f64))
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    /// Mean over the steps since the previous record.
    pub train_bpc: Option<f64>,
    pub valid_bpc: f64,
    pub mean_z: Option<f64>,
    pub mean_update_rate: Option<f64>,
    pub wall_ms: u128,
}

pub const LOG_HEADER: &str = "step\ttrain_bpc\tvalid_bpc\tmean_z\tmean_update_rate\twall_ms";

impl std::fmt::Display for LogRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        write!(
            f,
            "{}\t{}\t{:.6}\t{}\t{}\t{}",
            self.step,
            opt(self.train_bpc),
            self.valid_bpc,
            opt(self.mean_z),
            opt(self.mean_update_rate),
            self.wall_ms
        )
    }
}

/// Where `train` writes its side outputs.
#[derive(Default)]
pub struct TrainOutputs<'a> {
    /// Receives the header (on a fresh run) and one line per record.
    pub log: Option<&'a mut dyn Write>,
    /// Checkpoint path, rewritten at each checkpoint interval and at the end.
    pub checkpoint: Option<PathBuf>,
    /// Directory for the diagnostic written when a step fails numerically.
    pub dump_dir: Option<PathBuf>,
}

/// Runs `trainer` until `trainer.config.steps` optimizer steps have been
/// taken, logging validation BPC at every interval.
pub fn train<T: Real>(
    trainer: &mut Trainer<T>,
    corpus: &Corpus,
    mut outputs: TrainOutputs<'_>,
) -> Result<Vec<LogRecord>> {
    let cfg = trainer.config.clone();
    let train_split = corpus.split(Split::Train);
    let valid = corpus.split(Split::Valid);
    let valid = match cfg.valid_prefix {
        0 => valid,
        n => &valid[..n.min(valid.len())],
    };
    let start = Instant::now();
    let mut records = Vec::new();
    let emit =
        |rec: LogRecord, records: &mut Vec<LogRecord>, log: &mut Option<&mut dyn Write>| -> Result<()> {
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "{rec}")?;
                w.flush()?;
            }
            records.push(rec);
            Ok(())
        };

    if trainer.step == 0 {
        if let Some(w) = outputs.log.as_deref_mut() {
            writeln!(w, "{LOG_HEADER}")?;
        }
        let valid_bpc = evaluate_bpc(&trainer.params, valid, cfg.eval_mask, cfg.seed)?;
        let rec = LogRecord {
            step: 0,
            train_bpc: None,
            valid_bpc,
            mean_z: None,
            mean_update_rate: None,
            wall_ms: start.elapsed().as_millis(),
        };
        emit(rec, &mut records, &mut outputs.log)?;
    }

    let (mut bpc, mut rate, mut update, mut n) = (0.0, 0.0, 0.0, 0u64);
    while trainer.step < cfg.steps {
        let stats = match trainer.step(train_split) {
            Ok(s) => s,
            Err(Error::NonFiniteLoss(dump)) => {
                let mut msg = format!("step {}", trainer.step + 1);
                if let Some(dir) = &outputs.dump_dir {
                    let path = dir.join(format!("nonfinite_step{}.txt", trainer.step + 1));
                    std::fs::write(&path, &dump)?;
                    msg.push_str(&format!(", window dumped to {}", path.display()));
                } else {
                    msg.push('\n');
                    msg.push_str(&dump);
                }
                return Err(Error::NonFiniteLoss(msg));
            }
            Err(e) => return Err(e),
        };
        bpc += stats.bpc;
        rate += stats.mean_rate;
        update += stats.mean_update;
        n += 1;

        let last = trainer.step == cfg.steps;
        if trainer.step.is_multiple_of(cfg.log_every) || last {
            let valid_bpc = evaluate_bpc(&trainer.params, valid, cfg.eval_mask, cfg.seed)?;
            let k = n as f64;
            let rec = LogRecord {
                step: trainer.step,
                train_bpc: Some(bpc / k),
                valid_bpc,
                mean_z: Some(rate / k),
                mean_update_rate: Some(update / k),
                wall_ms: start.elapsed().as_millis(),
            };
            emit(rec, &mut records, &mut outputs.log)?;
            (bpc, rate, update, n) = (0.0, 0.0, 0.0, 0);
        }
        let due = cfg.checkpoint_every > 0 && trainer.step.is_multiple_of(cfg.checkpoint_every);
        if let Some(path) = &outputs.checkpoint {
            if due && !last {
                save_checkpoint(path, &trainer.checkpoint(corpus.vocab()))?;
            }
        }
    }
    if let Some(path) = &outputs.checkpoint {
        save_checkpoint(path, &trainer.checkpoint(corpus.vocab()))?;
    }
    Ok(records)
}
