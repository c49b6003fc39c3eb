//! Binary checkpoints.
//!
//! All integers and scalars are little-endian. Layout, in order:
//!
//! ```text
//! magic            4 bytes  "SZO1"
//! version          u32      1
//! scalar width     u8       4 (f32) or 8 (f64)
//! step             u64
//! hidden N, vocab M  u32, u32
//! config           u32 length + key=value text
//! vocab            u32 length + bytes
//! data rng         seed u64, stream u64, word position u128
//! mask rng         seed u64, stream u64, word position u128
//! cursor           window u32, lane count u32, one u64 offset per lane
//! parameters       18 blocks: W_f U_f V_f b_f, W_i .. b_i, W_o .. b_o,
//!                  W_u .. b_u, W_y, b_y; each row-major
//! E[g²]            18 blocks, same order
//! E[Δ²]            18 blocks, same order
//! lane state       c (lanes×N), h (lanes×N), p_prev (lanes×M)
//! checksum         u64 FNV-1a of every preceding byte
//! ```
//!
//! Loading verifies the checksum and every shape before building anything,
//! so a bad file never yields a partially loaded model.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Precision, Real, RngState};
use crate::optimizer::AdadeltaState;
use crate::sflstm::{ModelParams, ParamSet, RecurrentState};

use super::config::TrainConfig;
use super::trainer::Cursor;

pub const MAGIC: &[u8; 4] = b"SZO1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: TrainConfig,
    pub step: u64,
    pub vocab: Vec<u8>,
    pub params: ModelParams<T>,
    pub optimizer: AdadeltaState<T>,
    pub data_rng: RngState,
    pub mask_rng: RngState,
    pub cursor: Cursor,
    pub lanes: RecurrentState<T>,
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_rng(out: &mut Vec<u8>, rng: &RngState) {
    out.extend_from_slice(&rng.seed().to_le_bytes());
    out.extend_from_slice(&rng.stream().to_le_bytes());
    out.extend_from_slice(&rng.word_pos().to_le_bytes());
}

fn put_blocks<T: Real>(out: &mut Vec<u8>, set: &ParamSet<T>) {
    for block in set.blocks() {
        for &v in block.as_slice() {
            v.write_le(out);
        }
    }
}

fn put_matrix<T: Real>(out: &mut Vec<u8>, m: &Matrix<T>) {
    for &v in m.as_slice() {
        v.write_le(out);
    }
}

pub fn encode_checkpoint<T: Real>(ck: &Checkpoint<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::PRECISION.bytes() as u8);
    out.extend_from_slice(&ck.step.to_le_bytes());
    put_u32(&mut out, ck.params.hidden())?;
    put_u32(&mut out, ck.params.vocab())?;
    let text = ck.config.to_text();
    put_u32(&mut out, text.len())?;
    out.extend_from_slice(text.as_bytes());
    put_u32(&mut out, ck.vocab.len())?;
    out.extend_from_slice(&ck.vocab);
    put_rng(&mut out, &ck.data_rng);
    put_rng(&mut out, &ck.mask_rng);
    put_u32(&mut out, ck.cursor.window)?;
    put_u32(&mut out, ck.cursor.offsets.len())?;
    for &o in &ck.cursor.offsets {
        out.extend_from_slice(&(o as u64).to_le_bytes());
    }
    put_blocks(&mut out, &ck.params.weights);
    put_blocks(&mut out, &ck.optimizer.sq_grad);
    put_blocks(&mut out, &ck.optimizer.sq_update);
    put_u32(&mut out, ck.lanes.batch())?;
    put_matrix(&mut out, &ck.lanes.c);
    put_matrix(&mut out, &ck.lanes.h);
    put_matrix(&mut out, &ck.lanes.p_prev);
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

/// Writes to a sibling temporary file first so an interrupted save never
/// clobbers the previous checkpoint.
pub fn save_checkpoint<T: Real>(path: &Path, ck: &Checkpoint<T>) -> Result<()> {
    let bytes = encode_checkpoint(ck)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn rng(&mut self, what: &str) -> Result<RngState> {
        let seed = self.u64(what)?;
        let stream = self.u64(what)?;
        let pos = u128::from_le_bytes(self.take(16, what)?.try_into().unwrap());
        Ok(RngState::restore(seed, stream, pos))
    }

    fn matrix<T: Real>(&mut self, rows: usize, cols: usize, what: &str) -> Result<Matrix<T>> {
        let width = T::PRECISION.bytes();
        let raw = self.take(rows * cols * width, what)?;
        let data = raw.chunks_exact(width).map(T::read_le).collect();
        Matrix::from_vec(rows, cols, data)
    }

    fn blocks<T: Real>(&mut self, hidden: usize, vocab: usize, what: &str) -> Result<ParamSet<T>> {
        let mut set = ParamSet::zeros(hidden, vocab);
        let names = ParamSet::<T>::block_names();
        for (name, block) in names.iter().zip(set.blocks_mut()) {
            let (r, c) = block.shape();
            *block = self.matrix(r, c, &format!("{what} {name}"))?;
        }
        Ok(set)
    }
}

/// Scalar width recorded in a checkpoint header.
pub fn checkpoint_precision(bytes: &[u8]) -> Result<Precision> {
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    match bytes[8] {
        4 => Ok(Precision::F32),
        8 => Ok(Precision::F64),
        w => Err(Error::Checkpoint(format!("unsupported scalar width {w}"))),
    }
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let precision = checkpoint_precision(bytes)?;
    if bytes.len() < 17 {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    if u64::from_le_bytes(tail.try_into().unwrap()) != fnv1a(body) {
        return Err(Error::Checkpoint("checksum mismatch (corrupt or truncated file)".into()));
    }
    if precision != T::PRECISION {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {precision} values, {} requested",
            T::PRECISION
        )));
    }

    let mut r = Reader { bytes: body, at: 9 };
    let step = r.u64("step")?;
    let hidden = r.u32("hidden size")?;
    let vocab_size = r.u32("vocab size")?;
    let text_len = r.u32("config length")?;
    let text = std::str::from_utf8(r.take(text_len, "config")?)
        .map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
    let config = TrainConfig::from_text(text)?;
    let vocab_len = r.u32("vocab length")?;
    let vocab = r.take(vocab_len, "vocab")?.to_vec();
    if config.hidden != hidden || vocab.len() != vocab_size || hidden == 0 || vocab_size == 0 {
        return Err(Error::Checkpoint(format!(
            "header shapes N={hidden} M={vocab_size} disagree with config N={} and vocab of {}",
            config.hidden,
            vocab.len()
        )));
    }
    let data_rng = r.rng("data rng")?;
    let mask_rng = r.rng("mask rng")?;
    let window = r.u32("cursor window")?;
    let lanes_n = r.u32("cursor lanes")?;
    let offsets =
        (0..lanes_n).map(|_| r.u64("cursor offset").map(|v| v as usize)).collect::<Result<Vec<_>>>()?;

    let weights = r.blocks(hidden, vocab_size, "parameters")?;
    let sq_grad = r.blocks(hidden, vocab_size, "E[g²]")?;
    let sq_update = r.blocks(hidden, vocab_size, "E[Δ²]")?;
    let batch = r.u32("lane count")?;
    let c = r.matrix(batch, hidden, "lane c")?;
    let h = r.matrix(batch, hidden, "lane h")?;
    let p_prev = r.matrix(batch, vocab_size, "lane p_prev")?;
    if r.at != body.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.at)));
    }

    let mut params = ModelParams::zeros(hidden, vocab_size, config.variant, config.tau)?;
    params.weights = weights;
    Ok(Checkpoint {
        step,
        vocab,
        params,
        optimizer: AdadeltaState { sq_grad, sq_update, config: config.optimizer() },
        data_rng,
        mask_rng,
        cursor: Cursor { offsets, window },
        lanes: RecurrentState { c, h, p_prev },
        config,
    })
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes =
        fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}
