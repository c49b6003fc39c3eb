use std::fs;
use std::io::Read;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

/// Which contiguous part of the corpus to read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("--split must be train, valid or test, got {other:?}"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

/// A byte corpus encoded over the bytes it actually contains.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    bytes: Vec<u8>,
    vocab: Vec<u8>,
    index: [Option<u8>; 256],
    symbols: Vec<u8>,
}

impl Corpus {
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        if bytes.is_empty() {
            return Err(Error::Corpus("corpus is empty".into()));
        }
        let mut seen = [false; 256];
        for &b in &bytes {
            seen[b as usize] = true;
        }
        let vocab: Vec<u8> = (0..=255u8).filter(|&b| seen[b as usize]).collect();
        let mut index = [None; 256];
        for (k, &b) in vocab.iter().enumerate() {
            index[b as usize] = Some(k as u8);
        }
        let symbols = bytes.iter().map(|&b| index[b as usize].unwrap_or(0)).collect();
        Ok(Self { bytes, vocab, index, symbols })
    }

    /// Reads a file, or only its first `max_bytes` bytes when given.
    pub fn load(path: &Path, max_bytes: Option<usize>) -> Result<Self> {
        let file = fs::File::open(path)
            .map_err(|e| Error::Corpus(format!("cannot open {}: {e}", path.display())))?;
        let mut bytes = Vec::new();
        let read = match max_bytes {
            Some(n) => file.take(n as u64).read_to_end(&mut bytes),
            None => { file }.read_to_end(&mut bytes),
        };
        read.map_err(|e| Error::Corpus(format!("cannot read {}: {e}", path.display())))?;
        if bytes.is_empty() {
            return Err(Error::Corpus(format!("{} is empty", path.display())));
        }
        Self::from_bytes(bytes)
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Distinct bytes present, ascending. Symbol `k` stands for `vocab()[k]`.
    pub fn vocab(&self) -> &[u8] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn symbols(&self) -> &[u8] {
        &self.symbols
    }

    /// Encodes arbitrary bytes; fails on a byte the corpus never contained.
    pub fn encode(&self, bytes: &[u8]) -> Result<Vec<u8>> {
        bytes
            .iter()
            .map(|&b| {
                self.index[b as usize]
                    .ok_or_else(|| Error::Config(format!("byte {b:#04x} is not in the corpus vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, symbols: &[u8]) -> Vec<u8> {
        decode_with(&self.vocab, symbols)
    }

    /// Train is the first ⌊0.9·L⌋ symbols, valid the next ⌊0.05·L⌋, test the
    /// rest.
    pub fn split_range(&self, split: Split) -> Range<usize> {
        split_ranges(self.len())[split as usize].clone()
    }

    pub fn split(&self, split: Split) -> &[u8] {
        &self.symbols[self.split_range(split)]
    }
}

pub fn split_ranges(len: usize) -> [Range<usize>; 3] {
    let train = len * 9 / 10;
    let valid = len / 20;
    [0..train, train..train + valid, train + valid..len]
}

pub fn decode_with(vocab: &[u8], symbols: &[u8]) -> Vec<u8> {
    symbols.iter().map(|&s| vocab[s as usize]).collect()
}
