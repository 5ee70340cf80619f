//! Byte-level corpora and random context-window batching.

mod synth;

pub use synth::{synthesize, SynthConfig};

use std::ops::Range;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

/// Which part of a corpus a batch is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

/// An immutable byte stream with disjoint train and validation ranges.
/// Each byte is one token of a 256-symbol vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteCorpus {
    bytes: Vec<u8>,
    train: Range<usize>,
    val: Range<usize>,
}

pub const VOCAB: usize = 256;

impl ByteCorpus {
    /// The final `val_fraction` of the stream (rounded to whole bytes)
    /// becomes validation.
    pub fn from_bytes(bytes: Vec<u8>, val_fraction: f64) -> Result<Self> {
        if bytes.is_empty() {
            return Err(Error::invalid("corpus is empty"));
        }
        if !(val_fraction > 0.0 && val_fraction < 0.5) {
            return Err(Error::invalid(format!(
                "validation fraction must lie in (0, 0.5), got {val_fraction}"
            )));
        }
        let n = bytes.len();
        let n_val = (n as f64 * val_fraction).round() as usize;
        if n_val == 0 {
            return Err(Error::invalid(format!(
                "corpus of {n} bytes leaves no validation data at fraction {val_fraction}"
            )));
        }
        Ok(ByteCorpus {
            bytes,
            train: 0..n - n_val,
            val: n - n_val..n,
        })
    }

    /// Training and validation taken from separate streams.
    pub fn with_validation(train: Vec<u8>, val: Vec<u8>) -> Result<Self> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::invalid("training and validation corpora must be nonempty"));
        }
        let split = train.len();
        let mut bytes = train;
        bytes.extend_from_slice(&val);
        let n = bytes.len();
        Ok(ByteCorpus {
            bytes,
            train: 0..split,
            val: split..n,
        })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn train_range(&self) -> Range<usize> {
        self.train.clone()
    }

    pub fn val_range(&self) -> Range<usize> {
        self.val.clone()
    }

    pub fn split(&self, split: Split) -> &[u8] {
        match split {
            Split::Train => &self.bytes[self.train.clone()],
            Split::Val => &self.bytes[self.val.clone()],
        }
    }

    /// Inputs and next-byte targets for the window starting at `offset`
    /// within `split`.
    pub fn window_at(&self, split: Split, offset: usize, seq: usize) -> Result<(Vec<u32>, Vec<u32>)> {
        let s = self.split(split);
        if seq == 0 || offset + seq + 1 > s.len() {
            return Err(Error::invalid(format!(
                "window of {seq} at offset {offset} does not fit a split of {} bytes",
                s.len()
            )));
        }
        let w = &s[offset..offset + seq + 1];
        Ok((
            w[..seq].iter().map(|&b| b as u32).collect(),
            w[1..].iter().map(|&b| b as u32).collect(),
        ))
    }

    /// `batch` uniformly random start offsets of `seq`-token windows.
    pub fn sample_offsets(&self, split: Split, batch: usize, seq: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        let len = self.split(split).len();
        if seq == 0 || batch == 0 {
            return Err(Error::invalid("batch and sequence length must be positive"));
        }
        if seq + 1 > len {
            return Err(Error::invalid(format!(
                "context {seq} plus one exceeds the {len}-byte {} split",
                match split {
                    Split::Train => "training",
                    Split::Val => "validation",
                }
            )));
        }
        Ok((0..batch).map(|_| rng.random_range(0..=len - seq - 1)).collect())
    }

    /// `batch` windows of `seq` tokens at uniformly random offsets.
    pub fn sample_batch(&self, split: Split, batch: usize, seq: usize, rng: &mut impl Rng) -> Result<Batch> {
        let offsets = self.sample_offsets(split, batch, seq, rng)?;
        let mut out = Batch {
            inputs: Vec::with_capacity(batch * seq),
            targets: Vec::with_capacity(batch * seq),
            batch,
            seq,
        };
        for offset in offsets {
            let (x, y) = self.window_at(split, offset, seq)?;
            out.inputs.extend(x);
            out.targets.extend(y);
        }
        Ok(out)
    }
}

/// Row-major `batch × seq` token windows and their shifted targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
    pub batch: usize,
    pub seq: usize,
}

impl Batch {
    pub fn tokens(&self) -> u64 {
        (self.batch * self.seq) as u64
    }
}

/// Reads a file as raw bytes and splits off the validation tail.
pub fn load_corpus(path: impl AsRef<Path>, val_fraction: f64) -> Result<ByteCorpus> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        return Err(Error::invalid(format!("corpus {} is empty", path.display())));
    }
    ByteCorpus::from_bytes(bytes, val_fraction)
}
