use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const HEADER: &str = "step,tokens,flop_real,flop_ideal,lr,train_loss,val_loss";

/// One optimizer step. `val_loss` is present only on evaluation steps; a
/// non-finite `train_loss` marks a divergence record.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub tokens: u64,
    pub flop_real: u128,
    pub flop_ideal: u128,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

impl LogRow {
    /// CSV line without the newline. Floats use the shortest
    /// representation that round-trips.
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "{},{},{},{},{},{},",
            self.step, self.tokens, self.flop_real, self.flop_ideal, self.lr, self.train_loss
        );
        if let Some(v) = self.val_loss {
            write!(s, "{v}").expect("string write");
        }
        s
    }

    pub fn diverged(&self) -> bool {
        !self.train_loss.is_finite()
    }
}

pub fn render(rows: &[LogRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

/// Appends rows to a run log, flushing after each so a crashed run leaves
/// every completed step on disk.
pub struct LogWriter {
    file: std::fs::File,
    path: std::path::PathBuf,
}

impl LogWriter {
    /// Creates (or truncates) the file and writes the header plus `rows`.
    pub fn create(path: impl AsRef<Path>, rows: &[LogRow]) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        file.write_all(render(rows).as_bytes())
            .map_err(|e| Error::io(&path, e))?;
        Ok(LogWriter { file, path })
    }

    pub fn append(&mut self, row: &LogRow) -> Result<()> {
        let mut line = row.to_csv();
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}
