//! Per-epoch metric records and their CSV file format.
//!
//! ```text
//! epoch,stage,loss,macro_f1,mean_reward,frac_pos_adv,frac_degenerate_batches
//! 1,warmup,1.62,0.41,,,
//! 1,bgrpo,-0.31,0.58,0.64,0.61,0
//! ```
//!
//! Reward and advantage columns are empty for stages that have none.

use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Warmup,
    Bgrpo,
    Eval,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Warmup => "warmup",
            Self::Bgrpo => "bgrpo",
            Self::Eval => "eval",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "warmup" => Ok(Self::Warmup),
            "bgrpo" => Ok(Self::Bgrpo),
            "eval" => Ok(Self::Eval),
            _ => Err(Error::InvalidArgument(format!("unknown stage `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch; 0 for standalone evaluations.
    pub epoch: usize,
    pub stage: Stage,
    pub loss: f64,
    pub macro_f1: f64,
    pub mean_reward: Option<f64>,
    pub frac_pos_adv: Option<f64>,
    pub frac_degenerate_batches: Option<f64>,
}

/// Streams records to a CSV file, flushing after every row.
pub struct ReportWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl ReportWriter<File> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(file))
    }
}

impl<W: Write> ReportWriter<W> {
    pub fn new(writer: W) -> Self {
        Self {
            inner: csv::Writer::from_writer(writer),
        }
    }

    pub fn write(&mut self, record: &EpochRecord) -> Result<()> {
        self.inner.serialize(record)?;
        self.inner.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner
            .into_inner()
            .map_err(|e| Error::Report(csv::Error::from(e.into_error())))
    }
}

/// Renders records as CSV text with a header row.
pub fn format_records(records: &[EpochRecord]) -> Result<String> {
    let mut w = ReportWriter::new(Vec::new());
    for r in records {
        w.write(r)?;
    }
    let bytes = w.into_inner()?;
    if records.is_empty() {
        return Ok("epoch,stage,loss,macro_f1,mean_reward,frac_pos_adv,frac_degenerate_batches\n".into());
    }
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_records(text: &str) -> Result<Vec<EpochRecord>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text)
}
