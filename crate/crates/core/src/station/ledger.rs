//! Append-only JSON-lines run ledger.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One ledger line. `t` is simulated time in hours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Step {
        t: f64,
        program: String,
        iteration: usize,
        attempt: usize,
        step: usize,
        device: String,
        action: String,
        from: String,
        to: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<serde_json::Value>,
    },
    Failure {
        t: f64,
        program: String,
        iteration: usize,
        attempt: usize,
        step: usize,
        device: String,
        action: String,
        reason: String,
        lid_on: bool,
    },
    Program {
        t: f64,
        program: String,
        iteration: usize,
        attempt: usize,
        ok: bool,
    },
    Measurement {
        t: f64,
        iteration: usize,
        time_hours: f64,
        wells: usize,
        skipped: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        frame: Option<String>,
    },
    Skip {
        t: f64,
        iteration: usize,
        reason: String,
    },
    Stop {
        t: f64,
        iteration: usize,
        reason: String,
    },
}

impl Record {
    pub fn time(&self) -> f64 {
        match self {
            Record::Step { t, .. }
            | Record::Failure { t, .. }
            | Record::Program { t, .. }
            | Record::Measurement { t, .. }
            | Record::Skip { t, .. }
            | Record::Stop { t, .. } => *t,
        }
    }
}

/// Records kept in memory and, optionally, mirrored line by line to a file.
#[derive(Debug, Default)]
pub struct RunLedger {
    records: Vec<Record>,
    file: Option<(PathBuf, File)>,
}

impl RunLedger {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Creates (truncating) a ledger file.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            records: Vec::new(),
            file: Some((path.to_path_buf(), file)),
        })
    }

    /// Appends a record; timestamps must strictly increase.
    pub fn append(&mut self, r: Record) -> Result<()> {
        if let Some(last) = self.records.last() {
            if r.time() <= last.time() {
                return Err(Error::Contract(format!(
                    "ledger time {} does not follow {}",
                    r.time(),
                    last.time()
                )));
            }
        }
        if let Some((path, f)) = &mut self.file {
            let mut line = serde_json::to_string(&r)?;
            line.push('\n');
            f.write_all(line.as_bytes())
                .map_err(|e| Error::io(path.as_path(), e))?;
        }
        self.records.push(r);
        Ok(())
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some((path, f)) = &mut self.file {
            f.sync_all().map_err(|e| Error::io(path.as_path(), e))?;
        }
        Ok(())
    }

    /// Reads a ledger file back.
    pub fn load(path: &Path) -> Result<Vec<Record>> {
        let f = OpenOptions::new()
            .read(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let r = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
            out.push(r);
        }
        Ok(out)
    }
}

/// Program-run statistics derived from a ledger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub runs: usize,
    pub successes: usize,
    pub measurements: usize,
    pub skipped_iterations: usize,
}

impl RunStats {
    pub fn from_records(records: &[Record]) -> Self {
        let mut s = RunStats {
            runs: 0,
            successes: 0,
            measurements: 0,
            skipped_iterations: 0,
        };
        for r in records {
            match r {
                Record::Program { ok, .. } => {
                    s.runs += 1;
                    s.successes += usize::from(*ok);
                }
                Record::Measurement { .. } => s.measurements += 1,
                Record::Skip { .. } => s.skipped_iterations += 1,
                _ => {}
            }
        }
        s
    }

    /// Successful program runs over all runs.
    pub fn success_rate(&self) -> f64 {
        if self.runs == 0 {
            0.0
        } else {
            self.successes as f64 / self.runs as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn skip(t: f64) -> Record {
        Record::Skip {
            t,
            iteration: 0,
            reason: "x".into(),
        }
    }

    #[test]
    fn timestamps_strictly_increase() {
        let mut l = RunLedger::in_memory();
        l.append(skip(1.0)).unwrap();
        assert!(l.append(skip(1.0)).is_err());
        l.append(skip(1.5)).unwrap();
        assert_eq!(l.len(), 2);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.jsonl");
        let mut l = RunLedger::create(&path).unwrap();
        l.append(Record::Program {
            t: 0.1,
            program: "p".into(),
            iteration: 0,
            attempt: 0,
            ok: false,
        })
        .unwrap();
        l.append(Record::Program {
            t: 0.2,
            program: "p".into(),
            iteration: 0,
            attempt: 1,
            ok: true,
        })
        .unwrap();
        l.append(skip(0.3)).unwrap();
        l.flush().unwrap();
        let back = RunLedger::load(&path).unwrap();
        assert_eq!(back, l.records());
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text
            .lines()
            .next()
            .unwrap()
            .starts_with("{\"kind\":\"program\""));
        let s = RunStats::from_records(&back);
        assert_eq!((s.runs, s.successes, s.skipped_iterations), (2, 1, 1));
        assert_eq!(s.success_rate(), 0.5);
    }
}
