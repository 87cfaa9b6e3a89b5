//! Append-only `step,lr,loss[,acc]` metrics log and loss smoothing.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Result, VsaError};

/// Window of the smoothed loss.
pub const SMOOTHING_WINDOW: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub acc: Option<f64>,
}

impl StepLog {
    /// Shortest round-trip formatting, so equal runs give equal bytes.
    pub fn line(&self) -> String {
        match self.acc {
            Some(a) => format!("{},{:e},{:e},{}", self.step, self.lr, self.loss, a),
            None => format!("{},{:e},{:e}", self.step, self.lr, self.loss),
        }
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = || VsaError::format(format!("bad metrics line {line:?}"));
        let f: Vec<&str> = line.trim().split(',').collect();
        if !(3..=4).contains(&f.len()) {
            return Err(bad());
        }
        Ok(StepLog {
            step: f[0].parse().map_err(|_| bad())?,
            lr: f[1].parse().map_err(|_| bad())?,
            loss: f[2].parse().map_err(|_| bad())?,
            acc: f.get(3).map(|a| a.parse()).transpose().map_err(|_| bad())?,
        })
    }
}

pub struct MetricsLog {
    file: File,
}

impl MetricsLog {
    pub fn append(path: &Path) -> Result<Self> {
        Ok(MetricsLog { file: OpenOptions::new().create(true).append(true).open(path)? })
    }

    pub fn write(&mut self, entry: &StepLog) -> Result<()> {
        writeln!(self.file, "{}", entry.line())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Vec<StepLog>> {
        let f = File::open(path)?;
        BufReader::new(f)
            .lines()
            .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
            .map(|l| StepLog::parse(&l?))
            .collect()
    }
}

/// Trailing means over `window` losses: entry `i` averages
/// `losses[i+1-window..=i]` (fewer at the start).
pub fn smoothed(losses: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(losses.len());
    let mut sum = 0.0;
    for (i, &l) in losses.iter().enumerate() {
        sum += l;
        if i >= window {
            sum -= losses[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_round_trip() {
        let e = StepLog { step: 12, lr: 9.375e-5, loss: 0.123_456_789_012_345_67, acc: None };
        assert_eq!(StepLog::parse(&e.line()).unwrap(), e);
        let e = StepLog { acc: Some(0.75), ..e };
        assert_eq!(StepLog::parse(&e.line()).unwrap(), e);
        assert!(StepLog::parse("1,2").is_err());
    }

    #[test]
    fn smoothing_window() {
        let s = smoothed(&[4.0, 2.0, 0.0, 2.0], 2);
        assert_eq!(s, vec![4.0, 3.0, 1.0, 1.0]);
    }
}
