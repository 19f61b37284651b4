//! CSV run log: one row per optimizer step, floats at 17 significant
//! digits so identical runs produce byte-identical files.

use crate::datasets::format_f64;
use crate::error::{Error, Result};
use crate::trainer::LogRow;
use std::io::{BufRead, BufReader, Read, Write};

pub const HEADER: &str = "step,phase,round,t,loss_dsm,loss_struct,loss_total,wall_ms";

pub struct RunLogWriter<W: Write> {
    out: W,
    last_step: u64,
}

impl<W: Write> RunLogWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{HEADER}")?;
        Ok(RunLogWriter { out, last_step: 0 })
    }

    /// Resume an existing log: the header is assumed written; rows must
    /// continue from `last_step`.
    pub fn resume(out: W, last_step: u64) -> Self {
        RunLogWriter { out, last_step }
    }

    pub fn write_row(&mut self, row: &LogRow) -> Result<()> {
        if row.step <= self.last_step {
            return Err(Error::InvalidArgument(format!(
                "log steps must strictly increase: {} after {}",
                row.step, self.last_step
            )));
        }
        self.last_step = row.step;
        writeln!(
            self.out,
            "{},{},{},{},{},{},{},{}",
            row.step,
            row.phase,
            row.round,
            format_f64(row.t),
            format_f64(row.loss_dsm),
            format_f64(row.loss_struct),
            format_f64(row.loss_total),
            row.wall_ms
        )?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Parsed log row with the phase as an owned string.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRow {
    pub step: u64,
    pub phase: String,
    pub round: u32,
    pub t: f64,
    pub loss_dsm: f64,
    pub loss_struct: f64,
    pub loss_total: f64,
    pub wall_ms: u64,
}

pub fn read_log<R: Read>(reader: R) -> Result<Vec<ParsedRow>> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header != HEADER {
        return Err(Error::Parse {
            path: "<runlog>".into(),
            line: 1,
            message: format!("bad header `{header}`"),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Parse {
                path: "<runlog>".into(),
                line: i + 2,
                message: format!("expected 8 fields, got {}", fields.len()),
            });
        }
        let parse_err = |msg: &str| Error::Parse {
            path: "<runlog>".into(),
            line: i + 2,
            message: msg.into(),
        };
        rows.push(ParsedRow {
            step: fields[0].parse().map_err(|_| parse_err("bad step"))?,
            phase: fields[1].to_string(),
            round: fields[2].parse().map_err(|_| parse_err("bad round"))?,
            t: fields[3].parse().map_err(|_| parse_err("bad t"))?,
            loss_dsm: fields[4].parse().map_err(|_| parse_err("bad loss_dsm"))?,
            loss_struct: fields[5]
                .parse()
                .map_err(|_| parse_err("bad loss_struct"))?,
            loss_total: fields[6].parse().map_err(|_| parse_err("bad loss_total"))?,
            wall_ms: fields[7].parse().map_err(|_| parse_err("bad wall_ms"))?,
        });
    }
    Ok(rows)
}
