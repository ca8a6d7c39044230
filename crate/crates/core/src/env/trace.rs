//! Episode trace CSV: `episode, step, config, s0 .. s{n-1}, action, reward,
//! terminal`, one row per visited state.

use std::io::{Read, Write};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub episode: usize,
    pub step: usize,
    pub config: usize,
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub terminal: bool,
}

pub fn trace_header(width: usize) -> Vec<String> {
    let mut h = vec!["episode".to_string(), "step".into(), "config".into()];
    h.extend((0..width).map(|i| format!("s{i}")));
    h.extend(["action".to_string(), "reward".into(), "terminal".into()]);
    h
}

/// The CSV fields of one row, in header order.
pub fn trace_fields(row: &TraceRow) -> Vec<String> {
    let mut rec = vec![row.episode.to_string(), row.step.to_string(), row.config.to_string()];
    rec.extend(row.state.iter().map(|v| format!("{v:?}")));
    rec.extend([row.action.to_string(), format!("{:?}", row.reward), u8::from(row.terminal).to_string()]);
    rec
}

pub struct TraceWriter<W: Write> {
    inner: csv::Writer<W>,
    width: usize,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W, width: usize) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(trace_header(width))?;
        Ok(Self { inner, width })
    }

    pub fn write(&mut self, row: &TraceRow) -> Result<()> {
        if row.state.len() != self.width {
            return Err(Error::Dimension { expected: self.width, actual: row.state.len() });
        }
        self.inner.write_record(trace_fields(row))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// Parses a trace, returning the state width and the rows.
pub fn read_trace<R: Read>(input: R) -> Result<(usize, Vec<TraceRow>)> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers()?.clone();
    let width = header.len().checked_sub(6).ok_or_else(|| Error::Env("trace header too short".into()))?;
    if trace_header(width).iter().map(String::as_str).ne(header.iter()) {
        return Err(Error::Env("trace header does not match the trace schema".into()));
    }
    let bad = |what: &str, line: usize| Error::Env(format!("trace row {line}: bad {what}"));
    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let int = |i: usize, what: &str| rec[i].parse::<usize>().map_err(|_| bad(what, line));
        let state = (0..width)
            .map(|i| rec[3 + i].parse::<f64>().map_err(|_| bad("state value", line)))
            .collect::<Result<Vec<_>>>()?;
        rows.push(TraceRow {
            episode: int(0, "episode")?,
            step: int(1, "step")?,
            config: int(2, "config")?,
            state,
            action: int(3 + width, "action")?,
            reward: rec[4 + width].parse().map_err(|_| bad("reward", line))?,
            terminal: int(5 + width, "terminal")? == 1,
        });
    }
    Ok((width, rows))
}
