//! JSON Lines trajectory records.
//!
//! Line 1 is a header `{"schema_version", "kind": "header", "params", "seed"}`;
//! every further line is one step `{"n", "center", "uniform", "positive",
//! "freq_at_center"}`. Floats are written in shortest round-trip form and
//! parsed back exactly, so a record replays bit for bit.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{ChainState, Event, Params};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub schema_version: u32,
    pub kind: String,
    pub params: Params,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub params: Params,
    pub events: Vec<Event>,
}

pub fn write_jsonl<W: Write>(state: &ChainState, mut w: W) -> Result<()> {
    let header = Header {
        schema_version: SCHEMA_VERSION,
        kind: "header".into(),
        params: state.params().clone(),
        seed: state.params().seed,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for ev in state.events() {
        serde_json::to_writer(&mut w, ev)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Record> {
    let mut lines = r.lines().enumerate();
    let header: Header = match lines.next() {
        Some((_, line)) => serde_json::from_str(&line?).map_err(|e| Error::Record {
            line: 1,
            reason: e.to_string(),
        })?,
        None => {
            return Err(Error::Record {
                line: 1,
                reason: "missing header".into(),
            })
        }
    };
    if header.schema_version != SCHEMA_VERSION || header.kind != "header" {
        return Err(Error::Record {
            line: 1,
            reason: format!("unsupported header (schema {}, kind {:?})", header.schema_version, header.kind),
        });
    }
    let mut events = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: Event = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if ev.index != events.len() + 1 {
            return Err(Error::Record {
                line: i + 1,
                reason: format!("expected step {}, found {}", events.len() + 1, ev.index),
            });
        }
        events.push(ev);
    }
    Ok(Record {
        params: header.params,
        events,
    })
}

/// Rebuild the state from recorded centres and uniforms, checking that every
/// recorded outcome and frequency is reproduced exactly.
pub fn replay(record: &Record) -> Result<ChainState> {
    let mut state = ChainState::new(record.params.clone())?;
    for ev in &record.events {
        let got = state.apply_event(ev.center.clone(), ev.uniform)?;
        if got.freq_at_center.to_bits() != ev.freq_at_center.to_bits() {
            return Err(Error::ReplayMismatch {
                step: ev.index,
                what: format!("frequency {} != recorded {}", got.freq_at_center, ev.freq_at_center),
            });
        }
        if got.positive != ev.positive {
            return Err(Error::ReplayMismatch {
                step: ev.index,
                what: "sampling outcome differs".into(),
            });
        }
    }
    Ok(state)
}
