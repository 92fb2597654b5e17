//! JSON-lines event log: a header line, one line per event, and a footer
//! carrying the event count and the digest of the event lines.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{canonical_line, log_digest, ContractState, LedgerEvent};
use crate::error::{Error, Result};

pub const LOG_MAGIC: &str = "fedmem-ledger";
pub const LOG_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Footer {
    events: u64,
    digest: String,
}

pub fn write_log(mut out: impl Write, events: &[LedgerEvent]) -> Result<()> {
    let header = Header {
        format: LOG_MAGIC.into(),
        version: LOG_VERSION,
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for e in events {
        out.write_all(canonical_line(e)?.as_bytes())?;
    }
    let footer = Footer {
        events: events.len() as u64,
        digest: log_digest(events)?,
    };
    writeln!(out, "{}", serde_json::to_string(&footer)?)?;
    out.flush()?;
    Ok(())
}

/// Reads and checks a log: header, dense sequence numbers, byte-exact
/// canonical lines, digest, and a valid state fold.
pub fn read_log(input: impl BufRead) -> Result<Vec<LedgerEvent>> {
    let bad = |m: String| Error::LedgerLog(m);
    let lines: Vec<String> = input.lines().collect::<std::io::Result<_>>()?;
    let (first, rest) = lines.split_first().ok_or_else(|| bad("empty log".into()))?;
    let header: Header =
        serde_json::from_str(first).map_err(|e| bad(format!("bad header: {e}")))?;
    if header.format != LOG_MAGIC || header.version != LOG_VERSION {
        return Err(bad(format!(
            "unsupported log {} v{}",
            header.format, header.version
        )));
    }
    let (last, body) = rest
        .split_last()
        .ok_or_else(|| bad("missing footer".into()))?;
    let footer: Footer = serde_json::from_str(last).map_err(|_| {
        bad(format!(
            "digest mismatch: line {} is not a footer, the log looks truncated",
            lines.len()
        ))
    })?;
    let mut events = Vec::with_capacity(body.len());
    for (i, line) in body.iter().enumerate() {
        let e: LedgerEvent =
            serde_json::from_str(line).map_err(|err| bad(format!("line {}: {err}", i + 2)))?;
        if canonical_line(&e)? != format!("{line}\n") {
            return Err(bad(format!("line {} is not in canonical form", i + 2)));
        }
        events.push(e);
    }
    if footer.events != events.len() as u64 {
        return Err(bad(format!(
            "footer counts {} events, log has {}",
            footer.events,
            events.len()
        )));
    }
    let digest = log_digest(&events)?;
    if footer.digest != digest {
        return Err(bad(format!(
            "digest mismatch: footer {}, computed {digest}",
            footer.digest
        )));
    }
    ContractState::fold(&events)?;
    Ok(events)
}
