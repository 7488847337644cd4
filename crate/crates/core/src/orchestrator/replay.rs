//! Rebuilding state from an audit log.

use super::event::Event;
use super::state::State;
use super::{inconsistent, OrchestratorError as E};
use crate::canonical;
use crate::domain::Stamp;
use crate::integrity::audit::{parse_log_bytes, verify_chain};
use crate::integrity::{AuditRecord, ChainVerdict, Digest, Signer};

#[derive(Debug, Clone)]
pub struct ReplayReport {
    pub events: u64,
    /// `(seq, hash)` of every leaderboard rebuild, in log order.
    pub board_hashes: Vec<(u64, Digest)>,
    pub state: State,
}

impl ReplayReport {
    pub fn final_board_hash(&self) -> Option<Digest> {
        self.board_hashes.last().map(|(_, h)| *h)
    }
}

fn decode(record: &AuditRecord) -> Result<Event, E> {
    let event: Event = canonical::from_bytes(&record.payload)
        .map_err(|e| E::Replay(format!("entry {}: {e}", record.entry.seq)))?;
    if event.kind() != record.entry.kind {
        return Err(E::Replay(format!("entry {}: kind does not match payload", record.entry.seq)));
    }
    Ok(event)
}

/// Verifies the chain against the server key named in the genesis entry,
/// then applies every event. Each leaderboard rebuild is recomputed by
/// `State::apply`, so a successful replay proves every logged board hash.
pub fn replay(records: &[AuditRecord]) -> Result<ReplayReport, E> {
    let first = records.first().ok_or_else(|| E::Replay("empty log".into()))?;
    let genesis = decode(first)?;
    let Event::Genesis { server_key, .. } = &genesis else {
        return Err(E::Replay("log must start with genesis".into()));
    };
    let key = *server_key;
    let verdict = verify_chain(records, |s| match s {
        Signer::Server => Some(key),
        Signer::Participant(_) => None,
    });
    if let ChainVerdict::FirstBrokenSeq(seq) = verdict {
        return Err(E::Replay(format!("chain breaks at entry {seq}")));
    }
    let mut state = State::genesis(Stamp::new(0, 0), &genesis)?;
    let mut board_hashes = Vec::new();
    for rec in &records[1..] {
        let seq = rec.entry.seq;
        let event = decode(rec)?;
        let tick = match &event {
            Event::ClockAdvanced { tick } => *tick,
            _ => state.now,
        };
        state
            .apply(Stamp::new(tick, seq), &event)
            .map_err(|e| inconsistent(format!("entry {seq}: {e}")))?;
        if let Event::LeaderboardsRebuilt { hash } = event {
            board_hashes.push((seq, hash));
        }
    }
    Ok(ReplayReport {
        events: records.len() as u64,
        board_hashes,
        state,
    })
}

/// Replays a log in its on-disk text form.
pub fn replay_text(bytes: &[u8]) -> Result<ReplayReport, E> {
    let (records, broken) = parse_log_bytes(bytes);
    if let Some(line) = broken {
        return Err(E::Replay(format!("undecodable line {line}")));
    }
    replay(&records)
}
