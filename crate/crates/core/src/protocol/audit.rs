use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use super::wire::{deserialize_message, NodeId, PayloadKind, Role};
use super::Transcript;
use crate::data::{is_canary_row, LabeledDataset};

/// One place where sample bytes showed up in a transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LeakMatch {
    /// Position of the message in the transcript.
    pub entry: usize,
    pub sender: String,
    pub kind: &'static str,
    /// Byte offset inside the serialized message.
    pub offset: usize,
    pub dataset: String,
    pub row: usize,
    /// True for a canary hit (any single canary value), false for a full
    /// non-canary row.
    pub canary: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PrivacyReport {
    pub messages: usize,
    pub bytes_scanned: usize,
    pub canaries: usize,
    pub rows_checked: usize,
    /// All-zero rows cannot be told apart from zero parameters and are not
    /// searched for.
    pub rows_skipped: usize,
    pub matches: Vec<LeakMatch>,
    pub schema_violations: Vec<String>,
}

impl PrivacyReport {
    pub fn passed(&self) -> bool {
        self.matches.is_empty() && self.schema_violations.is_empty()
    }
}

struct Pattern {
    dataset: usize,
    row: usize,
    canary: bool,
    bytes: Vec<u8>,
}

/// Scan every serialized message for canary values and for exact dataset
/// rows, and check that the transcript only uses the allowed message shapes.
pub fn audit_privacy(transcript: &Transcript, datasets: &[LabeledDataset]) -> PrivacyReport {
    let mut patterns = Vec::new();
    let mut canaries = 0;
    let mut skipped = 0;
    for (di, ds) in datasets.iter().enumerate() {
        for (ri, row) in ds.features.row_iter().enumerate() {
            if is_canary_row(row) {
                canaries += 1;
                // Every single canary value is searched for on its own.
                for v in row {
                    patterns.push(Pattern {
                        dataset: di,
                        row: ri,
                        canary: true,
                        bytes: v.to_le_bytes().to_vec(),
                    });
                }
            } else if row.iter().all(|v| v.to_bits() == 0) {
                skipped += 1;
            } else {
                patterns.push(Pattern {
                    dataset: di,
                    row: ri,
                    canary: false,
                    bytes: row.iter().flat_map(|v| v.to_le_bytes()).collect(),
                });
            }
        }
    }
    // Index by the first eight bytes so each message is scanned once.
    let mut index: HashMap<[u8; 8], Vec<usize>> = HashMap::new();
    for (i, p) in patterns.iter().enumerate() {
        index.entry(p.bytes[..8].try_into().unwrap()).or_default().push(i);
    }

    let mut matches = Vec::new();
    for (ei, entry) in transcript.entries().iter().enumerate() {
        let bytes = &entry.bytes;
        for off in 0..bytes.len().saturating_sub(7) {
            let Some(hits) = index.get(&bytes[off..off + 8]) else {
                continue;
            };
            for &pi in hits {
                let p = &patterns[pi];
                if bytes[off..].starts_with(&p.bytes) {
                    matches.push(LeakMatch {
                        entry: ei,
                        sender: entry.sender.to_string(),
                        kind: entry.kind.as_str(),
                        offset: off,
                        dataset: datasets[p.dataset].name.clone(),
                        row: p.row,
                        canary: p.canary,
                    });
                }
            }
        }
    }

    PrivacyReport {
        messages: transcript.len(),
        bytes_scanned: transcript.total_bytes(),
        canaries,
        rows_checked: patterns.iter().filter(|p| !p.canary).count() + canaries,
        rows_skipped: skipped,
        matches,
        schema_violations: check_schema(transcript),
    }
}

fn check_schema(transcript: &Transcript) -> Vec<String> {
    let mut out = Vec::new();
    let mut per_source: BTreeMap<NodeId, (usize, usize)> = BTreeMap::new();
    for (i, e) in transcript.entries().iter().enumerate() {
        let msg = match deserialize_message(&e.bytes) {
            Ok(m) => m,
            Err(err) => {
                out.push(format!("message {i} does not decode: {err}"));
                continue;
            }
        };
        if msg.payload.kind() != e.kind || msg.sender != e.sender || msg.receiver != e.receiver || msg.seq != e.seq {
            out.push(format!("message {i}: log metadata disagrees with its bytes"));
        }
        let kind = msg.payload.kind();
        if !kind.is_data_bearing() {
            continue;
        }
        if msg.sender.role != Role::Source || msg.receiver.role != Role::Target {
            out.push(format!("message {i}: {} sent from {} to {}", kind.as_str(), msg.sender, msg.receiver));
            continue;
        }
        let slot = per_source.entry(msg.sender).or_default();
        match kind {
            PayloadKind::ModelParameters => slot.0 += 1,
            PayloadKind::PrototypeSummary => slot.1 += 1,
            _ => {}
        }
    }
    for (node, (models, prototypes)) in per_source {
        if models > 1 || prototypes > 1 {
            out.push(format!("{node} sent {models} models and {prototypes} prototypes"));
        }
    }
    out
}
