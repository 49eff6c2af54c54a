//! Simulated multi-node execution.
//!
//! Every source runs as its own worker holding its own dataset; the target
//! node holds the target features. The only link between them is a pair of
//! byte channels, and every byte that crosses one is logged in a
//! [`Transcript`]. The target deserializes what it receives and drives the
//! same stages as [`crate::pipeline::run_algorithm1`], so both paths produce
//! identical results for the same seed.
//!
//! Per source the exchange is fixed:
//!
//! 1. target → source: control `Start`
//! 2. source → target: one `ModelParameters`
//! 3. source → target: one `PrototypeSummary`
//! 4. source → target: four `ScalarReport`s (see [`SCALAR_NAMES`])
//! 5. source → target: control `Released` (or `Failed`, with nothing before it)
//!
//! The run configuration, including the label-space size, is agreed on
//! before the run and is not part of the transcript.

mod audit;
mod wire;

pub use audit::{audit_privacy, LeakMatch, PrivacyReport};
pub use wire::{decode_model, deserialize_message, encode_model, serialize_message, ControlCode, Message, NodeId, Payload, PayloadKind, Role, HEADER_LEN, MESSAGE_MAGIC, WIRE_VERSION};

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Mutex;

use crate::data::{is_canary_row, LabeledDataset};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::pipeline::{join, par_map, source_stage, target_stage, Method, PipelineConfig, RunOutput, RunPlan, SourceHandle, SourceSummary, StageResult};

/// Data-bearing messages each surviving source sends.
pub const DATA_MESSAGES_PER_SOURCE: usize = 6;
/// Control messages per source: one `Start`, one `Released` or `Failed`.
pub const CONTROL_MESSAGES_PER_SOURCE: usize = 2;

/// Names of the scalar reports, in sending order.
pub const SCALAR_NAMES: [&str; 4] = ["source_risk", "source_accuracy", "d_source_prototype", "source_samples"];

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptEntry {
    pub sender: NodeId,
    pub receiver: NodeId,
    pub seq: u64,
    pub kind: PayloadKind,
    /// The serialized message, header included.
    pub bytes: Vec<u8>,
}

/// Every message of a run, ordered by `(sender, seq)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn from_entries(mut entries: Vec<TranscriptEntry>) -> Self {
        entries.sort_by_key(|e| (e.sender, e.seq));
        Self { entries }
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_bytes(&self) -> usize {
        self.entries.iter().map(|e| e.bytes.len()).sum()
    }

    /// Bytes sent to or from `node`.
    pub fn bytes_for(&self, node: NodeId) -> usize {
        self.entries
            .iter()
            .filter(|e| e.sender == node || e.receiver == node)
            .map(|e| e.bytes.len())
            .sum()
    }

    pub fn count_kind(&self, kind: PayloadKind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind).count()
    }

    /// One line per message: `sender receiver seq kind length hex-bytes`.
    pub fn write_log(&self, out: &mut impl Write) -> std::io::Result<()> {
        for e in &self.entries {
            writeln!(out, "{} {} {} {} {} {}", e.sender, e.receiver, e.seq, e.kind.as_str(), e.bytes.len(), hex::encode(&e.bytes))?;
        }
        Ok(())
    }

    /// Inverse of [`Transcript::write_log`]. Each message is re-decoded, so
    /// a tampered log fails here rather than in the audit.
    pub fn parse_log(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let trimmed = line.trim();
            if !trimmed.is_empty() {
                entries.push(parse_line(trimmed, offset)?);
            }
            offset += line.len();
        }
        Ok(Self::from_entries(entries))
    }
}

fn parse_line(line: &str, offset: usize) -> Result<TranscriptEntry> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 6 {
        return Err(Error::parse(offset, format!("expected 6 fields, found {}", fields.len())));
    }
    let bytes = hex::decode(fields[5]).map_err(|e| Error::parse(offset, format!("bad hex payload: {e}")))?;
    let msg = deserialize_message(&bytes).map_err(|e| match e {
        Error::Parse { offset: inner, message } => Error::parse(offset, format!("message byte {inner}: {message}")),
        other => other,
    })?;
    let declared: usize = fields[4].parse().map_err(|_| Error::parse(offset, "bad length field"))?;
    if declared != bytes.len() || msg.sender.to_string() != fields[0] || msg.receiver.to_string() != fields[1] || msg.seq.to_string() != fields[2] || msg.payload.kind().as_str() != fields[3] {
        return Err(Error::parse(offset, "log fields disagree with the message header"));
    }
    Ok(TranscriptEntry {
        sender: msg.sender,
        receiver: msg.receiver,
        seq: msg.seq,
        kind: msg.payload.kind(),
        bytes,
    })
}

/// Deliberate protocol violations, for exercising the auditor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeakFixture {
    /// Send an extra scalar whose name is the raw bytes of the source's
    /// canary row.
    ScalarName,
    /// Overwrite the first encoder bias entries with the source's first
    /// sample before sending the model.
    ModelBias,
}

#[derive(Debug, Clone)]
pub struct DistributedOutput {
    pub run: RunOutput,
    pub transcript: Transcript,
}

struct Link<'a> {
    from: NodeId,
    seq: u64,
    log: &'a Mutex<Vec<TranscriptEntry>>,
}

impl Link<'_> {
    fn send(&mut self, to: NodeId, tx: &Sender<Vec<u8>>, payload: Payload) {
        let msg = Message {
            sender: self.from,
            receiver: to,
            seq: self.seq,
            payload,
        };
        self.seq += 1;
        let bytes = serialize_message(&msg);
        self.log.lock().expect("transcript lock").push(TranscriptEntry {
            sender: msg.sender,
            receiver: msg.receiver,
            seq: msg.seq,
            kind: msg.payload.kind(),
            bytes: bytes.clone(),
        });
        // A receiver that already hung up has nothing left to learn.
        let _ = tx.send(bytes);
    }
}

/// Run on isolated nodes joined by logged channels.
pub fn run_distributed(sources: Vec<LabeledDataset>, target: &Matrix, config: &PipelineConfig) -> Result<DistributedOutput> {
    run_nodes(sources, target, config, None)
}

/// [`run_distributed`] with a planted leak. Test fixture only.
pub fn run_distributed_leaky(sources: Vec<LabeledDataset>, target: &Matrix, config: &PipelineConfig, leak: LeakFixture) -> Result<DistributedOutput> {
    run_nodes(sources, target, config, Some(leak))
}

fn run_nodes(sources: Vec<LabeledDataset>, target: &Matrix, config: &PipelineConfig, leak: Option<LeakFixture>) -> Result<DistributedOutput> {
    let plan = RunPlan::for_sources(config, &sources, target)?;
    if target.rows() == 0 {
        return Err(Error::Empty("target features"));
    }
    let names: Vec<String> = sources.iter().map(|s| s.name.clone()).collect();
    let log = Mutex::new(Vec::new());
    let (to_target, target_inbox) = channel::<Vec<u8>>();
    let mut target_link = Link {
        from: NodeId::target(),
        seq: 0,
        log: &log,
    };

    let mut jobs = Vec::with_capacity(sources.len());
    for (index, data) in sources.into_iter().enumerate() {
        let (tx, rx) = channel();
        target_link.send(NodeId::source(index), &tx, Payload::ControlSignal { code: ControlCode::Start, arg: index as u64 });
        jobs.push((index, data, rx, to_target.clone()));
    }
    drop(to_target);

    let received = std::thread::scope(|scope| {
        let plan = &plan;
        let log = &log;
        let workers = scope.spawn(move || {
            par_map(jobs, plan.config.workers, |(index, data, inbox, outbox)| source_node(index, data, inbox, outbox, plan, log, leak))
        });
        let mut by_source: BTreeMap<u32, Vec<Message>> = BTreeMap::new();
        let mut failure = None;
        for bytes in target_inbox {
            match deserialize_message(&bytes) {
                Ok(msg) => by_source.entry(msg.sender.index).or_default().push(msg),
                Err(e) => failure = Some(e),
            }
        }
        workers.join().expect("source workers panicked");
        match failure {
            Some(e) => Err(e),
            None => Ok(by_source),
        }
    })?;

    let mut inputs = Vec::with_capacity(names.len());
    for (index, name) in names.iter().enumerate() {
        let msgs = received.get(&(index as u32)).map(Vec::as_slice).unwrap_or(&[]);
        inputs.push((index, name.clone(), assemble_summary(index, msgs)));
    }
    let results: Vec<StageResult> = par_map(inputs, config.workers, |(index, name, summary)| {
        let summary = summary.map_err(|e| (index, name.clone(), e))?;
        let source_model = summary.model.clone();
        let outcome = target_stage(&summary, &name, target, &plan).map_err(|e| (index, name, e))?;
        Ok((outcome, source_model))
    });
    let run = join(Method::Smuda, &plan, target.rows(), results)?;
    Ok(DistributedOutput {
        run,
        transcript: Transcript::from_entries(log.into_inner().expect("transcript lock")),
    })
}

fn source_node(index: usize, data: LabeledDataset, inbox: Receiver<Vec<u8>>, outbox: Sender<Vec<u8>>, plan: &RunPlan, log: &Mutex<Vec<TranscriptEntry>>, leak: Option<LeakFixture>) {
    let me = NodeId::source(index);
    let target = NodeId::target();
    let mut link = Link { from: me, seq: 0, log };
    let started = inbox
        .recv()
        .ok()
        .and_then(|b| deserialize_message(&b).ok())
        .is_some_and(|m| matches!(m.payload, Payload::ControlSignal { code: ControlCode::Start, .. }));
    if !started {
        link.send(target, &outbox, Payload::ControlSignal { code: ControlCode::Failed, arg: index as u64 });
        return;
    }
    let leak_row = leak.map(|l| leaked_row(&data, l));
    let mut handle = SourceHandle::new(data);
    let summary = match source_stage(index, &mut handle, plan) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("{me}: {e}");
            link.send(target, &outbox, Payload::ControlSignal { code: ControlCode::Failed, arg: index as u64 });
            return;
        }
    };
    let mut model = summary.model;
    if let (Some(LeakFixture::ModelBias), Some(row)) = (leak, &leak_row) {
        let bias = &mut model.encoder.layers[0].bias;
        let n = row.len().min(bias.len());
        bias[..n].copy_from_slice(&row[..n]);
    }
    link.send(target, &outbox, Payload::ModelParameters(model));
    link.send(target, &outbox, Payload::PrototypeSummary(summary.prototype));
    let values = [summary.source_risk, summary.source_accuracy, summary.d_source, summary.source_count as f64];
    for (name, value) in SCALAR_NAMES.iter().zip(values) {
        link.send(target, &outbox, Payload::ScalarReport { name: (*name).into(), value });
    }
    if let (Some(LeakFixture::ScalarName), Some(row)) = (leak, leak_row) {
        let bytes: Vec<u8> = row.iter().flat_map(|v| v.to_le_bytes()).collect();
        let name = String::from_utf8_lossy(&bytes).into_owned();
        link.send(target, &outbox, Payload::ScalarReport { name, value: 0.0 });
    }
    link.send(target, &outbox, Payload::ControlSignal { code: ControlCode::Released, arg: index as u64 });
}

/// The row a leak fixture smuggles: the canary when one is planted.
fn leaked_row(data: &LabeledDataset, leak: LeakFixture) -> Vec<f64> {
    let canary = data.features.row_iter().find(|r| is_canary_row(r));
    match (leak, canary) {
        (LeakFixture::ScalarName, Some(row)) => row.to_vec(),
        _ => data.features.row(0).to_vec(),
    }
}

/// Rebuild what the source stage produced from the messages a source sent.
fn assemble_summary(index: usize, msgs: &[Message]) -> Result<SourceSummary> {
    let mut model = None;
    let mut prototype = None;
    let mut scalars = BTreeMap::new();
    let mut released = false;
    for m in msgs {
        match &m.payload {
            Payload::ModelParameters(p) => model = Some(p.clone()),
            Payload::PrototypeSummary(g) => prototype = Some(g.clone()),
            Payload::ScalarReport { name, value } => {
                scalars.insert(name.as_str(), *value);
            }
            Payload::ControlSignal { code: ControlCode::Released, .. } => released = true,
            Payload::ControlSignal { code: ControlCode::Failed, .. } => return Err(Error::NodeFailed(index)),
            Payload::ControlSignal { .. } => {}
        }
    }
    let (Some(model), Some(prototype), true) = (model, prototype, released) else {
        return Err(Error::NodeFailed(index));
    };
    let scalar = |name: &str| scalars.get(name).copied().ok_or(Error::NodeFailed(index));
    Ok(SourceSummary {
        index,
        model,
        prototype,
        source_risk: scalar(SCALAR_NAMES[0])?,
        source_accuracy: scalar(SCALAR_NAMES[1])?,
        d_source: scalar(SCALAR_NAMES[2])?,
        source_count: scalar(SCALAR_NAMES[3])? as usize,
    })
}
