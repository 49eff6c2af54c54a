//! Byte layout of inter-node messages.
//!
//! All integers and floats are little-endian. A message is a fixed 36-byte
//! header followed by the payload:
//!
//! | offset | size | field                                      |
//! |-------:|-----:|--------------------------------------------|
//! | 0      | 4    | magic `SMSG`                               |
//! | 4      | 2    | format version (`1`)                       |
//! | 6      | 1    | payload kind (1 model, 2 prototype, 3 scalar, 4 control) |
//! | 7      | 1    | flags (reserved, `0`)                      |
//! | 8      | 1    | sender role (0 source, 1 target)           |
//! | 9      | 1    | receiver role                              |
//! | 10     | 2    | padding (`0`)                              |
//! | 12     | 4    | sender index                               |
//! | 16     | 4    | receiver index                             |
//! | 20     | 8    | sequence number (per sender)               |
//! | 28     | 8    | payload length in bytes                    |
//!
//! Payloads:
//!
//! * **ModelParameters**: `u64` encoder layer count, then per encoder layer
//!   `u64 rows, u64 cols, rows·cols f64 weights (row-major), rows f64 bias`,
//!   then the classifier layer in the same form.
//! * **PrototypeSummary**: `u64 dim, u64 classes, u64 entries`, then per
//!   entry `u64 class, u64 count, f64 regularization, dim f64 mean,
//!   dim·dim f64 covariance (row-major)`. Three classes in four dimensions
//!   therefore take `24 + 3·(3 + 4 + 16)·8 = 576` bytes.
//! * **ScalarReport**: `u32` name length, UTF-8 name, `f64` value.
//! * **ControlSignal**: `u8` code (0 start, 1 released, 2 failed), `u64` argument.
//!
//! No variant carries a per-sample array: models, per-class moments, named
//! scalars and control codes are all that can be expressed.

use std::fmt;

use crate::error::{Error, Result};
use crate::gmm::{ClassPrototype, GmmPrototype};
use crate::linalg::Matrix;
use crate::neural::{Classifier, Dense, Encoder, ModelParams};

pub const MESSAGE_MAGIC: &[u8; 4] = b"SMSG";
pub const WIRE_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 36;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Source,
    Target,
}

impl Role {
    fn code(self) -> u8 {
        match self {
            Role::Source => 0,
            Role::Target => 1,
        }
    }

    fn from_code(code: u8, offset: usize) -> Result<Self> {
        match code {
            0 => Ok(Role::Source),
            1 => Ok(Role::Target),
            c => Err(Error::parse(offset, format!("unknown role {c}"))),
        }
    }
}

/// A node in the simulated deployment. Orders sources before the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub role: Role,
    pub index: u32,
}

impl NodeId {
    pub fn source(index: usize) -> Self {
        Self {
            role: Role::Source,
            index: index as u32,
        }
    }

    pub fn target() -> Self {
        Self {
            role: Role::Target,
            index: 0,
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.role {
            Role::Source => write!(f, "source{}", self.index),
            Role::Target => write!(f, "target{}", self.index),
        }
    }
}

impl std::str::FromStr for NodeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (role, rest) = if let Some(r) = s.strip_prefix("source") {
            (Role::Source, r)
        } else if let Some(r) = s.strip_prefix("target") {
            (Role::Target, r)
        } else {
            return Err(Error::parse(0, format!("bad node id {s:?}")));
        };
        let index = rest.parse().map_err(|_| Error::parse(0, format!("bad node index {s:?}")))?;
        Ok(Self { role, index })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlCode {
    Start,
    Released,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    ModelParameters(ModelParams),
    PrototypeSummary(GmmPrototype),
    ScalarReport { name: String, value: f64 },
    ControlSignal { code: ControlCode, arg: u64 },
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::ModelParameters(_) => PayloadKind::ModelParameters,
            Payload::PrototypeSummary(_) => PayloadKind::PrototypeSummary,
            Payload::ScalarReport { .. } => PayloadKind::ScalarReport,
            Payload::ControlSignal { .. } => PayloadKind::ControlSignal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PayloadKind {
    ModelParameters,
    PrototypeSummary,
    ScalarReport,
    ControlSignal,
}

impl PayloadKind {
    fn code(self) -> u8 {
        match self {
            PayloadKind::ModelParameters => 1,
            PayloadKind::PrototypeSummary => 2,
            PayloadKind::ScalarReport => 3,
            PayloadKind::ControlSignal => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PayloadKind::ModelParameters => "model",
            PayloadKind::PrototypeSummary => "prototype",
            PayloadKind::ScalarReport => "scalar",
            PayloadKind::ControlSignal => "control",
        }
    }

    pub fn is_data_bearing(self) -> bool {
        !matches!(self, PayloadKind::ControlSignal)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub sender: NodeId,
    pub receiver: NodeId,
    pub seq: u64,
    pub payload: Payload,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn dense(&mut self, layer: &Dense) {
        self.u64(layer.weight.rows() as u64);
        self.u64(layer.weight.cols() as u64);
        self.f64s(layer.weight.as_slice());
        self.f64s(&layer.bias);
    }
    fn model(&mut self, m: &ModelParams) {
        self.u64(m.encoder.layers.len() as u64);
        for layer in &m.encoder.layers {
            self.dense(layer);
        }
        self.dense(&m.classifier.layer);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::parse(self.pos, format!("truncated: need {n} bytes")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    /// A count that must fit in the remaining bytes at `unit` bytes each.
    fn len(&mut self, unit: usize) -> Result<usize> {
        let at = self.pos;
        let v = self.u64()?;
        let remaining = (self.bytes.len() - self.pos) as u64;
        if v.saturating_mul(unit.max(1) as u64) > remaining {
            return Err(Error::parse(at, format!("length {v} exceeds remaining {remaining} bytes")));
        }
        Ok(v as usize)
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::parse(self.pos, "length overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn dense(&mut self) -> Result<Dense> {
        let at = self.pos;
        let rows = self.len(8)?;
        let cols = self.len(8)?;
        let weight = Matrix::from_vec(rows, cols, self.f64s(rows * cols)?)?;
        let bias = self.f64s(rows)?;
        if weight.rows() == 0 || weight.cols() == 0 {
            return Err(Error::parse(at, "empty layer"));
        }
        Ok(Dense { weight, bias })
    }
    fn model(&mut self) -> Result<ModelParams> {
        let start = self.pos;
        let n = self.len(16)?;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            layers.push(self.dense()?);
        }
        let at = self.pos;
        let encoder = Encoder::from_layers(layers).map_err(|e| Error::parse(start, e.to_string()))?;
        let classifier = Classifier { layer: self.dense()? };
        ModelParams::new(encoder, classifier).map_err(|e| Error::parse(at, e.to_string()))
    }
}

/// The `ModelParameters` payload encoding on its own.
pub fn encode_model(model: &ModelParams) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.model(model);
    w.0
}

/// Decode a model from the front of `bytes`; returns it with the bytes used.
pub fn decode_model(bytes: &[u8]) -> Result<(ModelParams, usize)> {
    let mut r = Reader { bytes, pos: 0 };
    let m = r.model()?;
    Ok((m, r.pos))
}

pub fn serialize_message(msg: &Message) -> Vec<u8> {
    let mut body = Writer(Vec::new());
    match &msg.payload {
        Payload::ModelParameters(m) => body.model(m),
        Payload::PrototypeSummary(g) => {
            body.u64(g.dim() as u64);
            body.u64(g.classes() as u64);
            body.u64(g.entries().len() as u64);
            for e in g.entries() {
                body.u64(e.class as u64);
                body.u64(e.count as u64);
                body.f64s(&[e.regularization]);
                body.f64s(&e.mean);
                body.f64s(e.covariance.as_slice());
            }
        }
        Payload::ScalarReport { name, value } => {
            body.u32(name.len() as u32);
            body.0.extend_from_slice(name.as_bytes());
            body.f64s(&[*value]);
        }
        Payload::ControlSignal { code, arg } => {
            body.u8(match code {
                ControlCode::Start => 0,
                ControlCode::Released => 1,
                ControlCode::Failed => 2,
            });
            body.u64(*arg);
        }
    }
    let body = body.0;
    let mut out = Writer(Vec::with_capacity(HEADER_LEN + body.len()));
    out.0.extend_from_slice(MESSAGE_MAGIC);
    out.u16(WIRE_VERSION);
    out.u8(msg.payload.kind().code());
    out.u8(0);
    out.u8(msg.sender.role.code());
    out.u8(msg.receiver.role.code());
    out.u16(0);
    out.u32(msg.sender.index);
    out.u32(msg.receiver.index);
    out.u64(msg.seq);
    out.u64(body.len() as u64);
    out.0.extend_from_slice(&body);
    out.0
}

pub fn deserialize_message(bytes: &[u8]) -> Result<Message> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MESSAGE_MAGIC {
        return Err(Error::parse(0, "bad message magic"));
    }
    let version = r.u16()?;
    if version != WIRE_VERSION {
        return Err(Error::parse(4, format!("unsupported message version {version}")));
    }
    let kind = r.u8()?;
    let _flags = r.u8()?;
    let sender_role = Role::from_code(r.u8()?, 8)?;
    let receiver_role = Role::from_code(r.u8()?, 9)?;
    let _pad = r.u16()?;
    let sender = NodeId {
        role: sender_role,
        index: r.u32()?,
    };
    let receiver = NodeId {
        role: receiver_role,
        index: r.u32()?,
    };
    let seq = r.u64()?;
    let len = r.u64()?;
    let expected = bytes.len() - HEADER_LEN;
    if len != expected as u64 {
        return Err(Error::parse(28, format!("payload length {len}, buffer holds {expected}")));
    }
    let payload = match kind {
        1 => Payload::ModelParameters(r.model()?),
        2 => {
            let dim = r.len(0)?;
            let classes = r.len(0)?;
            let n = r.len(24)?;
            let mut entries = Vec::with_capacity(n);
            for _ in 0..n {
                let at = r.pos;
                let class = r.u64()? as usize;
                let count = r.u64()? as usize;
                let eps = r.f64s(1)?[0];
                let mean = r.f64s(dim)?;
                let cov = Matrix::from_vec(dim, dim, r.f64s(dim * dim)?)?;
                entries.push(ClassPrototype::new(class, count, mean, cov, eps).map_err(|e| Error::parse(at, e.to_string()))?);
            }
            Payload::PrototypeSummary(GmmPrototype::from_entries(dim, classes, entries).map_err(|e| Error::parse(HEADER_LEN, e.to_string()))?)
        }
        3 => {
            let n = r.u32()? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| Error::parse(at, "scalar name is not UTF-8"))?
                .to_string();
            let value = r.f64s(1)?[0];
            Payload::ScalarReport { name, value }
        }
        4 => {
            let code = match r.u8()? {
                0 => ControlCode::Start,
                1 => ControlCode::Released,
                2 => ControlCode::Failed,
                c => return Err(Error::parse(HEADER_LEN, format!("unknown control code {c}"))),
            };
            Payload::ControlSignal { code, arg: r.u64()? }
        }
        k => return Err(Error::parse(6, format!("unknown payload kind {k}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::parse(r.pos, "trailing bytes after payload"));
    }
    Ok(Message {
        sender,
        receiver,
        seq,
        payload,
    })
}
