//! Master/worker messages, their binary wire format, and the logical-time
//! bookkeeping (delays and epochs).
//!
//! # Wire format
//!
//! All integers and floats are little-endian. A frame's length follows from
//! its tag and the embedded dimension `p`; there is no outer length prefix.
//!
//! ```text
//! UPDATE  01 | worker_id u32 | skip u8 | p u32 | alpha f64 | beta f64
//!            | delta_u p×f64 | y p×f64 | q p×f64
//! ASSIGN  02 | t u64 | p u32 | x p×f64
//! STOP    03
//! ```
//!
//! Tag `00` is reserved for a future version byte and is rejected today.

mod ledger;

pub use ledger::{DelayLedger, EpochTracker};

use crate::linalg::Vector;
use std::io::{self, Read, Write};
use thiserror::Error;

pub const TAG_RESERVED: u8 = 0x00;
pub const TAG_UPDATE: u8 = 0x01;
pub const TAG_ASSIGN: u8 = 0x02;
pub const TAG_STOP: u8 = 0x03;

/// Frames larger than this many coordinates are treated as corruption.
pub const MAX_DIM: u32 = 1 << 20;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("connection closed")]
    Closed,
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

/// What a worker sends after processing an assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateMessage {
    pub worker_id: u32,
    /// The curvature check failed (or `s = 0`); the master must not touch
    /// its inverse but still folds `delta_u` and `y` into its sums.
    pub skip: bool,
    pub alpha: f64,
    pub beta: f64,
    pub delta_u: Vector,
    pub y: Vector,
    pub q: Vector,
}

/// The master's reply: the iterate computed at logical time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignMessage {
    pub t: u64,
    pub x: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Update(UpdateMessage),
    Assign(AssignMessage),
    Stop,
}

impl From<UpdateMessage> for Frame {
    fn from(m: UpdateMessage) -> Self {
        Frame::Update(m)
    }
}

impl From<AssignMessage> for Frame {
    fn from(m: AssignMessage) -> Self {
        Frame::Assign(m)
    }
}

impl Frame {
    pub fn encoded_len(&self) -> usize {
        match self {
            Frame::Update(m) => 1 + 4 + 1 + 4 + 8 + 8 + 3 * 8 * m.y.len(),
            Frame::Assign(m) => 1 + 8 + 4 + 8 * m.x.len(),
            Frame::Stop => 1,
        }
    }
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Serializes a frame. Panics if an update's three vectors differ in length.
pub fn encode(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(frame.encoded_len());
    match frame {
        Frame::Update(m) => {
            let p = m.y.len();
            assert!(
                m.delta_u.len() == p && m.q.len() == p,
                "update vectors must share one length"
            );
            out.push(TAG_UPDATE);
            out.extend_from_slice(&m.worker_id.to_le_bytes());
            out.push(u8::from(m.skip));
            out.extend_from_slice(&(p as u32).to_le_bytes());
            out.extend_from_slice(&m.alpha.to_le_bytes());
            out.extend_from_slice(&m.beta.to_le_bytes());
            put_f64s(&mut out, &m.delta_u);
            put_f64s(&mut out, &m.y);
            put_f64s(&mut out, &m.q);
        }
        Frame::Assign(m) => {
            out.push(TAG_ASSIGN);
            out.extend_from_slice(&m.t.to_le_bytes());
            out.extend_from_slice(&(m.x.len() as u32).to_le_bytes());
            put_f64s(&mut out, &m.x);
        }
        Frame::Stop => out.push(TAG_STOP),
    }
    out
}

/// Pulls fixed-size fields out of a frame body.
trait FieldSource {
    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()>;

    fn u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.fill(&mut b, what)?;
        Ok(b[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let mut b = [0u8; 8];
        self.fill(&mut b, what)?;
        Ok(f64::from_le_bytes(b))
    }

    fn f64s(&mut self, p: usize, what: &str) -> Result<Vector> {
        let mut raw = vec![0u8; 8 * p];
        self.fill(&mut raw, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}

struct SliceSource<'a>(&'a [u8]);

impl FieldSource for SliceSource<'_> {
    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        if self.0.len() < buf.len() {
            return Err(ProtocolError::MalformedFrame(format!("truncated in {what}")));
        }
        let (head, rest) = self.0.split_at(buf.len());
        buf.copy_from_slice(head);
        self.0 = rest;
        Ok(())
    }
}

struct StreamSource<'a, R: Read>(&'a mut R);

impl<R: Read> FieldSource for StreamSource<'_, R> {
    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.0.read_exact(buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => {
                ProtocolError::MalformedFrame(format!("stream ended inside {what}"))
            }
            _ => ProtocolError::Io(e),
        })
    }
}

fn read_dim(src: &mut impl FieldSource) -> Result<usize> {
    let p = src.u32("dimension")?;
    if p > MAX_DIM {
        return Err(ProtocolError::MalformedFrame(format!("dimension {p} exceeds {MAX_DIM}")));
    }
    Ok(p as usize)
}

fn decode_body(tag: u8, src: &mut impl FieldSource) -> Result<Frame> {
    match tag {
        TAG_UPDATE => {
            let worker_id = src.u32("worker_id")?;
            let skip = match src.u8("skip")? {
                0 => false,
                1 => true,
                other => {
                    return Err(ProtocolError::MalformedFrame(format!("skip byte {other:#04x}")))
                }
            };
            let p = read_dim(src)?;
            let alpha = src.f64("alpha")?;
            let beta = src.f64("beta")?;
            let delta_u = src.f64s(p, "delta_u")?;
            let y = src.f64s(p, "y")?;
            let q = src.f64s(p, "q")?;
            Ok(Frame::Update(UpdateMessage {
                worker_id,
                skip,
                alpha,
                beta,
                delta_u,
                y,
                q,
            }))
        }
        TAG_ASSIGN => {
            let t = src.u64("t")?;
            let p = read_dim(src)?;
            let x = src.f64s(p, "x")?;
            Ok(Frame::Assign(AssignMessage { t, x }))
        }
        TAG_STOP => Ok(Frame::Stop),
        TAG_RESERVED => Err(ProtocolError::MalformedFrame("reserved tag 0x00".into())),
        other => Err(ProtocolError::MalformedFrame(format!("unknown tag {other:#04x}"))),
    }
}

/// Decodes exactly one complete frame; trailing bytes are an error.
pub fn decode(bytes: &[u8]) -> Result<Frame> {
    let (&tag, rest) = bytes
        .split_first()
        .ok_or_else(|| ProtocolError::MalformedFrame("empty frame".into()))?;
    let mut src = SliceSource(rest);
    let frame = decode_body(tag, &mut src)?;
    if !src.0.is_empty() {
        return Err(ProtocolError::MalformedFrame(format!(
            "{} trailing bytes",
            src.0.len()
        )));
    }
    Ok(frame)
}

/// Reads one frame from a byte stream. A clean end of stream before the tag
/// byte is [`ProtocolError::Closed`]; an end mid-frame is malformed.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame> {
    let mut tag = [0u8; 1];
    loop {
        match r.read(&mut tag) {
            Ok(0) => return Err(ProtocolError::Closed),
            Ok(_) => break,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    decode_body(tag[0], &mut StreamSource(r))
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<()> {
    w.write_all(&encode(frame))?;
    w.flush()?;
    Ok(())
}
