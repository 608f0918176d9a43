//! Tensor frame format.
//!
//! ```text
//! "ADCM" | u32 version | u32 src | u32 dst | u32 buffer | u32 seq
//!        | u8 rank | rank × u32 dims | u64 payload bytes | f32 payload
//! ```
//!
//! All integers and floats are little-endian. Buffer id 0 is reserved for
//! the connection hello frame, which carries no tensor.

use std::io::{self, Read};

use crate::model::TensorSpec;
use crate::split::BufferId;

use super::{decode_f32s, encode_f32s, RuntimeError, Tensor};

pub const WIRE_MAGIC: [u8; 4] = *b"ADCM";
pub const WIRE_VERSION: u32 = 1;
pub const HELLO_BUFFER: u32 = 0;
pub const MAX_RANK: usize = 8;
pub const MAX_PAYLOAD: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub src: u32,
    pub dst: u32,
    pub buffer: u32,
    pub seq: u32,
    pub dims: Vec<usize>,
    pub payload: Vec<f32>,
}

impl Message {
    pub fn data(src: usize, dst: usize, buffer: BufferId, seq: u32, tensor: &Tensor<f32>) -> Message {
        Message {
            src: src as u32,
            dst: dst as u32,
            buffer: buffer.0,
            seq,
            dims: tensor.spec.dims.clone(),
            payload: tensor.data.clone(),
        }
    }

    pub fn hello(src: usize, dst: usize) -> Message {
        Message {
            src: src as u32,
            dst: dst as u32,
            buffer: HELLO_BUFFER,
            seq: 0,
            dims: Vec::new(),
            payload: Vec::new(),
        }
    }

    pub fn is_hello(&self) -> bool {
        self.buffer == HELLO_BUFFER
    }

    pub fn into_tensor(self) -> Result<Tensor<f32>, RuntimeError> {
        Tensor::new(TensorSpec::new(self.dims), self.payload)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(33 + 4 * self.dims.len() + 4 * self.payload.len());
        out.extend_from_slice(&WIRE_MAGIC);
        for v in [WIRE_VERSION, self.src, self.dst, self.buffer, self.seq] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&((self.payload.len() * 4) as u64).to_le_bytes());
        out.extend_from_slice(&encode_f32s(&self.payload));
        out
    }

    /// Decodes exactly one frame occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Message, RuntimeError> {
        let mut r = bytes;
        let msg = read_frame(&mut r)?.ok_or_else(|| RuntimeError::Protocol("empty frame".into()))?;
        if !r.is_empty() {
            return Err(RuntimeError::Protocol(format!("{} trailing bytes after frame", r.len())));
        }
        Ok(msg)
    }
}

fn protocol(e: io::Error) -> RuntimeError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        RuntimeError::Protocol("truncated frame".into())
    } else {
        RuntimeError::Protocol(e.to_string())
    }
}

fn u32_at(r: &mut impl Read) -> Result<u32, RuntimeError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(protocol)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads one frame. Returns `Ok(None)` on a clean end of stream before the
/// first byte of a frame.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Message>, RuntimeError> {
    let mut magic = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut magic[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(RuntimeError::Protocol("truncated frame".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(protocol(e)),
        }
    }
    if magic != WIRE_MAGIC {
        return Err(RuntimeError::Protocol(format!("bad frame magic {magic:02x?}")));
    }
    let version = u32_at(r)?;
    if version != WIRE_VERSION {
        return Err(RuntimeError::Protocol(format!("unsupported frame version {version}")));
    }
    let (src, dst, buffer, seq) = (u32_at(r)?, u32_at(r)?, u32_at(r)?, u32_at(r)?);
    let mut rank = [0u8; 1];
    r.read_exact(&mut rank).map_err(protocol)?;
    let rank = rank[0] as usize;
    if rank > MAX_RANK {
        return Err(RuntimeError::Protocol(format!("tensor rank {rank} exceeds {MAX_RANK}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = u32_at(r)? as usize;
        if d == 0 {
            return Err(RuntimeError::Protocol("zero dimension in frame".into()));
        }
        dims.push(d);
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(protocol)?;
    let len = u64::from_le_bytes(len);
    let expected = if dims.is_empty() {
        0
    } else {
        dims.iter().try_fold(4u64, |acc, &d| acc.checked_mul(d as u64)).unwrap_or(u64::MAX)
    };
    if len != expected || len > MAX_PAYLOAD {
        return Err(RuntimeError::Protocol(format!(
            "payload of {len} bytes does not match dims {dims:?}"
        )));
    }
    if (buffer == HELLO_BUFFER) != dims.is_empty() {
        return Err(RuntimeError::Protocol(format!("buffer {buffer} with dims {dims:?}")));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).map_err(protocol)?;
    Ok(Some(Message {
        src,
        dst,
        buffer,
        seq,
        dims,
        payload: decode_f32s(&payload).expect("length checked"),
    }))
}
