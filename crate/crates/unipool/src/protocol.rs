//! Length-prefixed frames: a 4-byte big-endian body length, then the body.

use std::io::{self, Read};

use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt};

pub const MAX_FRAME_BYTES: usize = 1 << 20;
pub const PREFIX_BYTES: usize = 4;

/// Bytes a query response adds around the canonical payload:
/// the prefix plus `{"op":"query","payload":` and the closing brace.
pub const QUERY_RESPONSE_OVERHEAD: usize = PREFIX_BYTES + QUERY_RESPONSE_HEAD.len() + 1;
pub const QUERY_RESPONSE_HEAD: &str = r#"{"op":"query","payload":"#;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame of {0} bytes exceeds the {MAX_FRAME_BYTES}-byte cap")]
    Oversize(usize),
    #[error("connection closed inside a frame")]
    Truncated,
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode_frame(body: &[u8]) -> Result<Vec<u8>, FrameError> {
    if body.len() > MAX_FRAME_BYTES {
        return Err(FrameError::Oversize(body.len()));
    }
    let mut out = Vec::with_capacity(PREFIX_BYTES + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body);
    Ok(out)
}

/// Incremental decoder for bytes arriving in arbitrary chunks.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete body, if buffered. An oversize prefix is reported as
    /// soon as it is seen.
    pub fn next_frame(&mut self) -> Result<Option<Vec<u8>>, FrameError> {
        if self.buf.len() < PREFIX_BYTES {
            return Ok(None);
        }
        let len = u32::from_be_bytes(self.buf[..PREFIX_BYTES].try_into().unwrap()) as usize;
        if len > MAX_FRAME_BYTES {
            return Err(FrameError::Oversize(len));
        }
        if self.buf.len() < PREFIX_BYTES + len {
            return Ok(None);
        }
        let body = self.buf[PREFIX_BYTES..PREFIX_BYTES + len].to_vec();
        self.buf.drain(..PREFIX_BYTES + len);
        Ok(Some(body))
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}

/// Reads one frame. `Ok(None)` means the peer closed cleanly between frames.
pub async fn read_frame<R: AsyncRead + Unpin>(r: &mut R) -> Result<Option<Vec<u8>>, FrameError> {
    let mut prefix = [0u8; PREFIX_BYTES];
    let mut got = 0;
    while got < PREFIX_BYTES {
        let n = r.read(&mut prefix[got..]).await?;
        if n == 0 {
            return if got == 0 { Ok(None) } else { Err(FrameError::Truncated) };
        }
        got += n;
    }
    let len = u32::from_be_bytes(prefix) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(FrameError::Oversize(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).await.map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FrameError::Truncated,
        _ => FrameError::Io(e),
    })?;
    Ok(Some(body))
}

pub fn read_frame_blocking<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>, FrameError> {
    let mut prefix = [0u8; PREFIX_BYTES];
    let mut got = 0;
    while got < PREFIX_BYTES {
        let n = r.read(&mut prefix[got..])?;
        if n == 0 {
            return if got == 0 { Ok(None) } else { Err(FrameError::Truncated) };
        }
        got += n;
    }
    let len = u32::from_be_bytes(prefix) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(FrameError::Oversize(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FrameError::Truncated,
        _ => FrameError::Io(e),
    })?;
    Ok(Some(body))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_at_a_time() {
        let mut wire = encode_frame(b"{\"op\":\"stats\"}").unwrap();
        wire.extend(encode_frame(b"").unwrap());
        let mut d = FrameDecoder::new();
        let mut out = Vec::new();
        for b in wire {
            d.push(&[b]);
            while let Some(f) = d.next_frame().unwrap() {
                out.push(f);
            }
        }
        assert_eq!(out, [b"{\"op\":\"stats\"}".to_vec(), Vec::new()]);
        assert_eq!(d.buffered(), 0);
    }

    #[test]
    fn oversize_prefix_rejected_before_body() {
        let mut d = FrameDecoder::new();
        d.push(&((MAX_FRAME_BYTES as u32 + 1).to_be_bytes()));
        assert!(matches!(d.next_frame(), Err(FrameError::Oversize(_))));
        assert!(matches!(encode_frame(&vec![0; MAX_FRAME_BYTES + 1]), Err(FrameError::Oversize(_))));
    }

    #[test]
    fn blocking_reader_distinguishes_clean_close() {
        let mut empty: &[u8] = &[];
        assert!(read_frame_blocking(&mut empty).unwrap().is_none());
        let mut torn: &[u8] = &[0, 0, 0, 9, b'{'];
        assert!(matches!(read_frame_blocking(&mut torn), Err(FrameError::Truncated)));
    }
}
