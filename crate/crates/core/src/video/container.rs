//! `.detv`: a raw, uncompressed RGB24 clip container.
//!
//! Layout (little-endian):
//!
//! | offset | size | field        |
//! |--------|------|--------------|
//! | 0      | 4    | magic `DETV` |
//! | 4      | 2    | version (1)  |
//! | 6      | 2    | width        |
//! | 8      | 2    | height       |
//! | 10     | 4    | frame count  |
//! | 14     | 4    | fps (f32)    |
//! | 18     | ...  | frames, row-major RGB24 |

use std::io::{Read, Write};

use thiserror::Error;

use super::{Frame, VideoClip, VideoError, MIN_FRAME_DIM};

pub const MAGIC: [u8; 4] = *b"DETV";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 18;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic {0:?}, expected \"DETV\"")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("trailing data: {0} bytes after the last frame")]
    TrailingBytes(usize),
    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Header {
    pub width: u16,
    pub height: u16,
    pub frame_count: u32,
    pub fps: f32,
}

impl Header {
    fn payload_len(&self) -> Result<usize, ContainerError> {
        usize::from(self.width)
            .checked_mul(usize::from(self.height))
            .and_then(|px| px.checked_mul(3))
            .and_then(|fb| fb.checked_mul(self.frame_count as usize))
            .ok_or_else(|| {
                ContainerError::DimensionOverflow(format!(
                    "{}x{}x{} frames does not fit in memory",
                    self.width, self.height, self.frame_count
                ))
            })
    }
}

fn header_for(clip: &VideoClip) -> Result<Header, ContainerError> {
    let width = u16::try_from(clip.width())
        .map_err(|_| ContainerError::DimensionOverflow(format!("width {}", clip.width())))?;
    let height = u16::try_from(clip.height())
        .map_err(|_| ContainerError::DimensionOverflow(format!("height {}", clip.height())))?;
    let frame_count = u32::try_from(clip.len())
        .map_err(|_| ContainerError::DimensionOverflow(format!("{} frames", clip.len())))?;
    Ok(Header {
        width,
        height,
        frame_count,
        fps: clip.fps() as f32,
    })
}

pub fn encode(clip: &VideoClip) -> Result<Vec<u8>, ContainerError> {
    let header = header_for(clip)?;
    let mut out = Vec::with_capacity(HEADER_LEN + header.payload_len()?);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&header.width.to_le_bytes());
    out.extend_from_slice(&header.height.to_le_bytes());
    out.extend_from_slice(&header.frame_count.to_le_bytes());
    out.extend_from_slice(&header.fps.to_le_bytes());
    for f in clip.frames() {
        out.extend_from_slice(f.pixels());
    }
    Ok(out)
}

pub fn parse_header(bytes: &[u8]) -> Result<Header, ContainerError> {
    if bytes.len() < HEADER_LEN {
        // a short buffer that does not even start with the magic is a magic error
        if bytes.len() < 4 || bytes[..4] != MAGIC {
            let mut m = [0u8; 4];
            let n = bytes.len().min(4);
            m[..n].copy_from_slice(&bytes[..n]);
            if bytes.len() >= 4 {
                return Err(ContainerError::BadMagic(m));
            }
        }
        return Err(ContainerError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(ContainerError::BadMagic(magic));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(ContainerError::UnsupportedVersion(version));
    }
    let header = Header {
        width: u16::from_le_bytes([bytes[6], bytes[7]]),
        height: u16::from_le_bytes([bytes[8], bytes[9]]),
        frame_count: u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")),
        fps: f32::from_le_bytes(bytes[14..18].try_into().expect("4 bytes")),
    };
    if usize::from(header.width) < MIN_FRAME_DIM || usize::from(header.height) < MIN_FRAME_DIM {
        return Err(ContainerError::InvalidHeader(format!(
            "frame size {}x{} below minimum",
            header.width, header.height
        )));
    }
    if header.frame_count == 0 {
        return Err(ContainerError::InvalidHeader("zero frames".into()));
    }
    if !(header.fps.is_finite() && header.fps > 0.0) {
        return Err(ContainerError::InvalidHeader(format!("fps {}", header.fps)));
    }
    Ok(header)
}

/// Parses a complete container. Nothing is returned unless the whole buffer
/// is valid.
pub fn decode(bytes: &[u8]) -> Result<VideoClip, ContainerError> {
    let header = parse_header(bytes)?;
    let payload = header.payload_len()?;
    let expected = HEADER_LEN
        .checked_add(payload)
        .ok_or_else(|| ContainerError::DimensionOverflow("payload length".into()))?;
    if bytes.len() < expected {
        return Err(ContainerError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(ContainerError::TrailingBytes(bytes.len() - expected));
    }
    let (w, h) = (usize::from(header.width), usize::from(header.height));
    let frame_len = w * h * 3;
    let frames = bytes[HEADER_LEN..]
        .chunks_exact(frame_len)
        .map(|chunk| Frame::new(w, h, chunk.to_vec()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(VideoClip::new(frames, f64::from(header.fps))?)
}

pub fn write_clip<W: Write>(mut w: W, clip: &VideoClip) -> Result<(), ContainerError> {
    w.write_all(&encode(clip)?)?;
    Ok(())
}

pub fn read_clip<R: Read>(mut r: R) -> Result<VideoClip, ContainerError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode(&buf)
}

pub fn save(path: &std::path::Path, clip: &VideoClip) -> Result<(), ContainerError> {
    std::fs::write(path, encode(clip)?)?;
    Ok(())
}

pub fn load(path: &std::path::Path) -> Result<VideoClip, ContainerError> {
    decode(&std::fs::read(path)?)
}
