//! The raw-frame stream header: `VRE1`, width `u32`, height `u32`,
//! channels `u8`, little-endian. Frames of `width * height * channels` bytes,
//! row-major RGB, follow back to back.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"VRE1";
pub const HEADER_LEN: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
}

#[derive(Debug, Error)]
pub enum HeaderError {
    #[error("bad stream magic {0:?}, expected \"VRE1\"")]
    BadMagic([u8; 4]),
    #[error("unsupported stream: {0}")]
    Unsupported(String),
    #[error("stream header: {0}")]
    Io(#[from] io::Error),
}

impl StreamHeader {
    pub fn rgb(width: usize, height: usize) -> Self {
        Self {
            width: width as u32,
            height: height as u32,
            channels: 3,
        }
    }

    pub fn frame_bytes(&self) -> usize {
        self.width as usize * self.height as usize * self.channels as usize
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..4].copy_from_slice(MAGIC);
        out[4..8].copy_from_slice(&self.width.to_le_bytes());
        out[8..12].copy_from_slice(&self.height.to_le_bytes());
        out[12] = self.channels;
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, HeaderError> {
        let mut buf = [0u8; HEADER_LEN];
        r.read_exact(&mut buf)?;
        Self::parse(&buf)
    }

    pub fn parse(buf: &[u8; HEADER_LEN]) -> Result<Self, HeaderError> {
        let magic: [u8; 4] = buf[..4].try_into().unwrap();
        if &magic != MAGIC {
            return Err(HeaderError::BadMagic(magic));
        }
        let header = Self {
            width: u32::from_le_bytes(buf[4..8].try_into().unwrap()),
            height: u32::from_le_bytes(buf[8..12].try_into().unwrap()),
            channels: buf[12],
        };
        if header.channels != 3 {
            return Err(HeaderError::Unsupported(format!("{} channels, only RGB (3) is accepted", header.channels)));
        }
        if header.width == 0 || header.height == 0 {
            return Err(HeaderError::Unsupported(format!("empty frame size {}x{}", header.width, header.height)));
        }
        Ok(header)
    }
}
