//! Mock bitstream container.
//!
//! On-disk layout, all integers little-endian:
//!
//! ```text
//! magic "MBIT" | version u16 | dev_len u32 | device_id | header_len u32 |
//! header (16 bytes) | frames_len u32 | frames | crc32 u32
//! ```
//!
//! The crc32 (IEEE) covers every byte before it. The frames array is the
//! configuration data; it begins with the 32-bit sync word 0xAA995566, so the
//! sync word sits directly after the 16-byte header, and the first real
//! configuration bit is [`CONFIG_BIT_BASE`].
//!
//! Bit position b means byte `frames[b / 8]`, bit `b % 8`, LSB-first. All
//! encoding-map, database, and diff positions live in this space.

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MBIT";
pub const VERSION: u16 = 1;
pub const SYNC_WORD: u32 = 0xAA99_5566;
pub const HEADER_LEN: usize = 16;
/// First configuration bit: right after the sync word.
pub const CONFIG_BIT_BASE: u64 = 32;

const DEFAULT_HEADER: [u8; HEADER_LEN] = *b"mock config 0001";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    pub device_id: String,
    pub header: [u8; HEADER_LEN],
    /// Sync word followed by configuration bytes.
    pub frames: Vec<u8>,
}

impl Bitstream {
    /// All-zero configuration sized for `total_bits` positions (including the
    /// sync word region).
    pub fn new(device_id: &str, total_bits: u64) -> Bitstream {
        let bytes = (total_bits.div_ceil(8) as usize).max(4);
        let mut frames = vec![0u8; bytes];
        frames[0..4].copy_from_slice(&SYNC_WORD.to_le_bytes());
        Bitstream { device_id: device_id.to_string(), header: DEFAULT_HEADER, frames }
    }

    pub fn len_bits(&self) -> u64 {
        self.frames.len() as u64 * 8
    }

    /// Where configuration scanning starts.
    pub fn sync_word_pos(&self) -> u64 {
        0
    }

    pub fn get_bit(&self, pos: u64) -> bool {
        let byte = (pos / 8) as usize;
        self.frames[byte] >> (pos % 8) & 1 == 1
    }

    pub fn set_bit(&mut self, pos: u64, value: bool) {
        let byte = (pos / 8) as usize;
        let mask = 1u8 << (pos % 8);
        if value {
            self.frames[byte] |= mask;
        } else {
            self.frames[byte] &= !mask;
        }
    }

    /// Ascending positions of all set bits at or after `from`.
    pub fn set_bits_from(&self, from: u64) -> Vec<u64> {
        let mut out = Vec::new();
        for (i, &b) in self.frames.iter().enumerate() {
            if b == 0 {
                continue;
            }
            for bit in 0..8 {
                let pos = i as u64 * 8 + bit;
                if pos >= from && b >> bit & 1 == 1 {
                    out.push(pos);
                }
            }
        }
        out
    }

    fn check_sync(&self) -> Result<()> {
        let pat = SYNC_WORD.to_le_bytes();
        if self.frames.len() < 4 || self.frames[0..4] != pat {
            return Err(Error::Format("sync word missing at start of frames".into()));
        }
        for i in 1..self.frames.len().saturating_sub(3) {
            if self.frames[i..i + 4] == pat {
                return Err(Error::Format(format!(
                    "sync word pattern recurs at frame byte {i}; refusing ambiguous stream"
                )));
            }
        }
        if self.header.windows(4).any(|w| w == pat) {
            return Err(Error::Format("sync word pattern inside header".into()));
        }
        Ok(())
    }
}

/// XOR two bitstreams of the same device and length; returns ascending
/// positions of differing bits, scanning from the sync word onward.
pub fn diff(a: &Bitstream, b: &Bitstream) -> Result<Vec<u64>> {
    if a.device_id != b.device_id {
        return Err(Error::Format(format!(
            "cannot diff bitstreams of different devices ({} vs {})",
            a.device_id, b.device_id
        )));
    }
    if a.frames.len() != b.frames.len() {
        return Err(Error::Format("cannot diff bitstreams of different lengths".into()));
    }
    let mut out = Vec::new();
    for (i, (&xa, &xb)) in a.frames.iter().zip(b.frames.iter()).enumerate() {
        let x = xa ^ xb;
        if x == 0 {
            continue;
        }
        for bit in 0..8 {
            if x >> bit & 1 == 1 {
                out.push(i as u64 * 8 + bit);
            }
        }
    }
    Ok(out)
}

pub fn write_bytes(bs: &Bitstream) -> Result<Vec<u8>> {
    bs.check_sync()?;
    let mut out = Vec::with_capacity(bs.frames.len() + bs.device_id.len() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(bs.device_id.len() as u32).to_le_bytes());
    out.extend_from_slice(bs.device_id.as_bytes());
    out.extend_from_slice(&(HEADER_LEN as u32).to_le_bytes());
    out.extend_from_slice(&bs.header);
    out.extend_from_slice(&(bs.frames.len() as u32).to_le_bytes());
    out.extend_from_slice(&bs.frames);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Format(format!("truncated bitstream while reading {what}")));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_bytes(data: &[u8]) -> Result<Bitstream> {
    let mut c = Cursor { data, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic, not a mock bitstream".into()));
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported bitstream version {version}")));
    }
    let dev_len = c.u32("device id length")? as usize;
    if dev_len > 1024 {
        return Err(Error::Format("unreasonable device id length".into()));
    }
    let device_id = std::str::from_utf8(c.take(dev_len, "device id")?)
        .map_err(|_| Error::Format("device id is not utf-8".into()))?
        .to_string();
    let header_len = c.u32("header length")? as usize;
    if header_len != HEADER_LEN {
        return Err(Error::Format(format!("header length must be {HEADER_LEN}, got {header_len}")));
    }
    let header: [u8; HEADER_LEN] = c.take(HEADER_LEN, "header")?.try_into().unwrap();
    let frames_len = c.u32("frames length")? as usize;
    if frames_len < 4 {
        return Err(Error::Format("frames too short to hold sync word".into()));
    }
    let frames = c.take(frames_len, "frames")?.to_vec();
    let stored_crc = {
        let crc_at = c.pos;
        let v = c.u32("crc32")?;
        let computed = crc32fast::hash(&data[..crc_at]);
        if v != computed {
            return Err(Error::Format(format!("crc mismatch: stored {v:08x}, computed {computed:08x}")));
        }
        v
    };
    let _ = stored_crc;
    if c.pos != data.len() {
        return Err(Error::Format("trailing bytes after bitstream".into()));
    }
    let bs = Bitstream { device_id, header, frames };
    bs.check_sync()?;
    Ok(bs)
}

pub fn save(bs: &Bitstream, path: &Path) -> Result<()> {
    let bytes = write_bytes(bs)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Bitstream> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_bytes(&bytes)
}
