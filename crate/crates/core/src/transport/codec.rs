//! Patch and feedback datagrams.
//!
//! Patch layout, all integers big-endian:
//!
//! ```text
//! 0      magic 0xA7
//! 1      version 0x01
//! 2..6   frame_index  u32
//! 6      k            u8
//! 7      row          u8
//! 8      col          u8
//! 9..11  patch_w      u16
//! 11..13 patch_h      u16
//! 13     pixel_format u8 (0 = gray8)
//! 14..18 payload_len  u32
//! 18..   payload
//! last 4 CRC-32/IEEE over every preceding byte
//! ```
//!
//! Feedback layout: magic 0xA8, version, frame_index u32, k u8, ⌈k²/8⌉ mask
//! bytes (row-major, MSB first, unused trailing bits zero), CRC-32.

use crate::error::{Error, Result};
use crate::frame_grid::{CellId, GridSpec, Patch};
use crate::scheduler::Mask;

pub const PACKET_MAGIC: u8 = 0xA7;
pub const FEEDBACK_MAGIC: u8 = 0xA8;
pub const WIRE_VERSION: u8 = 0x01;
pub const PIXEL_FORMAT_GRAY8: u8 = 0;
pub const PACKET_HEADER_LEN: usize = 18;
const CRC_LEN: usize = 4;
/// Header plus trailing checksum.
pub const PACKET_OVERHEAD: usize = PACKET_HEADER_LEN + CRC_LEN;
const FEEDBACK_HEADER_LEN: usize = 7;

pub fn packet_len(grid: &GridSpec) -> usize {
    PACKET_OVERHEAD + grid.patch_len()
}

pub fn feedback_len(k: usize) -> usize {
    FEEDBACK_HEADER_LEN + (k * k).div_ceil(8) + CRC_LEN
}

fn crc(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}

pub fn encode_packet(patch: &Patch, grid: &GridSpec) -> Vec<u8> {
    debug_assert_eq!(patch.pixels.len(), grid.patch_len());
    let mut out = Vec::with_capacity(packet_len(grid));
    out.push(PACKET_MAGIC);
    out.push(WIRE_VERSION);
    out.extend_from_slice(&patch.frame_index.to_be_bytes());
    out.push(grid.k() as u8);
    out.push(patch.cell.row as u8);
    out.push(patch.cell.col as u8);
    out.extend_from_slice(&(grid.patch_w() as u16).to_be_bytes());
    out.extend_from_slice(&(grid.patch_h() as u16).to_be_bytes());
    out.push(PIXEL_FORMAT_GRAY8);
    out.extend_from_slice(&(patch.pixels.len() as u32).to_be_bytes());
    out.extend_from_slice(&patch.pixels);
    let sum = crc(&out);
    out.extend_from_slice(&sum.to_be_bytes());
    out
}

/// Splits off and verifies the trailing CRC, after magic/version checks.
fn checked_body(bytes: &[u8], magic: u8, min_len: usize) -> Result<&[u8]> {
    match bytes.first() {
        None => return Err(Error::NotAPacket("empty datagram".into())),
        Some(&m) if m != magic => {
            return Err(Error::NotAPacket(format!("magic {m:#04x}, expected {magic:#04x}")))
        }
        _ => {}
    }
    if bytes.len() < min_len {
        return Err(Error::Corrupt(format!("truncated: {} bytes", bytes.len())));
    }
    let (body, tail) = bytes.split_at(bytes.len() - CRC_LEN);
    let expected = u32::from_be_bytes(tail.try_into().expect("4-byte tail"));
    if crc(body) != expected {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }
    if body[1] != WIRE_VERSION {
        return Err(Error::Unsupported(body[1]));
    }
    Ok(body)
}

fn be_u16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}

/// Decodes a patch datagram, returning the patch and the grid size `k` it names.
pub fn decode_packet(bytes: &[u8]) -> Result<(Patch, usize)> {
    let body = checked_body(bytes, PACKET_MAGIC, PACKET_OVERHEAD)?;
    let frame_index = be_u32(&body[2..6]);
    let k = body[6] as usize;
    let (row, col) = (body[7] as usize, body[8] as usize);
    let (pw, ph) = (be_u16(&body[9..11]) as usize, be_u16(&body[11..13]) as usize);
    let format = body[13];
    let payload_len = be_u32(&body[14..18]) as usize;
    if format != PIXEL_FORMAT_GRAY8 {
        return Err(Error::Corrupt(format!("unknown pixel format {format}")));
    }
    if k == 0 || row >= k || col >= k {
        return Err(Error::Corrupt(format!("cell ({row}, {col}) outside a {k}x{k} grid")));
    }
    if payload_len != pw * ph || body.len() != PACKET_HEADER_LEN + payload_len {
        return Err(Error::Corrupt(format!(
            "payload of {} bytes does not match {pw}x{ph} patch",
            body.len() - PACKET_HEADER_LEN
        )));
    }
    Ok((
        Patch {
            frame_index,
            cell: CellId::new(row, col),
            pixels: body[PACKET_HEADER_LEN..].to_vec(),
        },
        k,
    ))
}

pub fn encode_feedback(mask: &Mask) -> Vec<u8> {
    let k = mask.k();
    let mut out = Vec::with_capacity(feedback_len(k));
    out.push(FEEDBACK_MAGIC);
    out.push(WIRE_VERSION);
    out.extend_from_slice(&mask.frame_index().to_be_bytes());
    out.push(k as u8);
    let mut bytes = vec![0u8; (k * k).div_ceil(8)];
    for i in mask.selected() {
        bytes[i / 8] |= 0x80 >> (i % 8);
    }
    out.extend_from_slice(&bytes);
    let sum = crc(&out);
    out.extend_from_slice(&sum.to_be_bytes());
    out
}

pub fn decode_feedback(bytes: &[u8]) -> Result<Mask> {
    let body = checked_body(bytes, FEEDBACK_MAGIC, FEEDBACK_HEADER_LEN + CRC_LEN)?;
    let frame_index = be_u32(&body[2..6]);
    let k = body[6] as usize;
    let n = k * k;
    let mask_bytes = &body[FEEDBACK_HEADER_LEN..];
    if k == 0 || mask_bytes.len() != n.div_ceil(8) {
        return Err(Error::Corrupt(format!(
            "{} mask bytes for a {k}x{k} grid",
            mask_bytes.len()
        )));
    }
    let bits: Vec<bool> = (0..n).map(|i| mask_bytes[i / 8] & (0x80 >> (i % 8)) != 0).collect();
    if !n.is_multiple_of(8) && mask_bytes[n / 8] & (0xFF >> (n % 8)) != 0 {
        return Err(Error::Corrupt("non-zero padding bits".into()));
    }
    Mask::from_bits(k, frame_index, bits)
}
