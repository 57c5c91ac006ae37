//! Binary PGM (P5, maxval 255) frames and `frame_index,x,y,w,h` annotation CSVs.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{BoundingBox, Frame};
use crate::error::{Error, Result};

pub fn write_pgm(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(frame.pixels.len() + 32);
    write!(out, "P5\n{} {}\n255\n", frame.width, frame.height).expect("write to vec");
    out.extend_from_slice(&frame.pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: impl AsRef<Path>, index: u32) -> Result<Frame> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes, index).map_err(|e| e.context(path.display().to_string()))
}

fn parse_pgm(bytes: &[u8], index: u32) -> Result<Frame> {
    let bad = |msg: &str| Error::InvalidArgument(format!("malformed PGM: {msg}"));
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // whitespace and comments
        while pos < bytes.len() {
            match bytes[pos] {
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("expected P5 magic"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("non-numeric header field"));
    let (width, height, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let raster = bytes.get(pos..pos + width * height).ok_or_else(|| bad("short raster"))?;
    Frame::new(index, width, height, raster.to_vec())
}

/// One ground-truth box as stored on disk, before clipping to a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Annotation {
    pub frame_index: u32,
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl Annotation {
    pub fn to_box(&self, frame_w: usize, frame_h: usize) -> Result<BoundingBox> {
        BoundingBox::clipped(self.x, self.y, self.w, self.h, frame_w, frame_h)
    }
}

/// Reads `frame_index,x,y,w,h` lines. A leading header line is skipped if present.
pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<Annotation>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if line == 0 && record.get(0).is_some_and(|f| f.parse::<u32>().is_err()) {
            continue;
        }
        let field = |i: usize| -> Result<i64> {
            record
                .get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Config(format!("{}: bad field {i} on line {}", path.display(), line + 1)))
        };
        out.push(Annotation {
            frame_index: field(0)? as u32,
            x: field(1)?,
            y: field(2)?,
            w: field(3)?,
            h: field(4)?,
        });
    }
    Ok(out)
}

pub fn write_annotations(path: impl AsRef<Path>, boxes: &[(u32, BoundingBox)]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for (idx, b) in boxes {
        text.push_str(&format!("{idx},{},{},{},{}\n", b.x, b.y, b.w, b.h));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_with_comment() {
        let dir = tempfile::tempdir().unwrap();
        let f = Frame::new(0, 3, 2, vec![0, 1, 2, 253, 254, 255]).unwrap();
        let p = dir.path().join("a.pgm");
        write_pgm(&f, &p).unwrap();
        assert_eq!(read_pgm(&p, 0).unwrap(), f);

        let mut raw = b"P5\n# made by hand\n3 2\n255\n".to_vec();
        raw.extend_from_slice(&f.pixels);
        assert_eq!(parse_pgm(&raw, 0).unwrap(), f);
        assert!(parse_pgm(b"P2\n1 1\n255\n0", 0).is_err());
        assert!(parse_pgm(b"P5\n4 4\n255\n\x00", 0).is_err());
    }

    #[test]
    fn annotations_with_and_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        std::fs::write(&p, "frame_index,x,y,w,h\n0,1,2,3,4\n1, 5,6,7,8\n").unwrap();
        let a = read_annotations(&p).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a[1], Annotation { frame_index: 1, x: 5, y: 6, w: 7, h: 8 });

        let boxes = vec![(0, BoundingBox { x: 1, y: 2, w: 3, h: 4 })];
        write_annotations(&p, &boxes).unwrap();
        let back = read_annotations(&p).unwrap();
        assert_eq!(back[0].to_box(64, 64).unwrap(), boxes[0].1);
    }
}
