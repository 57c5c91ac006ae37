//! Frames, K×K tiling into patches, reassembly with filler, and cell/box geometry.
//!
//! Cells are always enumerated row-major: the linear index of `(row, col)` is
//! `row * k + col`, and every per-cell sequence in the crate (masks,
//! probability maps, packet emission) uses that order.

mod io;

pub use io::{read_annotations, read_pgm, write_annotations, write_pgm, Annotation};

use crate::error::{Error, Result};
use crate::scheduler::Mask;

/// One grayscale frame, row-major, one byte per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub index: u32,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(index: u32, width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::InvalidGeometry(format!(
                "pixel buffer holds {} bytes, expected {}x{}={}",
                pixels.len(),
                width,
                height,
                width * height
            )));
        }
        Ok(Frame {
            index,
            width,
            height,
            pixels,
        })
    }

    pub fn filled(index: u32, width: usize, height: usize, value: u8) -> Self {
        Frame {
            index,
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[u8] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }
}

/// K×K partition of a frame of known dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    k: usize,
    width: usize,
    height: usize,
}

impl GridSpec {
    pub fn new(k: usize, width: usize, height: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidGeometry("grid size k must be at least 1".into()));
        }
        if k > u8::MAX as usize {
            return Err(Error::InvalidGeometry(format!("grid size {k} exceeds 255")));
        }
        if !width.is_multiple_of(k) || !height.is_multiple_of(k) || width < k || height < k {
            return Err(Error::InvalidGeometry(format!(
                "{width}x{height} frame is not divisible into a {k}x{k} grid"
            )));
        }
        Ok(GridSpec { k, width, height })
    }

    pub fn for_frame(frame: &Frame, k: usize) -> Result<Self> {
        Self::new(k, frame.width, frame.height)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn cell_count(&self) -> usize {
        self.k * self.k
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn patch_w(&self) -> usize {
        self.width / self.k
    }

    pub fn patch_h(&self) -> usize {
        self.height / self.k
    }

    pub fn patch_len(&self) -> usize {
        self.patch_w() * self.patch_h()
    }

    pub fn cells(&self) -> impl Iterator<Item = CellId> + '_ {
        let k = self.k;
        (0..k * k).map(move |i| CellId::from_linear(i, k))
    }

    /// Pixel rectangle `(x, y, w, h)` covered by `cell`.
    pub fn cell_rect(&self, cell: CellId) -> (usize, usize, usize, usize) {
        let (pw, ph) = (self.patch_w(), self.patch_h());
        (cell.col * pw, cell.row * ph, pw, ph)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellId {
    pub row: usize,
    pub col: usize,
}

impl CellId {
    pub fn new(row: usize, col: usize) -> Self {
        CellId { row, col }
    }

    pub fn from_linear(index: usize, k: usize) -> Self {
        CellId {
            row: index / k,
            col: index % k,
        }
    }

    pub fn linear(&self, k: usize) -> usize {
        self.row * k + self.col
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub frame_index: u32,
    pub cell: CellId,
    pub pixels: Vec<u8>,
}

/// Axis-aligned pixel box, always non-empty and inside the frame it was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BoundingBox {
    /// Clips the box to a `frame_w`×`frame_h` frame. Fails if nothing is left.
    pub fn clipped(x: i64, y: i64, w: i64, h: i64, frame_w: usize, frame_h: usize) -> Result<Self> {
        let x0 = x.max(0);
        let y0 = y.max(0);
        let x1 = (x + w).min(frame_w as i64);
        let y1 = (y + h).min(frame_h as i64);
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::InvalidGeometry(format!(
                "box ({x},{y},{w},{h}) is empty inside a {frame_w}x{frame_h} frame"
            )));
        }
        Ok(BoundingBox {
            x: x0 as usize,
            y: y0 as usize,
            w: (x1 - x0) as usize,
            h: (y1 - y0) as usize,
        })
    }

    pub fn whole(frame: &Frame) -> Self {
        BoundingBox {
            x: 0,
            y: 0,
            w: frame.width,
            h: frame.height,
        }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    /// Area of the intersection with the rectangle `(x, y, w, h)`.
    pub fn intersection_area(&self, x: usize, y: usize, w: usize, h: usize) -> usize {
        let ix0 = self.x.max(x);
        let iy0 = self.y.max(y);
        let ix1 = (self.x + self.w).min(x + w);
        let iy1 = (self.y + self.h).min(y + h);
        ix1.saturating_sub(ix0) * iy1.saturating_sub(iy0)
    }
}

/// Splits `frame` into k² patches in row-major cell order.
pub fn tile(frame: &Frame, grid: &GridSpec) -> Result<Vec<Patch>> {
    if frame.width != grid.width() || frame.height != grid.height() {
        return Err(Error::InvalidGeometry(format!(
            "{}x{} frame does not match {}x{} grid extents",
            frame.width,
            frame.height,
            grid.width(),
            grid.height()
        )));
    }
    let (pw, ph) = (grid.patch_w(), grid.patch_h());
    Ok(grid
        .cells()
        .map(|cell| {
            let (x0, y0, _, _) = grid.cell_rect(cell);
            let mut pixels = Vec::with_capacity(pw * ph);
            for y in y0..y0 + ph {
                let start = y * frame.width + x0;
                pixels.extend_from_slice(&frame.pixels[start..start + pw]);
            }
            Patch {
                frame_index: frame.index,
                cell,
                pixels,
            }
        })
        .collect())
}

/// Smallest frame with both dimensions divisible by `k`, original content top-left.
pub fn pad_to_grid(frame: &Frame, k: usize, fill: u8) -> Frame {
    let k = k.max(1);
    let width = frame.width.div_ceil(k).max(1) * k;
    let height = frame.height.div_ceil(k).max(1) * k;
    if width == frame.width && height == frame.height {
        return frame.clone();
    }
    let mut out = Frame::filled(frame.index, width, height, fill);
    for y in 0..frame.height {
        out.pixels[y * width..y * width + frame.width].copy_from_slice(frame.row(y));
    }
    out
}

/// Rebuilds a frame from received patches; cells absent from `mask` get `filler`.
pub fn assemble(
    frame_index: u32,
    patches: &[Patch],
    grid: &GridSpec,
    mask: &Mask,
    filler: u8,
) -> Result<Frame> {
    if mask.k() != grid.k() {
        return Err(Error::InvalidGeometry(format!(
            "mask is {0}x{0} but grid is {1}x{1}",
            mask.k(),
            grid.k()
        )));
    }
    let k = grid.k();
    let mut seen = vec![false; grid.cell_count()];
    let mut out = Frame::filled(frame_index, grid.width(), grid.height(), filler);
    let (pw, ph) = (grid.patch_w(), grid.patch_h());
    for patch in patches {
        if patch.cell.row >= k || patch.cell.col >= k {
            return Err(Error::Protocol(format!(
                "cell ({}, {}) outside {k}x{k} grid",
                patch.cell.row, patch.cell.col
            )));
        }
        let idx = patch.cell.linear(k);
        if !mask.get(idx) {
            return Err(Error::Protocol(format!(
                "patch for cell ({}, {}) not in mask",
                patch.cell.row, patch.cell.col
            )));
        }
        if std::mem::replace(&mut seen[idx], true) {
            return Err(Error::Protocol(format!(
                "duplicate patch for cell ({}, {})",
                patch.cell.row, patch.cell.col
            )));
        }
        if patch.pixels.len() != pw * ph {
            return Err(Error::InvalidGeometry(format!(
                "patch holds {} bytes, grid expects {}",
                patch.pixels.len(),
                pw * ph
            )));
        }
        let (x0, y0, _, _) = grid.cell_rect(patch.cell);
        for (dy, src) in patch.pixels.chunks_exact(pw).enumerate() {
            let start = (y0 + dy) * out.width + x0;
            out.pixels[start..start + pw].copy_from_slice(src);
        }
    }
    Ok(out)
}

/// Fraction of `cell`'s area covered by `bbox`, in `[0, 1]`.
pub fn cell_overlap(cell: CellId, grid: &GridSpec, bbox: &BoundingBox) -> f64 {
    let (x, y, w, h) = grid.cell_rect(cell);
    bbox.intersection_area(x, y, w, h) as f64 / (w * h) as f64
}
