//! Completion of partially received frames.
//!
//! Missing cells are filled from the previous reconstructed frame when one
//! exists. Without a previous frame, each missing cell is interpolated from
//! the boundary pixels of the nearest received cell on each side (same row
//! for left/right, same column for up/down). Cells with no received cell in
//! their row or column keep the filler.

use crate::error::{Error, Result};
use crate::frame_grid::{BoundingBox, Frame, GridSpec};
use crate::scheduler::Mask;

pub fn interpolate(assembled: &Frame, mask: &Mask, previous: Option<&Frame>) -> Result<Frame> {
    let grid = GridSpec::new(mask.k(), assembled.width, assembled.height)
        .map_err(|e| Error::InvalidArgument(format!("mask does not fit frame: {e}")))?;
    if let Some(prev) = previous {
        if (prev.width, prev.height) != (assembled.width, assembled.height) {
            return Err(Error::InvalidArgument(format!(
                "previous frame is {}x{}, current is {}x{}",
                prev.width, prev.height, assembled.width, assembled.height
            )));
        }
    }
    let mut out = assembled.clone();
    if mask.is_full() {
        return Ok(out);
    }
    let k = grid.k();
    for cell in grid.cells().filter(|c| !mask.get(c.linear(k))) {
        let (x0, y0, w, h) = grid.cell_rect(cell);
        match previous {
            Some(prev) => {
                for y in y0..y0 + h {
                    let s = y * out.width + x0;
                    out.pixels[s..s + w].copy_from_slice(&prev.pixels[s..s + w]);
                }
            }
            None => spatial_fill(&mut out, assembled, &grid, mask, cell.row, cell.col),
        }
    }
    Ok(out)
}

fn spatial_fill(out: &mut Frame, src: &Frame, grid: &GridSpec, mask: &Mask, row: usize, col: usize) {
    let k = grid.k();
    let (pw, ph) = (grid.patch_w(), grid.patch_h());
    let present = |r: usize, c: usize| mask.get(r * k + c);
    // boundary pixel coordinates of the nearest received neighbour on each side
    let left = (0..col).rev().find(|&c| present(row, c)).map(|c| (c + 1) * pw - 1);
    let right = (col + 1..k).find(|&c| present(row, c)).map(|c| c * pw);
    let up = (0..row).rev().find(|&r| present(r, col)).map(|r| (r + 1) * ph - 1);
    let down = (row + 1..k).find(|&r| present(r, col)).map(|r| r * ph);
    if left.is_none() && right.is_none() && up.is_none() && down.is_none() {
        return;
    }
    let lerp = |a: Option<(f64, f64)>, b: Option<(f64, f64)>, t: f64| -> Option<f64> {
        match (a, b) {
            (Some((pa, va)), Some((pb, vb))) => Some(va + (vb - va) * (t - pa) / (pb - pa)),
            (Some((_, v)), None) | (None, Some((_, v))) => Some(v),
            (None, None) => None,
        }
    };
    let (x0, y0) = (col * pw, row * ph);
    for y in y0..y0 + ph {
        for x in x0..x0 + pw {
            let horizontal = lerp(
                left.map(|lx| (lx as f64, src.get(lx, y) as f64)),
                right.map(|rx| (rx as f64, src.get(rx, y) as f64)),
                x as f64,
            );
            let vertical = lerp(
                up.map(|uy| (uy as f64, src.get(x, uy) as f64)),
                down.map(|dy| (dy as f64, src.get(x, dy) as f64)),
                y as f64,
            );
            let v = match (horizontal, vertical) {
                (Some(a), Some(b)) => (a + b) / 2.0,
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => unreachable!("at least one neighbour exists"),
            };
            out.set(x, y, v.round().clamp(0.0, 255.0) as u8);
        }
    }
}

/// Mean absolute pixel error over `region` (whole frame when `None`), scaled to `[0, 1]`.
pub fn reconstruction_error(reconstructed: &Frame, original: &Frame, region: Option<&BoundingBox>) -> Result<f64> {
    if (reconstructed.width, reconstructed.height) != (original.width, original.height) {
        return Err(Error::InvalidArgument(format!(
            "frames differ in size: {}x{} vs {}x{}",
            reconstructed.width, reconstructed.height, original.width, original.height
        )));
    }
    let whole = BoundingBox::whole(original);
    let r = region.unwrap_or(&whole);
    if r.x + r.w > original.width || r.y + r.h > original.height || r.area() == 0 {
        return Err(Error::InvalidArgument(format!("region {r:?} outside frame")));
    }
    let mut sum = 0u64;
    for y in r.y..r.y + r.h {
        let a = &reconstructed.row(y)[r.x..r.x + r.w];
        let b = &original.row(y)[r.x..r.x + r.w];
        sum += a.iter().zip(b).map(|(&p, &q)| p.abs_diff(q) as u64).sum::<u64>();
    }
    Ok(sum as f64 / r.area() as f64 / 255.0)
}
