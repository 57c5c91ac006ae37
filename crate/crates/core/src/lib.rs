//! Mission-aware selective transmission of video-frame patches over a lossy
//! datagram link.
//!
//! The sender tiles each frame into a K×K grid and ships only the cells the
//! receiver asked for; the receiver reassembles, optionally interpolates the
//! gaps, learns per-cell importance with tabular Q-learning and feeds a
//! binary mask back for the next frame. [`harness`] wires the pieces into a
//! reproducible experiment matrix.

pub mod detection;
pub mod error;
pub mod frame_grid;
pub mod harness;
pub mod importance;
pub mod reconstruct;
pub mod scheduler;
pub mod transport;

pub use error::{Error, Result};
