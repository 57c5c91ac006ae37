//! Frame-synchronous sender and receiver loops over real UDP sockets.
//!
//! The sender emits one datagram per selected patch, then blocks for the
//! receiver's feedback mask (or a timeout) before the next frame. The
//! receiver collects patches for the current frame until every expected cell
//! arrived or the per-frame deadline expires; anything missing by then is
//! lost.

use std::collections::HashMap;
use std::io::ErrorKind;
use std::net::{SocketAddr, UdpSocket};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::frame_grid::{assemble, tile, Frame, GridSpec, Patch};
use crate::reconstruct::interpolate;
use crate::scheduler::{schedule, Mask, ScheduleConfig, SelectionMethod};

use super::codec::{decode_feedback, decode_packet, encode_feedback, encode_packet};

const MAX_DATAGRAM: usize = 65_535;

#[derive(Debug, Clone)]
pub struct SenderConfig {
    pub peer: SocketAddr,
    pub k: usize,
    pub schedule: ScheduleConfig,
    /// How long to wait for feedback after each frame.
    pub feedback_timeout: Duration,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SenderReport {
    pub frames: u32,
    pub datagrams: u64,
    pub bytes: u64,
    pub feedback_received: u32,
    pub masks: Vec<Mask>,
}

pub fn run_sender(socket: &UdpSocket, frames: &[Frame], cfg: &SenderConfig) -> Result<SenderReport> {
    cfg.schedule.validate()?;
    let mut report = SenderReport::default();
    let mut latest: Option<Mask> = None;
    let mut buf = vec![0u8; MAX_DATAGRAM];
    for frame in frames {
        let grid = GridSpec::for_frame(frame, cfg.k)?;
        let mask = schedule(frame.index, cfg.k, &cfg.schedule, latest.as_ref())?;
        let patches = tile(frame, &grid)?;
        for i in mask.selected() {
            let bytes = encode_packet(&patches[i], &grid);
            socket.send_to(&bytes, cfg.peer).map_err(Error::Transport)?;
            report.datagrams += 1;
            report.bytes += bytes.len() as u64;
        }
        report.frames += 1;
        report.masks.push(mask);

        if cfg.schedule.method == SelectionMethod::Dqn && cfg.feedback_timeout > Duration::ZERO {
            let want = frame.index + 1;
            let until = Instant::now() + cfg.feedback_timeout;
            while let Some(left) = until.checked_duration_since(Instant::now()) {
                if left.is_zero() {
                    break;
                }
                socket.set_read_timeout(Some(left)).map_err(Error::Transport)?;
                match socket.recv_from(&mut buf) {
                    Ok((n, _)) => {
                        if let Ok(fb) = decode_feedback(&buf[..n]) {
                            let fresh = fb.frame_index() >= want;
                            latest = Some(fb);
                            report.feedback_received += 1;
                            if fresh {
                                break;
                            }
                        }
                    }
                    Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => break,
                    Err(e) => return Err(Error::Transport(e)),
                }
            }
        }
    }
    Ok(report)
}

/// Receiver-side hook that turns each reconstructed frame into the mask to
/// request for the next one.
pub trait FeedbackPolicy {
    fn on_frame(&mut self, frame: &Frame, received: &Mask) -> Result<Option<Mask>>;
}

/// Never sends feedback; the sender falls back on its own schedule.
pub struct NoFeedback;

impl FeedbackPolicy for NoFeedback {
    fn on_frame(&mut self, _: &Frame, _: &Mask) -> Result<Option<Mask>> {
        Ok(None)
    }
}

#[derive(Debug, Clone)]
pub struct ReceiverConfig {
    pub k: usize,
    pub width: usize,
    pub height: usize,
    pub frames: u32,
    /// Per-frame reassembly window.
    pub deadline: Duration,
    /// How long to wait for the first datagram of a frame before declaring it lost.
    pub idle_timeout: Duration,
    pub filler: u8,
    pub interpolate: bool,
}

impl ReceiverConfig {
    pub fn new(k: usize, width: usize, height: usize, frames: u32) -> Self {
        ReceiverConfig {
            k,
            width,
            height,
            frames,
            deadline: Duration::from_millis(33),
            idle_timeout: Duration::from_secs(2),
            filler: 0,
            interpolate: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReceivedFrame {
    pub frame: Frame,
    pub received: Mask,
}

pub fn run_receiver(
    socket: &UdpSocket,
    cfg: &ReceiverConfig,
    policy: &mut dyn FeedbackPolicy,
) -> Result<Vec<ReceivedFrame>> {
    let grid = GridSpec::new(cfg.k, cfg.width, cfg.height)?;
    let cells = grid.cell_count();
    let mut buf = vec![0u8; MAX_DATAGRAM];
    let mut pending: HashMap<u32, Vec<Patch>> = HashMap::new();
    let mut peer: Option<SocketAddr> = None;
    let mut expected: Option<usize> = None;
    let mut previous: Option<Frame> = None;
    let mut out = Vec::with_capacity(cfg.frames as usize);

    for n in 0..cfg.frames {
        let mut patches: Vec<Patch> = Vec::new();
        let mut window_start = None;
        if let Some(early) = pending.remove(&n) {
            window_start = Some(Instant::now());
            patches = early;
        }
        pending.retain(|&idx, _| idx > n);
        let mut have = vec![false; cells];
        // buffered patches obey the deadline like fresh ones
        if cfg.deadline.is_zero() {
            patches.clear();
        }
        patches.retain(|p| !std::mem::replace(&mut have[p.cell.linear(cfg.k)], true));

        let target = expected.unwrap_or(cells);
        while patches.len() < target {
            let wait = match window_start {
                None => cfg.idle_timeout,
                Some(t0) => match cfg.deadline.checked_sub(t0.elapsed()) {
                    Some(left) if !left.is_zero() => left,
                    _ => break,
                },
            };
            socket.set_read_timeout(Some(wait)).map_err(Error::Transport)?;
            let (len, from) = match socket.recv_from(&mut buf) {
                Ok(r) => r,
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => break,
                Err(e) => return Err(Error::Transport(e)),
            };
            let arrived = Instant::now();
            let Ok((patch, k)) = decode_packet(&buf[..len]) else {
                log::debug!("dropping undecodable datagram from {from}");
                continue;
            };
            peer.get_or_insert(from);
            if k != cfg.k || patch.pixels.len() != grid.patch_len() {
                log::debug!("dropping patch for a foreign grid");
                continue;
            }
            if patch.frame_index > n {
                pending.entry(patch.frame_index).or_default().push(patch);
                continue;
            }
            if patch.frame_index < n {
                continue;
            }
            let t0 = *window_start.get_or_insert(arrived);
            if arrived.duration_since(t0) >= cfg.deadline {
                break;
            }
            if !std::mem::replace(&mut have[patch.cell.linear(cfg.k)], true) {
                patches.push(patch);
            }
        }

        let received = Mask::from_bits(cfg.k, n, have)?;
        let assembled = assemble(n, &patches, &grid, &received, cfg.filler)?;
        let frame = if cfg.interpolate {
            interpolate(&assembled, &received, previous.as_ref())?
        } else {
            assembled
        };

        expected = None;
        if let Some(next) = policy.on_frame(&frame, &received)? {
            let next = next.with_frame_index(n + 1);
            expected = Some(next.popcount());
            if let Some(addr) = peer {
                socket.send_to(&encode_feedback(&next), addr).map_err(Error::Transport)?;
            }
        }
        previous = Some(frame.clone());
        out.push(ReceivedFrame { frame, received });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::budget;
    use std::thread;

    fn frames(n: u32) -> Vec<Frame> {
        (0..n)
            .map(|i| {
                let pixels = (0..64 * 64).map(|p| (((p * 7 + i as usize * 13) % 200) + 30) as u8).collect();
                Frame::new(i, 64, 64, pixels).unwrap()
            })
            .collect()
    }

    fn pair() -> (UdpSocket, UdpSocket) {
        let rx = UdpSocket::bind("127.0.0.1:0").unwrap();
        let tx = UdpSocket::bind("127.0.0.1:0").unwrap();
        (tx, rx)
    }

    struct Fixed(Mask);

    impl FeedbackPolicy for Fixed {
        fn on_frame(&mut self, _: &Frame, _: &Mask) -> Result<Option<Mask>> {
            Ok(Some(self.0.clone()))
        }
    }

    #[test]
    fn lossless_full_frames_are_exact() {
        let (tx, rx) = pair();
        let peer = rx.local_addr().unwrap();
        let input = frames(4);
        let mut rcfg = ReceiverConfig::new(8, 64, 64, 4);
        rcfg.deadline = Duration::from_millis(500);
        let handle = thread::spawn(move || run_receiver(&rx, &rcfg, &mut Fixed(Mask::full(8, 0))).unwrap());
        let scfg = SenderConfig {
            peer,
            k: 8,
            schedule: ScheduleConfig::new(1.0, SelectionMethod::Dqn, 0),
            feedback_timeout: Duration::from_millis(500),
        };
        let report = run_sender(&tx, &input, &scfg).unwrap();
        let got = handle.join().unwrap();
        assert_eq!(report.datagrams, 4 * 64);
        assert_eq!(got.len(), 4);
        for (a, b) in got.iter().zip(&input) {
            assert_eq!(&a.frame, b);
        }
    }

    #[test]
    fn zero_deadline_loses_everything() {
        let (tx, rx) = pair();
        let peer = rx.local_addr().unwrap();
        let input = frames(2);
        let mut rcfg = ReceiverConfig::new(8, 64, 64, 2);
        rcfg.deadline = Duration::ZERO;
        rcfg.idle_timeout = Duration::from_millis(300);
        let handle = thread::spawn(move || run_receiver(&rx, &rcfg, &mut NoFeedback).unwrap());
        let scfg = SenderConfig {
            peer,
            k: 8,
            schedule: ScheduleConfig::new(1.0, SelectionMethod::Random, 0),
            feedback_timeout: Duration::ZERO,
        };
        run_sender(&tx, &input, &scfg).unwrap();
        for f in handle.join().unwrap() {
            assert_eq!(f.received.popcount(), 0);
            assert!(f.frame.pixels.iter().all(|&p| p == 0));
        }
    }

    #[test]
    fn half_mask_yields_half_the_cells() {
        let (tx, rx) = pair();
        let peer = rx.local_addr().unwrap();
        let input = frames(3);
        let mut rcfg = ReceiverConfig::new(8, 64, 64, 3);
        rcfg.deadline = Duration::from_millis(300);
        let handle = thread::spawn(move || run_receiver(&rx, &rcfg, &mut NoFeedback).unwrap());
        let mut sched = ScheduleConfig::new(0.5, SelectionMethod::Random, 17);
        sched.bootstrap_frames = 1;
        let scfg = SenderConfig {
            peer,
            k: 8,
            schedule: sched,
            feedback_timeout: Duration::ZERO,
        };
        let report = run_sender(&tx, &input, &scfg).unwrap();
        let got = handle.join().unwrap();
        let grid = GridSpec::new(8, 64, 64).unwrap();
        let last = &got[2];
        // frames never contain a 0 pixel, so a non-filler cell is any cell with a non-zero byte
        let non_filler = tile(&last.frame, &grid)
            .unwrap()
            .iter()
            .filter(|p| p.pixels.iter().any(|&v| v != 0))
            .count();
        assert_eq!(non_filler, budget(0.5, 8).unwrap());
        assert_eq!(last.received, report.masks[2]);
    }
}
