//! Datagram wire formats, a seeded lossy channel, and a loopback UDP runner.

mod channel;
mod codec;
pub mod socket;

pub use channel::{channel_transmit, BurstLoss, Channel, ChannelConfig};
pub use codec::{
    decode_feedback, decode_packet, encode_feedback, encode_packet, feedback_len, packet_len, FEEDBACK_MAGIC,
    PACKET_HEADER_LEN, PACKET_MAGIC, PACKET_OVERHEAD, PIXEL_FORMAT_GRAY8, WIRE_VERSION,
};
