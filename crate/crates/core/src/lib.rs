//! Core of the homescope smart-home traffic inspector.
//!
//! The capture side ([`source`], [`arp`], [`parser`], [`flows`], [`privacy`],
//! [`daemon`]) turns intercepted LAN traffic into anonymized upload batches.
//! The collector side ([`store`], [`export`], [`reports`]) persists those
//! batches, enriches remote endpoints ([`endpoints`]) and device labels
//! ([`identity`]), and answers analysis queries. [`tls`] is shared by both.

pub mod arp;
pub mod daemon;
pub mod endpoints;
pub mod export;
pub mod flows;
pub mod identity;
pub mod parser;
pub mod privacy;
pub mod psl;
pub mod reports;
pub mod source;
pub mod store;
pub mod tls;
pub mod types;
pub mod wire;

pub use types::{MacAddr, Timestamp, Transport};
