//! Allocation-only core of the workload management system.
//!
//! * [`jdl`]: the ClassAd-style description language, its evaluator and symmetric matchmaking.
//! * [`lb`]: job lifecycle events and the order-independent state fold.
//! * [`broker`]: computing-element selection over an information snapshot and a replica catalog.
//! * [`sim`]: discrete-event model of the pipeline with load coupling and hard timeouts.
//!
//! Nothing here touches the filesystem, clocks or threads; the `wms` crate
//! supplies storage, transport and the command line.

#![no_std]
#![deny(rust_2018_idioms)]

extern crate alloc;

pub mod broker;
pub mod jdl;
pub mod lb;
pub mod sim;
pub mod time;

pub use time::{Span, Timestamp};
