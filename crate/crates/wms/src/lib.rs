//! Host side of the workload management system: the durable stores, the live
//! station pipeline and the command-line front end, built on `wms-core`.

#![deny(rust_2018_idioms)]

pub mod clock;
pub mod faults;
mod fsutil;
pub mod lb;
pub mod spool;
pub mod brokerio;
pub mod conf;
pub mod config;
pub mod limits;
pub mod pipeline;
pub mod runlog;
pub mod simio;
pub mod cli;
