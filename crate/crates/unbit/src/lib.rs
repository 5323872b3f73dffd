//! unbit: a self-contained workbench for black-box FPGA bitstream
//! reverse engineering.
//!
//! The crate builds a mock island-style FPGA family from a seed, ships a mock
//! vendor toolchain for it (netlist in, bitstream out), and then reverses the
//! bitstream format of any device in the family without ever peeking at the
//! toolchain's ground truth: differential experiments recover where every
//! routing PIP, LUT truth-table bit, and flip-flop usage flag lives. On top of
//! the recovered database sit a bitstream-to-netlist converter, a targeted
//! bitstream manipulator, and a hardware-trojan case study that detects a
//! key-loading shift-register structure in a converted netlist, correlates it
//! to the key ports of a black-box crypto core by experiment, and patches the
//! bitstream so the core receives an attacker-chosen key.
//!
//! Module map:
//!
//! * [`fabric`]: device model + deterministic family generator.
//! * [`bitstream`]: the configuration container format.
//! * [`netlist`] / [`netlist_text`]: placed-and-routed designs and their text
//!   form.
//! * [`toolchain`]: the mock vendor flow (validation, placement checks,
//!   bit generation), the only consumer of the hidden encoding map.
//! * [`re_pipeline`]: differential recovery of the encoding database.
//! * [`database`]: binary serialization of the recovered database.
//! * [`converter`]: bitstream back to netlist, with diagnostics.
//! * [`manipulator`]: surgical PIP/LUT edits on raw bitstreams.
//! * [`router`]: small BFS router used when edits need fresh routes.
//! * [`sim`]: cycle simulator for converted designs, with black-box models.
//! * [`trojan`]: the end-to-end key-extraction case study.
//! * [`cli`]: command-line front end.

pub mod aes;
pub mod bitstream;
pub mod cli;
pub mod converter;
pub mod database;
pub mod error;
pub mod fabric;
pub mod fabric_text;
pub mod manipulator;
pub mod netlist;
pub mod netlist_text;
pub mod re_pipeline;
pub mod router;
pub mod sim;
pub mod trojan;
pub mod toolchain;

pub use error::{Error, Result};
