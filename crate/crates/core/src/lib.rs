// SPDX-License-Identifier: Apache-2.0

//! Toolchain for freezing the leading layers of a quantized, pruned CNN into a
//! fixed-weight pipelined datapath, checking it bit-exactly against a golden
//! integer executor, and exploring fixed front-end + programmable back-end
//! design points with an analytical PPA model.

pub mod compress;
pub mod dse;
mod error;
pub mod exec;
pub mod model;
pub mod netlist;
pub mod ppa;
pub mod rounding;
pub mod rtl;
pub mod sim;
pub mod tensor;

pub use error::{Error, Result};
