//! Distributed, tree-structured, quorum-based authentication of chiplets in a
//! System-in-Package, with a deterministic interposer simulator and an attack
//! harness.

pub mod attack;
pub mod chiplet;
pub mod cli;
pub mod config;
pub mod crypto;
pub mod net;
pub mod protocol;
pub mod sharing;
pub mod transcript;
