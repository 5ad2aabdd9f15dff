//! Strong lottery ticket construction.
//!
//! A dense target network is approximated by pruning a randomly initialized
//! source network: every target parameter is rebuilt as a subset sum of
//! random source parameters, and the resulting binary masks form a ticket.

pub mod activation;
pub mod budget;
pub mod construct;
pub mod error;
pub mod io;
pub mod init;
pub mod manifest;
pub mod netcore;
pub mod rng;
pub mod sampling;
pub mod subsetsum;
pub mod ticket;
pub mod verify;

pub use error::{Error, Result};
