//! A character-level LSTM whose cells see the surprisal of each arriving
//! symbol and update only with a probability driven by the previous
//! prediction error, trained with hand-written truncated BPTT.

pub mod cli;
pub mod error;
pub mod generate;
pub mod gradcheck;
pub mod numerics;
pub mod optimizer;
pub mod sflstm;
pub mod trace;
pub mod training;

pub use error::{Error, Result};
