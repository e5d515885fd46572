//! File formats, image patching and the command-line front end for
//! [`xq_core`].

pub mod cli;
pub mod error;
pub mod format;
pub mod fsutil;
pub mod patch;
pub mod samples;

pub use error::FormatError;
pub use format::codebook::{read_codebook, write_codebook};
pub use format::stream::{read_stream, read_stream_checked, stream_bits, write_stream, CodeStream};
