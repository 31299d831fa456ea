//! File formats, the external-model wire protocol, a parallel executor and
//! the `infoattr` command line around [`infoattr_core`].

pub mod cli;
pub mod error;
pub mod formats;
pub mod fsutil;
pub mod mapfile;
pub mod parallel;
pub mod protocol;
pub mod raster;
pub mod render;
pub mod resolve;

pub use error::{Error, Result};
pub use infoattr_core as core;
