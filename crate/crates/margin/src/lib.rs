//! File formats, a thread-pool executor and the `margin` command line on top
//! of [`margin_core`].

pub mod cli;
pub mod exec;
pub mod io;
pub mod manifest;
pub mod snapshot;

pub use exec::RayonExecutor;
pub use io::{parse_observations, read_observations, OutputDir};
pub use manifest::{sha256_hex, FileDigest, Manifest};
pub use snapshot::{load_pool, pool_from_json, pool_to_json, save_pool};
