//! Standard-library side of cmflow: file formats, seeded generators,
//! inspection reports and the command-line driver. The compiler and
//! simulator themselves live in `cmflow-core`.

pub mod cli;
pub mod formats;
pub mod gen;
pub mod report;
