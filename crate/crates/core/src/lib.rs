//! Compiler and simulator core for dataflow execution of convolutional
//! networks on a multi-core computational-memory (CM) accelerator.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the command
//! line, and anything touching the filesystem live in the `cmflow` crate.
//!
//! Pipeline overview:
//!
//! 1. [`model`]: validated dataflow graph plus a sequential reference evaluator.
//! 2. [`partition`]: one crossbar operator per partition, acyclic partition graph.
//! 3. [`placemap`]: embed partitions into the hardware interconnect.
//! 4. [`accessrel`]: read/write access relations per shared object.
//! 5. [`depsm`]: write-to-max-reader relations and LCU lookup tables.
//! 6. [`compile`]: ties the above together into a [`sim::Bundle`].
//! 7. [`sim`]: cycle-level execution of a bundle.
#![no_std]

extern crate alloc;

pub mod accessrel;
pub mod compile;
pub mod depsm;
pub mod model;
pub mod partition;
pub mod placemap;
pub mod relspec;
pub mod sim;

pub use compile::{compile, CompileError, CompileOptions, Compiled};
pub use relspec::{EnumCap, IntTuple, PresRelation, PresSet, Space};
