//! Pipeline plumbing behind the `ifield` binary: configuration and presets,
//! provenance records, built-in scenes and the stage functions.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod pipeline;
pub mod provenance;
pub mod scenes;
