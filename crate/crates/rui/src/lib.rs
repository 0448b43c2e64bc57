//! File formats, pipeline steps and the command-line front end for the
//! `rui-core` speech enhancer.

pub mod checkpoint;
pub mod cli;
pub mod manifest;
pub mod pgm;
pub mod pipeline;
pub mod wav;
