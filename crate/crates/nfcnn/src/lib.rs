//! Image IO, checkpoints, dataset streaming and the `nfcnn` command line on
//! top of [`nfcnn_core`].

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod dataset;
pub mod image_io;
pub mod report;
