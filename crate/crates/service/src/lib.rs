//! HTTP service and command line front end for the wordart pipeline.

pub mod api;
pub mod cli;
pub mod config;
