//! The machine surface for code-free GAN authoring: a command line tool and
//! an HTTP service over the `gan-core` runtime.

pub mod cli;
pub mod jobs;
pub mod run;
pub mod server;
