//! Configuration, execution and acceptance checks for `favsite`.

pub mod acceptance;
pub mod config;
pub mod output;
pub mod run;
