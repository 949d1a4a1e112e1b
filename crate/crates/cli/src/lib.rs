//! Command-line front end and HTTP render service.

pub mod commands;
pub mod error;
pub mod scene;
pub mod service;
