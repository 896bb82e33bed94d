//! Command line front end and HTTP session service for `sqlexplore`.

pub mod commands;
pub mod service;
