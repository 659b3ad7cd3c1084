//! Reference solvers and fixtures shared by the workspace's integration and
//! acceptance tests. Everything here is written independently of the
//! production solvers it is used to check.

pub mod fixtures;
pub mod grid;
pub mod ishigami;
pub mod sweep;
