//! Test support for the workspace: reference implementations that share no
//! code with `ssod-core`, and randomized suites comparing the two.

pub mod oracle;
pub mod suites;

pub use suites::SuiteReport;
