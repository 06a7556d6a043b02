//! Search for the environmental conditions an exploit needs in order to
//! succeed, by running it against hardened variants of its target.
//!
//! Each test disables a set of conditions and reports whether the exploit
//! was blocked. [`splitting`] finds the necessary conditions with few tests
//! when outcomes are exact; [`adaptive`] handles exploits that sometimes
//! succeed anyway, using the spectrum diagnosis in [`barinel`]. Outcomes
//! come from an [`oracle`], either simulated or remote, and [`harness`]
//! runs reproducible benchmarks.

pub mod model;
pub mod oracle;
pub mod splitting;
pub mod barinel;
pub mod adaptive;
pub mod harness;
