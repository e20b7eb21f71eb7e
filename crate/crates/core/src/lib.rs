//! Asynchronous distributed quasi-Newton optimization with a master that
//! keeps the inverse of the aggregate Hessian approximation up to date in
//! `O(p²)` per worker message.

pub mod bfgs;
pub mod harness;
pub mod linalg;
pub mod objective;
pub mod protocol;
pub mod oracle;
pub mod runtime;
