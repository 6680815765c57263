//! Read-only HTTP API over one scored dataset snapshot.
//!
//! Every handler delegates to `ambiprune-core`; the only mutable state is
//! the what-if result cache.

mod error;
mod routes;
mod session;

pub use error::ApiError;
pub use routes::{router, serve};
pub use session::{crop_rect, whatif, Session, WhatIfRequest, CACHE_CAPACITY};
