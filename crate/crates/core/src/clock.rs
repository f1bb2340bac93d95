//! Wall clock for the `wall_ms` column; `std::time::Instant` is not
//! available in browsers.

#[cfg(not(target_arch = "wasm32"))]
pub(crate) use std::time::Instant;
#[cfg(target_arch = "wasm32")]
pub(crate) use web_time::Instant;
