//! Slow, independent reference implementations.
//!
//! Everything in here exists to cross-check a fast production path in the
//! test and acceptance suites: per-pixel brute force instead of scanline
//! fills and distance transforms, a linear-scan priority flood instead of a
//! heap-based watershed, and central finite differences instead of analytic
//! gradients. Nothing in the library calls these at run time.

pub mod gradcheck;
pub mod rasterize_oracle;
pub mod watershed_oracle;
