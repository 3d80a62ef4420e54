//! Standard-normal cdf and quantile, the single choke point for Gaussian
//! probability computations in this crate.

use statrs::distribution::{ContinuousCDF, Normal};

fn unit() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Phi(z), the standard normal cdf.
pub fn normal_cdf(z: f64) -> f64 {
    unit().cdf(z)
}

/// Phi^{-1}(p) for p in (0, 1).
pub fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0, "quantile level {p} outside (0,1)");
    unit().inverse_cdf(p)
}
