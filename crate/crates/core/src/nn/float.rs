//! Scalar abstraction so the same network runs in f32 (training speed) and
//! f64 (finite-difference verification).

use ndarray::NdFloat;
use num_traits::FromPrimitive;

pub trait Scalar: NdFloat + FromPrimitive + Default {
    const DTYPE: &'static str;
    fn from_f64c(v: f64) -> Self;
    fn to_f64c(self) -> f64;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    fn from_f64c(v: f64) -> Self {
        v as f32
    }
    fn to_f64c(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    fn from_f64c(v: f64) -> Self {
        v
    }
    fn to_f64c(self) -> f64 {
        self
    }
}
