//! Minimal dense-tensor engine with reverse-mode differentiation, the
//! transformer-encoder building blocks, the loss, and the Adam optimizer.
//!
//! Training runs in f32; verification (`finite_difference_check`) runs the
//! same generic code in f64.

mod encoder;
mod gradcheck;
mod graph;
mod optim;
mod params;

pub use encoder::{
    encoder_forward, init_encoder_params, multi_head_attention, EncoderConfig, MASK_NEG,
};
pub use gradcheck::{compare_to_finite_differences, finite_difference_check, GradCheckReport};
pub use graph::{Gradients, Graph, Tid};
pub use optim::{AdamConfig, OptimizerState};
pub use params::{BoundParams, ParamEntry, ParamSet};

/// Floating-point element type of the tensor engine.
pub trait Scalar:
    Copy
    + PartialOrd
    + Default
    + std::fmt::Debug
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    const DTYPE: &'static str;

    fn of(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
    fn maximum(self, other: Self) -> Self;

    fn zero() -> Self {
        Self::of(0.0)
    }
    fn one() -> Self {
        Self::of(1.0)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $name:literal) => {
        impl Scalar for $t {
            const DTYPE: &'static str = $name;

            fn of(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn ln(self) -> Self {
                self.ln()
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn tanh(self) -> Self {
                self.tanh()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            fn maximum(self, other: Self) -> Self {
                if self > other {
                    self
                } else {
                    other
                }
            }
        }
    };
}

impl_scalar!(f32, "f32");
impl_scalar!(f64, "f64");
