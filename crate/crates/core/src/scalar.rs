use std::fmt::{Debug, Display, LowerExp};
use std::str::FromStr;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar the identification pipeline is generic over: f32 or f64.
///
/// Arithmetic and transcendental functions come from [`RealField`];
/// conversions to and from literals go through num-traits.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Display + LowerExp + FromStr + Debug + Send + Sync
{
    /// Significant digits needed for a lossless decimal round trip.
    const SIG_DIGITS: usize;

    /// Lossy conversion from an f64 literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_count(v: usize) -> Self {
        Self::from_usize(v).expect("count representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Machine epsilon.
    #[inline]
    fn eps() -> Self {
        Self::default_epsilon()
    }

    /// Scientific notation with [`Real::SIG_DIGITS`] significant digits.
    fn to_csv_string(self) -> String {
        format!("{:.*e}", Self::SIG_DIGITS - 1, self)
    }
}

impl Real for f32 {
    const SIG_DIGITS: usize = 9;
}

impl Real for f64 {
    const SIG_DIGITS: usize = 17;
}
