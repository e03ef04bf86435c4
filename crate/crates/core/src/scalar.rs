//! Floating point scalar abstraction shared by every numeric module.
//!
//! Attention dumps come in `f32` (the common export format) and `f64`
//! (gradient-check fixtures). Everything that touches matrix entries is
//! generic over [`Scalar`]; accumulations that decide paths or report
//! statistics are carried out in `f64` regardless of the storage type.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

/// On-disk element type tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DType {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "f64")]
    F64,
}

impl DType {
    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    pub fn parse(tag: &str) -> Option<Self> {
        match tag {
            "f32" => Some(DType::F32),
            "f64" => Some(DType::F64),
            _ => None,
        }
    }
}

/// f32 or f64.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const DTYPE: DType;

    /// Lossless widening (f32 -> f64 is exact).
    fn widen(self) -> f64;

    /// Rounding conversion from f64.
    fn narrow(v: f64) -> Self;

    fn write_le(self, out: &mut Vec<u8>);

    /// `bytes` must be exactly `DTYPE.size_of()` long.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }

    #[inline]
    fn narrow(v: f64) -> Self {
        v as f32
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("f32 slice must be 4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    #[inline]
    fn widen(self) -> f64 {
        self
    }

    #[inline]
    fn narrow(v: f64) -> Self {
        v
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("f64 slice must be 8 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_round_trip_is_bit_exact() {
        for v in [0.0f32, 1.0, 0.1, f32::MIN_POSITIVE, 3.402_823e38] {
            let mut buf = Vec::new();
            v.write_le(&mut buf);
            assert_eq!(f32::read_le(&buf).to_bits(), v.to_bits());
        }
        let v = 0.1f64;
        let mut buf = Vec::new();
        v.write_le(&mut buf);
        assert_eq!(buf.len(), 8);
        assert_eq!(f64::read_le(&buf).to_bits(), v.to_bits());
    }

    #[test]
    fn dtype_tags() {
        assert_eq!(DType::parse("f32"), Some(DType::F32));
        assert_eq!(DType::parse("bf16"), None);
        assert_eq!(DType::F64.size_of(), 8);
        assert_eq!(<f32 as Scalar>::DTYPE.as_str(), "f32");
    }
}
