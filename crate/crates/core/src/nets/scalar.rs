//! Scalar abstraction: networks run in f32 (training throughput) or f64
//! (verification paths such as finite-difference gradient checks).

use crate::error::{Error, Result};

pub trait Scalar:
    ndarray::NdFloat
    + num_traits::Float
    + num_traits::FromPrimitive
    + std::iter::Sum
    + serde::Serialize
    + for<'de> serde::Deserialize<'de>
    + 'static
{
    const DTYPE: &'static str;

    fn from_real(v: f64) -> Self;
    fn to_real(self) -> f64;
    fn write_le_bytes(values: &[Self], out: &mut Vec<u8>);
    fn read_le_bytes(bytes: &[u8]) -> Result<Vec<Self>>;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    fn from_real(v: f64) -> Self {
        v as f32
    }

    fn to_real(self) -> f64 {
        f64::from(self)
    }

    fn write_le_bytes(values: &[Self], out: &mut Vec<u8>) {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn read_le_bytes(bytes: &[u8]) -> Result<Vec<Self>> {
        if bytes.len() % 4 != 0 {
            return Err(Error::Serde("f32 buffer length not a multiple of 4".into()));
        }
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    fn from_real(v: f64) -> Self {
        v
    }

    fn to_real(self) -> f64 {
        self
    }

    fn write_le_bytes(values: &[Self], out: &mut Vec<u8>) {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn read_le_bytes(bytes: &[u8]) -> Result<Vec<Self>> {
        if bytes.len() % 8 != 0 {
            return Err(Error::Serde("f64 buffer length not a multiple of 8".into()));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| {
                f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]])
            })
            .collect())
    }
}
