//! Floating-point element types.
//!
//! Everything numeric in the crate is generic over [`Scalar`]: `f32` is the
//! training default, `f64` is used wherever finite differences are taken.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Arithmetic width of a model or checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "32")]
    F32,
    #[serde(rename = "64")]
    F64,
}

impl Precision {
    pub fn bits(self) -> u32 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            32 => Some(Precision::F32),
            64 => Some(Precision::F64),
            _ => None,
        }
    }
}

/// Element type of tensors: `f32` or `f64`.
///
/// Besides the `num-traits` float surface, each implementor supplies a
/// strided matrix product so the hot loops can use a blocked kernel.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    const PRECISION: Precision;

    /// `c = a * b` (or `c += a * b` when `accumulate`), with `a` of size
    /// `m x k` and `b` of size `k x n`, all addressed by element strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        c: &mut [Self],
        c_strides: (isize, isize),
        accumulate: bool,
    );

    /// Lossless-enough conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

fn extent(rows: usize, cols: usize, (rs, cs): (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    assert!(rs >= 0 && cs >= 0, "negative strides are not supported");
    (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
}

macro_rules! impl_scalar {
    ($t:ty, $prec:expr, $kernel:path) => {
        impl Scalar for $t {
            const PRECISION: Precision = $prec;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                c: &mut [Self],
                c_strides: (isize, isize),
                accumulate: bool,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                assert!(a.len() >= extent(m, k, a_strides), "gemm: lhs buffer too small");
                assert!(b.len() >= extent(k, n, b_strides), "gemm: rhs buffer too small");
                assert!(
                    c.len() >= extent(m, n, c_strides),
                    "gemm: output buffer too small"
                );
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: every address touched by the kernel lies inside the
                // extents asserted above, and `c` does not alias `a` or `b`.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, Precision::F32, matrixmultiply::sgemm);
impl_scalar!(f64, Precision::F64, matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_triple_loop() {
        let a: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..8).map(|i| (i as f64 * 0.91).cos()).collect();
        let mut c = vec![0.0; 6];
        f64::gemm(3, 4, 2, &a, (4, 1), &b, (2, 1), &mut c, (2, 1), false);
        let expect = naive(3, 4, 2, &a, &b);
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gemm_transposed_strides_and_accumulate() {
        // b stored as n x k, read transposed.
        let a = [1.0f32, 2.0, 3.0, 4.0];
        let bt = [1.0f32, 0.0, 0.0, 1.0];
        let mut c = [1.0f32; 4];
        f32::gemm(2, 2, 2, &a, (2, 1), &bt, (1, 2), &mut c, (2, 1), true);
        assert_eq!(c, [2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn precision_bits_round_trip() {
        assert_eq!(Precision::from_bits(32), Some(Precision::F32));
        assert_eq!(Precision::F64.bits(), 64);
        assert_eq!(Precision::from_bits(16), None);
    }
}
