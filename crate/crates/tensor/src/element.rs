use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float as NumFloat, FromPrimitive};

/// Storage type tag, also used as the on-disk dtype code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

/// Element types a [`crate::Tensor`] can hold.
///
/// `f32` is the working precision; `f64` exists for finite-difference
/// verification.
pub trait Float:
    NumFloat
    + FromPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const DTYPE: DType;

    fn from_f64_lossy(v: f64) -> Self;

    /// `c = alpha * a * b + beta * c` on strided row/column-major views.
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: (&[Self], isize, isize),
        b: (&[Self], isize, isize),
        beta: Self,
        c: (&mut [Self], isize, isize),
    );
}

impl Float for f32 {
    const DTYPE: DType = DType::F32;

    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: (&[f32], isize, isize),
        b: (&[f32], isize, isize),
        beta: f32,
        c: (&mut [f32], isize, isize),
    ) {
        crate::gemm::check_views(
            m,
            k,
            n,
            a.0.len(),
            a.1,
            a.2,
            b.0.len(),
            b.1,
            b.2,
            c.0.len(),
            c.1,
            c.2,
        );
        // SAFETY: check_views proves every addressed element lies inside its slice.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.0.as_ptr(),
                a.1,
                a.2,
                b.0.as_ptr(),
                b.1,
                b.2,
                beta,
                c.0.as_mut_ptr(),
                c.1,
                c.2,
            );
        }
    }
}

impl Float for f64 {
    const DTYPE: DType = DType::F64;

    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: (&[f64], isize, isize),
        b: (&[f64], isize, isize),
        beta: f64,
        c: (&mut [f64], isize, isize),
    ) {
        crate::gemm::check_views(
            m,
            k,
            n,
            a.0.len(),
            a.1,
            a.2,
            b.0.len(),
            b.1,
            b.2,
            c.0.len(),
            c.1,
            c.2,
        );
        // SAFETY: check_views proves every addressed element lies inside its slice.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.0.as_ptr(),
                a.1,
                a.2,
                b.0.as_ptr(),
                b.1,
                b.2,
                beta,
                c.0.as_mut_ptr(),
                c.1,
                c.2,
            );
        }
    }
}
