//! Scalar abstraction: the numeric code is generic over `f32`/`f64`.

use num_traits::Float;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating-point scalar usable throughout the rasters, losses and the network.
pub trait Scalar:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self {
        Self::from(v).expect("f64 conversion")
    }

    fn from_f32(v: f32) -> Self {
        Self::from(v).expect("f32 conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("to f64")
    }

    fn as_f32(self) -> f32 {
        self.to_f32().expect("to f32")
    }

    /// Row-major GEMM with optional operand transposes:
    /// `c[m×n] += op(a) · op(b)` where `op(a)` is `a[m×k]` (or `a` stored as
    /// `k×m` when `trans_a`) and `op(b)` is `b[k×n]` (or stored `n×k` when
    /// `trans_b`). `c` must be zeroed by the caller for plain multiplication.
    fn gemm_acc(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        c: &mut [Self],
    );
}

/// Row/column strides of a logical `rows`×`cols` operand that is stored
/// row-major, either directly or transposed (as `cols`×`rows`).
fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm_acc(
                m: usize,
                k: usize,
                n: usize,
                a: &[$t],
                trans_a: bool,
                b: &[$t],
                trans_b: bool,
                c: &mut [$t],
            ) {
                debug_assert_eq!(a.len(), m * k);
                debug_assert_eq!(b.len(), k * n);
                debug_assert_eq!(c.len(), m * n);
                let (rsa, csa) = strides(m, k, trans_a);
                let (rsb, csb) = strides(k, n, trans_b);
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        1.0,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Splitmix64-style seed derivation so every sub-component gets a stable,
/// independent stream from one run seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
