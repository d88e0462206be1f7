//! Floating-point scalar abstraction shared by the tensor engine and every
//! model built on top of it.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point element type of a [`Tensor`](crate::numcore::Tensor): `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Name recorded in checkpoint manifests.
    const DTYPE: &'static str;
    /// Encoded width in bytes.
    const BYTES: usize;

    /// `c = alpha * a·b + beta * c` for an `m×k` by `k×n` product with explicit
    /// row/column strides (in elements).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: usize,
        csa: usize,
        b: &[Self],
        rsb: usize,
        csb: usize,
        beta: Self,
        c: &mut [Self],
        rsc: usize,
        csc: usize,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// Lossy conversion from `f64`; panics only if the value is not representable at all.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

fn span(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

/// Products below this many multiply-adds skip the blocked kernel, whose packing
/// dominates at attention-head sizes.
const SMALL_GEMM: usize = 8192;

/// Direct loops for small products; `beta == 0` overwrites `c` like the kernel does.
#[allow(clippy::too_many_arguments)]
fn small_gemm<T: Float + NumAssign>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    (rsa, csa): (usize, usize),
    b: &[T],
    (rsb, csb): (usize, usize),
    beta: T,
    c: &mut [T],
    (rsc, csc): (usize, usize),
) {
    for i in 0..m {
        for j in 0..n {
            let cij = &mut c[i * rsc + j * csc];
            *cij = if beta == T::zero() { T::zero() } else { *cij * beta };
        }
    }
    if csb == 1 && csc == 1 {
        // Row-major b and c: axpy rows of b into rows of c.
        for i in 0..m {
            let crow = &mut c[i * rsc..i * rsc + n];
            for p in 0..k {
                let aip = alpha * a[i * rsa + p * csa];
                let brow = &b[p * rsb..p * rsb + n];
                for (cj, &bj) in crow.iter_mut().zip(brow) {
                    *cj += aip * bj;
                }
            }
        }
    } else if csa == 1 && rsb == 1 {
        // Rows of a against columns of b, both contiguous.
        for i in 0..m {
            let arow = &a[i * rsa..i * rsa + k];
            for j in 0..n {
                let bcol = &b[j * csb..j * csb + k];
                let acc = arow.iter().zip(bcol).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
                c[i * rsc + j * csc] += alpha * acc;
            }
        }
    } else {
        for i in 0..m {
            for j in 0..n {
                let mut acc = T::zero();
                for p in 0..k {
                    acc += a[i * rsa + p * csa] * b[p * rsb + j * csb];
                }
                c[i * rsc + j * csc] += alpha * acc;
            }
        }
    }
}

macro_rules! impl_scalar {
    ($t:ty, $name:literal, $kernel:path) => {
        impl Scalar for $t {
            const DTYPE: &'static str = $name;
            const BYTES: usize = std::mem::size_of::<$t>();

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: usize,
                csa: usize,
                b: &[Self],
                rsb: usize,
                csb: usize,
                beta: Self,
                c: &mut [Self],
                rsc: usize,
                csc: usize,
            ) {
                assert!(a.len() >= span(m, k, rsa, csa), "gemm: lhs buffer too short");
                assert!(b.len() >= span(k, n, rsb, csb), "gemm: rhs buffer too short");
                assert!(c.len() >= span(m, n, rsc, csc), "gemm: output buffer too short");
                if m == 0 || n == 0 {
                    return;
                }
                if m * k * n <= SMALL_GEMM {
                    small_gemm(m, k, n, alpha, a, (rsa, csa), b, (rsb, csb), beta, c, (rsc, csc));
                    return;
                }
                // SAFETY: the three asserts above bound every index the kernel touches.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        rsc as isize,
                        csc as isize,
                    );
                }
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; std::mem::size_of::<$t>()];
                buf.copy_from_slice(&bytes[..std::mem::size_of::<$t>()]);
                <$t>::from_le_bytes(buf)
            }
        }
    };
}

impl_scalar!(f32, "f32", matrixmultiply::sgemm);
impl_scalar!(f64, "f64", matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposed_strides() {
        // a = [[1,2],[3,4]], b read as transpose of [[5,6],[7,8]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 2, 2, 1.0, &a, 2, 1, &b, 1, 2, 0.0, &mut c, 2, 1);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn small_and_blocked_paths_agree() {
        let (m, k, n) = (40, 30, 20);
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 7 % 13) as f64 - 6.0) / 5.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| ((i * 5 % 11) as f64 - 5.0) / 3.0).collect();
        for (rsb, csb) in [(n, 1), (1, k)] {
            let mut big = vec![1.0; m * n];
            let mut small = vec![1.0; m * n];
            assert!(m * k * n > SMALL_GEMM);
            f64::gemm(m, k, n, 0.5, &a, k, 1, &b, rsb, csb, 2.0, &mut big, n, 1);
            small_gemm(m, k, n, 0.5, &a, (k, 1), &b, (rsb, csb), 2.0, &mut small, (n, 1));
            for (x, y) in big.iter().zip(&small) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn le_roundtrip() {
        let mut out = Vec::new();
        (-1.5e-7f32).write_le(&mut out);
        assert_eq!(f32::read_le(&out), -1.5e-7f32);
        assert_eq!(out.len(), f32::BYTES);
    }
}
