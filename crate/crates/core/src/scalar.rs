use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar used by the network, the losses and the TOD maps.
///
/// Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; every implementor can represent the
    /// value up to rounding.
    #[inline]
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 is representable")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// `C ← α A B + β C` for an `m × k` by `k × n` product with explicit
    /// row and column strides.
    ///
    /// # Safety
    /// Every index reachable through the strides must lie inside the
    /// allocations behind `a`, `b` and `c`, and `c` must not alias them.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    #[inline]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    #[inline]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// `Y ← X W + β Y` with row-major `X: n × inp`, `W: inp × out`, `Y: n × out`.
pub(crate) fn matmul<T: Scalar>(x: &[T], w: &[T], y: &mut [T], n: usize, inp: usize, out: usize, beta: T) {
    assert!(x.len() >= n * inp && w.len() >= inp * out && y.len() >= n * out);
    if n == 0 || out == 0 {
        return;
    }
    // SAFETY: lengths checked above; `y` is a distinct mutable borrow.
    unsafe {
        T::gemm(
            n,
            inp,
            out,
            T::one(),
            x.as_ptr(),
            inp as isize,
            1,
            w.as_ptr(),
            out as isize,
            1,
            beta,
            y.as_mut_ptr(),
            out as isize,
            1,
        )
    }
}

/// `G ← Xᵀ D + G` with row-major `X: n × inp`, `D: n × out`, `G: inp × out`.
pub(crate) fn matmul_tn_acc<T: Scalar>(x: &[T], d: &[T], g: &mut [T], n: usize, inp: usize, out: usize) {
    assert!(x.len() >= n * inp && d.len() >= n * out && g.len() >= inp * out);
    if n == 0 || out == 0 || inp == 0 {
        return;
    }
    // SAFETY: lengths checked above; `g` is a distinct mutable borrow.
    unsafe {
        T::gemm(
            inp,
            n,
            out,
            T::one(),
            x.as_ptr(),
            1,
            inp as isize,
            d.as_ptr(),
            out as isize,
            1,
            T::one(),
            g.as_mut_ptr(),
            out as isize,
            1,
        )
    }
}

/// `R ← D Wᵀ` with row-major `D: n × out`, `W: inp × out`, `R: n × inp`.
pub(crate) fn matmul_nt<T: Scalar>(d: &[T], w: &[T], r: &mut [T], n: usize, inp: usize, out: usize) {
    assert!(d.len() >= n * out && w.len() >= inp * out && r.len() >= n * inp);
    if n == 0 || inp == 0 {
        return;
    }
    // SAFETY: lengths checked above; `r` is a distinct mutable borrow.
    unsafe {
        T::gemm(
            n,
            out,
            inp,
            T::one(),
            d.as_ptr(),
            out as isize,
            1,
            w.as_ptr(),
            1,
            out as isize,
            T::zero(),
            r.as_mut_ptr(),
            inp as isize,
            1,
        )
    }
}

/// `Σ a[i] * b[i]` with eight independent accumulators so that the loop
/// vectorizes; summation order depends only on the length.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}
