use crate::error::{Error, Result};

use super::{for_each_chunk, Exec, Scalar};

/// Rows of `C` handled per task. Fixed so results never depend on the
/// number of worker threads.
const ROW_BLOCK: usize = 64;

/// Borrowed strided matrix view.
#[derive(Debug, Clone, Copy)]
pub struct MatRef<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T: Scalar> MatRef<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize, rs: usize, cs: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape("matrix view with an empty extent"));
        }
        let last = (rows - 1) * rs + (cols - 1) * cs;
        if last >= data.len() {
            return Err(Error::shape(format!(
                "{rows}x{cols} view with strides ({rs},{cs}) overruns buffer of {}",
                data.len()
            )));
        }
        Ok(MatRef {
            data,
            rows,
            cols,
            rs,
            cs,
        })
    }

    /// Contiguous row-major view.
    pub fn dense(data: &'a [T], rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::shape(format!(
                "{rows}x{cols} view over buffer of {}",
                data.len()
            )));
        }
        Self::new(data, rows, cols, cols, 1)
    }

    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.rs + j * self.cs]
    }
}

/// `C = alpha * A * B + beta * C` where `C` is contiguous row-major
/// `a.rows() x b.cols()`.
pub fn gemm<T: Scalar>(exec: Exec, alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: &mut [T]) -> Result<()> {
    let n = b.cols;
    if c.len() != a.rows * n {
        return Err(Error::shape(format!(
            "gemm output buffer has {} elements, expected {}x{n}",
            c.len(),
            a.rows
        )));
    }
    gemm_ld(exec, alpha, a, b, beta, c, n)
}

/// As [`gemm`], but row `i` of `C` starts at `c[i * ldc]`, so `C` may be a
/// column band of a wider matrix.
pub fn gemm_ld<T: Scalar>(
    exec: Exec,
    alpha: T,
    a: MatRef<'_, T>,
    b: MatRef<'_, T>,
    beta: T,
    c: &mut [T],
    ldc: usize,
) -> Result<()> {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if b.rows != k {
        return Err(Error::shape(format!(
            "gemm inner extents differ: {}x{} * {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    if ldc < n || c.len() < (m - 1) * ldc + n {
        return Err(Error::shape(format!(
            "gemm output buffer of {} with row stride {ldc} cannot hold {m}x{n}",
            c.len()
        )));
    }
    let c = &mut c[..(m - 1) * ldc + n];
    for_each_chunk(exec, c, ROW_BLOCK * ldc, |blk, c_blk| {
        let r0 = blk * ROW_BLOCK;
        let rows = ROW_BLOCK.min(m - r0);
        // SAFETY: `MatRef::new` checked that every (i, j) in range maps
        // inside `a.data`/`b.data`; `c_blk` covers `rows` rows of stride
        // `ldc` with at least `n` columns in the last one.
        unsafe {
            T::gemm_raw(
                rows,
                k,
                n,
                alpha,
                a.data.as_ptr().add(r0 * a.rs),
                a.rs as isize,
                a.cs as isize,
                b.data.as_ptr(),
                b.rs as isize,
                b.cs as isize,
                beta,
                c_blk.as_mut_ptr(),
                ldc as isize,
                1,
            );
        }
    });
    Ok(())
}
