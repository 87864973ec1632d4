//! Numeric kernels: blocked GEMM and im2col-based convolution.
//!
//! Work is split into fixed-size blocks (row blocks for GEMM, samples for
//! convolution) whose boundaries never depend on the thread count, so the
//! sequential and parallel paths perform the same floating-point operations in
//! the same order and produce bitwise-identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution strategy for the data-parallel kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Falls back to sequential when built without the `parallel` feature.
    Parallel,
}

impl Exec {
    pub const fn default_for_build() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Default for Exec {
    fn default() -> Self {
        Self::default_for_build()
    }
}

const ROW_BLOCK: usize = 32;

fn for_each_chunk<F>(exec: Exec, data: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    if chunk == 0 || data.is_empty() {
        return;
    }
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c)),
        _ => data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c)),
    }
}

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major `rows x cols` buffer.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols }
    }
}

/// `c[m, n] = a[m, k] * b[k, n]` (or `+=` when `accumulate`), `c` row-major.
pub fn gemm(exec: Exec, m: usize, k: usize, n: usize, a: MatRef, b: MatRef, c: &mut [f64], accumulate: bool) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let c = &mut c[..m * n];
    for_each_chunk(exec, c, ROW_BLOCK * n, |blk, cblk| {
        let row0 = blk * ROW_BLOCK;
        let rows = cblk.len() / n;
        gemm_block(rows, k, n, a, row0, b, cblk, accumulate);
    });
}

#[allow(clippy::too_many_arguments)]
fn gemm_block(rows: usize, k: usize, n: usize, a: MatRef, row0: usize, b: MatRef, c: &mut [f64], accumulate: bool) {
    let a_off = row0 * a.rs;
    let last_a = a_off + (rows - 1) * a.rs + (k - 1) * a.cs;
    let last_b = (k - 1) * b.rs + (n - 1) * b.cs;
    assert!(last_a < a.data.len() && last_b < b.data.len());
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every element the strided views touch,
    // and `c` holds exactly `rows * n` elements in row-major order.
    unsafe {
        matrixmultiply::dgemm(
            rows,
            k,
            n,
            1.0,
            a.data.as_ptr().add(a_off),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Dense matrix product of row-major buffers.
pub fn matmul(exec: Exec, a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    matmul_t(exec, a, b, m, k, n, false, false)
}

/// `op(a) * op(b)` with `op(a)` of extent `m x k` and `op(b)` of `k x n`;
/// a flagged operand is stored row-major in its transposed layout.
#[allow(clippy::too_many_arguments)]
pub fn matmul_t(exec: Exec, a: &[f64], b: &[f64], m: usize, k: usize, n: usize, ta: bool, tb: bool) -> Vec<f64> {
    let av = if ta { MatRef::transposed(a, m) } else { MatRef::row_major(a, k) };
    let bv = if tb { MatRef::transposed(b, k) } else { MatRef::row_major(b, n) };
    let mut c = vec![0.0; m * n];
    gemm(exec, m, k, n, av, bv, &mut c, false);
    c
}

/// Geometry of a 2-D cross-correlation between an image tensor `x[N, C, H, W]`,
/// a kernel `k[F, C, KH, KW]` and a response `y[N, F, OH, OW]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Output extent of a strided, padded correlation; `None` if it would be < 1.
    pub fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = input + 2 * pad;
        if stride == 0 || padded < kernel {
            return None;
        }
        Some((padded - kernel) / stride + 1)
    }

    /// Image extent produced by a transposed correlation; `None` if < 1.
    pub fn transposed_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
        let full = stride * (input.checked_sub(1)?) + kernel;
        full.checked_sub(2 * pad).filter(|&v| v >= 1)
    }

    pub fn x_shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn k_shape(&self) -> [usize; 4] {
        [self.f, self.c, self.kh, self.kw]
    }

    pub fn y_shape(&self) -> [usize; 4] {
        [self.n, self.f, self.oh, self.ow]
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

/// Writes the transposed column matrix `[OH*OW, C*KH*KW]` of one sample.
fn im2col_t(g: &ConvGeom, x: &[f64], out: &mut [f64]) {
    let patch = g.patch();
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = &mut out[(oy * g.ow + ox) * patch..][..patch];
            let mut idx = 0;
            for ch in 0..g.c {
                let plane = &x[ch * g.h * g.w..][..g.h * g.w];
                for i in 0..g.kh {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    for j in 0..g.kw {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        row[idx] = if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                            plane[iy as usize * g.w + ix as usize]
                        } else {
                            0.0
                        };
                        idx += 1;
                    }
                }
            }
        }
    }
}

/// Scatter-adds a transposed column matrix back into one sample image.
fn col2im_t(g: &ConvGeom, cols: &[f64], x: &mut [f64]) {
    let patch = g.patch();
    x.fill(0.0);
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = &cols[(oy * g.ow + ox) * patch..][..patch];
            let mut idx = 0;
            for ch in 0..g.c {
                for i in 0..g.kh {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    for j in 0..g.kw {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                            x[(ch * g.h + iy as usize) * g.w + ix as usize] += row[idx];
                        }
                        idx += 1;
                    }
                }
            }
        }
    }
}

/// `y = corr(x, k)`.
pub fn conv_forward(exec: Exec, g: &ConvGeom, x: &[f64], k: &[f64]) -> Vec<f64> {
    let (patch, pos) = (g.patch(), g.positions());
    let xs = g.c * g.h * g.w;
    let mut y = vec![0.0; g.n * g.f * pos];
    for_each_chunk(exec, &mut y, g.f * pos, |s, ys| {
        let mut cols = vec![0.0; pos * patch];
        im2col_t(g, &x[s * xs..][..xs], &mut cols);
        gemm(
            Exec::Sequential,
            g.f,
            patch,
            pos,
            MatRef::row_major(k, patch),
            MatRef::transposed(&cols, patch),
            ys,
            false,
        );
    });
    y
}

/// Adjoint of `conv_forward` in its image argument: the image-shaped result of
/// correlating `y` back through `k` (a transposed convolution).
pub fn conv_transpose(exec: Exec, g: &ConvGeom, y: &[f64], k: &[f64]) -> Vec<f64> {
    let (patch, pos) = (g.patch(), g.positions());
    let xs = g.c * g.h * g.w;
    let mut x = vec![0.0; g.n * xs];
    for_each_chunk(exec, &mut x, xs, |s, xsl| {
        let ysl = &y[s * g.f * pos..][..g.f * pos];
        let mut cols = vec![0.0; pos * patch];
        gemm(
            Exec::Sequential,
            pos,
            g.f,
            patch,
            MatRef::transposed(ysl, pos),
            MatRef::row_major(k, patch),
            &mut cols,
            false,
        );
        col2im_t(g, &cols, xsl);
    });
    x
}

/// Adjoint of `conv_forward` in its kernel argument: `k[f, c, i, j] =
/// sum_{n, oy, ox} y[n, f, oy, ox] * x[n, c, oy*s + i - p, ox*s + j - p]`.
pub fn conv_kernel(exec: Exec, g: &ConvGeom, x: &[f64], y: &[f64]) -> Vec<f64> {
    let (patch, pos) = (g.patch(), g.positions());
    let xs = g.c * g.h * g.w;
    let total = g.n * pos;
    let mut cols = vec![0.0; total * patch];
    for_each_chunk(exec, &mut cols, pos * patch, |s, csl| {
        im2col_t(g, &x[s * xs..][..xs], csl);
    });
    // Permute y[N, F, P] to [F, N*P] so the batch becomes the contraction axis.
    let mut yp = vec![0.0; g.f * total];
    for s in 0..g.n {
        for f in 0..g.f {
            yp[f * total + s * pos..][..pos].copy_from_slice(&y[(s * g.f + f) * pos..][..pos]);
        }
    }
    let mut k = vec![0.0; g.f * patch];
    gemm(
        exec,
        g.f,
        total,
        patch,
        MatRef::row_major(&yp, total),
        MatRef::row_major(&cols, patch),
        &mut k,
        false,
    );
    k
}
