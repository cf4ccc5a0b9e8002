//! Matrix and convolution inner loops.
//!
//! Every kernel accumulates each output element in a fixed sequential order,
//! so results are bit-identical regardless of the rayon thread count. The
//! loops are written in `ikj` / axpy form: the innermost loop runs over
//! contiguous output and right-hand-side memory with independent accumulator
//! chains per element, which lets LLVM vectorize without reassociating any
//! single element's sum. Parallelism only ever splits disjoint row blocks.

use rayon::prelude::*;

use super::Scalar;

/// Work below this many multiply-adds is not worth a rayon dispatch.
const PAR_MIN_FLOPS: usize = 1 << 18;

fn row_block(rows: usize) -> usize {
    let blocks = rayon::current_num_threads() * 4;
    rows.div_ceil(blocks).max(1)
}

/// `out[M,N] = a[M,K] · b[K,N]`.
pub fn gemm<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let block = row_block(m);
    let body = |(blk, out_rows): (usize, &mut [T])| {
        let row0 = blk * block;
        for (r, out_row) in out_rows.chunks_mut(n).enumerate() {
            let i = row0 + r;
            let a_row = &a[i * k..(i + 1) * k];
            out_row.fill(T::ZERO);
            for (p, &av) in a_row.iter().enumerate() {
                if av != T::ZERO {
                    let b_row = &b[p * n..(p + 1) * n];
                    for (o, &bv) in out_row.iter_mut().zip(b_row) {
                        *o += av * bv;
                    }
                }
            }
        }
    };
    if m * k * n >= PAR_MIN_FLOPS && block < m {
        out.par_chunks_mut(block * n).enumerate().for_each(body);
    } else {
        out.chunks_mut(block * n).enumerate().for_each(body);
    }
}

/// `out[M,N] = a[M,K] · b[N,K]ᵀ`, i.e. rows of `b` are the N dimension.
///
/// Internally transposes `b` once and runs the `ikj` kernel; the transpose
/// cost is negligible next to the multiply.
pub fn gemm_bt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(b.len(), n * k);
    let mut bt = vec![T::ZERO; k * n];
    transpose(b, n, k, &mut bt);
    gemm(a, &bt, m, k, n, out);
}

/// `out[N,K] += a[M,N]ᵀ · b[M,K]` without materializing the transpose.
pub fn gemm_at_acc<T: Scalar>(a: &[T], b: &[T], m: usize, n: usize, k: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), m * k);
    debug_assert_eq!(out.len(), n * k);
    let block = row_block(n);
    let body = |(blk, out_rows): (usize, &mut [T])| {
        let col0 = blk * block;
        for i in 0..m {
            let b_row = &b[i * k..(i + 1) * k];
            for (r, out_row) in out_rows.chunks_mut(k).enumerate() {
                let s = a[i * n + col0 + r];
                if s != T::ZERO {
                    for (o, &bv) in out_row.iter_mut().zip(b_row) {
                        *o += s * bv;
                    }
                }
            }
        }
    };
    if m * n * k >= PAR_MIN_FLOPS && block < n {
        out.par_chunks_mut(block * k).enumerate().for_each(body);
    } else {
        out.chunks_mut(block * k).enumerate().for_each(body);
    }
}

/// `out[C,R] = a[R,C]ᵀ`.
pub fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(out.len(), rows * cols);
    for r in 0..rows {
        let a_row = &a[r * cols..(r + 1) * cols];
        for (c, &v) in a_row.iter().enumerate() {
            out[c * rows + r] = v;
        }
    }
}

/// Geometry of one 2D convolution, shared by forward and backward passes.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }
    pub fn out_positions(&self) -> usize {
        self.batch * self.h_out * self.w_out
    }
}

/// Gather input patches into `cols[B·Hₒ·Wₒ, C·K·K]` (zero padding).
pub fn im2col<T: Scalar>(input: &[T], g: &ConvGeom, cols: &mut [T]) {
    let patch = g.patch_len();
    debug_assert_eq!(cols.len(), g.out_positions() * patch);
    let plane = g.h_in * g.w_in;
    let rows = g.out_positions();
    let block = row_block(rows);
    let row_body = |(blk, out_rows): (usize, &mut [T])| {
        let row_base = blk * block;
        for (r, col_row) in out_rows.chunks_mut(patch).enumerate() {
            let row = row_base + r;
            let b = row / (g.h_out * g.w_out);
            let rem = row % (g.h_out * g.w_out);
            let oy = rem / g.w_out;
            let ox = rem % g.w_out;
            let base_y = (oy * g.stride) as isize - g.padding as isize;
            let base_x = (ox * g.stride) as isize - g.padding as isize;
            let img = &input[b * g.c_in * plane..(b + 1) * g.c_in * plane];
            let mut idx = 0;
            for c in 0..g.c_in {
                let chan = &img[c * plane..(c + 1) * plane];
                for ky in 0..g.kernel {
                    let y = base_y + ky as isize;
                    if y < 0 || y >= g.h_in as isize {
                        col_row[idx..idx + g.kernel].fill(T::ZERO);
                        idx += g.kernel;
                        continue;
                    }
                    let src_row = &chan[y as usize * g.w_in..(y as usize + 1) * g.w_in];
                    // fast path: whole kernel row inside the image
                    if base_x >= 0 && base_x + g.kernel as isize <= g.w_in as isize {
                        let x0 = base_x as usize;
                        col_row[idx..idx + g.kernel].copy_from_slice(&src_row[x0..x0 + g.kernel]);
                        idx += g.kernel;
                    } else {
                        for kx in 0..g.kernel {
                            let x = base_x + kx as isize;
                            col_row[idx] = if x < 0 || x >= g.w_in as isize {
                                T::ZERO
                            } else {
                                src_row[x as usize]
                            };
                            idx += 1;
                        }
                    }
                }
            }
        }
    };
    if rows * patch >= PAR_MIN_FLOPS && block < rows {
        cols.par_chunks_mut(block * patch).enumerate().for_each(row_body);
    } else {
        cols.chunks_mut(block * patch).enumerate().for_each(row_body);
    }
}

/// Scatter-add column gradients back to input layout. Inverse of [`im2col`].
pub fn col2im_acc<T: Scalar>(d_cols: &[T], g: &ConvGeom, d_input: &mut [T]) {
    let patch = g.patch_len();
    let plane = g.h_in * g.w_in;
    debug_assert_eq!(d_input.len(), g.batch * g.c_in * plane);
    // Parallel over batch items: each owns a disjoint slice of d_input.
    let body = |(b, d_img): (usize, &mut [T])| {
        for oy in 0..g.h_out {
            let base_y = (oy * g.stride) as isize - g.padding as isize;
            for ox in 0..g.w_out {
                let row = (b * g.h_out + oy) * g.w_out + ox;
                let col_row = &d_cols[row * patch..(row + 1) * patch];
                let base_x = (ox * g.stride) as isize - g.padding as isize;
                let mut idx = 0;
                for c in 0..g.c_in {
                    for ky in 0..g.kernel {
                        let y = base_y + ky as isize;
                        if y < 0 || y >= g.h_in as isize {
                            idx += g.kernel;
                            continue;
                        }
                        let dst_row =
                            &mut d_img[(c * g.h_in + y as usize) * g.w_in..(c * g.h_in + y as usize + 1) * g.w_in];
                        if base_x >= 0 && base_x + g.kernel as isize <= g.w_in as isize {
                            let x0 = base_x as usize;
                            for (o, &v) in dst_row[x0..x0 + g.kernel]
                                .iter_mut()
                                .zip(&col_row[idx..idx + g.kernel])
                            {
                                *o += v;
                            }
                            idx += g.kernel;
                        } else {
                            for kx in 0..g.kernel {
                                let x = base_x + kx as isize;
                                if x >= 0 && x < g.w_in as isize {
                                    dst_row[x as usize] += col_row[idx];
                                }
                                idx += 1;
                            }
                        }
                    }
                }
            }
        }
    };
    if g.batch > 1 {
        d_input
            .par_chunks_mut(g.c_in * plane)
            .enumerate()
            .for_each(body);
    } else {
        d_input.chunks_mut(g.c_in * plane).enumerate().for_each(body);
    }
}

/// Reorder GEMM output rows `[B·Hₒ·Wₒ, Cₒ]` into tensor layout `[B, Cₒ, Hₒ, Wₒ]`.
pub fn rows_to_nchw<T: Scalar>(rows: &[T], g: &ConvGeom, out: &mut [T]) {
    let hw = g.h_out * g.w_out;
    for b in 0..g.batch {
        let rows_b = &rows[b * hw * g.c_out..(b + 1) * hw * g.c_out];
        let out_b = &mut out[b * g.c_out * hw..(b + 1) * g.c_out * hw];
        for p in 0..hw {
            let row = &rows_b[p * g.c_out..(p + 1) * g.c_out];
            for (c, &v) in row.iter().enumerate() {
                out_b[c * hw + p] = v;
            }
        }
    }
}

/// Inverse of [`rows_to_nchw`].
pub fn nchw_to_rows<T: Scalar>(t: &[T], g: &ConvGeom, rows: &mut [T]) {
    let hw = g.h_out * g.w_out;
    for b in 0..g.batch {
        let t_b = &t[b * g.c_out * hw..(b + 1) * g.c_out * hw];
        let rows_b = &mut rows[b * hw * g.c_out..(b + 1) * hw * g.c_out];
        for c in 0..g.c_out {
            let chan = &t_b[c * hw..(c + 1) * hw];
            for (p, &v) in chan.iter().enumerate() {
                rows_b[p * g.c_out + c] = v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive() {
        let m = 67;
        let k = 35;
        let n = 23;
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.73).cos()).collect();
        let mut out = vec![0.0; m * n];
        gemm(&a, &b, m, k, n, &mut out);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                assert!((out[i * n + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gemm_at_acc_matches_naive() {
        let m = 41;
        let n = 13;
        let k = 17;
        let a: Vec<f64> = (0..m * n).map(|i| (i as f64 * 0.11).sin()).collect();
        let b: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.29).cos()).collect();
        let mut out = vec![0.0; n * k];
        gemm_at_acc(&a, &b, m, n, k, &mut out);
        for j in 0..n {
            for q in 0..k {
                let mut s = 0.0;
                for i in 0..m {
                    s += a[i * n + j] * b[i * k + q];
                }
                assert!((out[j * k + q] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transpose_round_trip() {
        let a: Vec<f32> = (0..12).map(|i| i as f32).collect();
        let mut t = vec![0.0f32; 12];
        let mut back = vec![0.0f32; 12];
        transpose(&a, 3, 4, &mut t);
        transpose(&t, 4, 3, &mut back);
        assert_eq!(a, back);
    }

    #[test]
    fn im2col_identity_kernel() {
        // 1x1 kernel, stride 1: cols are the input pixels in row order.
        let g = ConvGeom {
            batch: 1,
            c_in: 1,
            h_in: 2,
            w_in: 3,
            c_out: 1,
            kernel: 1,
            stride: 1,
            padding: 0,
            h_out: 2,
            w_out: 3,
        };
        let input: Vec<f32> = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut cols = vec![0.0f32; 6];
        im2col(&input, &g, &mut cols);
        assert_eq!(cols, input);
    }
}
