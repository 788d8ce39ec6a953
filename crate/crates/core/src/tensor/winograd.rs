//! Winograd F(2x2, 3x3) for dense stride-1 "same" 3x3 convolutions.
//! 16 small GEMMs replace one big one, cutting multiplies by 2.25x.

use super::{ConvParams, Shape};

/// Small planes make the 16 GEMMs too narrow and few channels leave the
/// transforms dominant; im2col wins there (measured crossover).
pub(super) fn applies(p: &ConvParams, os: Shape) -> bool {
    p.kernel == 3
        && p.stride == 1
        && p.padding == 1
        && p.groups == 1
        && p.in_channels * p.out_channels >= 24 * 24
        && os.plane() >= 2048
}

// U = G g G^T, stored as 16 row-major (co x ci) matrices.
fn transform_weights(p: &ConvParams) -> Vec<f32> {
    let (ci, co) = (p.in_channels, p.out_channels);
    let mut u = vec![0.0f32; 16 * co * ci];
    for o in 0..co {
        for i in 0..ci {
            let g = &p.weight[(o * ci + i) * 9..][..9];
            // t = G g, 4x3
            let mut t = [[0.0f32; 3]; 4];
            for j in 0..3 {
                let (g0, g1, g2) = (g[j], g[3 + j], g[6 + j]);
                t[0][j] = g0;
                t[1][j] = 0.5 * (g0 + g1 + g2);
                t[2][j] = 0.5 * (g0 - g1 + g2);
                t[3][j] = g2;
            }
            for (r, row) in t.iter().enumerate() {
                let vals = [row[0], 0.5 * (row[0] + row[1] + row[2]), 0.5 * (row[0] - row[1] + row[2]), row[2]];
                for (c, v) in vals.into_iter().enumerate() {
                    u[((r * 4 + c) * co + o) * ci + i] = v;
                }
            }
        }
    }
    u
}

pub(super) fn conv(x: &[f32], y: &mut [f32], p: &ConvParams, is: Shape, os: Shape) {
    let (ci, co) = (p.in_channels, p.out_channels);
    let (th, tw) = (os.h.div_ceil(2), os.w.div_ceil(2));
    let u = transform_weights(p);

    // zero-padded input with the image at (1, 1), big enough for every tile
    let (ph, pw) = (2 * th + 2, 2 * tw + 2);
    let mut padded = vec![0.0f32; ci * ph * pw];
    for c in 0..ci {
        let src = &x[c * is.plane()..(c + 1) * is.plane()];
        let dst = &mut padded[c * ph * pw..(c + 1) * ph * pw];
        for (r, row) in src.chunks_exact(is.w).enumerate() {
            dst[(r + 1) * pw + 1..][..is.w].copy_from_slice(row);
        }
    }

    // Blocks of whole tile rows, sized so the transformed block stays near L2.
    // Transforms run across a row of tiles at once so they vectorize.
    let rows_per_block = (16_384 / ci.max(co) / tw).clamp(1, th);
    let cap = rows_per_block * tw;
    let mut v = vec![0.0f32; 16 * ci * cap];
    let mut m = vec![0.0f32; 16 * co * cap];
    let mut cols = vec![0.0f32; 16 * tw];
    let mut even = vec![0.0f32; tw];
    let mut odd = vec![0.0f32; tw];
    for ty0 in (0..th).step_by(rows_per_block) {
        let nrows = rows_per_block.min(th - ty0);
        let nb = nrows * tw;
        for c in 0..ci {
            let plane = &padded[c * ph * pw..(c + 1) * ph * pw];
            for dy in 0..nrows {
                let ty = ty0 + dy;
                // d B: cols[(r * 4 + k) * tw + tx] is entry (r, k) of tile tx
                for r in 0..4 {
                    let row = &plane[(2 * ty + r) * pw..(2 * ty + r + 1) * pw];
                    let q = &mut cols[r * 4 * tw..(r + 1) * 4 * tw];
                    for (tx, w) in row.windows(4).step_by(2).take(tw).enumerate() {
                        q[tx] = w[0] - w[2];
                        q[tw + tx] = w[1] + w[2];
                        q[2 * tw + tx] = w[2] - w[1];
                        q[3 * tw + tx] = w[1] - w[3];
                    }
                }
                // B^T (d B), scattered into the 16 GEMM inputs
                for k in 0..4 {
                    let d = |r: usize| &cols[(r * 4 + k) * tw..][..tw];
                    let (d0, d1, d2, d3) = (d(0), d(1), d(2), d(3));
                    let at = |xi: usize| (xi * ci + c) * nb + dy * tw;
                    let out = |v: &mut [f32], xi: usize, f: &dyn Fn(usize) -> f32| {
                        v[at(xi)..at(xi) + tw].iter_mut().enumerate().for_each(|(tx, o)| *o = f(tx));
                    };
                    out(&mut v, k, &|t| d0[t] - d2[t]);
                    out(&mut v, 4 + k, &|t| d1[t] + d2[t]);
                    out(&mut v, 8 + k, &|t| d2[t] - d1[t]);
                    out(&mut v, 12 + k, &|t| d1[t] - d3[t]);
                }
            }
        }
        for xi in 0..16 {
            let a = &u[xi * co * ci..(xi + 1) * co * ci];
            let b = &v[xi * ci * nb..(xi + 1) * ci * nb];
            let c = &mut m[xi * co * nb..(xi + 1) * co * nb];
            // SAFETY: a is co x ci, b is ci x nb, c is co x nb, all row-major and in bounds.
            unsafe {
                matrixmultiply::sgemm(
                    co, ci, nb, 1.0,
                    a.as_ptr(), ci as isize, 1,
                    b.as_ptr(), nb as isize, 1,
                    0.0,
                    c.as_mut_ptr(), nb as isize, 1,
                );
            }
        }
        // Y = A^T M A, a row of tiles at a time
        for o in 0..co {
            let yo = &mut y[o * os.plane()..(o + 1) * os.plane()];
            for dy in 0..nrows {
                let ty = ty0 + dy;
                let g = |xi: usize| &m[(xi * co + o) * nb + dy * tw..][..tw];
                for r in 0..2 {
                    let oy = 2 * ty + r;
                    if oy >= os.h {
                        break;
                    }
                    // row r of A^T M: r0 = m0 + m1 + m2, r1 = m1 - m2 - m3 (rows of M)
                    let (a, b, e) = if r == 0 { (0, 4, 8) } else { (4, 8, 12) };
                    let sg = if r == 0 { 1.0 } else { -1.0 };
                    let col = |k: usize| (g(a + k), g(b + k), g(e + k));
                    let (c0, c1, c2, c3) = (col(0), col(1), col(2), col(3));
                    for tx in 0..tw {
                        let s0 = c0.0[tx] + sg * (c0.1[tx] + c0.2[tx]);
                        let s1 = c1.0[tx] + sg * (c1.1[tx] + c1.2[tx]);
                        let s2 = c2.0[tx] + sg * (c2.1[tx] + c2.2[tx]);
                        let s3 = c3.0[tx] + sg * (c3.1[tx] + c3.2[tx]);
                        even[tx] = s0 + s1 + s2;
                        odd[tx] = s1 - s2 - s3;
                    }
                    let dst = &mut yo[oy * os.w..(oy + 1) * os.w];
                    for (pair, (e, o)) in dst.chunks_mut(2).zip(even.iter().zip(&odd)) {
                        pair[0] = *e;
                        if let Some(d) = pair.get_mut(1) {
                            *d = *o;
                        }
                    }
                }
            }
        }
    }
}
