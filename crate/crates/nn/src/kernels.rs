//! Raw forward/backward kernels on NHWC buffers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Strided matrix view: `(rows, cols, row stride, col stride)`.
#[derive(Clone, Copy, Debug)]
pub struct View {
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    pub fn rowmajor(rows: usize, cols: usize) -> Self {
        View {
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        View {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn extent(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `c = a·b + beta·c`.
pub fn gemm(a: &[f32], av: View, b: &[f32], bv: View, beta: f32, c: &mut [f32], cv: View) {
    assert_eq!(av.cols, bv.rows, "gemm inner dims");
    assert_eq!((av.rows, bv.cols), (cv.rows, cv.cols), "gemm output dims");
    assert!(a.len() >= av.extent() && b.len() >= bv.extent() && c.len() >= cv.extent());
    if cv.rows == 0 || cv.cols == 0 {
        return;
    }
    // SAFETY: extents checked above; `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::sgemm(
            av.rows,
            av.cols,
            bv.cols,
            1.0,
            a.as_ptr(),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr(),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr(),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pad {
    /// `k / 2` zeros on each side; output is `ceil(n / stride)` for odd k.
    Same,
    Valid,
}

/// Geometry of one 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(
        x: [usize; 4],
        k: [usize; 4],
        stride: usize,
        pad: Pad,
    ) -> Result<Self, String> {
        let [n, h, w, cin] = x;
        let [kh, kw, kcin, cout] = k;
        if kcin != cin {
            return Err(format!("input has {cin} channels, kernel expects {kcin}"));
        }
        if stride == 0 {
            return Err("stride must be positive".into());
        }
        let (pad_h, pad_w) = match pad {
            Pad::Same => (kh / 2, kw / 2),
            Pad::Valid => (0, 0),
        };
        if h + 2 * pad_h < kh || w + 2 * pad_w < kw {
            return Err(format!("{h}x{w} input smaller than {kh}x{kw} kernel"));
        }
        let ho = (h + 2 * pad_h - kh) / stride + 1;
        let wo = (w + 2 * pad_w - kw) / stride + 1;
        Ok(ConvGeom {
            n,
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            stride,
            pad_h,
            pad_w,
            ho,
            wo,
        })
    }

    fn kk(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn pixels(&self) -> usize {
        self.ho * self.wo
    }

    /// 1x1, stride 1: the input itself is the column matrix.
    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad_h == 0 && self.pad_w == 0
    }

    pub fn out_len(&self) -> usize {
        self.n * self.pixels() * self.cout
    }

    fn im2col(&self, x: &[f32], cols: &mut [f32]) {
        let (kk, cin) = (self.kk(), self.cin);
        for oy in 0..self.ho {
            for ox in 0..self.wo {
                let row = &mut cols[(oy * self.wo + ox) * kk..][..kk];
                for ky in 0..self.kh {
                    let iy = (oy * self.stride + ky) as isize - self.pad_h as isize;
                    for kx in 0..self.kw {
                        let ix = (ox * self.stride + kx) as isize - self.pad_w as isize;
                        let dst = &mut row[(ky * self.kw + kx) * cin..][..cin];
                        if iy < 0 || ix < 0 || iy >= self.h as isize || ix >= self.w as isize {
                            dst.fill(0.0);
                        } else {
                            let src = (iy as usize * self.w + ix as usize) * cin;
                            dst.copy_from_slice(&x[src..src + cin]);
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], dx: &mut [f32]) {
        let (kk, cin) = (self.kk(), self.cin);
        for oy in 0..self.ho {
            for ox in 0..self.wo {
                let row = &cols[(oy * self.wo + ox) * kk..][..kk];
                for ky in 0..self.kh {
                    let iy = (oy * self.stride + ky) as isize - self.pad_h as isize;
                    if iy < 0 || iy >= self.h as isize {
                        continue;
                    }
                    for kx in 0..self.kw {
                        let ix = (ox * self.stride + kx) as isize - self.pad_w as isize;
                        if ix < 0 || ix >= self.w as isize {
                            continue;
                        }
                        let src = &row[(ky * self.kw + kx) * cin..][..cin];
                        let dst = &mut dx[(iy as usize * self.w + ix as usize) * cin..][..cin];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }

    /// Channel-major column matrix `[kh·kw·cin, ho·wo]` from one CHW sample.
    fn im2col_t(&self, xc: &[f32], cols: &mut [f32]) {
        let px = self.pixels();
        let (h, w) = (self.h as isize, self.w as isize);
        for ky in 0..self.kh {
            for kx in 0..self.kw {
                for ci in 0..self.cin {
                    let row = &mut cols[((ky * self.kw + kx) * self.cin + ci) * px..][..px];
                    let plane = &xc[ci * self.h * self.w..][..self.h * self.w];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad_h as isize;
                        let dst = &mut row[oy * self.wo..][..self.wo];
                        if iy < 0 || iy >= h {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..][..self.w];
                        if self.stride == 1 {
                            // ix = ox + kx - pad, valid for ox in [lo, hi)
                            let shift = kx as isize - self.pad_w as isize;
                            let lo = (-shift).clamp(0, self.wo as isize) as usize;
                            let hi = (w - shift).clamp(lo as isize, self.wo as isize) as usize;
                            dst[..lo].fill(0.0);
                            dst[hi..].fill(0.0);
                            let s0 = (lo as isize + shift) as usize;
                            dst[lo..hi].copy_from_slice(&src[s0..s0 + hi - lo]);
                            continue;
                        }
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad_w as isize;
                            *d = if ix < 0 || ix >= w { 0.0 } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Cross-correlation without bias.
    pub fn forward(&self, x: &[f32], k: &[f32]) -> Vec<f32> {
        let (kk, px) = (self.kk(), self.pixels());
        let xs = self.h * self.w * self.cin;
        let mut out = vec![0.0; self.out_len()];
        out.par_chunks_mut(px * self.cout)
            .zip(x.par_chunks(xs))
            .for_each(|(o, xi)| {
                let mut xc = vec![0.0; xs];
                transpose(xi, self.h * self.w, self.cin, &mut xc);
                let cols_buf;
                let cols: &[f32] = if self.pointwise() {
                    &xc
                } else {
                    let mut c = vec![0.0; kk * px];
                    self.im2col_t(&xc, &mut c);
                    cols_buf = c;
                    &cols_buf
                };
                let mut ot = vec![0.0; self.cout * px];
                gemm(
                    k,
                    View::rowmajor(kk, self.cout).t(),
                    cols,
                    View::rowmajor(kk, px),
                    0.0,
                    &mut ot,
                    View::rowmajor(self.cout, px),
                );
                transpose(&ot, self.cout, px, o);
            });
        out
    }

    /// Gradients w.r.t. input and kernel. Per-sample kernel gradients are
    /// summed in sample order.
    pub fn backward(
        &self,
        x: &[f32],
        k: &[f32],
        dout: &[f32],
        want_dx: bool,
        want_dk: bool,
    ) -> (Option<Vec<f32>>, Option<Vec<f32>>) {
        let (kk, px) = (self.kk(), self.pixels());
        let xs = self.h * self.w * self.cin;
        let pointwise = self.pointwise();
        let per_sample: Vec<(Vec<f32>, Vec<f32>)> = x
            .par_chunks(xs)
            .zip(dout.par_chunks(px * self.cout))
            .map(|(xi, di)| {
                let mut dk = Vec::new();
                if want_dk {
                    let cols_buf;
                    let cols: &[f32] = if pointwise {
                        xi
                    } else {
                        let mut c = vec![0.0; px * kk];
                        self.im2col(xi, &mut c);
                        cols_buf = c;
                        &cols_buf
                    };
                    dk = vec![0.0; kk * self.cout];
                    gemm(
                        cols,
                        View::rowmajor(px, kk).t(),
                        di,
                        View::rowmajor(px, self.cout),
                        0.0,
                        &mut dk,
                        View::rowmajor(kk, self.cout),
                    );
                }
                let mut dx = Vec::new();
                if want_dx {
                    let kt = View::rowmajor(kk, self.cout).t();
                    let mut dcols = vec![0.0; px * kk];
                    gemm(di, View::rowmajor(px, self.cout), k, kt, 0.0, &mut dcols, View::rowmajor(px, kk));
                    if pointwise {
                        dx = dcols;
                    } else {
                        dx = vec![0.0; xs];
                        self.col2im(&dcols, &mut dx);
                    }
                }
                (dx, dk)
            })
            .collect();
        let dk = want_dk.then(|| {
            let mut acc = vec![0.0f32; kk * self.cout];
            for (_, d) in &per_sample {
                for (a, v) in acc.iter_mut().zip(d) {
                    *a += v;
                }
            }
            acc
        });
        let dx = want_dx.then(|| {
            let mut out = Vec::with_capacity(self.n * xs);
            for (d, _) in per_sample {
                out.extend(d);
            }
            out
        });
        (dx, dk)
    }
}

/// Row-major `[rows, cols]` into `[cols, rows]`.
pub fn transpose(src: &[f32], rows: usize, cols: usize, dst: &mut [f32]) {
    assert!(src.len() >= rows * cols && dst.len() >= rows * cols);
    for (c, out) in dst.chunks_exact_mut(rows).take(cols).enumerate() {
        for (r, d) in out.iter_mut().enumerate() {
            *d = src[r * cols + c];
        }
    }
}

/// Nearest-neighbour 2x upsampling of `[n, h, w, c]`.
pub fn upsample2x(x: &[f32], n: usize, h: usize, w: usize, c: usize) -> Vec<f32> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![0.0; n * ho * wo * c];
    for b in 0..n {
        for y in 0..ho {
            for xo in 0..wo {
                let src = ((b * h + y / 2) * w + xo / 2) * c;
                let dst = ((b * ho + y) * wo + xo) * c;
                out[dst..dst + c].copy_from_slice(&x[src..src + c]);
            }
        }
    }
    out
}

pub fn upsample2x_backward(dout: &[f32], n: usize, h: usize, w: usize, c: usize) -> Vec<f32> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut dx = vec![0.0; n * h * w * c];
    for b in 0..n {
        for y in 0..ho {
            for xo in 0..wo {
                let dst = ((b * h + y / 2) * w + xo / 2) * c;
                let src = ((b * ho + y) * wo + xo) * c;
                for k in 0..c {
                    dx[dst + k] += dout[src + k];
                }
            }
        }
    }
    dx
}

/// Scaled dot-product attention over a packed `[n, t, 3d]` buffer holding
/// Q, K and V; returns `[n, t, d]` and the row-stochastic weights
/// `[n, heads, t, t]`.
pub fn attention(qkv: &[f32], n: usize, t: usize, d: usize, heads: usize) -> (Vec<f32>, Vec<f32>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let mut out = vec![0.0; n * t * d];
    let mut probs = vec![0.0; n * heads * t * t];
    let row = View {
        rows: t,
        cols: dh,
        rs: 3 * d,
        cs: 1,
    };
    for b in 0..n {
        let base = &qkv[b * t * 3 * d..(b + 1) * t * 3 * d];
        for hd in 0..heads {
            let p = &mut probs[(b * heads + hd) * t * t..][..t * t];
            let q = &base[hd * dh..];
            let k = &base[d + hd * dh..];
            let v = &base[2 * d + hd * dh..];
            gemm(q, row, k, row.t(), 0.0, p, View::rowmajor(t, t));
            for r in p.chunks_mut(t) {
                let m = r.iter().fold(f32::NEG_INFINITY, |a, &v| a.max(v * scale));
                let mut s = 0.0f32;
                for v in r.iter_mut() {
                    *v = (*v * scale - m).exp();
                    s += *v;
                }
                for v in r.iter_mut() {
                    *v /= s;
                }
            }
            let o = &mut out[b * t * d + hd * dh..];
            gemm(p, View::rowmajor(t, t), v, row, 0.0, o, View { rows: t, cols: dh, rs: d, cs: 1 });
        }
    }
    (out, probs)
}

pub fn attention_backward(
    qkv: &[f32],
    probs: &[f32],
    dout: &[f32],
    n: usize,
    t: usize,
    d: usize,
    heads: usize,
) -> Vec<f32> {
    let dh = d / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let mut dqkv = vec![0.0; qkv.len()];
    let row = View {
        rows: t,
        cols: dh,
        rs: 3 * d,
        cs: 1,
    };
    let orow = View {
        rows: t,
        cols: dh,
        rs: d,
        cs: 1,
    };
    let tt = View::rowmajor(t, t);
    let mut ds = vec![0.0; t * t];
    for b in 0..n {
        let base = &qkv[b * t * 3 * d..(b + 1) * t * 3 * d];
        let dbase = &mut dqkv[b * t * 3 * d..(b + 1) * t * 3 * d];
        let dob = &dout[b * t * d..];
        for hd in 0..heads {
            let p = &probs[(b * heads + hd) * t * t..][..t * t];
            let q = &base[hd * dh..];
            let k = &base[d + hd * dh..];
            let v = &base[2 * d + hd * dh..];
            let dout_h = &dob[hd * dh..];
            // dV = Pᵀ dO
            gemm(p, tt.t(), dout_h, orow, 0.0, &mut dbase[2 * d + hd * dh..], row);
            // dP = dO Vᵀ, then softmax backward in place
            gemm(dout_h, orow, v, row.t(), 0.0, &mut ds, tt);
            for (dr, pr) in ds.chunks_mut(t).zip(p.chunks(t)) {
                let dot: f32 = dr.iter().zip(pr).map(|(a, b)| a * b).sum();
                for (g, &pv) in dr.iter_mut().zip(pr) {
                    *g = pv * (*g - dot) * scale;
                }
            }
            gemm(&ds, tt, k, row, 0.0, &mut dbase[hd * dh..], row);
            gemm(&ds, tt.t(), q, row, 0.0, &mut dbase[d + hd * dh..], row);
        }
    }
    dqkv
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop cross-correlation.
    fn conv_oracle(g: &ConvGeom, x: &[f32], k: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0f32; g.out_len()];
        for b in 0..g.n {
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    for co in 0..g.cout {
                        let mut s = 0.0f64;
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let iy = (oy * g.stride + ky) as isize - g.pad_h as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad_w as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                for ci in 0..g.cin {
                                    let xv = x[((b * g.h + iy as usize) * g.w + ix as usize) * g.cin + ci];
                                    let kv = k[((ky * g.kw + kx) * g.cin + ci) * g.cout + co];
                                    s += xv as f64 * kv as f64;
                                }
                            }
                        }
                        out[((b * g.ho + oy) * g.wo + ox) * g.cout + co] = s as f32;
                    }
                }
            }
        }
        out
    }

    fn seq(n: usize, f: f32) -> Vec<f32> {
        (0..n).map(|i| (i as f32 * f).sin() * 0.9).collect()
    }

    #[test]
    fn conv_matches_nested_loops() {
        for (x, k, s, pad) in [
            ([2, 7, 6, 3], [3, 3, 3, 4], 1, Pad::Same),
            ([1, 8, 8, 2], [3, 3, 2, 3], 2, Pad::Same),
            ([2, 8, 8, 4], [1, 1, 4, 2], 2, Pad::Same),
            ([1, 5, 5, 2], [1, 1, 2, 3], 1, Pad::Same),
            ([1, 8, 8, 1], [4, 4, 1, 5], 4, Pad::Valid),
        ] {
            let g = ConvGeom::new(x, k, s, pad).unwrap();
            let xv = seq(x.iter().product(), 0.37);
            let kv = seq(k.iter().product(), 0.91);
            let got = g.forward(&xv, &kv);
            let want = conv_oracle(&g, &xv, &kv);
            let err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
            assert!(err < 1e-5, "{x:?} {k:?}: {err}");
        }
    }

    #[test]
    fn strided_same_conv_halves() {
        let g = ConvGeom::new([1, 64, 64, 1], [3, 3, 1, 1], 2, Pad::Same).unwrap();
        assert_eq!((g.ho, g.wo), (32, 32));
        assert!(ConvGeom::new([1, 4, 4, 2], [3, 3, 3, 1], 1, Pad::Same).is_err());
    }

    #[test]
    fn upsample_round_trip_shapes() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let up = upsample2x(&x, 1, 2, 2, 1);
        assert_eq!(&up[..4], &[1.0, 1.0, 2.0, 2.0]);
        let back = upsample2x_backward(&up, 1, 2, 2, 1);
        assert_eq!(back, vec![4.0, 8.0, 12.0, 16.0]);
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let (n, t, d, h) = (2, 5, 8, 2);
        let qkv = seq(n * t * 3 * d, 0.53);
        let (_, p) = attention(&qkv, n, t, d, h);
        for r in p.chunks(t) {
            let s: f32 = r.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}

