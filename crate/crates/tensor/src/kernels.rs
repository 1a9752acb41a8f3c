//! Slice-level forward/backward kernels behind the graph operations.
//!
//! Convolution is im2col + GEMM, processed in bands of output rows so the
//! column buffer stays bounded on large rasters.

use crate::gemm::matmul;
use crate::Float;

/// Upper bound on column-buffer elements per band.
const COL_BUDGET: usize = 1 << 21;

/// Geometry of a stride-1 (possibly dilated) convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub dilation: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn effective_kh(&self) -> usize {
        self.kh + (self.kh - 1) * (self.dilation - 1)
    }

    pub fn effective_kw(&self) -> usize {
        self.kw + (self.kw - 1) * (self.dilation - 1)
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1
            && self.kw == 1
            && self.pad_top == 0
            && self.pad_left == 0
            && self.in_h == self.out_h
            && self.in_w == self.out_w
    }

    fn band_rows(&self) -> usize {
        let k = self.in_c * self.kh * self.kw;
        (COL_BUDGET / (k * self.out_w).max(1)).clamp(1, self.out_h)
    }

    /// Geometry of the input-gradient pass: a correlation of the output
    /// gradient with the flipped, channel-transposed kernel.
    fn transposed(&self) -> ConvGeom {
        ConvGeom {
            n: self.n,
            in_c: self.out_c,
            in_h: self.out_h,
            in_w: self.out_w,
            out_c: self.in_c,
            kh: self.kh,
            kw: self.kw,
            dilation: self.dilation,
            pad_top: self.effective_kh() - 1 - self.pad_top,
            pad_left: self.effective_kw() - 1 - self.pad_left,
            out_h: self.in_h,
            out_w: self.in_w,
        }
    }
}

/// Fills `col[(c*kh+i)*kw+j][(r-r0)*out_w + x]` for output rows `r0..r1`.
fn im2col<T: Float>(x: &[T], g: &ConvGeom, r0: usize, r1: usize, col: &mut [T]) {
    let band = (r1 - r0) * g.out_w;
    let (ih, iw) = (g.in_h as isize, g.in_w as isize);
    for c in 0..g.in_c {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &mut col[((c * g.kh + i) * g.kw + j) * band..][..band];
                let dy = (i * g.dilation) as isize - g.pad_top as isize;
                let dx = (j * g.dilation) as isize - g.pad_left as isize;
                for r in r0..r1 {
                    let out_row = &mut row[(r - r0) * g.out_w..][..g.out_w];
                    let sy = r as isize + dy;
                    if sy < 0 || sy >= ih {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * g.in_w..][..g.in_w];
                    // valid x range: 0 <= ox + dx < iw
                    let lo = (-dx).clamp(0, g.out_w as isize) as usize;
                    let hi = (iw - dx).clamp(0, g.out_w as isize) as usize;
                    out_row[..lo].fill(T::zero());
                    if hi > lo {
                        let s0 = (lo as isize + dx) as usize;
                        out_row[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                    }
                    out_row[hi.max(lo)..].fill(T::zero());
                }
            }
        }
    }
}

/// Forward convolution; weights are `[out_c, in_c, kh, kw]`.
pub fn conv2d_forward<T: Float>(x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let k = g.in_c * g.kh * g.kw;
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let mut out = vec![T::zero(); g.n * g.out_c * out_plane];
    let pointwise = g.is_pointwise();
    let rows = g.band_rows();
    let mut col = if pointwise {
        Vec::new()
    } else {
        vec![T::zero(); k * rows * g.out_w]
    };
    for b in 0..g.n {
        let xb = &x[b * g.in_c * in_plane..(b + 1) * g.in_c * in_plane];
        let ob = &mut out[b * g.out_c * out_plane..(b + 1) * g.out_c * out_plane];
        if pointwise {
            matmul(g.out_c, k, out_plane, w, false, xb, false, ob, false);
        } else {
            let mut r0 = 0;
            while r0 < g.out_h {
                let r1 = (r0 + rows).min(g.out_h);
                let band = (r1 - r0) * g.out_w;
                im2col(xb, g, r0, r1, &mut col[..k * band]);
                // C = out[:, r0..r1, :] viewed with row stride out_plane
                T::gemm_raw(
                    g.out_c,
                    k,
                    band,
                    T::one(),
                    (w, k as isize, 1),
                    (&col[..k * band], band as isize, 1),
                    T::zero(),
                    (&mut ob[r0 * g.out_w..], out_plane as isize, 1),
                );
                r0 = r1;
            }
        }
        if let Some(bias) = bias {
            for (c, &bv) in bias.iter().enumerate() {
                for v in &mut ob[c * out_plane..(c + 1) * out_plane] {
                    *v += bv;
                }
            }
        }
    }
    out
}

/// Gradient w.r.t. the convolution input.
pub fn conv2d_backward_input<T: Float>(dy: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let t = g.transposed();
    // wt[ci][co][kh-1-i][kw-1-j] = w[co][ci][i][j]
    let mut wt = vec![T::zero(); w.len()];
    for co in 0..g.out_c {
        for ci in 0..g.in_c {
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let src = ((co * g.in_c + ci) * g.kh + i) * g.kw + j;
                    let dst = ((ci * g.out_c + co) * g.kh + (g.kh - 1 - i)) * g.kw + (g.kw - 1 - j);
                    wt[dst] = w[src];
                }
            }
        }
    }
    conv2d_forward(dy, &wt, None, &t)
}

/// Gradient w.r.t. the weights, accumulated over the batch in a fixed order.
pub fn conv2d_backward_weights<T: Float>(x: &[T], dy: &[T], g: &ConvGeom) -> Vec<T> {
    let k = g.in_c * g.kh * g.kw;
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let mut dw = vec![T::zero(); g.out_c * k];
    let pointwise = g.is_pointwise();
    let rows = g.band_rows();
    let mut col = if pointwise {
        Vec::new()
    } else {
        vec![T::zero(); k * rows * g.out_w]
    };
    for b in 0..g.n {
        let xb = &x[b * g.in_c * in_plane..(b + 1) * g.in_c * in_plane];
        let dyb = &dy[b * g.out_c * out_plane..(b + 1) * g.out_c * out_plane];
        if pointwise {
            // dw[co, ci] += dy[co, p] * x[ci, p]
            matmul(g.out_c, out_plane, k, dyb, false, xb, true, &mut dw, true);
            continue;
        }
        let mut r0 = 0;
        while r0 < g.out_h {
            let r1 = (r0 + rows).min(g.out_h);
            let band = (r1 - r0) * g.out_w;
            im2col(xb, g, r0, r1, &mut col[..k * band]);
            T::gemm_raw(
                g.out_c,
                band,
                k,
                T::one(),
                (&dyb[r0 * g.out_w..], out_plane as isize, 1),
                (&col[..k * band], 1, band as isize),
                T::one(),
                (&mut dw, k as isize, 1),
            );
            r0 = r1;
        }
    }
    dw
}

/// Sum of the output gradient over batch and space, per output channel.
pub fn conv2d_backward_bias<T: Float>(dy: &[T], g: &ConvGeom) -> Vec<T> {
    let out_plane = g.out_h * g.out_w;
    let mut db = vec![T::zero(); g.out_c];
    for b in 0..g.n {
        for (c, acc) in db.iter_mut().enumerate() {
            let start = (b * g.out_c + c) * out_plane;
            *acc += dy[start..start + out_plane].iter().copied().sum::<T>();
        }
    }
    db
}

/// 2x2 stride-2 max pooling over `planes` planes of `h x w`. Returns the
/// pooled values and the flat input index each came from; ties resolve to
/// the first element in row-major window order.
pub fn max_pool2_forward<T: Float>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let mut best_idx = base + 2 * y * w + 2 * xo;
                let mut best = x[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * xo + dx;
                    if x[idx] > best {
                        best = x[idx];
                        best_idx = idx;
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    (out, arg)
}

/// Geometry of a square-window average pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeom {
    pub planes: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolGeom {
    /// In-bounds input range along one axis for output index `o`.
    fn span(o: usize, stride: usize, pad: usize, k: usize, extent: usize) -> (usize, usize) {
        let start = (o * stride) as isize - pad as isize;
        let lo = start.max(0) as usize;
        let hi = ((start + k as isize).min(extent as isize)).max(0) as usize;
        (lo, hi.max(lo))
    }
}

/// Average pooling whose divisor is the number of in-bounds taps.
///
/// Separable: window sums along rows first, then along columns.
pub fn avg_pool_forward<T: Float>(x: &[T], g: &PoolGeom) -> Vec<T> {
    let mut out = vec![T::zero(); g.planes * g.out_h * g.out_w];
    let xspans: Vec<(usize, usize)> = (0..g.out_w)
        .map(|o| PoolGeom::span(o, g.stride, g.pad_left, g.k, g.in_w))
        .collect();
    let yspans: Vec<(usize, usize)> = (0..g.out_h)
        .map(|o| PoolGeom::span(o, g.stride, g.pad_top, g.k, g.in_h))
        .collect();
    let mut rows = vec![T::zero(); g.in_h * g.out_w];
    for p in 0..g.planes {
        let plane = &x[p * g.in_h * g.in_w..(p + 1) * g.in_h * g.in_w];
        for y in 0..g.in_h {
            let src = &plane[y * g.in_w..(y + 1) * g.in_w];
            for (ox, &(x0, x1)) in xspans.iter().enumerate() {
                rows[y * g.out_w + ox] = src[x0..x1].iter().copied().sum();
            }
        }
        let dst = &mut out[p * g.out_h * g.out_w..(p + 1) * g.out_h * g.out_w];
        for (oy, &(y0, y1)) in yspans.iter().enumerate() {
            for (ox, &(x0, x1)) in xspans.iter().enumerate() {
                let mut s = T::zero();
                for y in y0..y1 {
                    s += rows[y * g.out_w + ox];
                }
                let count = ((y1 - y0) * (x1 - x0)).max(1);
                dst[oy * g.out_w + ox] = s / T::from_usize(count).unwrap();
            }
        }
    }
    out
}

pub fn avg_pool_backward<T: Float>(dy: &[T], g: &PoolGeom) -> Vec<T> {
    let mut dx = vec![T::zero(); g.planes * g.in_h * g.in_w];
    for p in 0..g.planes {
        let plane = &mut dx[p * g.in_h * g.in_w..(p + 1) * g.in_h * g.in_w];
        for oy in 0..g.out_h {
            let (y0, y1) = PoolGeom::span(oy, g.stride, g.pad_top, g.k, g.in_h);
            for ox in 0..g.out_w {
                let (x0, x1) = PoolGeom::span(ox, g.stride, g.pad_left, g.k, g.in_w);
                let count = ((y1 - y0) * (x1 - x0)).max(1);
                let share = dy[(p * g.out_h + oy) * g.out_w + ox] / T::from_usize(count).unwrap();
                for y in y0..y1 {
                    for v in &mut plane[y * g.in_w + x0..y * g.in_w + x1] {
                        *v += share;
                    }
                }
            }
        }
    }
    dx
}

/// Nearest-neighbour x2 replication of `planes` planes of `h x w`.
pub fn upsample2_forward<T: Float>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            let srow = &src[(y / 2) * w..][..w];
            let drow = &mut dst[y * ow..][..ow];
            for (xo, d) in drow.iter_mut().enumerate() {
                *d = srow[xo / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Float>(dy: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let src = &dy[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for xo in 0..ow {
                dst[(y / 2) * w + xo / 2] += src[y * ow + xo];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(n: usize, ci: usize, h: usize, w: usize, co: usize, k: usize, dil: usize) -> ConvGeom {
        let eff = k + (k - 1) * (dil - 1);
        ConvGeom {
            n,
            in_c: ci,
            in_h: h,
            in_w: w,
            out_c: co,
            kh: k,
            kw: k,
            dilation: dil,
            pad_top: (eff - 1) / 2,
            pad_left: (eff - 1) / 2,
            out_h: h,
            out_w: w,
        }
    }

    #[test]
    fn banded_conv_matches_single_band() {
        // wide enough that the column buffer is split into several bands
        let g = geom(1, 70, 40, 300, 3, 3, 2);
        assert!(g.band_rows() < g.out_h);
        let x: Vec<f64> = (0..70 * 40 * 300usize)
            .map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0)
            .collect();
        let w: Vec<f64> = (0..3 * 70 * 9usize)
            .map(|i| ((i * 31) % 17) as f64 / 8.0 - 1.0)
            .collect();
        let out = conv2d_forward(&x, &w, None, &g);
        // direct evaluation at a handful of positions
        for &(co, y, xx) in &[
            (0usize, 0usize, 0usize),
            (1, 17, 150),
            (2, 39, 299),
            (0, 20, 1),
        ] {
            let mut s = 0.0;
            for c in 0..70 {
                for i in 0..3 {
                    for j in 0..3 {
                        let sy = y as isize + 2 * i as isize - 2;
                        let sx = xx as isize + 2 * j as isize - 2;
                        if sy >= 0 && sy < 40 && sx >= 0 && sx < 300 {
                            s += x[(c * 40 + sy as usize) * 300 + sx as usize]
                                * w[((co * 70 + c) * 3 + i) * 3 + j];
                        }
                    }
                }
            }
            let got = out[(co * 40 + y) * 300 + xx];
            assert!((got - s).abs() < 1e-9, "({co},{y},{xx}): {got} vs {s}");
        }
    }

    #[test]
    fn maxpool_tie_goes_to_first_window_element() {
        let x = vec![5.0f32; 16];
        let (out, arg) = max_pool2_forward(&x, 1, 4, 4);
        assert_eq!(out, vec![5.0; 4]);
        assert_eq!(arg, vec![0, 2, 8, 10]);
    }
}
