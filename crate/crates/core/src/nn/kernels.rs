//! Raw forward/backward kernels on flat N×C×H×W buffers.
//!
//! These know nothing about the tape; `autograd` records which kernel ran
//! and calls the matching backward. Batch items are processed through
//! [`crate::par`], and every cross-item reduction is done afterwards in
//! item order so results do not depend on scheduling.

use crate::par;
use crate::tensor::Element;

/// Geometry of a dense 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn in_plane(&self) -> usize {
        self.c * self.h * self.w
    }

    fn out_plane(&self) -> usize {
        self.o * self.ho * self.wo
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Element>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let spatial = g.ho * g.wo;
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * spatial..(row + 1) * spatial];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let spatial = g.ho * g.wo;
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * spatial..(row + 1) * spatial];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &src[oy * g.wo..(oy + 1) * g.wo];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Element>(x: &[T], w: &[T], b: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let spatial = g.ho * g.wo;
    let mut out = vec![T::zero(); g.n * g.out_plane()];
    par::for_each_chunk_mut(&mut out, g.out_plane(), |i, y| {
        let xi = &x[i * g.in_plane()..(i + 1) * g.in_plane()];
        if g.is_pointwise() {
            T::gemm(false, false, g.o, g.c, spatial, T::one(), w, xi, T::zero(), y);
        } else {
            let mut cols = vec![T::zero(); g.patch() * spatial];
            im2col(xi, g, &mut cols);
            T::gemm(false, false, g.o, g.patch(), spatial, T::one(), w, &cols, T::zero(), y);
        }
        if let Some(b) = b {
            for (o, chunk) in y.chunks_mut(spatial).enumerate() {
                chunk.iter_mut().for_each(|v| *v = *v + b[o]);
            }
        }
    });
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Vec<T>,
    pub dw: Vec<T>,
    pub db: Vec<T>,
}

pub(crate) fn conv2d_backward<T: Element>(x: &[T], w: &[T], dy: &[T], g: &ConvGeom) -> ConvGrads<T> {
    let spatial = g.ho * g.wo;
    let per_item = par::map_indexed(g.n, |i| {
        let xi = &x[i * g.in_plane()..(i + 1) * g.in_plane()];
        let dyi = &dy[i * g.out_plane()..(i + 1) * g.out_plane()];
        let mut dw = vec![T::zero(); g.o * g.patch()];
        let mut dxi = vec![T::zero(); g.in_plane()];
        if g.is_pointwise() {
            T::gemm(false, true, g.o, spatial, g.c, T::one(), dyi, xi, T::zero(), &mut dw);
            T::gemm(true, false, g.c, g.o, spatial, T::one(), w, dyi, T::zero(), &mut dxi);
        } else {
            let mut cols = vec![T::zero(); g.patch() * spatial];
            im2col(xi, g, &mut cols);
            T::gemm(
                false,
                true,
                g.o,
                spatial,
                g.patch(),
                T::one(),
                dyi,
                &cols,
                T::zero(),
                &mut dw,
            );
            T::gemm(
                true,
                false,
                g.patch(),
                g.o,
                spatial,
                T::one(),
                w,
                dyi,
                T::zero(),
                &mut cols,
            );
            col2im(&cols, g, &mut dxi);
        }
        let db: Vec<T> = dyi
            .chunks(spatial)
            .map(|c| c.iter().fold(T::zero(), |a, &v| a + v))
            .collect();
        (dxi, dw, db)
    });
    let mut dx = Vec::with_capacity(g.n * g.in_plane());
    let mut dw = vec![T::zero(); g.o * g.patch()];
    let mut db = vec![T::zero(); g.o];
    for (dxi, dwi, dbi) in per_item {
        dx.extend_from_slice(&dxi);
        add_into(&mut dw, &dwi);
        add_into(&mut db, &dbi);
    }
    ConvGrads { dx, dw, db }
}

/// Per-channel convolution with a C×1×kh×kw kernel, stride 1.
pub(crate) fn depthwise_forward<T: Element>(x: &[T], w: &[T], b: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let (h, wd, ho, wo) = (g.h, g.w, g.ho, g.wo);
    let mut out = vec![T::zero(); g.n * g.c * ho * wo];
    par::for_each_chunk_mut(&mut out, ho * wo, |plane, y| {
        let c = plane % g.c;
        let src = &x[plane * h * wd..(plane + 1) * h * wd];
        let k = &w[c * g.kh * g.kw..(c + 1) * g.kh * g.kw];
        let bias = b.map_or(T::zero(), |b| b[c]);
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = bias;
                for ki in 0..g.kh {
                    let iy = oy as isize + ki as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kj in 0..g.kw {
                        let ix = ox as isize + kj as isize - g.pad as isize;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        acc = acc + k[ki * g.kw + kj] * src[iy as usize * wd + ix as usize];
                    }
                }
                y[oy * wo + ox] = acc;
            }
        }
    });
    out
}

pub(crate) fn depthwise_backward<T: Element>(x: &[T], w: &[T], dy: &[T], g: &ConvGeom) -> ConvGrads<T> {
    let (h, wd, ho, wo) = (g.h, g.w, g.ho, g.wo);
    let ksz = g.kh * g.kw;
    let per_plane = par::map_indexed(g.n * g.c, |plane| {
        let c = plane % g.c;
        let src = &x[plane * h * wd..(plane + 1) * h * wd];
        let d = &dy[plane * ho * wo..(plane + 1) * ho * wo];
        let k = &w[c * ksz..(c + 1) * ksz];
        let mut dx = vec![T::zero(); h * wd];
        let mut dk = vec![T::zero(); ksz];
        let mut db = T::zero();
        for oy in 0..ho {
            for ox in 0..wo {
                let gval = d[oy * wo + ox];
                db = db + gval;
                for ki in 0..g.kh {
                    let iy = oy as isize + ki as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kj in 0..g.kw {
                        let ix = ox as isize + kj as isize - g.pad as isize;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        let at = iy as usize * wd + ix as usize;
                        dk[ki * g.kw + kj] = dk[ki * g.kw + kj] + gval * src[at];
                        dx[at] = dx[at] + gval * k[ki * g.kw + kj];
                    }
                }
            }
        }
        (dx, dk, db)
    });
    let mut dx = Vec::with_capacity(x.len());
    let mut dw = vec![T::zero(); g.c * ksz];
    let mut db = vec![T::zero(); g.c];
    for (plane, (dxp, dk, dbp)) in per_plane.into_iter().enumerate() {
        let c = plane % g.c;
        dx.extend_from_slice(&dxp);
        add_into(&mut dw[c * ksz..(c + 1) * ksz], &dk);
        db[c] = db[c] + dbp;
    }
    ConvGrads { dx, dw, db }
}

/// Geometry of the 2×2, stride-2 transposed convolution. The weight is
/// laid out `cin × cout × 2 × 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct UpGeom {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
}

pub(crate) fn conv_transpose2x2_forward<T: Element>(x: &[T], w: &[T], b: Option<&[T]>, g: &UpGeom) -> Vec<T> {
    let hw = g.h * g.w;
    let (oh, ow) = (2 * g.h, 2 * g.w);
    let mut out = vec![T::zero(); g.n * g.cout * oh * ow];
    par::for_each_chunk_mut(&mut out, g.cout * oh * ow, |i, y| {
        let xi = &x[i * g.cin * hw..(i + 1) * g.cin * hw];
        let mut cols = vec![T::zero(); g.cout * 4 * hw];
        T::gemm(
            true,
            false,
            g.cout * 4,
            g.cin,
            hw,
            T::one(),
            w,
            xi,
            T::zero(),
            &mut cols,
        );
        for co in 0..g.cout {
            let bias = b.map_or(T::zero(), |b| b[co]);
            for a in 0..2 {
                for bb in 0..2 {
                    let row = &cols[(co * 4 + a * 2 + bb) * hw..(co * 4 + a * 2 + bb + 1) * hw];
                    for iy in 0..g.h {
                        for ix in 0..g.w {
                            y[(co * oh + 2 * iy + a) * ow + 2 * ix + bb] = row[iy * g.w + ix] + bias;
                        }
                    }
                }
            }
        }
    });
    out
}

pub(crate) fn conv_transpose2x2_backward<T: Element>(x: &[T], w: &[T], dy: &[T], g: &UpGeom) -> ConvGrads<T> {
    let hw = g.h * g.w;
    let (oh, ow) = (2 * g.h, 2 * g.w);
    let per_item = par::map_indexed(g.n, |i| {
        let xi = &x[i * g.cin * hw..(i + 1) * g.cin * hw];
        let dyi = &dy[i * g.cout * oh * ow..(i + 1) * g.cout * oh * ow];
        let mut gathered = vec![T::zero(); g.cout * 4 * hw];
        let mut db = vec![T::zero(); g.cout];
        for co in 0..g.cout {
            for a in 0..2 {
                for bb in 0..2 {
                    let row = &mut gathered[(co * 4 + a * 2 + bb) * hw..(co * 4 + a * 2 + bb + 1) * hw];
                    for iy in 0..g.h {
                        for ix in 0..g.w {
                            let v = dyi[(co * oh + 2 * iy + a) * ow + 2 * ix + bb];
                            row[iy * g.w + ix] = v;
                            db[co] = db[co] + v;
                        }
                    }
                }
            }
        }
        let mut dxi = vec![T::zero(); g.cin * hw];
        T::gemm(
            false,
            false,
            g.cin,
            g.cout * 4,
            hw,
            T::one(),
            w,
            &gathered,
            T::zero(),
            &mut dxi,
        );
        let mut dw = vec![T::zero(); g.cin * g.cout * 4];
        T::gemm(
            false,
            true,
            g.cin,
            hw,
            g.cout * 4,
            T::one(),
            xi,
            &gathered,
            T::zero(),
            &mut dw,
        );
        (dxi, dw, db)
    });
    let mut dx = Vec::with_capacity(x.len());
    let mut dw = vec![T::zero(); w.len()];
    let mut db = vec![T::zero(); g.cout];
    for (dxi, dwi, dbi) in per_item {
        dx.extend_from_slice(&dxi);
        add_into(&mut dw, &dwi);
        add_into(&mut db, &dbi);
    }
    ConvGrads { dx, dw, db }
}

/// 2×2 stride-2 max pooling. Returns the pooled values and, per output,
/// the flat input index that won; ties go to the first element in
/// row-major window order.
pub(crate) fn maxpool2_forward<T: Element>(x: &[T], n: usize, c: usize, h: usize, w: usize) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let at = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[at] > x[best] {
                        best = at;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub(crate) struct BatchNormSaved<T> {
    pub y: Vec<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Batch-statistics normalization (biased variance over N·H·W).
pub(crate) fn batchnorm_train_forward<T: Element>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    eps: T,
    (n, c, h, w): (usize, usize, usize, usize),
) -> BatchNormSaved<T> {
    let hw = h * w;
    let count = T::from_f64((n * hw) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for i in 0..n {
            s = x[(i * c + ch) * hw..(i * c + ch + 1) * hw]
                .iter()
                .fold(s, |a, &v| a + v);
        }
        let m = s / count;
        let mut sq = T::zero();
        for i in 0..n {
            sq = x[(i * c + ch) * hw..(i * c + ch + 1) * hw]
                .iter()
                .fold(sq, |a, &v| a + (v - m) * (v - m));
        }
        mean[ch] = m;
        var[ch] = sq / count;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for i in 0..n {
        for ch in 0..c {
            let range = (i * c + ch) * hw..(i * c + ch + 1) * hw;
            for at in range {
                let xh = (x[at] - mean[ch]) * inv_std[ch];
                xhat[at] = xh;
                y[at] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    BatchNormSaved {
        y,
        xhat,
        inv_std,
        mean,
        var,
    }
}

pub(crate) fn batchnorm_train_backward<T: Element>(
    dy: &[T],
    saved_xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let hw = h * w;
    let m = T::from_f64((n * hw) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for i in 0..n {
        for ch in 0..c {
            for at in (i * c + ch) * hw..(i * c + ch + 1) * hw {
                dgamma[ch] = dgamma[ch] + dy[at] * saved_xhat[at];
                dbeta[ch] = dbeta[ch] + dy[at];
            }
        }
    }
    // dx = gamma·inv_std/M · (M·dy − Σdy − x̂·Σ(dy·x̂))
    let mut dx = vec![T::zero(); dy.len()];
    for i in 0..n {
        for ch in 0..c {
            let k = gamma[ch] * inv_std[ch] / m;
            for at in (i * c + ch) * hw..(i * c + ch + 1) * hw {
                dx[at] = k * (m * dy[at] - dbeta[ch] - saved_xhat[at] * dgamma[ch]);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Stable per-element binary cross-entropy on logits:
/// `max(z,0) − z·t + ln(1 + e^{−|z|})`.
pub(crate) fn bce_with_logits_elem<T: Element>(z: T, t: T) -> T {
    z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p()
}

/// Logistic function evaluated without overflow, kept strictly inside (0, 1).
pub(crate) fn sigmoid_elem<T: Element>(x: T) -> T {
    let s = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    let hi = T::one() - T::epsilon() / T::from_f64(2.0);
    s.max(T::min_positive_value()).min(hi)
}

pub(crate) fn add_into<T: Element>(acc: &mut [T], v: &[T]) {
    for (a, &b) in acc.iter_mut().zip(v) {
        *a = *a + b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut out = vec![0.0; g.n * g.o * g.ho * g.wo];
        for n in 0..g.n {
            for o in 0..g.o {
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        let mut acc = 0.0;
                        for c in 0..g.c {
                            for ki in 0..g.kh {
                                for kj in 0..g.kw {
                                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                        continue;
                                    }
                                    acc += w[((o * g.c + c) * g.kh + ki) * g.kw + kj]
                                        * x[((n * g.c + c) * g.h + iy as usize) * g.w + ix as usize];
                                }
                            }
                        }
                        out[((n * g.o + o) * g.ho + oy) * g.wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn im2col_gemm_matches_direct_loops() {
        let g = ConvGeom {
            n: 2,
            c: 3,
            h: 5,
            w: 6,
            o: 4,
            kh: 3,
            kw: 3,
            stride: 2,
            pad: 1,
            ho: 3,
            wo: 3,
        };
        let x: Vec<f64> = (0..g.n * g.c * g.h * g.w)
            .map(|i| ((i * 37) % 11) as f64 - 5.0)
            .collect();
        let w: Vec<f64> = (0..g.o * g.c * 9).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        assert_eq!(conv2d_forward(&x, &w, None, &g), naive_conv(&x, &w, &g));
    }

    #[test]
    fn maxpool_ties_pick_first() {
        let (v, arg) = maxpool2_forward(&[1.0f64, 1.0, 1.0, 1.0], 1, 1, 2, 2);
        assert_eq!(v, vec![1.0]);
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn sigmoid_stays_open_interval() {
        assert!(sigmoid_elem(40.0f32) < 1.0);
        assert!(sigmoid_elem(-200.0f32) > 0.0);
        assert_eq!(sigmoid_elem(0.0f64), 0.5);
    }
}
