//! Raw compute kernels over row-major slices. Shapes are validated by the
//! tape before any of these run.

/// Geometry of a 2-D convolution over an NCHW batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub r: usize,
    pub s: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(
        (n, c, h, w): (usize, usize, usize, usize),
        (k, r, s): (usize, usize, usize),
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        if stride == 0 || h + 2 * pad < r || w + 2 * pad < s {
            return None;
        }
        let oh = (h + 2 * pad - r) / stride + 1;
        let ow = (w + 2 * pad - s) / stride + 1;
        Some(Self {
            n,
            c,
            h,
            w,
            k,
            r,
            s,
            stride,
            pad,
            oh,
            ow,
        })
    }

    fn patch(&self) -> usize {
        self.c * self.r * self.s
    }

    fn pixels(&self) -> usize {
        self.oh * self.ow
    }

    /// Input coordinate for output coordinate `o` and kernel offset `t`.
    #[inline]
    fn src(&self, o: usize, t: usize, limit: usize) -> Option<usize> {
        let i = (o * self.stride + t) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < limit).then_some(i as usize)
    }
}

pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `da = dout · bᵀ`
pub(crate) fn matmul_grad_lhs(dout: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut da = vec![0.0; m * k];
    for i in 0..m {
        let drow = &dout[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            da[i * k + p] = drow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    da
}

/// `db = aᵀ · dout`
pub(crate) fn matmul_grad_rhs(a: &[f64], dout: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut db = vec![0.0; k * n];
    for i in 0..m {
        let drow = &dout[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &mut db[p * n..(p + 1) * n];
            for (o, d) in brow.iter_mut().zip(drow) {
                *o += av * d;
            }
        }
    }
    db
}

fn im2col(g: &ConvGeom, img: &[f64], col: &mut [f64]) {
    let p = g.pixels();
    for c in 0..g.c {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for r in 0..g.r {
            for s in 0..g.s {
                let row = ((c * g.r + r) * g.s + s) * p;
                for oh in 0..g.oh {
                    let dst = &mut col[row + oh * g.ow..row + (oh + 1) * g.ow];
                    match g.src(oh, r, g.h) {
                        None => dst.fill(0.0),
                        Some(ih) => {
                            for (ow, d) in dst.iter_mut().enumerate() {
                                *d = match g.src(ow, s, g.w) {
                                    Some(iw) => plane[ih * g.w + iw],
                                    None => 0.0,
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add(g: &ConvGeom, col: &[f64], img: &mut [f64]) {
    let p = g.pixels();
    for c in 0..g.c {
        for r in 0..g.r {
            for s in 0..g.s {
                let row = ((c * g.r + r) * g.s + s) * p;
                for oh in 0..g.oh {
                    let Some(ih) = g.src(oh, r, g.h) else { continue };
                    for ow in 0..g.ow {
                        if let Some(iw) = g.src(ow, s, g.w) {
                            img[(c * g.h + ih) * g.w + iw] += col[row + oh * g.ow + ow];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d(g: &ConvGeom, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (q, p) = (g.patch(), g.pixels());
    let mut out = vec![0.0; g.n * g.k * p];
    let mut col = vec![0.0; q * p];
    let img_len = g.c * g.h * g.w;
    for n in 0..g.n {
        im2col(g, &x[n * img_len..(n + 1) * img_len], &mut col);
        let res = matmul(w, &col, g.k, q, p);
        let dst = &mut out[n * g.k * p..(n + 1) * g.k * p];
        dst.copy_from_slice(&res);
        if let Some(b) = bias {
            for (k, bk) in b.iter().enumerate() {
                for v in &mut dst[k * p..(k + 1) * p] {
                    *v += bk;
                }
            }
        }
    }
    out
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Option<Vec<f64>>,
    pub db: Option<Vec<f64>>,
}

pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    (need_dx, need_dw, need_db): (bool, bool, bool),
) -> ConvGrads {
    let (q, p) = (g.patch(), g.pixels());
    let img_len = g.c * g.h * g.w;
    let mut dx = need_dx.then(|| vec![0.0; x.len()]);
    let mut dw = need_dw.then(|| vec![0.0; w.len()]);
    let mut db = need_db.then(|| vec![0.0; g.k]);
    let mut col = vec![0.0; q * p];
    for n in 0..g.n {
        let d = &dout[n * g.k * p..(n + 1) * g.k * p];
        if let Some(db) = db.as_mut() {
            for (k, acc) in db.iter_mut().enumerate() {
                *acc += d[k * p..(k + 1) * p].iter().sum::<f64>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            im2col(g, &x[n * img_len..(n + 1) * img_len], &mut col);
            // dw[k, q] += Σ_p d[k, p] · col[q, p]
            for k in 0..g.k {
                let drow = &d[k * p..(k + 1) * p];
                for qi in 0..q {
                    let crow = &col[qi * p..(qi + 1) * p];
                    dw[k * q + qi] += drow.iter().zip(crow).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        if let Some(dx) = dx.as_mut() {
            // dcol = wᵀ · d
            let dcol = matmul_grad_rhs(w, d, g.k, q, p);
            col2im_add(g, &dcol, &mut dx[n * img_len..(n + 1) * img_len]);
        }
    }
    ConvGrads { dx, dw, db }
}

/// Depthwise convolution: `g.k == g.c`, weights shaped `[C, 1, R, S]`.
pub(crate) fn depthwise(g: &ConvGeom, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let mut out = vec![0.0; g.n * g.c * g.oh * g.ow];
    for n in 0..g.n {
        for c in 0..g.c {
            let plane = &x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
            let ker = &w[c * g.r * g.s..(c + 1) * g.r * g.s];
            let b = bias.map_or(0.0, |b| b[c]);
            let dst = &mut out[(n * g.c + c) * g.oh * g.ow..(n * g.c + c + 1) * g.oh * g.ow];
            for oh in 0..g.oh {
                for ow in 0..g.ow {
                    let mut acc = b;
                    for r in 0..g.r {
                        let Some(ih) = g.src(oh, r, g.h) else { continue };
                        for s in 0..g.s {
                            if let Some(iw) = g.src(ow, s, g.w) {
                                acc += ker[r * g.s + s] * plane[ih * g.w + iw];
                            }
                        }
                    }
                    dst[oh * g.ow + ow] = acc;
                }
            }
        }
    }
    out
}

pub(crate) fn depthwise_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    (need_dx, need_dw, need_db): (bool, bool, bool),
) -> ConvGrads {
    let mut dx = need_dx.then(|| vec![0.0; x.len()]);
    let mut dw = need_dw.then(|| vec![0.0; w.len()]);
    let mut db = need_db.then(|| vec![0.0; g.c]);
    let (hw, ohw, rs) = (g.h * g.w, g.oh * g.ow, g.r * g.s);
    for n in 0..g.n {
        for c in 0..g.c {
            let base = (n * g.c + c) * hw;
            let d = &dout[(n * g.c + c) * ohw..(n * g.c + c + 1) * ohw];
            if let Some(db) = db.as_mut() {
                db[c] += d.iter().sum::<f64>();
            }
            for oh in 0..g.oh {
                for ow in 0..g.ow {
                    let dv = d[oh * g.ow + ow];
                    if dv == 0.0 {
                        continue;
                    }
                    for r in 0..g.r {
                        let Some(ih) = g.src(oh, r, g.h) else { continue };
                        for s in 0..g.s {
                            let Some(iw) = g.src(ow, s, g.w) else { continue };
                            let xi = base + ih * g.w + iw;
                            if let Some(dw) = dw.as_mut() {
                                dw[c * rs + r * g.s + s] += dv * x[xi];
                            }
                            if let Some(dx) = dx.as_mut() {
                                dx[xi] += dv * w[c * rs + r * g.s + s];
                            }
                        }
                    }
                }
            }
        }
    }
    ConvGrads { dx, dw, db }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 7-loop convolution, independent of the im2col path.
    fn conv_naive(g: &ConvGeom, x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.n * g.k * g.oh * g.ow];
        for n in 0..g.n {
            for k in 0..g.k {
                for oh in 0..g.oh {
                    for ow in 0..g.ow {
                        let mut acc = 0.0;
                        for c in 0..g.c {
                            for r in 0..g.r {
                                for s in 0..g.s {
                                    let ih = (oh * g.stride + r) as isize - g.pad as isize;
                                    let iw = (ow * g.stride + s) as isize - g.pad as isize;
                                    if ih < 0 || iw < 0 || ih >= g.h as isize || iw >= g.w as isize {
                                        continue;
                                    }
                                    acc += w[((k * g.c + c) * g.r + r) * g.s + s]
                                        * x[((n * g.c + c) * g.h + ih as usize) * g.w + iw as usize];
                                }
                            }
                        }
                        out[((n * g.k + k) * g.oh + oh) * g.ow + ow] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn im2col_conv_matches_direct_loops() {
        for &(stride, r) in &[(1, 3), (2, 3), (1, 5), (2, 5), (1, 1)] {
            let g = ConvGeom::new((2, 3, 7, 6), (4, r, r), stride, r / 2).unwrap();
            let x: Vec<f64> = (0..2 * 3 * 7 * 6).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
            let w: Vec<f64> = (0..4 * 3 * r * r).map(|i| ((i * 13 % 7) as f64) * 0.25 - 0.5).collect();
            let a = conv2d(&g, &x, &w, None);
            let b = conv_naive(&g, &x, &w);
            assert_eq!(a.len(), b.len());
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12, "stride {stride} kernel {r}");
            }
        }
    }

    #[test]
    fn same_padding_preserves_spatial_dims() {
        for r in [1, 3, 5] {
            let g = ConvGeom::new((1, 1, 8, 8), (1, r, r), 1, r / 2).unwrap();
            assert_eq!((g.oh, g.ow), (8, 8));
        }
        let g = ConvGeom::new((1, 1, 8, 8), (1, 3, 3), 2, 1).unwrap();
        assert_eq!((g.oh, g.ow), (4, 4));
    }

    #[test]
    fn matmul_small() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        assert_eq!(matmul(&a, &b, 2, 2, 2), vec![19.0, 22.0, 43.0, 50.0]);
    }
}
