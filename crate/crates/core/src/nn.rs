//! Convolution primitives with hand-written backward passes.
//!
//! Feature maps are channel-major `C×H×W` slices. Convolutions lower to a
//! single GEMM through `im2col`; the transposed convolution is the adjoint of
//! a strided convolution, so it reuses the same lowering with `col2im`.

/// `c = op(a)·op(b) + beta·c` on row-major buffers, where `op(a)` is
/// `m×k` and `op(b)` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs size");
    assert_eq!(b.len(), k * n, "gemm: rhs size");
    assert_eq!(c.len(), m * n, "gemm: output size");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_transposed { (1, k) } else { (n, 1) };
    // SAFETY: buffer extents were checked above and the strides address
    // exactly the m×k, k×n and m×n index ranges inside them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Sliding-window geometry of a convolution over a `channels×height×width` map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Geom {
    pub fn new(channels: usize, height: usize, width: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        let out_h = (height + 2 * pad - kernel) / stride + 1;
        let out_w = (width + 2 * pad - kernel) / stride + 1;
        Geom {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_h,
            out_w,
        }
    }

    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    #[inline]
    fn source(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let i = (o * self.stride + k) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < limit).then_some(i as usize)
    }

    /// Unfold `img` into a `rows()×cols()` patch matrix.
    pub fn im2col(&self, img: &[f64], cols: &mut [f64]) {
        debug_assert_eq!(img.len(), self.channels * self.height * self.width);
        debug_assert_eq!(cols.len(), self.rows() * self.cols());
        let ncols = self.cols();
        let k = self.kernel;
        for c in 0..self.channels {
            let plane = &img[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.out_h {
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        match self.source(oy, ky, self.height) {
                            None => line.fill(0.0),
                            Some(iy) => {
                                let src = &plane[iy * self.width..(iy + 1) * self.width];
                                for (ox, v) in line.iter_mut().enumerate() {
                                    *v = match self.source(ox, kx, self.width) {
                                        Some(ix) => src[ix],
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

    /// Adjoint of [`Geom::im2col`]: scatter-add patch columns into `img`.
    pub fn col2im(&self, cols: &[f64], img: &mut [f64]) {
        debug_assert_eq!(img.len(), self.channels * self.height * self.width);
        debug_assert_eq!(cols.len(), self.rows() * self.cols());
        let ncols = self.cols();
        let k = self.kernel;
        for c in 0..self.channels {
            let plane = &mut img[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.out_h {
                        let Some(iy) = self.source(oy, ky, self.height) else {
                            continue;
                        };
                        let line = &src[oy * self.out_w..(oy + 1) * self.out_w];
                        let dst = &mut plane[iy * self.width..(iy + 1) * self.width];
                        for (ox, v) in line.iter().enumerate() {
                            if let Some(ix) = self.source(ox, kx, self.width) {
                                dst[ix] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// A learnable layer: either a zero-padded convolution or a stride-2
/// transposed convolution that exactly doubles the spatial size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LayerKind {
    Conv { kernel: usize, stride: usize },
    /// 3×3 kernel, stride 2, padding 1, output padding 1.
    UpConv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Layer {
    pub kind: LayerKind,
    pub in_c: usize,
    pub out_c: usize,
}

impl Layer {
    pub fn conv(in_c: usize, out_c: usize, kernel: usize, stride: usize) -> Self {
        Layer {
            kind: LayerKind::Conv { kernel, stride },
            in_c,
            out_c,
        }
    }

    pub fn up(in_c: usize, out_c: usize) -> Self {
        Layer {
            kind: LayerKind::UpConv,
            in_c,
            out_c,
        }
    }

    /// Weight tensor shape: `[out, in, k, k]` for convolutions, `[in, out, 3, 3]`
    /// for the transposed convolution.
    pub fn weight_shape(&self) -> [usize; 4] {
        match self.kind {
            LayerKind::Conv { kernel, .. } => [self.out_c, self.in_c, kernel, kernel],
            LayerKind::UpConv => [self.in_c, self.out_c, 3, 3],
        }
    }

    pub fn fan_in(&self) -> usize {
        let [_, _, k, _] = self.weight_shape();
        self.in_c * k * k
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        match self.kind {
            LayerKind::Conv { kernel, stride } => {
                let g = Geom::new(self.in_c, h, w, kernel, stride, kernel / 2);
                (g.out_h, g.out_w)
            }
            LayerKind::UpConv => (2 * h, 2 * w),
        }
    }

    fn up_geom(&self, h: usize, w: usize) -> Geom {
        let g = Geom::new(self.out_c, 2 * h, 2 * w, 3, 2, 1);
        debug_assert_eq!((g.out_h, g.out_w), (h, w));
        g
    }

    pub fn forward(&self, weight: &[f64], bias: &[f64], x: &[f64], h: usize, w: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_c * h * w);
        match self.kind {
            LayerKind::Conv { kernel, stride } => {
                let g = Geom::new(self.in_c, h, w, kernel, stride, kernel / 2);
                let p = g.cols();
                let mut out = vec![0.0; self.out_c * p];
                for (o, chunk) in out.chunks_mut(p).enumerate() {
                    chunk.fill(bias[o]);
                }
                if kernel == 1 && stride == 1 {
                    gemm(self.out_c, self.in_c, p, weight, false, x, false, 1.0, &mut out);
                } else {
                    let mut cols = vec![0.0; g.rows() * p];
                    g.im2col(x, &mut cols);
                    gemm(self.out_c, g.rows(), p, weight, false, &cols, false, 1.0, &mut out);
                }
                out
            }
            LayerKind::UpConv => {
                let g = self.up_geom(h, w);
                let mut cols = vec![0.0; g.rows() * g.cols()];
                gemm(g.rows(), self.in_c, h * w, weight, true, x, false, 0.0, &mut cols);
                let plane = 4 * h * w;
                let mut out = vec![0.0; self.out_c * plane];
                for (o, chunk) in out.chunks_mut(plane).enumerate() {
                    chunk.fill(bias[o]);
                }
                g.col2im(&cols, &mut out);
                out
            }
        }
    }

    /// Accumulate parameter gradients into `dweight`/`dbias` and return the
    /// input gradient when `need_input_grad` is set.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        weight: &[f64],
        x: &[f64],
        h: usize,
        w: usize,
        dout: &[f64],
        dweight: &mut [f64],
        dbias: &mut [f64],
        need_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let (oh, ow) = self.output_size(h, w);
        let p_out = oh * ow;
        debug_assert_eq!(dout.len(), self.out_c * p_out);
        for (o, chunk) in dout.chunks(p_out).enumerate() {
            dbias[o] += chunk.iter().sum::<f64>();
        }
        match self.kind {
            LayerKind::Conv { kernel, stride } => {
                let g = Geom::new(self.in_c, h, w, kernel, stride, kernel / 2);
                let rows = g.rows();
                let pointwise = kernel == 1 && stride == 1;
                let cols_owned;
                let cols: &[f64] = if pointwise {
                    x
                } else {
                    let mut c = vec![0.0; rows * p_out];
                    g.im2col(x, &mut c);
                    cols_owned = c;
                    &cols_owned
                };
                gemm(self.out_c, p_out, rows, dout, false, cols, true, 1.0, dweight);
                need_input_grad.then(|| {
                    let mut dcols = vec![0.0; rows * p_out];
                    gemm(rows, self.out_c, p_out, weight, true, dout, false, 0.0, &mut dcols);
                    if pointwise {
                        dcols
                    } else {
                        let mut dx = vec![0.0; x.len()];
                        g.col2im(&dcols, &mut dx);
                        dx
                    }
                })
            }
            LayerKind::UpConv => {
                let g = self.up_geom(h, w);
                let rows = g.rows();
                let mut dcols = vec![0.0; rows * h * w];
                g.im2col(dout, &mut dcols);
                gemm(self.in_c, h * w, rows, x, false, &dcols, true, 1.0, dweight);
                need_input_grad.then(|| {
                    let mut dx = vec![0.0; self.in_c * h * w];
                    gemm(self.in_c, rows, h * w, weight, false, &dcols, false, 0.0, &mut dx);
                    dx
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    // Direct loop convolution as an independent reference.
    #[allow(clippy::too_many_arguments)]
    fn naive_conv(
        x: &[f64],
        wt: &[f64],
        b: &[f64],
        in_c: usize,
        out_c: usize,
        h: usize,
        w: usize,
        k: usize,
        s: usize,
    ) -> Vec<f64> {
        let p = k / 2;
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (w + 2 * p - k) / s + 1;
        let mut out = vec![0.0; out_c * oh * ow];
        for o in 0..out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[o];
                    for c in 0..in_c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += wt[((o * in_c + c) * k + ky) * k + kx]
                                    * x[(c * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    // Scatter definition of the transposed convolution:
    // out[o, 2i + ky - 1, 2j + kx - 1] += x[c, i, j] · w[c, o, ky, kx].
    fn naive_up(x: &[f64], wt: &[f64], b: &[f64], in_c: usize, out_c: usize, h: usize, w: usize) -> Vec<f64> {
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0; out_c * oh * ow];
        for o in 0..out_c {
            out[o * oh * ow..(o + 1) * oh * ow].fill(b[o]);
        }
        for c in 0..in_c {
            for i in 0..h {
                for j in 0..w {
                    for o in 0..out_c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let y = (2 * i + ky) as isize - 1;
                                let xx = (2 * j + kx) as isize - 1;
                                if y < 0 || xx < 0 || y >= oh as isize || xx >= ow as isize {
                                    continue;
                                }
                                out[(o * oh + y as usize) * ow + xx as usize] +=
                                    x[(c * h + i) * w + j] * wt[((c * out_c + o) * 3 + ky) * 3 + kx];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(k, s, h, w) in &[(3, 1, 5, 6), (3, 2, 8, 8), (3, 2, 7, 4), (1, 1, 4, 3)] {
            let layer = Layer::conv(2, 3, k, s);
            let x = random(2 * h * w, &mut rng);
            let wt = random(3 * 2 * k * k, &mut rng);
            let b = random(3, &mut rng);
            let got = layer.forward(&wt, &b, &x, h, w);
            let want = naive_conv(&x, &wt, &b, 2, 3, h, w, k, s);
            assert_eq!(got.len(), want.len());
            for (g, e) in got.iter().zip(&want) {
                assert!((g - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn upconv_matches_scatter_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = Layer::up(3, 2);
        let (h, w) = (3, 4);
        let x = random(3 * h * w, &mut rng);
        let wt = random(3 * 2 * 9, &mut rng);
        let b = random(2, &mut rng);
        let got = layer.forward(&wt, &b, &x, h, w);
        let want = naive_up(&x, &wt, &b, 3, 2, h, w);
        for (g, e) in got.iter().zip(&want) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Geom::new(2, 6, 5, 3, 2, 1);
        let img = random(2 * 6 * 5, &mut rng);
        let cols = random(g.rows() * g.cols(), &mut rng);
        let mut unfolded = vec![0.0; cols.len()];
        g.im2col(&img, &mut unfolded);
        let mut folded = vec![0.0; img.len()];
        g.col2im(&cols, &mut folded);
        let lhs: f64 = unfolded.iter().zip(&cols).map(|(a, b)| a * b).sum();
        let rhs: f64 = img.iter().zip(&folded).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    // Backward pass against central differences of <dout, forward(·)>.
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for layer in [Layer::conv(2, 3, 3, 2), Layer::conv(2, 3, 1, 1), Layer::up(2, 3)] {
            let (h, w) = (4, 4);
            let x = random(2 * h * w, &mut rng);
            let ws = layer.weight_shape().iter().product();
            let wt = random(ws, &mut rng);
            let b = random(3, &mut rng);
            let out = layer.forward(&wt, &b, &x, h, w);
            let dout = random(out.len(), &mut rng);
            let objective = |wt: &[f64], b: &[f64], x: &[f64]| -> f64 {
                layer.forward(wt, b, x, h, w).iter().zip(&dout).map(|(a, b)| a * b).sum()
            };
            let mut dw = vec![0.0; ws];
            let mut db = vec![0.0; 3];
            let dx = layer.backward(&wt, &x, h, w, &dout, &mut dw, &mut db, true).unwrap();
            let eps = 1e-6;
            for i in 0..ws {
                let (mut p, mut m) = (wt.clone(), wt.clone());
                p[i] += eps;
                m[i] -= eps;
                let fd = (objective(&p, &b, &x) - objective(&m, &b, &x)) / (2.0 * eps);
                assert!((fd - dw[i]).abs() < 1e-7, "{layer:?} weight {i}: {fd} vs {}", dw[i]);
            }
            for i in 0..x.len() {
                let (mut p, mut m) = (x.clone(), x.clone());
                p[i] += eps;
                m[i] -= eps;
                let fd = (objective(&wt, &b, &p) - objective(&wt, &b, &m)) / (2.0 * eps);
                assert!((fd - dx[i]).abs() < 1e-7);
            }
            for i in 0..3 {
                let (mut p, mut m) = (b.clone(), b.clone());
                p[i] += eps;
                m[i] -= eps;
                let fd = (objective(&wt, &p, &x) - objective(&wt, &m, &x)) / (2.0 * eps);
                assert!((fd - db[i]).abs() < 1e-7);
            }
        }
    }
}
