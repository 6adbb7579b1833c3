//! Differentiable primitives of the super-resolution network.
//!
//! Activations are stored channel-major over a whole batch: element
//! `(c, b, i, j)` of a `C × B × H × W` feature lives at
//! `((c·B + b)·H + i)·W + j`. With this layout a channel concatenation is a
//! plain append and a convolution over the batch is a single matrix product.

use crate::error::{Error, Result};

/// Spatial extent of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geom {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
}

impl Geom {
    pub fn new(batch: usize, height: usize, width: usize) -> Self {
        Self { batch, height, width }
    }

    /// Elements per channel.
    pub fn plane(&self) -> usize {
        self.batch * self.height * self.width
    }

    pub fn scaled(&self, factor: usize) -> Self {
        Self::new(self.batch, self.height * factor, self.width * factor)
    }
}

/// A batch of feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub channels: usize,
    pub geom: Geom,
    pub data: Vec<f64>,
}

impl Feature {
    pub fn zeros(channels: usize, geom: Geom) -> Self {
        Self {
            channels,
            geom,
            data: vec![0.0; channels * geom.plane()],
        }
    }

    pub fn from_vec(channels: usize, geom: Geom, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * geom.plane() {
            return Err(Error::Dimension(format!(
                "feature data length {} does not match {channels} x {geom:?}",
                data.len()
            )));
        }
        Ok(Self { channels, geom, data })
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.geom.plane();
        &self.data[c * n..(c + 1) * n]
    }
}

/// `C = A·B + beta·C` on row-major buffers; `ta`/`tb` read A/B transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches given
    // these row/column strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Borrowed convolution parameters. `weight` is `out × in × k × k`.
#[derive(Debug, Clone, Copy)]
pub struct ConvRef<'a> {
    pub weight: &'a [f64],
    pub bias: &'a [f64],
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

impl ConvRef<'_> {
    fn check(&self, input_len: usize, geom: Geom) -> Result<()> {
        if self.kernel != 1 && self.kernel != 3 {
            return Err(Error::Dimension(format!("unsupported kernel size {}", self.kernel)));
        }
        if self.weight.len() != self.out_ch * self.in_ch * self.kernel * self.kernel
            || self.bias.len() != self.out_ch
        {
            return Err(Error::Dimension("convolution parameter shape mismatch".into()));
        }
        if input_len != self.in_ch * geom.plane() {
            return Err(Error::Dimension(format!(
                "convolution expects {} input channels, got {} values for {geom:?}",
                self.in_ch, input_len
            )));
        }
        Ok(())
    }
}

/// Unfolds 3×3 zero-padded neighbourhoods: row `(c·3 + ky)·3 + kx`, column
/// `(b·H + i)·W + j`.
fn im2col3(x: &[f64], in_ch: usize, g: Geom, cols: &mut [f64]) {
    let (h, w) = (g.height, g.width);
    let plane = g.plane();
    cols.fill(0.0);
    for c in 0..in_ch {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((c * 3 + ky) * 3 + kx) * plane..][..plane];
                for b in 0..g.batch {
                    let src = &x[(c * g.batch + b) * h * w..][..h * w];
                    for i in 0..h {
                        let si = i as isize + ky as isize - 1;
                        if si < 0 || si >= h as isize {
                            continue;
                        }
                        let srow = &src[si as usize * w..][..w];
                        let drow = &mut row[(b * h + i) * w..][..w];
                        match kx {
                            0 => drow[1..].copy_from_slice(&srow[..w - 1]),
                            1 => drow.copy_from_slice(srow),
                            _ => drow[..w - 1].copy_from_slice(&srow[1..]),
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col3`]: accumulates columns back into `dx`.
fn col2im3(cols: &[f64], in_ch: usize, g: Geom, dx: &mut [f64]) {
    let (h, w) = (g.height, g.width);
    let plane = g.plane();
    for c in 0..in_ch {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((c * 3 + ky) * 3 + kx) * plane..][..plane];
                for b in 0..g.batch {
                    let dst = &mut dx[(c * g.batch + b) * h * w..][..h * w];
                    for i in 0..h {
                        let si = i as isize + ky as isize - 1;
                        if si < 0 || si >= h as isize {
                            continue;
                        }
                        let srow = &row[(b * h + i) * w..][..w];
                        let drow = &mut dst[si as usize * w..][..w];
                        let (d, s) = match kx {
                            0 => (&mut drow[..w - 1], &srow[1..]),
                            1 => (&mut drow[..], srow),
                            _ => (&mut drow[1..], &srow[..w - 1]),
                        };
                        for (o, v) in d.iter_mut().zip(s) {
                            *o += v;
                        }
                    }
                }
            }
        }
    }
}

/// Same-padded cross-correlation (zero padding), returning `out_ch` channels.
pub fn conv2d_forward(x: &[f64], geom: Geom, conv: ConvRef<'_>) -> Result<Vec<f64>> {
    conv.check(x.len(), geom)?;
    let plane = geom.plane();
    let mut y = vec![0.0; conv.out_ch * plane];
    for (o, chunk) in y.chunks_exact_mut(plane).enumerate() {
        chunk.fill(conv.bias[o]);
    }
    let kk = conv.in_ch * conv.kernel * conv.kernel;
    if conv.kernel == 1 {
        gemm(conv.out_ch, kk, plane, conv.weight, false, x, false, 1.0, &mut y);
    } else {
        let mut cols = vec![0.0; kk * plane];
        im2col3(x, conv.in_ch, geom, &mut cols);
        gemm(conv.out_ch, kk, plane, conv.weight, false, &cols, false, 1.0, &mut y);
    }
    Ok(y)
}

/// Backward pass of [`conv2d_forward`]. Gradients are *accumulated* into
/// `dweight`, `dbias` and, when given, `dx`.
pub fn conv2d_backward(
    x: &[f64],
    geom: Geom,
    conv: ConvRef<'_>,
    dy: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    dx: Option<&mut [f64]>,
) -> Result<()> {
    conv.check(x.len(), geom)?;
    let plane = geom.plane();
    if dy.len() != conv.out_ch * plane || dweight.len() != conv.weight.len() || dbias.len() != conv.out_ch {
        return Err(Error::Dimension("convolution gradient shape mismatch".into()));
    }
    for (o, g) in dy.chunks_exact(plane).enumerate() {
        dbias[o] += g.iter().sum::<f64>();
    }
    let kk = conv.in_ch * conv.kernel * conv.kernel;
    if conv.kernel == 1 {
        gemm(conv.out_ch, plane, kk, dy, false, x, true, 1.0, dweight);
        if let Some(dx) = dx {
            gemm(kk, conv.out_ch, plane, conv.weight, true, dy, false, 1.0, dx);
        }
    } else {
        let mut cols = vec![0.0; kk * plane];
        im2col3(x, conv.in_ch, geom, &mut cols);
        gemm(conv.out_ch, plane, kk, dy, false, &cols, true, 1.0, dweight);
        if let Some(dx) = dx {
            gemm(kk, conv.out_ch, plane, conv.weight, true, dy, false, 0.0, &mut cols);
            col2im3(&cols, conv.in_ch, geom, dx);
        }
    }
    Ok(())
}

pub fn relu_forward(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Masks `dy` in place by `y > 0`, where `y` is the ReLU output.
pub fn relu_backward(y: &[f64], dy: &mut [f64]) {
    for (g, &v) in dy.iter_mut().zip(y) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Stacks `b` after `a` along the channel axis.
pub fn concat_channels(a: &Feature, b: &Feature) -> Result<Feature> {
    if a.geom != b.geom {
        return Err(Error::Dimension(format!("concat geometry {:?} vs {:?}", a.geom, b.geom)));
    }
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Ok(Feature {
        channels: a.channels + b.channels,
        geom: a.geom,
        data,
    })
}

/// Sub-pixel upsampling `(4C, H, W) → (C, 2H, 2W)`.
///
/// Input channel `4c + 2·dy + dx` becomes the sub-pixel at offset `(dy, dx)`
/// of output channel `c`: `out[c][2i+dy][2j+dx] = in[4c+2dy+dx][i][j]`.
pub fn pixel_shuffle_x2(x: &Feature) -> Result<Feature> {
    if !x.channels.is_multiple_of(4) {
        return Err(Error::Dimension(format!(
            "pixel shuffle needs a multiple of 4 channels, got {}",
            x.channels
        )));
    }
    let g = x.geom;
    let og = g.scaled(2);
    let c_out = x.channels / 4;
    let mut out = vec![0.0; x.data.len()];
    for c in 0..c_out {
        for sub in 0..4 {
            let (dy, dx) = (sub / 2, sub % 2);
            let src = x.channel(4 * c + sub);
            for b in 0..g.batch {
                for i in 0..g.height {
                    let srow = &src[(b * g.height + i) * g.width..][..g.width];
                    let orow = (((c * g.batch + b) * og.height) + 2 * i + dy) * og.width;
                    for (j, &v) in srow.iter().enumerate() {
                        out[orow + 2 * j + dx] = v;
                    }
                }
            }
        }
    }
    Ok(Feature {
        channels: c_out,
        geom: og,
        data: out,
    })
}

/// Exact inverse of [`pixel_shuffle_x2`]; also its backward pass.
pub fn pixel_unshuffle_x2(x: &Feature) -> Result<Feature> {
    let og = x.geom;
    if !og.height.is_multiple_of(2) || !og.width.is_multiple_of(2) {
        return Err(Error::Dimension("pixel unshuffle needs even spatial dims".into()));
    }
    let g = Geom::new(og.batch, og.height / 2, og.width / 2);
    let mut out = vec![0.0; x.data.len()];
    for c in 0..x.channels {
        for sub in 0..4 {
            let (dy, dx) = (sub / 2, sub % 2);
            let dst = &mut out[(4 * c + sub) * g.plane()..][..g.plane()];
            for b in 0..g.batch {
                for i in 0..g.height {
                    let irow = (((c * g.batch + b) * og.height) + 2 * i + dy) * og.width;
                    let drow = &mut dst[(b * g.height + i) * g.width..][..g.width];
                    for (j, d) in drow.iter_mut().enumerate() {
                        *d = x.data[irow + 2 * j + dx];
                    }
                }
            }
        }
    }
    Ok(Feature {
        channels: x.channels * 4,
        geom: g,
        data: out,
    })
}

/// Softmax across channels at every pixel, max-subtracted.
pub fn softmax_channels(x: &Feature) -> Feature {
    let plane = x.geom.plane();
    let c = x.channels;
    let mut out = vec![0.0; x.data.len()];
    for p in 0..plane {
        let max = (0..c).map(|k| x.data[k * plane + p]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for k in 0..c {
            let e = (x.data[k * plane + p] - max).exp();
            out[k * plane + p] = e;
            sum += e;
        }
        for k in 0..c {
            out[k * plane + p] /= sum;
        }
    }
    Feature {
        channels: c,
        geom: x.geom,
        data: out,
    }
}

/// Gradient through the softmax given its output `y`:
/// `dx = y ⊙ (dy − Σ_k y_k dy_k)`.
pub fn softmax_channels_backward(y: &Feature, dy: &[f64]) -> Vec<f64> {
    let plane = y.geom.plane();
    let c = y.channels;
    let mut dx = vec![0.0; y.data.len()];
    for p in 0..plane {
        let dot: f64 = (0..c).map(|k| y.data[k * plane + p] * dy[k * plane + p]).sum();
        for k in 0..c {
            let idx = k * plane + p;
            dx[idx] = y.data[idx] * (dy[idx] - dot);
        }
    }
    dx
}

/// Mean absolute error and its (sub)gradient with respect to `pred`; the
/// subgradient at a tie is 0.
pub fn l1_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Dimension(format!(
            "loss operands differ: {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    let inv = 1.0 / pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d.abs();
            if d > 0.0 {
                inv
            } else if d < 0.0 {
                -inv
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Direct 7-loop cross-correlation used as an oracle.
    fn naive_conv(x: &[f64], g: Geom, w: &[f64], bias: &[f64], cin: usize, cout: usize, k: usize) -> Vec<f64> {
        let pad = (k / 2) as isize;
        let mut y = vec![0.0; cout * g.plane()];
        for o in 0..cout {
            for b in 0..g.batch {
                for i in 0..g.height {
                    for j in 0..g.width {
                        let mut acc = bias[o];
                        for c in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let si = i as isize + ky as isize - pad;
                                    let sj = j as isize + kx as isize - pad;
                                    if si < 0 || sj < 0 || si >= g.height as isize || sj >= g.width as isize {
                                        continue;
                                    }
                                    acc += w[((o * cin + c) * k + ky) * k + kx]
                                        * x[((c * g.batch + b) * g.height + si as usize) * g.width + sj as usize];
                                }
                            }
                        }
                        y[((o * g.batch + b) * g.height + i) * g.width + j] = acc;
                    }
                }
            }
        }
        y
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn conv_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Geom::new(2, 5, 4);
        for k in [1, 3] {
            let (cin, cout) = (3, 2);
            let x = rand_vec(&mut rng, cin * g.plane());
            let w = rand_vec(&mut rng, cout * cin * k * k);
            let b = rand_vec(&mut rng, cout);
            let conv = ConvRef { weight: &w, bias: &b, in_ch: cin, out_ch: cout, kernel: k };
            let y = conv2d_forward(&x, g, conv).unwrap();
            let want = naive_conv(&x, g, &w, &b, cin, cout, k);
            for (a, e) in y.iter().zip(&want) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Geom::new(1, 4, 4);
        let x = rand_vec(&mut rng, 2 * g.plane());
        let w = vec![1.0, 0.0, 0.0, 1.0];
        let conv = ConvRef { weight: &w, bias: &[0.0, 0.0], in_ch: 2, out_ch: 2, kernel: 1 };
        assert_eq!(conv2d_forward(&x, g, conv).unwrap(), x);
        let bad = ConvRef { in_ch: 3, ..conv };
        assert!(conv2d_forward(&x, g, bad).is_err());
    }

    #[test]
    fn bias_gradient_of_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Geom::new(1, 5, 6);
        let x = rand_vec(&mut rng, 2 * g.plane());
        let w = rand_vec(&mut rng, 3 * 2 * 9);
        let b = vec![0.0; 3];
        let conv = ConvRef { weight: &w, bias: &b, in_ch: 2, out_ch: 3, kernel: 3 };
        let dy = vec![1.0; 3 * g.plane()];
        let (mut dw, mut db) = (vec![0.0; w.len()], vec![0.0; 3]);
        conv2d_backward(&x, g, conv, &dy, &mut dw, &mut db, None).unwrap();
        assert_eq!(db, vec![30.0; 3]);
    }

    /// Central differences of `Σ r ⊙ f(·)` against the analytic backward pass.
    fn check_conv_gradients(k: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Geom::new(1, 5, 5);
        let (cin, cout) = (2, 3);
        let x = rand_vec(&mut rng, cin * g.plane());
        let w = rand_vec(&mut rng, cout * cin * k * k);
        let b = rand_vec(&mut rng, cout);
        let r = rand_vec(&mut rng, cout * g.plane());
        let objective = |x: &[f64], w: &[f64], b: &[f64]| -> f64 {
            let conv = ConvRef { weight: w, bias: b, in_ch: cin, out_ch: cout, kernel: k };
            conv2d_forward(x, g, conv).unwrap().iter().zip(&r).map(|(y, r)| y * r).sum()
        };
        let conv = ConvRef { weight: &w, bias: &b, in_ch: cin, out_ch: cout, kernel: k };
        let (mut dw, mut db, mut dx) = (vec![0.0; w.len()], vec![0.0; cout], vec![0.0; x.len()]);
        conv2d_backward(&x, g, conv, &r, &mut dw, &mut db, Some(&mut dx)).unwrap();

        let h = 1e-4;
        for n in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[n] += h;
            xm[n] -= h;
            let fd = (objective(&xp, &w, &b) - objective(&xm, &w, &b)) / (2.0 * h);
            assert!(rel_err(fd, dx[n]) < 1e-4, "dx[{n}] {fd} vs {}", dx[n]);
        }
        for n in 0..w.len() {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[n] += h;
            wm[n] -= h;
            let fd = (objective(&x, &wp, &b) - objective(&x, &wm, &b)) / (2.0 * h);
            assert!(rel_err(fd, dw[n]) < 1e-4, "dw[{n}] {fd} vs {}", dw[n]);
        }
        for n in 0..b.len() {
            let (mut bp, mut bm) = (b.clone(), b.clone());
            bp[n] += h;
            bm[n] -= h;
            let fd = (objective(&x, &w, &bp) - objective(&x, &w, &bm)) / (2.0 * h);
            assert!(rel_err(fd, db[n]) < 1e-4);
        }
    }

    #[test]
    fn conv3_gradients_match_finite_differences() {
        check_conv_gradients(3, 3);
    }

    #[test]
    fn conv1_gradients_match_finite_differences() {
        check_conv_gradients(1, 4);
    }

    #[test]
    fn relu_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = rand_vec(&mut rng, 50).into_iter().map(|v| if v.abs() < 0.01 { 0.5 } else { v }).collect();
        let r = rand_vec(&mut rng, 50);
        let mut y = x.clone();
        relu_forward(&mut y);
        let mut g = r.clone();
        relu_backward(&y, &mut g);
        let f = |x: &[f64]| {
            let mut y = x.to_vec();
            relu_forward(&mut y);
            y.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
        };
        for n in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[n] += 1e-4;
            m[n] -= 1e-4;
            let fd = (f(&p) - f(&m)) / 2e-4;
            assert!((fd - g[n]).abs() <= 1e-4 * fd.abs().max(1e-6) + 1e-10);
        }
    }

    #[test]
    fn shuffle_layout_and_inverse() {
        let g = Geom::new(2, 2, 3);
        let x = Feature::from_vec(8, g, (0..8 * g.plane()).map(|v| v as f64).collect()).unwrap();
        let y = pixel_shuffle_x2(&x).unwrap();
        assert_eq!((y.channels, y.geom), (2, Geom::new(2, 4, 6)));
        // out[c=1][b=1][2·1+1][2·2+0] = in[4+2+0][b=1][1][2]
        let want = x.data[((6 * 2 + 1) * 2 + 1) * 3 + 2];
        assert_eq!(y.data[((2 + 1) * 4 + 3) * 6 + 4], want);
        assert_eq!(pixel_unshuffle_x2(&y).unwrap(), x);
        let bad = Feature::zeros(6, g);
        assert!(matches!(pixel_shuffle_x2(&bad), Err(Error::Dimension(_))));
    }

    #[test]
    fn shuffle_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = Geom::new(1, 3, 4);
        let x = Feature::from_vec(8, g, rand_vec(&mut rng, 8 * g.plane())).unwrap();
        let r = Feature::from_vec(2, g.scaled(2), rand_vec(&mut rng, 8 * g.plane())).unwrap();
        // <shuffle(x), r> = <x, unshuffle(r)>
        let lhs: f64 = pixel_shuffle_x2(&x).unwrap().data.iter().zip(&r.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&pixel_unshuffle_x2(&r).unwrap().data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn softmax_properties_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = Geom::new(2, 3, 3);
        let x = Feature::from_vec(4, g, rand_vec(&mut rng, 4 * g.plane()).iter().map(|v| 3.0 * v).collect()).unwrap();
        let y = softmax_channels(&x);
        for p in 0..g.plane() {
            let s: f64 = (0..4).map(|c| y.channel(c)[p]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(y.data.iter().all(|&v| v > 0.0 && v < 1.0));
        // Large logits stay finite.
        let big = Feature::from_vec(2, Geom::new(1, 1, 1), vec![1000.0, -1000.0]).unwrap();
        assert_eq!(softmax_channels(&big).data, vec![1.0, 0.0]);

        let r = rand_vec(&mut rng, x.data.len());
        let dx = softmax_channels_backward(&y, &r);
        let f = |d: &[f64]| {
            let f = Feature::from_vec(4, g, d.to_vec()).unwrap();
            softmax_channels(&f).data.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
        };
        for n in 0..x.data.len() {
            let (mut p, mut m) = (x.data.clone(), x.data.clone());
            p[n] += 1e-4;
            m[n] -= 1e-4;
            let fd = (f(&p) - f(&m)) / 2e-4;
            assert!(rel_err(fd, dx[n]) < 1e-4, "{fd} vs {}", dx[n]);
        }
    }

    #[test]
    fn concat_appends_channels() {
        let g = Geom::new(2, 2, 2);
        let a = Feature::from_vec(1, g, vec![1.0; 8]).unwrap();
        let b = Feature::from_vec(2, g, vec![2.0; 16]).unwrap();
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.channels, 3);
        assert_eq!(c.channel(0), a.channel(0));
        assert_eq!(c.channel(2), b.channel(1));
        assert!(concat_channels(&a, &Feature::zeros(1, Geom::new(1, 2, 2))).is_err());
    }

    #[test]
    fn l1_examples() {
        let t = vec![0.3, -0.2, 1.0, 0.0];
        let (loss, grad) = l1_loss(&t, &t).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
        let p: Vec<f64> = t.iter().map(|v| v + 0.5).collect();
        let (loss, grad) = l1_loss(&p, &t).unwrap();
        assert!((loss - 0.5).abs() < 1e-15);
        assert!(grad.iter().all(|&g| g == 0.25));
        assert_eq!(l1_loss(&t, &p).unwrap().0, loss);
        assert!(l1_loss(&t, &t[..2]).is_err());
    }
}
