//! Simulated acquisition: separable Gaussian blur followed by downsampling,
//! plus the bicubic upsampling baseline.
//!
//! Every stage uses half-sample symmetric extension at the borders
//! (`… c b a | a b c …`), which makes the blur exactly mean-preserving.

use std::fmt;
use std::str::FromStr;

use crate::config::KeyValues;
use crate::deadleaves::asc_normalize;
use crate::error::{Error, Result};
use crate::tensor::{AbundanceMap, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DownsampleMethod {
    Bicubic,
    /// Keep one sample per `factor × factor` cell, at offset `factor / 2`.
    Decimate,
}

impl fmt::Display for DownsampleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DownsampleMethod::Bicubic => "bicubic",
            DownsampleMethod::Decimate => "decimate",
        })
    }
}

impl FromStr for DownsampleMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bicubic" => Ok(DownsampleMethod::Bicubic),
            "decimate" => Ok(DownsampleMethod::Decimate),
            other => Err(format!("unknown downsample method {other:?} (bicubic|decimate)")),
        }
    }
}

/// Point spread function and sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsfConfig {
    /// Gaussian standard deviation in high-resolution pixels.
    pub sigma: f64,
    /// Total kernel width as a multiple of `sigma`.
    pub truncation: f64,
    pub factor: usize,
    pub method: DownsampleMethod,
}

impl Default for PsfConfig {
    fn default() -> Self {
        Self {
            sigma: 4.0,
            truncation: 6.0,
            factor: 4,
            method: DownsampleMethod::Bicubic,
        }
    }
}

impl PsfConfig {
    const KEYS: &'static [&'static str] = &["sigma", "truncation", "factor", "method", "boundary"];

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("psf.sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.truncation > 0.0 && self.truncation.is_finite()) {
            return Err(Error::Config(format!(
                "psf.truncation must be > 0, got {}",
                self.truncation
            )));
        }
        if self.factor < 2 {
            return Err(Error::Config(format!("psf.factor must be >= 2, got {}", self.factor)));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.check_known("psf", Self::KEYS)?;
        if let Some(b) = kv.get_str("psf.boundary") {
            if b != "reflect" {
                return Err(Error::Config(format!("psf.boundary={b}: only reflect is supported")));
            }
        }
        let d = Self::default();
        let cfg = Self {
            sigma: kv.get_or("psf.sigma", d.sigma)?,
            truncation: kv.get_or("psf.truncation", d.truncation)?,
            factor: kv.get_or("psf.factor", d.factor)?,
            method: kv.get_or("psf.method", d.method)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        kv.set("psf.sigma", self.sigma);
        kv.set("psf.truncation", self.truncation);
        kv.set("psf.factor", self.factor);
        kv.set("psf.method", self.method);
        kv.set("psf.boundary", "reflect");
    }
}

/// Maps any integer offset onto `[0, n)` by half-sample symmetric reflection.
#[inline]
pub(crate) fn reflect(idx: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = idx.rem_euclid(period) as usize;
    if m >= n {
        2 * n - 1 - m
    } else {
        m
    }
}

/// Sampled, normalized 1-D Gaussian.
///
/// The width is the smallest odd integer at least `truncation · sigma`
/// (σ = 4, truncation 6 gives 25 taps).
pub fn gaussian_kernel(sigma: f64, truncation: f64) -> Vec<f64> {
    assert!(sigma > 0.0, "sigma must be positive");
    let mut width = (truncation * sigma).ceil().max(1.0) as usize;
    if width.is_multiple_of(2) {
        width += 1;
    }
    let radius = (width / 2) as f64;
    let denom = 2.0 * sigma * sigma;
    let raw: Vec<f64> = (0..width)
        .map(|k| {
            let x = k as f64 - radius;
            (-x * x / denom).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable per-channel convolution with an odd-length kernel, horizontal
/// pass first.
///
/// Each tap is applied as `x_c + Σ k·(x − x_c)` around the centre sample,
/// which equals `Σ k·x` for a normalized kernel but reproduces constant
/// regions bit for bit.
pub fn blur(t: &Tensor3, kernel: &[f64]) -> Tensor3 {
    assert!(kernel.len() % 2 == 1, "kernel length must be odd");
    let (c, h, w) = t.dims();
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; t.len()];
    let mut padded = vec![0.0; w + 2 * r as usize];

    for ch in 0..c {
        let src = t.channel(ch);
        for i in 0..h {
            let row = &src[i * w..(i + 1) * w];
            for (p, slot) in padded.iter_mut().enumerate() {
                *slot = row[reflect(p as isize - r, w)];
            }
            let out = &mut tmp[(ch * h + i) * w..(ch * h + i + 1) * w];
            for (j, o) in out.iter_mut().enumerate() {
                let centre = padded[j + r as usize];
                *o = centre
                    + kernel
                        .iter()
                        .zip(&padded[j..j + kernel.len()])
                        .map(|(k, v)| k * (v - centre))
                        .sum::<f64>();
            }
        }
    }

    let mut out = vec![0.0; t.len()];
    for ch in 0..c {
        let src = &tmp[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for i in 0..h {
            let row = &mut dst[i * w..(i + 1) * w];
            let centre = &src[i * w..(i + 1) * w];
            for (k, &wt) in kernel.iter().enumerate() {
                let si = reflect(i as isize + k as isize - r, h);
                let srow = &src[si * w..(si + 1) * w];
                for ((o, &v), &c0) in row.iter_mut().zip(srow).zip(centre) {
                    *o += wt * (v - c0);
                }
            }
            for (o, &c0) in row.iter_mut().zip(centre) {
                *o += c0;
            }
        }
    }
    Tensor3::from_raw(c, h, w, out)
}

/// Cubic convolution kernel with `a = -0.5`.
#[inline]
fn cubic_weight(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// For each output coordinate: four source indices and their weights.
fn cubic_taps(input: usize, output: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = (d as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let t = src - base;
            let base = base as isize;
            let idx = [-1isize, 0, 1, 2].map(|o| reflect(base + o, input));
            let wts = [cubic_weight(1.0 + t), cubic_weight(t), cubic_weight(1.0 - t), cubic_weight(2.0 - t)];
            (idx, wts)
        })
        .collect()
}

/// Separable bicubic resampling with half-pixel aligned coordinates.
///
/// Like [`blur`], taps are accumulated as offsets from one source sample so
/// constants come through unchanged.
pub fn resample_bicubic(t: &Tensor3, out_h: usize, out_w: usize) -> Result<Tensor3> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Dimension(format!("resample target {out_h}x{out_w} is empty")));
    }
    let (c, h, w) = t.dims();
    let xtaps = cubic_taps(w, out_w);
    let ytaps = cubic_taps(h, out_h);

    let mut tmp = vec![0.0; c * h * out_w];
    for ch in 0..c {
        let src = t.channel(ch);
        for i in 0..h {
            let row = &src[i * w..(i + 1) * w];
            let out = &mut tmp[(ch * h + i) * out_w..(ch * h + i + 1) * out_w];
            for (o, (idx, wts)) in out.iter_mut().zip(&xtaps) {
                let base = row[idx[1]];
                *o = base + (0..4).map(|k| wts[k] * (row[idx[k]] - base)).sum::<f64>();
            }
        }
    }

    let mut out = vec![0.0; c * out_h * out_w];
    for ch in 0..c {
        let src = &tmp[ch * h * out_w..(ch + 1) * h * out_w];
        let dst = &mut out[ch * out_h * out_w..(ch + 1) * out_h * out_w];
        for (i, (idx, wts)) in ytaps.iter().enumerate() {
            let row = &mut dst[i * out_w..(i + 1) * out_w];
            let base = &src[idx[1] * out_w..(idx[1] + 1) * out_w];
            for k in 0..4 {
                let srow = &src[idx[k] * out_w..(idx[k] + 1) * out_w];
                for ((o, &v), &b) in row.iter_mut().zip(srow).zip(base) {
                    *o += wts[k] * (v - b);
                }
            }
            for (o, &b) in row.iter_mut().zip(base) {
                *o += b;
            }
        }
    }
    Ok(Tensor3::from_raw(c, out_h, out_w, out))
}

fn decimate(t: &Tensor3, factor: usize) -> Tensor3 {
    let (c, h, w) = t.dims();
    let (oh, ow) = (h / factor, w / factor);
    let off = factor / 2;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                out.push(t.get(ch, i * factor + off, j * factor + off));
            }
        }
    }
    Tensor3::from_raw(c, oh, ow, out)
}

/// Blur then downsample by `psf.factor`. Height and width must be multiples
/// of the factor.
pub fn degrade_pair(hr: &Tensor3, psf: &PsfConfig) -> Result<Tensor3> {
    psf.validate()?;
    let (_, h, w) = hr.dims();
    if h % psf.factor != 0 || w % psf.factor != 0 {
        return Err(Error::Dimension(format!(
            "{h}x{w} is not divisible by factor {}",
            psf.factor
        )));
    }
    let blurred = blur(hr, &gaussian_kernel(psf.sigma, psf.truncation));
    match psf.method {
        DownsampleMethod::Bicubic => resample_bicubic(&blurred, h / psf.factor, w / psf.factor),
        DownsampleMethod::Decimate => Ok(decimate(&blurred, psf.factor)),
    }
}

/// Clamps at zero and, for normalized maps, restores the per-pixel sum.
fn restore_constraints(t: Tensor3, normalized: bool) -> Result<AbundanceMap> {
    let mut t = t;
    for v in t.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let raw = AbundanceMap::from_parts(t, false);
    if normalized {
        asc_normalize(&raw)
    } else {
        Ok(raw)
    }
}

/// [`degrade_pair`] for abundances: the result is clamped at zero and, if the
/// input was normalized, renormalized so each low-resolution pixel sums to one.
pub fn degrade_abundance(hr: &AbundanceMap, psf: &PsfConfig) -> Result<AbundanceMap> {
    let lr = degrade_pair(hr.tensor(), psf)?;
    restore_constraints(lr, hr.is_normalized())
}

/// Bicubic upscaling by an integer factor.
pub fn bicubic_upsample_baseline(lr: &Tensor3, factor: usize) -> Result<Tensor3> {
    if factor == 0 {
        return Err(Error::Dimension("upsample factor must be >= 1".into()));
    }
    resample_bicubic(lr, lr.height() * factor, lr.width() * factor)
}

/// Bicubic upscaling of abundances, clamped and renormalized.
pub fn bicubic_upsample_abundance(lr: &AbundanceMap, factor: usize) -> Result<AbundanceMap> {
    let up = bicubic_upsample_baseline(lr.tensor(), factor)?;
    restore_constraints(up, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{mpsnr, PeakMode};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(c: usize, h: usize, w: usize, seed: u64) -> Tensor3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor3::from_vec(c, h, w, (0..c * h * w).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-4..8).map(|k| reflect(k, 3)).collect();
        assert_eq!(got, vec![2, 2, 1, 0, 0, 1, 2, 2, 1, 0, 0, 1]);
        assert_eq!(reflect(0, 1), 0);
        assert_eq!(reflect(-7, 1), 0);
    }

    #[test]
    fn kernel_properties() {
        let k = gaussian_kernel(4.0, 6.0);
        assert_eq!(k.len(), 25);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for d in 0..12 {
            assert_eq!(k[d], k[24 - d]);
        }
        assert!(k.iter().all(|&v| v > 0.0));
        let ratio = k[12] / k[0];
        let expected = (144.0f64 / 32.0).exp();
        assert!((ratio / expected - 1.0).abs() < 1e-12, "{ratio} vs {expected}");
        // Odd widths stay as is, even ones round up.
        assert_eq!(gaussian_kernel(1.0, 5.0).len(), 5);
        assert_eq!(gaussian_kernel(1.0, 4.2).len(), 5);
        assert_eq!(gaussian_kernel(0.1, 1.0).len(), 1);
    }

    #[test]
    fn blur_constant_is_fixed_point() {
        for v in [0.3, 1.0 / 6.0, 0.7] {
            let t = Tensor3::new(2, 7, 5, v).unwrap();
            assert_eq!(blur(&t, &gaussian_kernel(4.0, 6.0)), t);
        }
    }

    #[test]
    fn blur_preserves_channel_mean() {
        // Kernel wider than twice the image exercises repeated reflection.
        let t = random(3, 9, 11, 1);
        let b = blur(&t, &gaussian_kernel(4.0, 6.0));
        for c in 0..3 {
            let m0: f64 = t.channel(c).iter().sum::<f64>() / 99.0;
            let m1: f64 = b.channel(c).iter().sum::<f64>() / 99.0;
            assert!((m0 - m1).abs() < 1e-9, "{m0} vs {m1}");
        }
    }

    #[test]
    fn blur_is_linear() {
        let a = random(2, 12, 10, 2);
        let b = random(2, 12, 10, 3);
        let k = gaussian_kernel(1.5, 6.0);
        let combo = Tensor3::from_vec(
            2,
            12,
            10,
            a.data().iter().zip(b.data()).map(|(x, y)| 2.0 * x - 0.5 * y).collect(),
        )
        .unwrap();
        let lhs = blur(&combo, &k);
        let (ba, bb) = (blur(&a, &k), blur(&b, &k));
        for n in 0..lhs.len() {
            let rhs = 2.0 * ba.data()[n] - 0.5 * bb.data()[n];
            assert!((lhs.data()[n] - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn bicubic_identity_and_constants() {
        let t = random(2, 6, 9, 4);
        assert_eq!(resample_bicubic(&t, 6, 9).unwrap(), t);
        let c = Tensor3::new(1, 5, 5, 0.7).unwrap();
        for (h, w) in [(20, 20), (2, 3), (7, 13)] {
            let r = resample_bicubic(&c, h, w).unwrap();
            assert!(r.data().iter().all(|&v| v == 0.7));
        }
        assert!(resample_bicubic(&c, 0, 3).is_err());
    }

    #[test]
    fn bicubic_reproduces_linear_ramp() {
        let (h, w) = (12, 12);
        let mut t = Tensor3::zeros(1, h, w).unwrap();
        for i in 0..h {
            for j in 0..w {
                t.set(0, i, j, 0.3 * i as f64 - 0.2 * j as f64 + 1.0);
            }
        }
        let up = resample_bicubic(&t, 4 * h, 4 * w).unwrap();
        // Source coordinate of output d is (d + 0.5) / 4 - 0.5; stay 2 source
        // pixels away from the border so no tap is reflected.
        for di in 0..4 * h {
            for dj in 0..4 * w {
                let (si, sj) = ((di as f64 + 0.5) / 4.0 - 0.5, (dj as f64 + 0.5) / 4.0 - 0.5);
                if si < 1.0 || sj < 1.0 || si > (h - 3) as f64 || sj > (w - 3) as f64 {
                    continue;
                }
                let expected = 0.3 * si - 0.2 * sj + 1.0;
                assert!((up.get(0, di, dj) - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn degrade_dims() {
        let psf = PsfConfig::default();
        let bad = Tensor3::new(6, 498, 500, 0.1).unwrap();
        assert!(matches!(degrade_pair(&bad, &psf), Err(Error::Dimension(_))));
        // 500 = 4 · 125, so the paper's map size degrades cleanly.
        assert_eq!(degrade_pair(&Tensor3::new(1, 500, 500, 0.5).unwrap(), &psf).unwrap().dims(), (1, 125, 125));
        let good = Tensor3::new(6, 496, 496, 1.0 / 6.0).unwrap();
        let lr = degrade_pair(&good, &psf).unwrap();
        assert_eq!(lr.dims(), (6, 124, 124));
        assert!(lr.data().iter().all(|v| (v - 1.0 / 6.0).abs() < 1e-12));
    }

    #[test]
    fn degrade_constant_abundance_round_trip() {
        let a = AbundanceMap::uniform(4, 32, 32).unwrap();
        for method in [DownsampleMethod::Bicubic, DownsampleMethod::Decimate] {
            let psf = PsfConfig { method, ..PsfConfig::default() };
            let lr = degrade_abundance(&a, &psf).unwrap();
            assert!(lr.is_normalized());
            assert!(lr.tensor().data().iter().all(|&v| v == 0.25));
            let up = bicubic_upsample_abundance(&lr, 4).unwrap();
            assert_eq!(up.tensor(), a.tensor());
        }
    }

    proptest! {
        #[test]
        fn constant_tensor_down_up_is_exact(v in 0.0f64..4.0, hq in 1usize..12, wq in 1usize..12, sigma in 0.5f64..6.0) {
            let t = Tensor3::new(2, 4 * hq, 4 * wq, v).unwrap();
            let psf = PsfConfig { sigma, ..PsfConfig::default() };
            let lr = degrade_pair(&t, &psf).unwrap();
            prop_assert!(lr.data().iter().all(|&x| x == v));
            prop_assert_eq!(bicubic_upsample_baseline(&lr, 4).unwrap(), t);
        }
    }

    #[test]
    fn channel_permutation_commutes() {
        let t = random(3, 16, 16, 5);
        let perm = [2usize, 0, 1];
        let mut permuted = Vec::new();
        for &p in &perm {
            permuted.extend_from_slice(t.channel(p));
        }
        let tp = Tensor3::from_vec(3, 16, 16, permuted).unwrap();
        let psf = PsfConfig::default();
        let (a, b) = (degrade_pair(&t, &psf).unwrap(), degrade_pair(&tp, &psf).unwrap());
        for (k, &p) in perm.iter().enumerate() {
            assert_eq!(b.channel(k), a.channel(p));
        }
        // Determinism.
        assert_eq!(degrade_pair(&t, &psf).unwrap(), a);
    }

    #[test]
    fn smooth_maps_survive_better_than_noise() {
        let psf = PsfConfig::default();
        let noise = random(3, 64, 64, 6);
        let smooth = blur(&random(3, 64, 64, 7), &gaussian_kernel(8.0, 6.0));
        // Stretch the smooth field to the same [0,1] range as the noise.
        let (lo, hi) = smooth
            .data()
            .iter()
            .fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        let smooth = smooth.map(|v| (v - lo) / (hi - lo)).unwrap();
        let score = |t: &Tensor3| {
            let up = bicubic_upsample_baseline(&degrade_pair(t, &psf).unwrap(), 4).unwrap();
            mpsnr(t, &up, PeakMode::Fixed(1.0)).unwrap()
        };
        assert!(score(&smooth) > score(&noise));
    }

    #[test]
    fn psf_config_kv() {
        let kv = KeyValues::parse("psf.sigma=2\npsf.method=decimate").unwrap();
        let cfg = PsfConfig::from_kv(&kv).unwrap();
        assert_eq!(cfg.sigma, 2.0);
        assert_eq!(cfg.factor, 4);
        assert_eq!(cfg.method, DownsampleMethod::Decimate);
        let mut out = KeyValues::new();
        cfg.write_kv(&mut out);
        assert_eq!(PsfConfig::from_kv(&out).unwrap(), cfg);
        assert!(PsfConfig::from_kv(&KeyValues::parse("psf.factor=1").unwrap()).is_err());
        assert!(PsfConfig::from_kv(&KeyValues::parse("psf.sigmaa=1").unwrap()).is_err());
    }
}
