//! Image quality metrics: band-averaged PSNR, spectral angle (SAM) and ERGAS.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Reported PSNR for bands with zero error.
pub const PSNR_CAP_DB: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PeakMode {
    Fixed(f64),
    /// Use the maximum of each reference band.
    PerBandMax,
}

impl fmt::Display for PeakMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PeakMode::Fixed(v) => write!(f, "fixed:{v}"),
            PeakMode::PerBandMax => f.write_str("per-band-max"),
        }
    }
}

impl FromStr for PeakMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "per-band-max" {
            return Ok(PeakMode::PerBandMax);
        }
        let v = s.strip_prefix("fixed:").unwrap_or(s);
        match v.parse::<f64>() {
            Ok(p) if p > 0.0 && p.is_finite() => Ok(PeakMode::Fixed(p)),
            _ => Err(format!("bad peak {s:?} (fixed:<value>|per-band-max)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsConfig {
    pub peak: PeakMode,
    /// Resolution ratio used by ERGAS; 1/factor.
    pub ratio: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            peak: PeakMode::Fixed(1.0),
            ratio: 0.25,
        }
    }
}

impl MetricsConfig {
    /// Reads `metrics.peak` and `metrics.ratio`.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.check_known("metrics", &["peak", "ratio"])?;
        let d = Self::default();
        let cfg = Self {
            peak: kv.get_or("metrics.peak", d.peak)?,
            ratio: kv.get_or("metrics.ratio", d.ratio)?,
        };
        if !(cfg.ratio > 0.0 && cfg.ratio.is_finite()) {
            return Err(Error::Config(format!("metrics.ratio must be positive, got {}", cfg.ratio)));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mpsnr: f64,
    /// Degrees.
    pub msam: f64,
    pub mergas: f64,
    pub per_band_psnr: Vec<f64>,
    pub ratio: f64,
}

fn check_same(a: &Tensor3, b: &Tensor3) -> Result<()> {
    a.same_dims(b)
}

/// `10·log10(peak² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr_band(reference: &[f64], estimate: &[f64], peak: f64) -> Result<f64> {
    if reference.len() != estimate.len() || reference.is_empty() {
        return Err(Error::Dimension(format!(
            "band sizes differ: {} vs {}",
            reference.len(),
            estimate.len()
        )));
    }
    if !(peak > 0.0) {
        return Err(Error::Metric(format!("peak must be positive, got {peak}")));
    }
    let mse = reference
        .iter()
        .zip(estimate)
        .map(|(r, e)| (r - e) * (r - e))
        .sum::<f64>()
        / reference.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

fn band_peak(band: &[f64], peak: PeakMode) -> f64 {
    match peak {
        PeakMode::Fixed(p) => p,
        PeakMode::PerBandMax => band.iter().copied().fold(f64::MIN, f64::max),
    }
}

pub fn per_band_psnr(reference: &Tensor3, estimate: &Tensor3, peak: PeakMode) -> Result<Vec<f64>> {
    check_same(reference, estimate)?;
    (0..reference.channels())
        .map(|c| {
            let r = reference.channel(c);
            psnr_band(r, estimate.channel(c), band_peak(r, peak))
        })
        .collect()
}

/// Mean of per-band PSNR.
pub fn mpsnr(reference: &Tensor3, estimate: &Tensor3, peak: PeakMode) -> Result<f64> {
    let bands = per_band_psnr(reference, estimate, peak)?;
    Ok(bands.iter().sum::<f64>() / bands.len() as f64)
}

/// Mean per-pixel spectral angle in degrees.
pub fn sam_mean(reference: &Tensor3, estimate: &Tensor3) -> Result<f64> {
    check_same(reference, estimate)?;
    let (c, h, w) = reference.dims();
    let plane = h * w;
    let (r, e) = (reference.data(), estimate.data());
    let mut total = 0.0;
    for p in 0..plane {
        let (mut nr, mut ne) = (0.0, 0.0);
        for b in 0..c {
            let (x, y) = (r[b * plane + p], e[b * plane + p]);
            nr += x * x;
            ne += y * y;
        }
        if nr == 0.0 || ne == 0.0 {
            let which = if nr == 0.0 { "reference" } else { "estimate" };
            return Err(Error::Metric(format!(
                "zero {which} spectrum at pixel ({}, {})",
                p / w,
                p % w
            )));
        }
        // Half-angle form: well conditioned near 0 and exact for equal spectra.
        let (nr, ne) = (nr.sqrt(), ne.sqrt());
        let (mut diff, mut sum) = (0.0, 0.0);
        for b in 0..c {
            let (x, y) = (r[b * plane + p] / nr, e[b * plane + p] / ne);
            diff += (x - y) * (x - y);
            sum += (x + y) * (x + y);
        }
        total += 2.0 * diff.sqrt().atan2(sum.sqrt());
    }
    Ok((total / plane as f64).to_degrees())
}

/// `100 · ratio · sqrt(mean_l (RMSE_l / μ_l)²)`.
pub fn ergas(reference: &Tensor3, estimate: &Tensor3, ratio: f64) -> Result<f64> {
    check_same(reference, estimate)?;
    if !(ratio > 0.0) {
        return Err(Error::Metric(format!("ERGAS ratio must be positive, got {ratio}")));
    }
    let bands = reference.channels();
    let n = reference.plane_len() as f64;
    let mut acc = 0.0;
    for b in 0..bands {
        let (r, e) = (reference.channel(b), estimate.channel(b));
        let mean = r.iter().sum::<f64>() / n;
        if mean == 0.0 {
            return Err(Error::Metric(format!("reference band {b} has zero mean")));
        }
        let mse = r.iter().zip(e).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
        acc += mse / (mean * mean);
    }
    Ok(100.0 * ratio * (acc / bands as f64).sqrt())
}

pub fn evaluate(reference: &Tensor3, estimate: &Tensor3, cfg: &MetricsConfig) -> Result<MetricsReport> {
    let per_band = per_band_psnr(reference, estimate, cfg.peak)?;
    Ok(MetricsReport {
        mpsnr: per_band.iter().sum::<f64>() / per_band.len() as f64,
        msam: sam_mean(reference, estimate)?,
        mergas: ergas(reference, estimate, cfg.ratio)?,
        per_band_psnr: per_band,
        ratio: cfg.ratio,
    })
}

impl MetricsReport {
    /// `metric,value` CSV with one row per scalar then one per band.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("mpsnr,{}\nmsam,{}\nmergas,{}\n", self.mpsnr, self.msam, self.mergas));
        for (l, v) in self.per_band_psnr.iter().enumerate() {
            out.push_str(&format!("psnr_band_{l},{v}\n"));
        }
        out
    }

    /// Parses [`MetricsReport::to_csv`] output. The ratio is not part of the
    /// CSV and is supplied by the caller.
    pub fn from_csv(text: &str, ratio: f64) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("metric,value") {
            return Err(Error::Config("report CSV must start with metric,value".into()));
        }
        let mut report = MetricsReport {
            mpsnr: f64::NAN,
            msam: f64::NAN,
            mergas: f64::NAN,
            per_band_psnr: Vec::new(),
            ratio,
        };
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (name, value) = line
                .split_once(',')
                .ok_or_else(|| Error::Config(format!("bad report row {line:?}")))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad report value in {line:?}")))?;
            match name.trim() {
                "mpsnr" => report.mpsnr = value,
                "msam" => report.msam = value,
                "mergas" => report.mergas = value,
                other => match other.strip_prefix("psnr_band_").and_then(|s| s.parse::<usize>().ok()) {
                    Some(l) if l == report.per_band_psnr.len() => report.per_band_psnr.push(value),
                    _ => return Err(Error::Config(format!("unexpected report row {other:?}"))),
                },
            }
        }
        Ok(report)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
