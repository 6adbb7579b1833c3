//! Linear mixing model: each pixel spectrum is the abundance-weighted sum of
//! the endmember spectra.

use crate::deadleaves::asc_normalize;
use crate::error::{Error, Result};
use crate::tensor::{AbundanceMap, EndmemberMatrix, Tensor3};

/// Mixes abundances into an `L × H × W` cube.
pub fn mix(s: &EndmemberMatrix, a: &AbundanceMap) -> Result<Tensor3> {
    mix_tensor(s, a.tensor())
}

/// [`mix`] on an unconstrained tensor (used by linearity checks and the oracle).
pub fn mix_tensor(s: &EndmemberMatrix, a: &Tensor3) -> Result<Tensor3> {
    if a.channels() != s.materials() {
        return Err(Error::Dimension(format!(
            "abundances have {} channels but the endmember matrix has {} materials",
            a.channels(),
            s.materials()
        )));
    }
    let plane = a.plane_len();
    let mut out = vec![0.0; s.bands() * plane];
    for (l, band) in out.chunks_exact_mut(plane).enumerate() {
        for n in 0..s.materials() {
            let weight = s.get(l, n);
            for (o, &v) in band.iter_mut().zip(a.channel(n)) {
                *o += weight * v;
            }
        }
    }
    Ok(Tensor3::from_raw(s.bands(), a.height(), a.width(), out))
}

/// Recombines super-resolved abundances with the endmembers.
pub fn reconstruct_hr(s: &EndmemberMatrix, a_hr: &AbundanceMap) -> Result<Tensor3> {
    mix(s, a_hr)
}

/// Lower-triangular Cholesky factor of `SᵀS`, row-major `n × n`.
fn gram_cholesky(s: &EndmemberMatrix) -> Result<Vec<f64>> {
    let n = s.materials();
    let mut g = vec![0.0; n * n];
    for p in 0..n {
        for q in 0..=p {
            let v: f64 = (0..s.bands()).map(|l| s.get(l, p) * s.get(l, q)).sum();
            g[p * n + q] = v;
            g[q * n + p] = v;
        }
    }
    let scale = (0..n).map(|k| g[k * n + k]).fold(0.0f64, f64::max);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = g[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > 1e-12 * scale) {
                    return Err(Error::Singular(format!(
                        "endmember matrix is rank deficient (pivot {i} = {sum:e})"
                    )));
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Per-pixel least-squares abundances by normal equations, then clamped at
/// zero and renormalized. A reference inverse of [`mix`] for tests; not a
/// blind unmixing method.
pub fn unmix_oracle(s: &EndmemberMatrix, cube: &Tensor3) -> Result<AbundanceMap> {
    if cube.channels() != s.bands() {
        return Err(Error::Dimension(format!(
            "cube has {} bands but the endmember matrix has {}",
            cube.channels(),
            s.bands()
        )));
    }
    let n = s.materials();
    let chol = gram_cholesky(s)?;
    let plane = cube.plane_len();
    let mut out = vec![0.0; n * plane];
    let mut rhs = vec![0.0; n];
    for p in 0..plane {
        for (k, r) in rhs.iter_mut().enumerate() {
            *r = (0..s.bands()).map(|l| s.get(l, k) * cube.channel(l)[p]).sum();
        }
        // Forward then back substitution.
        for i in 0..n {
            let mut v = rhs[i];
            for k in 0..i {
                v -= chol[i * n + k] * rhs[k];
            }
            rhs[i] = v / chol[i * n + i];
        }
        for i in (0..n).rev() {
            let mut v = rhs[i];
            for k in i + 1..n {
                v -= chol[k * n + i] * rhs[k];
            }
            rhs[i] = v / chol[i * n + i];
        }
        for k in 0..n {
            out[k * plane + p] = rhs[k].max(0.0);
        }
    }
    let raw = AbundanceMap::from_parts(Tensor3::from_raw(n, cube.height(), cube.width(), out), false);
    asc_normalize(&raw)
}
