//! Whole-image and tiled inference.

use super::net::{forward_batch, NetworkParams};
use super::ops::{Feature, Geom};
use crate::error::{Error, Result};
use crate::tensor::{AbundanceMap, Tensor3};

/// Wraps a tensor as a batch of one (the layouts coincide).
pub fn tensor_to_feature(t: &Tensor3) -> Feature {
    Feature {
        channels: t.channels(),
        geom: Geom::new(1, t.height(), t.width()),
        data: t.data().to_vec(),
    }
}

fn feature_to_tensor(f: Feature) -> Tensor3 {
    debug_assert_eq!(f.geom.batch, 1);
    Tensor3::from_raw(f.channels, f.geom.height, f.geom.width, f.data)
}

/// Super-resolves a whole abundance map in a single pass.
pub fn forward(params: &NetworkParams, a_lr: &AbundanceMap) -> Result<AbundanceMap> {
    let out = forward_batch(params, &tensor_to_feature(a_lr.tensor()))?;
    Ok(AbundanceMap::from_parts(feature_to_tensor(out), true))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileOptions {
    /// Core tile side in input pixels.
    pub tile: usize,
    /// Context added on every side of a tile and cropped away after the pass.
    pub overlap: usize,
}

impl TileOptions {
    /// 64-pixel tiles with an overlap of at least 8 pixels, widened to the
    /// network's receptive radius so stitched output matches a single pass.
    pub fn for_params(params: &NetworkParams) -> Self {
        Self {
            tile: 64,
            overlap: params.arch.receptive_radius().max(8),
        }
    }
}

/// Forward pass over overlapping tiles, keeping only each tile's centre.
pub fn infer(params: &NetworkParams, a_lr: &AbundanceMap, opts: TileOptions) -> Result<AbundanceMap> {
    if opts.tile == 0 {
        return Err(Error::Config("tile size must be >= 1".into()));
    }
    let t = a_lr.tensor();
    let (c, h, w) = t.dims();
    if c != params.arch.in_channels {
        return Err(Error::Dimension(format!(
            "network expects {} channels, input has {c}",
            params.arch.in_channels
        )));
    }
    if h <= opts.tile && w <= opts.tile {
        return forward(params, a_lr);
    }
    let s = params.arch.scale;
    let (oh, ow) = (h * s, w * s);
    let mut out = vec![0.0; c * oh * ow];
    for top in (0..h).step_by(opts.tile) {
        let bottom = (top + opts.tile).min(h);
        for left in (0..w).step_by(opts.tile) {
            let right = (left + opts.tile).min(w);
            let (et, el) = (top.saturating_sub(opts.overlap), left.saturating_sub(opts.overlap));
            let (eb, er) = ((bottom + opts.overlap).min(h), (right + opts.overlap).min(w));
            let crop = t.crop(et, el, eb - et, er - el)?;
            let sr = forward_batch(params, &tensor_to_feature(&crop))?;
            let (sh, sw) = (sr.geom.height, sr.geom.width);
            for ch in 0..c {
                for i in (top - et) * s..(bottom - et) * s {
                    let src = &sr.data[(ch * sh + i) * sw..][..sw];
                    let oi = i + et * s;
                    let dst = &mut out[(ch * oh + oi) * ow..][..ow];
                    dst[left * s..right * s].copy_from_slice(&src[(left - el) * s..(right - el) * s]);
                }
            }
        }
    }
    Ok(AbundanceMap::from_parts(Tensor3::from_raw(c, oh, ow, out), true))
}
