//! Synthetic abundance maps from a rectangular dead-leaves model.
//!
//! A map is built in three steps: an occlusion field produced by perfect
//! simulation (each new leaf lies *below* all earlier ones, so it only fills
//! pixels that are still uncovered), a layer of faint local-variation leaves,
//! and finally pixelwise sum-to-one normalization.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::KeyValues;
use crate::degrade::{degrade_abundance, PsfConfig};
use crate::error::{Error, Result};
use crate::htf::save_tensor;
use crate::tensor::{validate_tensor, AbundanceMap, Tensor3, ASC_TOLERANCE};

/// Leaf budget for one occlusion field before the config is deemed degenerate.
pub const DEFAULT_MAX_LEAVES: usize = 1_000_000;

/// One rectangular leaf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leaf {
    /// Side length along the rotated x axis, in pixels.
    pub a: f64,
    /// Side length along the rotated y axis, in pixels.
    pub b: f64,
    /// Rotation in radians, `[0, π)`.
    pub theta: f64,
    pub value: f64,
    /// `(x, y)` = (column, row) in continuous pixel coordinates.
    pub center: (f64, f64),
    pub material: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariationMode {
    /// Low-value leaves added on top of the finished occlusion field.
    Additive,
    /// Low-value leaves placed first, occluding everything below them.
    OccludingTop,
}

impl fmt::Display for VariationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VariationMode::Additive => "additive",
            VariationMode::OccludingTop => "occluding-top",
        })
    }
}

impl FromStr for VariationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "additive" => Ok(VariationMode::Additive),
            "occluding-top" => Ok(VariationMode::OccludingTop),
            other => Err(format!("unknown variation mode {other:?} (additive|occluding-top)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub n_materials: usize,
    pub height: usize,
    pub width: usize,
    pub side_min: usize,
    pub side_max: usize,
    pub variation_count: usize,
    pub variation_value_max: f64,
    pub variation_mode: VariationMode,
    /// Upper bound of the uniform leakage written to non-dominant channels.
    pub leakage_eps: f64,
    pub seed: u64,
    pub max_leaves: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self::scaled(6, 512, 512)
    }
}

impl GenConfig {
    const KEYS: &'static [&'static str] = &[
        "n_materials",
        "height",
        "width",
        "side_min",
        "side_max",
        "variation_count",
        "variation_value_max",
        "variation_mode",
        "leakage_eps",
        "seed",
        "max_leaves",
    ];

    /// Default laws with leaf sides 4..40 at 500 pixels, scaled with the
    /// smaller image side.
    pub fn scaled(n_materials: usize, height: usize, width: usize) -> Self {
        let (side_min, side_max) = scaled_sides(height, width);
        Self {
            n_materials,
            height,
            width,
            side_min,
            side_max,
            variation_count: 50,
            variation_value_max: 0.15,
            variation_mode: VariationMode::Additive,
            leakage_eps: 0.05,
            seed: 0,
            max_leaves: DEFAULT_MAX_LEAVES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_materials == 0 || self.height == 0 || self.width == 0 {
            return bad("gen.n_materials, gen.height and gen.width must be >= 1".into());
        }
        if self.side_min < 1 || self.side_min > self.side_max {
            return bad(format!(
                "need 1 <= side_min <= side_max, got {}..{}",
                self.side_min, self.side_max
            ));
        }
        if self.side_max > self.height.min(self.width) {
            return bad(format!(
                "side_max {} exceeds image side {}",
                self.side_max,
                self.height.min(self.width)
            ));
        }
        if !(self.variation_value_max > 0.0 && self.variation_value_max <= 0.3) {
            return bad(format!(
                "variation_value_max must lie in (0, 0.3], got {}",
                self.variation_value_max
            ));
        }
        if !(0.0..=0.2).contains(&self.leakage_eps) {
            return bad(format!("leakage_eps must lie in [0, 0.2], got {}", self.leakage_eps));
        }
        if self.max_leaves == 0 {
            return bad("max_leaves must be >= 1".into());
        }
        Ok(())
    }

    /// Reads `gen.*` keys. Unset side bounds follow the scaled defaults for
    /// the configured size.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.check_known("gen", Self::KEYS)?;
        let n = kv.get_or("gen.n_materials", 6)?;
        let h = kv.get_or("gen.height", 512)?;
        let w = kv.get_or("gen.width", h)?;
        let d = Self::scaled(n, h, w);
        let cfg = Self {
            side_min: kv.get_or("gen.side_min", d.side_min)?,
            side_max: kv.get_or("gen.side_max", d.side_max)?,
            variation_count: kv.get_or("gen.variation_count", d.variation_count)?,
            variation_value_max: kv.get_or("gen.variation_value_max", d.variation_value_max)?,
            variation_mode: kv.get_or("gen.variation_mode", d.variation_mode)?,
            leakage_eps: kv.get_or("gen.leakage_eps", d.leakage_eps)?,
            seed: kv.get_or("gen.seed", d.seed)?,
            max_leaves: kv.get_or("gen.max_leaves", d.max_leaves)?,
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        kv.set("gen.n_materials", self.n_materials);
        kv.set("gen.height", self.height);
        kv.set("gen.width", self.width);
        kv.set("gen.side_min", self.side_min);
        kv.set("gen.side_max", self.side_max);
        kv.set("gen.variation_count", self.variation_count);
        kv.set("gen.variation_value_max", self.variation_value_max);
        kv.set("gen.variation_mode", self.variation_mode);
        kv.set("gen.leakage_eps", self.leakage_eps);
        kv.set("gen.seed", self.seed);
        kv.set("gen.max_leaves", self.max_leaves);
    }
}

fn scaled_sides(height: usize, width: usize) -> (usize, usize) {
    let side = height.min(width) as f64;
    let lo = ((4.0 * side / 500.0).round() as usize).max(1);
    let hi = ((40.0 * side / 500.0).round() as usize).max(lo);
    (lo, hi)
}

/// Draws one leaf. Draw order is fixed: a, b, θ, V, x, y, material.
pub fn sample_leaf<R: Rng + ?Sized>(rng: &mut R, cfg: &GenConfig) -> Leaf {
    let a = rng.gen_range(cfg.side_min..=cfg.side_max) as f64;
    let b = rng.gen_range(cfg.side_min..=cfg.side_max) as f64;
    let theta = rng.gen_range(0.0..PI);
    let value = rng.gen::<f64>();
    let x = rng.gen::<f64>() * cfg.width as f64;
    let y = rng.gen::<f64>() * cfg.height as f64;
    let material = rng.gen_range(0..cfg.n_materials);
    Leaf {
        a,
        b,
        theta,
        value,
        center: (x, y),
        material,
    }
}

// Pixel centers exactly on a rectangle edge count as inside; the slack keeps
// that decision stable under the rounding of cos/sin.
const EDGE_SLACK: f64 = 1e-9;

/// Pixels `(row, col)` whose centers fall inside the rotated rectangle,
/// clipped to the image, in row-major order.
pub fn rasterize_leaf(leaf: &Leaf, height: usize, width: usize) -> Vec<(usize, usize)> {
    let (cos, sin) = (leaf.theta.cos(), leaf.theta.sin());
    let (ha, hb) = (leaf.a / 2.0, leaf.b / 2.0);
    let (cx, cy) = leaf.center;
    let ex = ha * cos.abs() + hb * sin.abs();
    let ey = ha * sin.abs() + hb * cos.abs();

    let j0 = (cx - ex - 0.5).floor().max(0.0) as usize;
    let j1 = ((cx + ex - 0.5).ceil().max(-1.0) as isize).min(width as isize - 1);
    let i0 = (cy - ey - 0.5).floor().max(0.0) as usize;
    let i1 = ((cy + ey - 0.5).ceil().max(-1.0) as isize).min(height as isize - 1);

    let mut out = Vec::new();
    if j1 < 0 || i1 < 0 {
        return out;
    }
    for i in i0..=i1 as usize {
        let dy = i as f64 + 0.5 - cy;
        for j in j0..=j1 as usize {
            let dx = j as f64 + 0.5 - cx;
            let u = dx * cos + dy * sin;
            let v = -dx * sin + dy * cos;
            if u.abs() <= ha + EDGE_SLACK && v.abs() <= hb + EDGE_SLACK {
                out.push((i, j));
            }
        }
    }
    out
}

/// Result of the occlusion stage.
#[derive(Debug, Clone)]
pub struct BaseField {
    /// Unnormalized abundances.
    pub raw: AbundanceMap,
    /// Leaves drawn, including ones that ended up fully hidden.
    pub leaf_count: usize,
    /// Index (in draw order) of the leaf that owns each pixel.
    pub owner: Vec<u32>,
}

struct Occlusion {
    data: Vec<f64>,
    owner: Vec<u32>,
    uncovered: usize,
    drawn: usize,
}

impl Occlusion {
    fn new(cfg: &GenConfig) -> Self {
        let plane = cfg.height * cfg.width;
        Self {
            data: vec![0.0; cfg.n_materials * plane],
            owner: vec![u32::MAX; plane],
            uncovered: plane,
            drawn: 0,
        }
    }

    /// Writes `leaf` to every still-uncovered pixel it touches.
    fn place<R: Rng + ?Sized>(&mut self, rng: &mut R, cfg: &GenConfig, leaf: &Leaf) {
        let plane = cfg.height * cfg.width;
        for (i, j) in rasterize_leaf(leaf, cfg.height, cfg.width) {
            let p = i * cfg.width + j;
            if self.owner[p] != u32::MAX {
                continue;
            }
            self.owner[p] = self.drawn as u32;
            self.uncovered -= 1;
            for m in 0..cfg.n_materials {
                self.data[m * plane + p] = if m == leaf.material {
                    leaf.value
                } else if cfg.leakage_eps > 0.0 {
                    rng.gen::<f64>() * cfg.leakage_eps
                } else {
                    0.0
                };
            }
        }
        self.drawn += 1;
    }
}

fn variation_leaf<R: Rng + ?Sized>(rng: &mut R, cfg: &GenConfig) -> Leaf {
    let mut leaf = sample_leaf(rng, cfg);
    leaf.value *= cfg.variation_value_max;
    leaf
}

/// Perfect-simulation occlusion field: leaves are drawn until every pixel
/// is covered, each filling only the pixels no earlier leaf has claimed.
pub fn generate_base_field<R: Rng + ?Sized>(rng: &mut R, cfg: &GenConfig) -> Result<BaseField> {
    generate_occlusion(rng, cfg, 0)
}

fn generate_occlusion<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &GenConfig,
    top_variation_leaves: usize,
) -> Result<BaseField> {
    cfg.validate()?;
    let mut field = Occlusion::new(cfg);
    for _ in 0..top_variation_leaves {
        let leaf = variation_leaf(rng, cfg);
        field.place(rng, cfg, &leaf);
    }
    while field.uncovered > 0 {
        if field.drawn >= cfg.max_leaves {
            return Err(Error::Generation(format!(
                "{} pixels still uncovered after {} leaves",
                field.uncovered, field.drawn
            )));
        }
        let leaf = sample_leaf(rng, cfg);
        field.place(rng, cfg, &leaf);
    }
    let raw = Tensor3::from_raw(cfg.n_materials, cfg.height, cfg.width, field.data);
    Ok(BaseField {
        raw: AbundanceMap::from_parts(raw, false),
        leaf_count: field.drawn,
        owner: field.owner,
    })
}

/// Adds `variation_count` faint leaves (value uniform in
/// `[0, variation_value_max)`) to their material channel, without occlusion.
pub fn apply_local_variation<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &GenConfig,
    raw: &AbundanceMap,
) -> AbundanceMap {
    let mut out = raw.clone();
    let t = out.tensor_mut();
    let (h, w) = (t.height(), t.width());
    for _ in 0..cfg.variation_count {
        let leaf = variation_leaf(rng, cfg);
        let channel = t.channel_mut(leaf.material);
        for (i, j) in rasterize_leaf(&leaf, h, w) {
            let v = &mut channel[i * w + j];
            *v = (*v + leaf.value).max(0.0);
        }
    }
    out
}

/// Divides every pixel by its channel sum.
pub fn asc_normalize(raw: &AbundanceMap) -> Result<AbundanceMap> {
    let t = raw.tensor();
    let (c, h, w) = t.dims();
    let plane = h * w;
    let src = t.data();
    let mut data = vec![0.0; src.len()];
    for p in 0..plane {
        let sum: f64 = (0..c).map(|m| src[m * plane + p]).sum();
        if !(sum > 0.0) {
            return Err(Error::Normalization(format!(
                "pixel ({}, {}) has abundance sum {sum}",
                p / w,
                p % w
            )));
        }
        for m in 0..c {
            data[m * plane + p] = src[m * plane + p] / sum;
        }
    }
    Ok(AbundanceMap::from_parts(Tensor3::from_raw(c, h, w, data), true))
}

/// Full recipe for one normalized synthetic abundance map.
pub fn generate_map<R: Rng + ?Sized>(rng: &mut R, cfg: &GenConfig) -> Result<AbundanceMap> {
    let raw = match cfg.variation_mode {
        VariationMode::Additive => {
            let base = generate_occlusion(rng, cfg, 0)?;
            apply_local_variation(rng, cfg, &base.raw)
        }
        VariationMode::OccludingTop => generate_occlusion(rng, cfg, cfg.variation_count)?.raw,
    };
    asc_normalize(&raw)
}

/// Seed of image `index` in a dataset with base seed `seed`.
pub fn image_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

/// Generates image `index` of a dataset and its degraded counterpart, both
/// rounded to the on-disk precision.
pub fn generate_pair(
    cfg: &GenConfig,
    psf: &PsfConfig,
    index: usize,
) -> Result<(AbundanceMap, AbundanceMap)> {
    let mut rng = ChaCha8Rng::seed_from_u64(image_seed(cfg.seed, index));
    let hr = generate_map(&mut rng, cfg)?;
    let hr = AbundanceMap::from_parts(hr.tensor().quantize_f32(), true);
    let lr = degrade_abundance(&hr, psf)?;
    let lr = AbundanceMap::from_parts(lr.tensor().quantize_f32(), true);
    for (name, map) in [("hr", &hr), ("lr", &lr)] {
        let report = validate_tensor(map.tensor(), ASC_TOLERANCE);
        if !report.anc_ok || !report.asc_ok {
            return Err(Error::Generation(format!(
                "image {index} ({name}) violates abundance constraints: {report:?}"
            )));
        }
    }
    Ok((hr, lr))
}

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub index: usize,
    pub hr: PathBuf,
    pub lr: PathBuf,
    pub seed: u64,
}

/// Index of a generated dataset. Entry paths are relative to `root`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub header: KeyValues,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn gen_config(&self) -> Result<GenConfig> {
        GenConfig::from_kv(&self.header)
    }

    pub fn psf_config(&self) -> Result<PsfConfig> {
        PsfConfig::from_kv(&self.header)
    }

    pub fn hr_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.hr)
    }

    pub fn lr_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.lr)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# hyperleaf dataset manifest\n");
        out.push_str(&self.header.to_text());
        out.push_str("# index, hr_path, lr_path, seed\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{}, {}, {}, {}\n",
                e.index,
                e.hr.display(),
                e.lr.display(),
                e.seed
            ));
        }
        out
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut header_text = String::new();
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if trimmed.contains('=') {
                header_text.push_str(trimmed);
                header_text.push('\n');
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            let bad = || Error::Config(format!("manifest line {}: malformed entry {trimmed:?}", lineno + 1));
            if fields.len() != 4 {
                return Err(bad());
            }
            entries.push(ManifestEntry {
                index: fields[0].parse().map_err(|_| bad())?,
                hr: PathBuf::from(fields[1]),
                lr: PathBuf::from(fields[2]),
                seed: fields[3].parse().map_err(|_| bad())?,
            });
        }
        Ok(Self {
            root: root.into(),
            header: KeyValues::parse(&header_text)?,
            entries,
        })
    }

    /// Loads `path`, which may be the manifest file or its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut path = path.as_ref().to_path_buf();
        if path.is_dir() {
            path.push(MANIFEST_FILE);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }
}

/// Writes `n_images` HR/LR pairs and a manifest into `out_dir`.
///
/// Images are generated in parallel on the current rayon pool; each uses its
/// own seed so the output does not depend on scheduling.
pub fn generate_dataset(
    cfg: &GenConfig,
    n_images: usize,
    psf: &PsfConfig,
    out_dir: impl AsRef<Path>,
) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    cfg.validate()?;
    psf.validate()?;
    if n_images == 0 {
        return Err(Error::Config("dataset needs at least one image".into()));
    }
    if !cfg.height.is_multiple_of(psf.factor) || !cfg.width.is_multiple_of(psf.factor) {
        return Err(Error::Dimension(format!(
            "{}x{} is not divisible by factor {}",
            cfg.height, cfg.width, psf.factor
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let entries = (0..n_images)
        .into_par_iter()
        .map(|index| {
            let (hr, lr) = generate_pair(cfg, psf, index)?;
            let entry = ManifestEntry {
                index,
                hr: PathBuf::from(format!("hr_{index:05}.htf")),
                lr: PathBuf::from(format!("lr_{index:05}.htf")),
                seed: image_seed(cfg.seed, index),
            };
            save_tensor(hr.tensor(), out_dir.join(&entry.hr))?;
            save_tensor(lr.tensor(), out_dir.join(&entry.lr))?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut header = KeyValues::new();
    header.set("dataset.count", n_images);
    cfg.write_kv(&mut header);
    psf.write_kv(&mut header);
    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        header,
        entries,
    };
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
