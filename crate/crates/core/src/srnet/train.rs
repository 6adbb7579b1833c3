//! L1 + Adam training on synthetic abundance pairs, with checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::infer::{infer, TileOptions};
use super::net::{backward, forward_train, param_slots, NetArch, NetworkParams, INIT_LAW};
use super::ops::{l1_loss, Feature, Geom};
use crate::config::KeyValues;
use crate::deadleaves::Manifest;
use crate::error::{Error, Result};
use crate::htf::{load_tensor, save_tensor};
use crate::metrics::{mpsnr, PeakMode};
use crate::tensor::{AbundanceMap, Tensor3};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    /// Patch side on the low-resolution input.
    pub patch_size: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// Fraction of manifest images (taken from the end) held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 8,
            patch_size: 16,
            seed: 0,
            checkpoint_every: 10,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    const KEYS: &'static [&'static str] = &[
        "epochs",
        "learning_rate",
        "beta1",
        "beta2",
        "epsilon",
        "batch_size",
        "patch_size",
        "seed",
        "checkpoint_every",
        "val_fraction",
    ];

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("train.epochs must be >= 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("train.learning_rate must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("train.beta1 and train.beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("train.epsilon must be > 0");
        }
        if self.batch_size == 0 || self.patch_size == 0 || self.checkpoint_every == 0 {
            return bad("train.batch_size, train.patch_size and train.checkpoint_every must be >= 1");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("train.val_fraction must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.check_known("train", Self::KEYS)?;
        let d = Self::default();
        let cfg = Self {
            epochs: kv.get_or("train.epochs", d.epochs)?,
            learning_rate: kv.get_or("train.learning_rate", d.learning_rate)?,
            beta1: kv.get_or("train.beta1", d.beta1)?,
            beta2: kv.get_or("train.beta2", d.beta2)?,
            epsilon: kv.get_or("train.epsilon", d.epsilon)?,
            batch_size: kv.get_or("train.batch_size", d.batch_size)?,
            patch_size: kv.get_or("train.patch_size", d.patch_size)?,
            seed: kv.get_or("train.seed", d.seed)?,
            checkpoint_every: kv.get_or("train.checkpoint_every", d.checkpoint_every)?,
            val_fraction: kv.get_or("train.val_fraction", d.val_fraction)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        kv.set("train.epochs", self.epochs);
        kv.set("train.learning_rate", self.learning_rate);
        kv.set("train.beta1", self.beta1);
        kv.set("train.beta2", self.beta2);
        kv.set("train.epsilon", self.epsilon);
        kv.set("train.batch_size", self.batch_size);
        kv.set("train.patch_size", self.patch_size);
        kv.set("train.seed", self.seed);
        kv.set("train.checkpoint_every", self.checkpoint_every);
        kv.set("train.val_fraction", self.val_fraction);
    }
}

/// Adam first/second moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
///
/// Parameters and moments are rounded to binary32 after the update so the
/// whole optimizer state survives a checkpoint round trip bit for bit.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &TrainConfig) {
    assert_eq!(params.len(), grads.len());
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - cfg.beta1.powf(t);
    let c2 = 1.0 - cfg.beta2.powf(t);
    for k in 0..params.len() {
        let g = grads[k];
        let m = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g;
        let update = cfg.learning_rate * (m / c1) / ((v / c2).sqrt() + cfg.epsilon);
        params[k] = (params[k] - update) as f32 as f64;
        state.m[k] = m as f32 as f64;
        state.v[k] = v as f32 as f64;
    }
}

/// Everything needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub adam: AdamState,
    pub epoch: usize,
    pub seed: u64,
}

pub const INDEX_FILE: &str = "index.txt";

fn slot_dims(shape: &[usize]) -> (usize, usize, usize) {
    match shape {
        [o, i, k1, k2] => (*o, *i, k1 * k2),
        [o] => (*o, 1, 1),
        _ => unreachable!("parameter shapes are rank 1 or 4"),
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut header = KeyValues::new();
    ckpt.params.arch.write_kv(&mut header);
    header.set("ckpt.epoch", ckpt.epoch);
    header.set("ckpt.step", ckpt.adam.step);
    header.set("ckpt.seed", ckpt.seed);
    header.set("ckpt.init", INIT_LAW);
    let mut index = String::from("# hyperleaf checkpoint\n");
    index.push_str(&header.to_text());
    index.push_str("# name, shape, file\n");
    for slot in ckpt.params.slots() {
        let (c, h, w) = slot_dims(&slot.shape);
        let shape = slot.shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
        for (prefix, values) in [("", &ckpt.params.values), ("adam_m.", &ckpt.adam.m), ("adam_v.", &ckpt.adam.v)] {
            let name = format!("{prefix}{}", slot.name);
            let file = format!("{name}.htf");
            let t = Tensor3::from_vec(c, h, w, values[slot.offset..slot.offset + slot.len].to_vec())?;
            save_tensor(&t, dir.join(&file))?;
            index.push_str(&format!("{name}, {shape}, {file}\n"));
        }
    }
    let path = dir.join(INDEX_FILE);
    fs::write(&path, index).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut header = String::new();
    let mut files = std::collections::HashMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        if line.contains('=') {
            header.push_str(line);
            header.push('\n');
        } else {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::Config(format!("{}: malformed entry {line:?}", path.display())));
            }
            files.insert(fields[0].to_string(), fields[2].to_string());
        }
    }
    let header = KeyValues::parse(&header)?;
    let arch = NetArch::from_kv(&KeyValues::parse(
        &header
            .iter()
            .filter(|(k, _)| k.starts_with("arch."))
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect::<String>(),
    )?)?;
    let slots = param_slots(&arch);
    let total = slots.iter().map(|s| s.len).sum();
    let mut values = vec![0.0; total];
    let mut adam = AdamState::new(total);
    adam.step = header.require("ckpt.step")?;
    for slot in &slots {
        for (prefix, target) in [("", &mut values), ("adam_m.", &mut adam.m), ("adam_v.", &mut adam.v)] {
            let name = format!("{prefix}{}", slot.name);
            let file = files
                .get(&name)
                .ok_or_else(|| Error::Config(format!("{}: missing entry {name}", path.display())))?;
            let t = load_tensor(dir.join(file))?;
            if t.dims() != slot_dims(&slot.shape) {
                return Err(Error::Dimension(format!("{name}: stored dims {:?} do not match the architecture", t.dims())));
            }
            target[slot.offset..slot.offset + slot.len].copy_from_slice(t.data());
        }
    }
    Ok(Checkpoint {
        params: NetworkParams { arch, values },
        adam,
        epoch: header.require("ckpt.epoch")?,
        seed: header.require("ckpt.seed")?,
    })
}

pub fn checkpoint_dir(root: &Path, epoch: usize) -> PathBuf {
    root.join(format!("ckpt_{epoch}"))
}

/// Highest-epoch `ckpt_<n>` directory under `root`.
pub fn latest_checkpoint(root: &Path) -> Option<(usize, PathBuf)> {
    fs::read_dir(root)
        .ok()?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let epoch = name.strip_prefix("ckpt_")?.parse().ok()?;
            e.path().join(INDEX_FILE).is_file().then(|| (epoch, e.path()))
        })
        .max_by_key(|(epoch, _)| *epoch)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub loss: f64,
    /// NaN when no images are held out.
    pub val_mpsnr: f64,
}

pub const LOG_FILE: &str = "train_log.csv";

fn write_log(rows: &[LogRow], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,loss,val_mpsnr\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.loss, r.val_mpsnr));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::Config(format!("{}: bad log row {l:?}", path.display()));
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(LogRow {
                epoch: f[0].parse().map_err(|_| bad())?,
                loss: f[1].parse().map_err(|_| bad())?,
                val_mpsnr: f[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub log: Vec<LogRow>,
    pub final_checkpoint: PathBuf,
}

struct Pair {
    lr: Tensor3,
    hr: Tensor3,
}

/// Patch origins along one axis: a stride-`patch` grid plus a final
/// edge-aligned patch when the side is not a multiple of `patch`.
fn axis_origins(side: usize, patch: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=side - patch).step_by(patch).collect();
    if out.last() != Some(&(side - patch)) {
        out.push(side - patch);
    }
    out
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Gathers LR/HR crops into batch features. `picks` are (pair, top, left)
/// in LR pixels; the HR crop starts at `scale` times that.
fn assemble(pairs: &[Pair], picks: &[(usize, usize, usize)], patch: usize, scale: usize) -> (Feature, Feature) {
    let n = pairs[0].lr.channels();
    let b = picks.len();
    let build = |side: usize, factor: usize, hr: bool| {
        let geom = Geom::new(b, side, side);
        let mut data = vec![0.0; n * geom.plane()];
        for c in 0..n {
            for (k, &(idx, top, left)) in picks.iter().enumerate() {
                let src = if hr { &pairs[idx].hr } else { &pairs[idx].lr };
                for i in 0..side {
                    let row = src.index(c, top * factor + i, left * factor);
                    let dst = ((c * b + k) * side + i) * side;
                    data[dst..dst + side].copy_from_slice(&src.data()[row..row + side]);
                }
            }
        }
        Feature { channels: n, geom, data }
    };
    (build(patch, 1, false), build(patch * scale, scale, true))
}

/// Trains on a generated dataset, writing checkpoints and a CSV log under
/// `ckpt_root`. With `resume`, continues from the latest checkpoint there.
pub fn train(
    manifest: &Manifest,
    arch: &NetArch,
    cfg: &TrainConfig,
    ckpt_root: impl AsRef<Path>,
    resume: bool,
) -> Result<TrainOutcome> {
    let ckpt_root = ckpt_root.as_ref();
    arch.validate()?;
    cfg.validate()?;
    if manifest.entries.is_empty() {
        return Err(Error::Config("manifest lists no images".into()));
    }
    let n_val = ((manifest.entries.len() as f64 * cfg.val_fraction).floor() as usize)
        .min(manifest.entries.len() - 1);
    let n_train = manifest.entries.len() - n_val;

    let mut pairs = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let lr = load_tensor(manifest.lr_path(e))?;
        let hr = load_tensor(manifest.hr_path(e))?;
        if lr.channels() != arch.in_channels || hr.channels() != arch.in_channels {
            return Err(Error::Dimension(format!(
                "image {} has {} channels, network expects {}",
                e.index,
                lr.channels(),
                arch.in_channels
            )));
        }
        if hr.height() != lr.height() * arch.scale || hr.width() != lr.width() * arch.scale {
            return Err(Error::Dimension(format!(
                "image {}: HR {:?} is not {}x LR {:?}",
                e.index,
                hr.dims(),
                arch.scale,
                lr.dims()
            )));
        }
        if cfg.patch_size > lr.height() || cfg.patch_size > lr.width() {
            return Err(Error::Config(format!(
                "patch size {} exceeds LR image {}x{}",
                cfg.patch_size,
                lr.height(),
                lr.width()
            )));
        }
        pairs.push(Pair { lr, hr });
    }

    let mut patches = Vec::new();
    for (idx, pair) in pairs[..n_train].iter().enumerate() {
        for &top in &axis_origins(pair.lr.height(), cfg.patch_size) {
            for &left in &axis_origins(pair.lr.width(), cfg.patch_size) {
                patches.push((idx, top, left));
            }
        }
    }

    fs::create_dir_all(ckpt_root).map_err(|e| Error::io(ckpt_root, e))?;
    let log_path = ckpt_root.join(LOG_FILE);
    let (mut params, mut adam, start_epoch, mut log) = match resume.then(|| latest_checkpoint(ckpt_root)).flatten() {
        Some((_, dir)) => {
            let ckpt = load_checkpoint(&dir)?;
            if ckpt.params.arch != *arch {
                return Err(Error::Config(format!("{}: architecture differs from the requested one", dir.display())));
            }
            if ckpt.seed != cfg.seed {
                return Err(Error::Config(format!(
                    "{}: checkpoint seed {} differs from train.seed {}",
                    dir.display(),
                    ckpt.seed,
                    cfg.seed
                )));
            }
            let mut log = if log_path.is_file() { read_log(&log_path)? } else { Vec::new() };
            log.retain(|r| r.epoch <= ckpt.epoch);
            log::info!("resuming from {} (epoch {})", dir.display(), ckpt.epoch);
            (ckpt.params, ckpt.adam, ckpt.epoch + 1, log)
        }
        None => {
            let params = NetworkParams::init(arch, cfg.seed)?;
            let adam = AdamState::new(params.values.len());
            (params, adam, 1, Vec::new())
        }
    };

    let mut final_checkpoint = checkpoint_dir(ckpt_root, start_epoch.saturating_sub(1));
    for epoch in start_epoch..=cfg.epochs {
        let shuffle_seed = epoch_seed(cfg.seed, epoch);
        let mut order = patches.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (bi, picks) in order.chunks(cfg.batch_size).enumerate() {
            let (x, target) = assemble(&pairs, picks, cfg.patch_size, arch.scale);
            let cache = forward_train(&params, &x)?;
            let (loss, d_out) = l1_loss(&cache.output.data, &target.data)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, batch {bi} (shuffle seed {shuffle_seed})"
                )));
            }
            let (grads, _) = backward(&params, &cache, &d_out, false)?;
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient at epoch {epoch}, batch {bi} (shuffle seed {shuffle_seed})"
                )));
            }
            adam_step(&mut params.values, &grads, &mut adam, cfg);
            loss_sum += loss;
            batches += 1;
        }

        let val_mpsnr = validate(&params, &pairs[n_train..])?;
        let row = LogRow {
            epoch,
            loss: loss_sum / batches as f64,
            val_mpsnr,
        };
        log::info!("epoch {epoch}: loss {:.6} val_mpsnr {:.3}", row.loss, row.val_mpsnr);
        log.push(row);
        write_log(&log, &log_path)?;

        if epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs {
            final_checkpoint = checkpoint_dir(ckpt_root, epoch);
            save_checkpoint(
                &Checkpoint {
                    params: params.clone(),
                    adam: adam.clone(),
                    epoch,
                    seed: cfg.seed,
                },
                &final_checkpoint,
            )?;
        }
    }

    Ok(TrainOutcome {
        params,
        log,
        final_checkpoint,
    })
}

fn validate(params: &NetworkParams, pairs: &[Pair]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(f64::NAN);
    }
    let opts = TileOptions::for_params(params);
    let mut total = 0.0;
    for pair in pairs {
        let sr = infer(params, &AbundanceMap::from_parts(pair.lr.clone(), true), opts)?;
        total += mpsnr(&pair.hr, sr.tensor(), PeakMode::Fixed(1.0))?;
    }
    Ok(total / pairs.len() as f64)
}
