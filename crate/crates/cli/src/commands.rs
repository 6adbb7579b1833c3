//! Single-step subcommands.

use std::path::Path;

use hyperleaf::config::KeyValues;
use hyperleaf::deadleaves::{generate_dataset, GenConfig, Manifest};
use hyperleaf::degrade::{degrade_pair, DownsampleMethod, PsfConfig};
use hyperleaf::htf::{load_tensor, save_tensor};
use hyperleaf::metrics::{evaluate, MetricsConfig, PeakMode};
use hyperleaf::srnet::{self, latest_checkpoint, load_checkpoint, NetArch, NetworkParams, TileOptions, TrainConfig};
use hyperleaf::{AbundanceMap, EndmemberMatrix, Error, ASC_TOLERANCE};

pub type Result<T> = std::result::Result<T, Error>;

/// Dataset settings from a gen-data style config.
pub fn dataset_settings(kv: &KeyValues, seed: Option<u64>) -> Result<(GenConfig, PsfConfig, usize)> {
    let mut gen = GenConfig::from_kv(kv)?;
    if let Some(s) = seed {
        gen.seed = s;
    }
    let psf = PsfConfig::from_kv(kv)?;
    kv.check_known("dataset", &["count"])?;
    let count = kv.require("dataset.count")?;
    Ok((gen, psf, count))
}

pub fn gen_data(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let kv = KeyValues::load(config)?;
    let (gen, psf, count) = dataset_settings(&kv, seed)?;
    log::info!("generating {count} maps of {}x{}x{} (seed {})", gen.n_materials, gen.height, gen.width, gen.seed);
    let manifest = generate_dataset(&gen, count, &psf, out)?;
    log::info!("wrote {} pairs to {}", manifest.entries.len(), out.display());
    Ok(())
}

pub fn degrade(
    input: &Path,
    output: &Path,
    sigma: f64,
    factor: usize,
    truncation: f64,
    method: DownsampleMethod,
) -> Result<()> {
    let psf = PsfConfig { sigma, factor, truncation, method };
    let t = load_tensor(input)?;
    let lr = degrade_pair(&t, &psf)?;
    save_tensor(&lr, output)
}

pub fn train_settings(kv: &KeyValues, seed: Option<u64>) -> Result<(NetArch, TrainConfig)> {
    let arch = NetArch::from_kv(kv)?;
    let mut cfg = TrainConfig::from_kv(kv)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok((arch, cfg))
}

pub fn train(
    manifest: &Path,
    arch: Option<&Path>,
    config: Option<&Path>,
    ckpt_dir: &Path,
    resume: bool,
    seed: Option<u64>,
) -> Result<()> {
    let mut kv = KeyValues::new();
    for path in [arch, config].into_iter().flatten() {
        kv.extend(&KeyValues::load(path)?);
    }
    let (arch, cfg) = train_settings(&kv, seed)?;
    let manifest = Manifest::load(manifest)?;
    let outcome = srnet::train(&manifest, &arch, &cfg, ckpt_dir, resume)?;
    if let Some(last) = outcome.log.last() {
        log::info!("finished epoch {} with loss {:.6}", last.epoch, last.loss);
    }
    log::info!("final checkpoint {}", outcome.final_checkpoint.display());
    Ok(())
}

/// Loads `path` as a checkpoint, or the latest checkpoint beneath it.
pub fn load_params(path: &Path) -> Result<NetworkParams> {
    let dir = if path.join(srnet::INDEX_FILE).is_file() {
        path.to_path_buf()
    } else {
        latest_checkpoint(path)
            .map(|(_, dir)| dir)
            .ok_or_else(|| Error::Config(format!("{}: no checkpoint found", path.display())))?
    };
    Ok(load_checkpoint(dir)?.params)
}

pub fn tile_options(params: &NetworkParams, tile: Option<usize>, overlap: Option<usize>) -> TileOptions {
    let d = TileOptions::for_params(params);
    TileOptions {
        tile: tile.unwrap_or(d.tile),
        overlap: overlap.unwrap_or(d.overlap),
    }
}

pub fn infer(ckpt: &Path, input: &Path, output: &Path, tile: Option<usize>, overlap: Option<usize>) -> Result<()> {
    let params = load_params(ckpt)?;
    let a_lr = AbundanceMap::new_normalized(load_tensor(input)?, ASC_TOLERANCE)?;
    let a_sr = srnet::infer(&params, &a_lr, tile_options(&params, tile, overlap))?;
    save_tensor(a_sr.tensor(), output)
}

pub fn mix(endmembers: &Path, abundances: &Path, output: &Path) -> Result<()> {
    let s = EndmemberMatrix::from_tensor(&load_tensor(endmembers)?)?;
    let a = AbundanceMap::new_raw(load_tensor(abundances)?)?;
    save_tensor(&hyperleaf::mix::mix(&s, &a)?, output)
}

pub fn eval(reference: &Path, estimate: &Path, ratio: f64, peak: PeakMode, report: &Path) -> Result<()> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::Config(format!("--ratio must be positive, got {ratio}")));
    }
    let r = load_tensor(reference)?;
    let e = load_tensor(estimate)?;
    let metrics = evaluate(&r, &e, &MetricsConfig { peak, ratio })?;
    metrics.save_csv(report)?;
    println!("mpsnr={:.4} msam={:.4} mergas={:.4}", metrics.mpsnr, metrics.msam, metrics.mergas);
    Ok(())
}
