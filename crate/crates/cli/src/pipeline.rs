//! End-to-end run: synthetic data, training, then super-resolution of real
//! abundances scored against a reference cube.

use std::fs;
use std::path::{Path, PathBuf};

use hyperleaf::config::KeyValues;
use hyperleaf::deadleaves::generate_dataset;
use hyperleaf::degrade::bicubic_upsample_abundance;
use hyperleaf::htf::{load_tensor, save_tensor};
use hyperleaf::metrics::{evaluate, MetricsConfig, MetricsReport};
use hyperleaf::mix::mix;
use hyperleaf::srnet::{self, TileOptions};
use hyperleaf::{AbundanceMap, EndmemberMatrix, Error, ASC_TOLERANCE};

use crate::commands::{dataset_settings, train_settings, Result};

pub const SUMMARY_FILE: &str = "summary.csv";

struct Paths {
    work: PathBuf,
    abundances: PathBuf,
    endmembers: PathBuf,
    reference: PathBuf,
}

/// Relative paths in the config are taken relative to the config file.
fn resolve(kv: &KeyValues, key: &str, base: &Path) -> Result<PathBuf> {
    let raw: String = kv.require(key)?;
    let p = PathBuf::from(raw);
    Ok(if p.is_absolute() { p } else { base.join(p) })
}

fn summary_csv(rows: &[(&str, &MetricsReport)]) -> String {
    let mut out = String::from("method,mpsnr,msam,mergas\n");
    for (name, r) in rows {
        out.push_str(&format!("{name},{},{},{}\n", r.mpsnr, r.msam, r.mergas));
    }
    out
}

pub fn run(config: &Path, dry_run: bool, seed: Option<u64>) -> Result<()> {
    let kv = KeyValues::load(config)?;
    let base = config.parent().unwrap_or(Path::new(""));
    kv.check_known("pipeline", &["work_dir", "abundances", "endmembers", "reference"])?;
    let paths = Paths {
        work: resolve(&kv, "pipeline.work_dir", base)?,
        abundances: resolve(&kv, "pipeline.abundances", base)?,
        endmembers: resolve(&kv, "pipeline.endmembers", base)?,
        reference: resolve(&kv, "pipeline.reference", base)?,
    };
    let (gen, psf, count) = dataset_settings(&kv, seed)?;
    let (arch, train_cfg) = train_settings(&kv, seed)?;
    let metrics_cfg = MetricsConfig::from_kv(&kv)?;
    if arch.in_channels != gen.n_materials {
        return Err(Error::Config(format!(
            "arch.in_channels={} but gen.n_materials={}",
            arch.in_channels, gen.n_materials
        )));
    }
    if arch.scale != psf.factor {
        return Err(Error::Config(format!("arch.scale={} but psf.factor={}", arch.scale, psf.factor)));
    }

    let data_dir = paths.work.join("data");
    let ckpt_dir = paths.work.join("ckpt");
    let a_sr_path = paths.work.join("a_sr.htf");
    let a_bic_path = paths.work.join("a_bicubic.htf");
    let cube_sr_path = paths.work.join("cube_sr.htf");
    let cube_bic_path = paths.work.join("cube_bicubic.htf");
    let summary_path = paths.work.join(SUMMARY_FILE);

    let plan = [
        format!(
            "gen-data: {count} maps {}x{}x{} seed {} -> {}",
            gen.n_materials,
            gen.height,
            gen.width,
            gen.seed,
            data_dir.display()
        ),
        format!("train: {} epochs seed {} -> {}", train_cfg.epochs, train_cfg.seed, ckpt_dir.display()),
        format!("infer: {} -> {}", paths.abundances.display(), a_sr_path.display()),
        format!("bicubic: {} -> {}", paths.abundances.display(), a_bic_path.display()),
        format!(
            "mix: {} with {} and {}",
            paths.endmembers.display(),
            a_sr_path.display(),
            a_bic_path.display()
        ),
        format!("eval: against {} -> {}", paths.reference.display(), summary_path.display()),
    ];
    for (k, step) in plan.iter().enumerate() {
        println!("{}. {step}", k + 1);
    }
    if dry_run {
        return Ok(());
    }

    // Read the real inputs first so a bad path fails before hours of training.
    let a_lr = AbundanceMap::new_normalized(load_tensor(&paths.abundances)?, ASC_TOLERANCE)?;
    let s = EndmemberMatrix::from_tensor(&load_tensor(&paths.endmembers)?)?;
    let reference = load_tensor(&paths.reference)?;
    if a_lr.materials() != arch.in_channels || s.materials() != arch.in_channels {
        return Err(Error::Dimension(format!(
            "network has {} materials, abundances {} and endmembers {}",
            arch.in_channels,
            a_lr.materials(),
            s.materials()
        )));
    }

    fs::create_dir_all(&paths.work).map_err(|e| Error::Io { path: paths.work.clone(), source: e })?;
    let manifest = generate_dataset(&gen, count, &psf, &data_dir)?;
    let outcome = srnet::train(&manifest, &arch, &train_cfg, &ckpt_dir, false)?;
    let params = outcome.params;

    let a_sr = srnet::infer(&params, &a_lr, TileOptions::for_params(&params))?;
    let a_bic = bicubic_upsample_abundance(&a_lr, arch.scale)?;
    save_tensor(a_sr.tensor(), &a_sr_path)?;
    save_tensor(a_bic.tensor(), &a_bic_path)?;
    let cube_sr = mix(&s, &a_sr)?;
    let cube_bic = mix(&s, &a_bic)?;
    save_tensor(&cube_sr, &cube_sr_path)?;
    save_tensor(&cube_bic, &cube_bic_path)?;

    let sr_report = evaluate(&reference, &cube_sr, &metrics_cfg)?;
    let bic_report = evaluate(&reference, &cube_bic, &metrics_cfg)?;
    let text = summary_csv(&[("rdn-dl", &sr_report), ("bicubic", &bic_report)]);
    fs::write(&summary_path, &text).map_err(|e| Error::Io { path: summary_path.clone(), source: e })?;
    print!("{text}");
    Ok(())
}
