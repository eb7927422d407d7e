use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::info;
use patchsift_core::dataset::{
    extract_features, ingest_image_dir, load_patch_pack, write_patch_pack, FeatureConfig, FeatureMatrix, PatchSet,
};
use patchsift_core::hashindex::{bucket_stats, build_table, default_prefix_len, HashTable};
use patchsift_core::klsh::{
    build_hash_family, hash_all, read_codes_csv, read_family, read_family_header, write_codes_csv, write_family,
    HashCode, KlshConfig,
};
use patchsift_core::metrics::{emit_plot_csv, hamming_separation, variance_report, BucketSummary, PlotCsv};
use patchsift_core::sampler::{bst_sample, cap_sample, target_sample, write_selection_csv, SampleMode};
use patchsift_core::{format_f64, Error, Result};

use crate::config::FileConfig;
use crate::HashFlags;

pub const FAMILY_FILE: &str = "family.klf";
pub const CODES_FILE: &str = "codes.csv";
pub const SELECTION_FILE: &str = "selection.csv";
pub const BUCKETS_FILE: &str = "buckets.csv";
pub const VARIANCE_FILE: &str = "variance.csv";
pub const HAMMING_FILE: &str = "hamming.csv";
pub const OCCUPANCY_FILE: &str = "occupancy.csv";
pub const TABLE_FILE: &str = "table.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceOn {
    #[default]
    Features,
    Pixels,
}

impl FromStr for VarianceOn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "features" => Ok(VarianceOn::Features),
            "pixels" => Ok(VarianceOn::Pixels),
            other => Err(Error::Config(format!("variance_on must be features or pixels, got {other:?}"))),
        }
    }
}

pub struct ModeFlags {
    pub epsilon: Option<f64>,
    pub target: Option<usize>,
    pub cap: Option<usize>,
    pub seed: Option<u64>,
}

enum Mode {
    Epsilon(f64),
    Target(usize),
    Cap(usize, u64),
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn summarize(set: &PatchSet) -> String {
    let s = set.shape();
    format!("N={} H={} W={} C={}", set.len(), s.height, s.width, s.channels)
}

pub fn ingest(images: Option<&Path>, manifest: Option<&Path>, pack: Option<&Path>, out: &Path) -> Result<()> {
    let set = match (images, manifest, pack) {
        (Some(dir), Some(m), _) => ingest_image_dir(dir, m)?,
        (None, _, Some(p)) => load_patch_pack(p)?,
        _ => return Err(Error::Config("give --images with --manifest, or --pack".into())),
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_patch_pack(&set, out)?;
    println!("{}", summarize(&set));
    Ok(())
}

fn feature_config(file: &FileConfig, flags: &HashFlags) -> Result<FeatureConfig> {
    let d = FeatureConfig::default();
    Ok(FeatureConfig {
        normalize: file.pick(flags.normalize, "normalize")?.unwrap_or(d.normalize),
        downsample_factor: file.pick(flags.downsample, "downsample")?.unwrap_or(d.downsample_factor),
        band_mode: file.pick(flags.band_mode, "band_mode")?.unwrap_or(d.band_mode),
    })
}

fn klsh_config(file: &FileConfig, flags: &HashFlags, n: usize) -> Result<KlshConfig> {
    let mut cfg = KlshConfig::defaults_for(n);
    if let Some(v) = file.pick(flags.bits, "bits")? {
        cfg.num_bits = v;
    }
    if let Some(v) = file.pick(flags.anchors, "anchors")? {
        cfg.anchors_per_bit = v;
        cfg.subset_size = v.div_ceil(4).min(30);
    }
    if let Some(v) = file.pick(flags.subset, "subset")? {
        cfg.subset_size = v;
    }
    if let Some(v) = file.pick(flags.anchor_mode, "anchor_mode")? {
        cfg.anchor_mode = v;
    }
    if let Some(v) = file.pick(flags.kernel, "kernel")? {
        cfg.kernel.kind = v;
    }
    if let Some(v) = file.pick(flags.gamma, "gamma")? {
        cfg.kernel.gamma = v;
    }
    if let Some(v) = file.pick(flags.degree, "degree")? {
        cfg.kernel.degree = v;
    }
    if let Some(v) = file.pick(flags.coef0, "coef0")? {
        cfg.kernel.coef0 = v;
    }
    if let Some(v) = file.pick(flags.seed, "seed")? {
        cfg.seed = v;
    }
    if let Some(v) = file.pick(flags.eig_tol, "eig_tol")? {
        cfg.eig_tol = v;
    }
    if let Some(v) = file.pick(flags.center_kernel, "center_kernel")? {
        cfg.center_kernel = v;
    }
    cfg.validate(n)?;
    Ok(cfg)
}

fn prefix_len(file: &FileConfig, flag: Option<u32>, code_len: u32) -> Result<u32> {
    let b = file.pick(flag, "prefix_bits")?.unwrap_or_else(|| default_prefix_len(code_len));
    if b == 0 || b > code_len {
        return Err(Error::Config(format!("prefix bits must be in 1..={code_len}, got {b}")));
    }
    Ok(b)
}

fn print_occupancy(table: &HashTable) {
    let s = bucket_stats(table);
    println!(
        "prefix_bits={} buckets={} min={} max={} median={} mean={:.3}",
        table.prefix_len(),
        s.buckets,
        s.min,
        s.max,
        s.median,
        s.mean
    );
}

pub fn hash(file: &FileConfig, pack: &Path, out: &Path, prefix_flag: Option<u32>, flags: &HashFlags) -> Result<()> {
    let set = load_patch_pack(pack)?;
    let fcfg = feature_config(file, flags)?;
    if fcfg.downsample_factor == 0 {
        return Err(Error::Config("downsample factor must be at least 1".into()));
    }
    let cfg = klsh_config(file, flags, set.len())?;
    let prefix = prefix_len(file, prefix_flag, cfg.num_bits)?;

    let features = extract_features(&set, &fcfg)?;
    info!("features: {} rows of dimension {}", features.len(), features.dim());
    let family = build_hash_family(&features, &cfg)?;
    let codes = hash_all(&family, &features)?;
    let table = build_table(features.ids(), &codes, prefix)?;

    create_dir(out)?;
    write_family(&family, &out.join(FAMILY_FILE))?;
    write_codes_csv(features.ids(), &codes, &out.join(CODES_FILE))?;
    println!("hashed {} patches into {}-bit codes", codes.len(), cfg.num_bits);
    print_occupancy(&table);
    Ok(())
}

/// Pack, features, codes and table for a work directory.
struct Loaded {
    set: PatchSet,
    features: FeatureMatrix,
    codes: Vec<HashCode>,
    table: HashTable,
}

fn load_work(file: &FileConfig, pack: &Path, dir: &Path, prefix_flag: Option<u32>) -> Result<Loaded> {
    let set = load_patch_pack(pack)?;
    let family_path = dir.join(FAMILY_FILE);
    let codes_path = dir.join(CODES_FILE);
    for p in [&family_path, &codes_path] {
        if !p.is_file() {
            return Err(Error::Io {
                path: p.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "missing; run `hash` first"),
            });
        }
    }
    let header = read_family_header(&family_path)?;
    let features = extract_features(&set, &header.feature_config)?;
    // Checks that the pack is the one the family was built on.
    read_family(&family_path, &features)?;
    let (ids, codes) = read_codes_csv(&codes_path, header.config.num_bits)?;
    if ids != features.ids() {
        return Err(Error::Format(format!(
            "{} does not list the same patches as {}",
            codes_path.display(),
            pack.display()
        )));
    }
    let prefix = prefix_len(file, prefix_flag, header.config.num_bits)?;
    let table = build_table(&ids, &codes, prefix)?;
    Ok(Loaded {
        set,
        features,
        codes,
        table,
    })
}

fn resolve_mode(file: &FileConfig, flags: &ModeFlags) -> Result<Mode> {
    let seed = file.pick(flags.seed, "seed")?.unwrap_or(0);
    let from_flags = match (flags.epsilon, flags.target, flags.cap) {
        (Some(e), None, None) => Some(Mode::Epsilon(e)),
        (None, Some(t), None) => Some(Mode::Target(t)),
        (None, None, Some(c)) => Some(Mode::Cap(c, seed)),
        (None, None, None) => None,
        _ => return Err(Error::Config("give only one of --epsilon, --target, --cap".into())),
    };
    if let Some(m) = from_flags {
        return Ok(m);
    }
    let set: Vec<&str> = ["epsilon", "target", "cap"]
        .into_iter()
        .filter(|k| file.contains(k))
        .collect();
    match set.as_slice() {
        ["epsilon"] => Ok(Mode::Epsilon(file.get("epsilon")?.expect("present"))),
        ["target"] => Ok(Mode::Target(file.get("target")?.expect("present"))),
        ["cap"] => Ok(Mode::Cap(file.get("cap")?.expect("present"), seed)),
        [] => Err(Error::Config("choose a sampling mode: --epsilon, --target or --cap".into())),
        _ => Err(Error::Config(format!("config sets more than one sampling mode: {}", set.join(", ")))),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn sample(
    file: &FileConfig,
    pack: &Path,
    dir: &Path,
    out: &Path,
    prefix_flag: Option<u32>,
    flags: ModeFlags,
    variance_on: Option<VarianceOn>,
) -> Result<()> {
    let mode = resolve_mode(file, &flags)?;
    let variance_on = file.pick(variance_on, "variance_on")?.unwrap_or_default();
    let work = load_work(file, pack, dir, prefix_flag)?;

    let result = match mode {
        Mode::Epsilon(e) => bst_sample(&work.table, &work.features, e)?,
        Mode::Target(t) => target_sample(&work.table, &work.features, t)?,
        Mode::Cap(c, s) => cap_sample(&work.table, c, s)?,
    };
    let pixels;
    let variance_rows = match variance_on {
        VarianceOn::Features => &work.features,
        VarianceOn::Pixels => {
            pixels = extract_features(&work.set, &FeatureConfig::raw_pixels())?;
            &pixels
        }
    };
    let report = variance_report(&result, variance_rows, &work.set.labels())?;

    create_dir(out)?;
    write_selection_csv(&work.table, &result, &out.join(SELECTION_FILE))?;
    emit_plot_csv(&BucketSummary(&result), &out.join(BUCKETS_FILE))?;
    emit_plot_csv(&report, &out.join(VARIANCE_FILE))?;

    if let SampleMode::Target { target, epsilon } = result.mode {
        println!("target={target} epsilon={}", format_f64(epsilon));
    }
    println!(
        "selected={} of {} retention={:.6} global_ratio={:.6}{}",
        result.len(),
        work.features.len(),
        report.retention,
        report.global_ratio(),
        if report.global.zero_variance { " (zero variance)" } else { "" }
    );
    Ok(())
}

pub fn report(
    file: &FileConfig,
    pack: &Path,
    dir: &Path,
    out: &Path,
    prefix_flag: Option<u32>,
    seed: Option<u64>,
) -> Result<()> {
    let seed = file.pick(seed, "seed")?.unwrap_or(0);
    let work = load_work(file, pack, dir, prefix_flag)?;
    let separation = hamming_separation(&work.codes, &work.set.labels(), seed)?;
    let occupancy = bucket_stats(&work.table);

    create_dir(out)?;
    emit_plot_csv(&separation, &out.join(HAMMING_FILE))?;
    emit_plot_csv(&occupancy, &out.join(OCCUPANCY_FILE))?;
    work.table.write_dump_csv(&out.join(TABLE_FILE))?;

    for row in separation.rows() {
        println!("{} = {}", row[0], row[1]);
    }
    print_occupancy(&work.table);
    Ok(())
}

