//! The `agv` command line.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on data errors. Diagnostics
//! go to standard error; results go to files or to standard output as JSON.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use crate::class::CLASS_NAMES;
use crate::dataset::{class_counts, ingest_dataset, Manifest, Split};
use crate::ensemble::{argmax_labels, ensemble_scores, LabelRaster};
use crate::error::Error;
use crate::eval::{accumulate_tile, evaluate_partitioned, metrics};
use crate::mosaic::{build_mosaic_dataset, MosaicSpec};
use crate::predictor::{list_score_ids, PredictorSpec, ScoreMap};
use crate::resample::{apply_plan, plan_resample, TargetCounts};
use crate::synth::{generate_synthetic, SynthConfig, DEFAULT_DENSITY};
use crate::tta::{tta_predict, TtaConfig};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (agsc format v1)");

#[derive(Debug, Parser)]
#[command(name = "agv", version = VERSION, about = "Multi-label RGBN tile pipeline")]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 0 picks the number of CPUs.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset tree.
    Synth(SynthArgs),
    /// Scan a dataset root into a manifest.
    Ingest {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-class image counts of a manifest.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Plan and apply class-balanced resampling.
    Resample {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plan_out: PathBuf,
    },
    /// Build a 2x or 3x mosaic dataset.
    Mosaic {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        factor: usize,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to `<out>/manifest.jsonl`.
        #[arg(long)]
        manifest_out: Option<PathBuf>,
    },
    /// Write score maps for every tile in a manifest.
    Predict {
        #[arg(long)]
        manifest: PathBuf,
        /// oracle | constant:K | noisy-oracle:P[:SEED] | external:DIR
        #[arg(long)]
        predictor: String,
        #[arg(long)]
        out: PathBuf,
        /// Comma list of rot90, rot180, rot270, hflip, scale2, scale3, d4.
        #[arg(long)]
        tta: Option<String>,
    },
    /// Weighted average of score directories.
    Ensemble {
        #[arg(long, value_delimiter = ',', required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert score maps to class-index PNGs.
    Labels {
        #[arg(long)]
        scores: PathBuf,
        /// Supplies validity; without it every pixel counts as valid.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-class IoU and mIoU against a manifest's ground truth.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory of `<id>.agsc` score maps or `<id>.png` label rasters.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "json")]
        format: ReportFormat,
    },
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    tiles: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0.1)]
    overlap_rate: f64,
    /// Eight foreground class densities.
    #[arg(long, value_delimiter = ',')]
    density: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ReportFormat {
    Json,
    Table,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn require_seed(seed: Option<u64>, command: &str) -> CliResult<u64> {
    seed.ok_or_else(|| Failure::Usage(format!("`{command}` needs --seed")))
}

fn emit(value: serde_json::Value) {
    println!("{value}");
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .try_init();

    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: --threads: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Synth(args) => synth(args, require_seed(cli.seed, "synth")?),
        Command::Ingest { root, split, out } => {
            let manifest = ingest_dataset(root, *split)?;
            manifest.write(out)?;
            emit(json!({"records": manifest.len(), "manifest": out}));
            Ok(())
        }
        Command::Stats { manifest } => {
            let m = Manifest::read(manifest)?;
            let counts = class_counts(&m);
            emit(json!({
                "split": m.split,
                "records": m.len(),
                "counts": counts,
                "class_names": CLASS_NAMES,
            }));
            Ok(())
        }
        Command::Resample {
            manifest,
            targets,
            out,
            plan_out,
        } => {
            let seed = require_seed(cli.seed, "resample")?;
            let m = Manifest::read(manifest)?;
            let targets = TargetCounts::read(targets)?;
            let plan = plan_resample(&m, &targets, seed)?;
            let resampled = apply_plan(&m, &plan)?;
            plan.write(plan_out)?;
            resampled.write(out)?;
            emit(json!({
                "records": resampled.len(),
                "realized": plan.realized,
                "targets": targets.as_array(),
            }));
            Ok(())
        }
        Command::Mosaic {
            manifest,
            factor,
            out,
            manifest_out,
        } => {
            let seed = require_seed(cli.seed, "mosaic")?;
            let spec = MosaicSpec::new(*factor, seed).map_err(|e| Failure::Usage(format!("--factor: {e}")))?;
            let m = Manifest::read(manifest)?;
            let mosaics = build_mosaic_dataset(&m, spec, out)?;
            let path = manifest_out.clone().unwrap_or_else(|| out.join("manifest.jsonl"));
            mosaics.write(&path)?;
            emit(json!({"records": mosaics.len(), "manifest": path}));
            Ok(())
        }
        Command::Predict {
            manifest,
            predictor,
            out,
            tta,
        } => {
            let mut spec: PredictorSpec = predictor
                .parse()
                .map_err(|e: Error| Failure::Usage(format!("--predictor: {e}")))?;
            if let PredictorSpec::NoisyOracle { seed, .. } = &mut spec {
                if seed.is_none() {
                    *seed = Some(require_seed(cli.seed, "predict --predictor noisy-oracle")?);
                }
            }
            let config = match tta {
                Some(list) => list
                    .parse::<TtaConfig>()
                    .map_err(|e| Failure::Usage(format!("--tta: {e}")))?,
                None => TtaConfig::identity(),
            };
            let m = Manifest::read(manifest)?;
            fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            let count = predict_all(&m, &spec, &config, out)?;
            emit(json!({"tiles": count, "out": out}));
            Ok(())
        }
        Command::Ensemble { inputs, weights, out } => ensemble(inputs, weights.as_deref(), out),
        Command::Labels { scores, manifest, out } => labels(scores, manifest.as_deref(), out),
        Command::Evaluate {
            manifest,
            pred,
            report,
            format,
        } => evaluate(manifest, pred, report, *format),
    }
}

fn synth(args: &SynthArgs, seed: u64) -> CliResult<()> {
    let mut class_density = DEFAULT_DENSITY;
    if let Some(d) = &args.density {
        if d.len() != 8 {
            return Err(Failure::Usage(format!("--density: expected 8 values, got {}", d.len())));
        }
        class_density[1..].copy_from_slice(d);
    }
    let config = SynthConfig {
        tile_count: args.tiles,
        size: args.size,
        seed,
        class_density,
        overlap_rate: args.overlap_rate,
    };
    config
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let manifest = generate_synthetic(&config, &args.out)?;
    emit(json!({"tiles": manifest.len(), "out": args.out}));
    Ok(())
}

/// Predicts each distinct tile id once; returns the number of score files.
fn predict_all(m: &Manifest, spec: &PredictorSpec, config: &TtaConfig, out: &Path) -> CliResult<usize> {
    let mut seen = BTreeSet::new();
    let unique: Vec<usize> = (0..m.len()).filter(|&i| seen.insert(m.records[i].id.as_str())).collect();
    unique.par_iter().try_for_each(|&i| -> crate::Result<()> {
        let tile = m.load_tile(i)?;
        tta_predict(spec, &tile, config)?.write_to_dir(out)?;
        Ok(())
    })?;
    Ok(unique.len())
}

fn ensemble(inputs: &[PathBuf], weights: Option<&[f64]>, out: &Path) -> CliResult<()> {
    let weights = match weights {
        Some(w) if w.len() != inputs.len() => {
            return Err(Failure::Usage(format!(
                "--weights: {} values for {} inputs",
                w.len(),
                inputs.len()
            )))
        }
        Some(w) => w.to_vec(),
        None => vec![1.0; inputs.len()],
    };
    let ids = list_score_ids(&inputs[0])?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    ids.par_iter().try_for_each(|id| -> crate::Result<()> {
        let maps = inputs
            .iter()
            .map(|dir| ScoreMap::read_from_dir(dir, id))
            .collect::<crate::Result<Vec<_>>>()?;
        ensemble_scores(&maps, &weights)?.write_to_dir(out)?;
        Ok(())
    })?;
    emit(json!({"tiles": ids.len(), "out": out}));
    Ok(())
}

fn labels(scores: &Path, manifest: Option<&Path>, out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let write = |map: ScoreMap, validity: Vec<bool>| -> crate::Result<()> {
        let raster = argmax_labels(&map, &validity)?;
        raster.write_png(&out.join(format!("{}.png", raster.tile_id)))
    };
    let count = match manifest {
        Some(path) => {
            let m = Manifest::read(path)?;
            let mut seen = BTreeSet::new();
            let unique: Vec<usize> = (0..m.len()).filter(|&i| seen.insert(m.records[i].id.as_str())).collect();
            unique.par_iter().try_for_each(|&i| -> crate::Result<()> {
                let tile = m.load_tile(i)?;
                let map = ScoreMap::read_from_dir(scores, &tile.id)?;
                if map.dims() != tile.dims() {
                    return Err(Error::dims(tile.dims(), map.dims()));
                }
                write(map, tile.validity().to_vec())
            })?;
            unique.len()
        }
        None => {
            let ids = list_score_ids(scores)?;
            ids.par_iter().try_for_each(|id| -> crate::Result<()> {
                let map = ScoreMap::read_from_dir(scores, id)?;
                let n = map.height() * map.width();
                write(map, vec![true; n])
            })?;
            ids.len()
        }
    };
    emit(json!({"tiles": count, "out": out}));
    Ok(())
}

/// Score map (argmax with lowest-index ties) or label PNG for a tile.
fn load_prediction(dir: &Path, tile: &crate::TileSample) -> crate::Result<LabelRaster> {
    let scores = ScoreMap::path_in(dir, &tile.id);
    if scores.is_file() {
        let map = ScoreMap::read_from_dir(dir, &tile.id)?;
        if map.dims() != tile.dims() {
            return Err(Error::dims(tile.dims(), map.dims()));
        }
        return argmax_labels(&map, tile.validity());
    }
    let png = dir.join(format!("{}.png", tile.id));
    if png.is_file() {
        return LabelRaster::read_png(&png, tile.id.clone());
    }
    Err(Error::MissingScoreFile(tile.id.clone(), dir.to_path_buf()))
}

fn evaluate(manifest: &Path, pred: &Path, report: &Path, format: ReportFormat) -> CliResult<()> {
    let m = Manifest::read(manifest)?;
    let partitions = rayon::current_num_threads();
    let conf = evaluate_partitioned(m.len(), partitions, |i| {
        let tile = m.load_tile(i)?;
        let labels = load_prediction(pred, &tile)?;
        accumulate_tile(&labels, &tile)
    })?;
    let result = metrics(&conf)?;
    if let Some(parent) = report.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let json = result.to_json();
    fs::write(report, format!("{json}\n")).map_err(|e| Error::io(report, e))?;
    match format {
        ReportFormat::Json => println!("{json}"),
        ReportFormat::Table => print!("{}", result.to_table(&pred.display().to_string())),
    }
    Ok(())
}
