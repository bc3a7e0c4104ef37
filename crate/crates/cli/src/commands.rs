use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use rayon::prelude::*;

use midframe::bench::{run_benchmark, BenchmarkConfig, METRIC_SPACE};
use midframe::dataset::{load_dataset, DatasetLayout};
use midframe::flo::{flow_to_color, read_flo, write_flo};
use midframe::fusion::{load_weights, save_weights, FusionMode, FusionWeights};
use midframe::image::{load_image, save_image};
use midframe::pipeline::{bidirectional_flow, estimate_flow, interpolate as interpolate_pair, interpolate_with_flows};
use midframe::train::{train_fusion, write_history_csv, TrainSample};
use midframe::warp::Timestep;
use midframe::{DenseFlow, Image};

use crate::config::{FlowSource, RunConfig};
use crate::{DataError, UsageError};

fn weights_for(cfg: &RunConfig) -> Result<Option<FusionWeights>> {
    if cfg.fusion_config().mode != FusionMode::Learned {
        return Ok(None);
    }
    let path = cfg.weights.as_ref().ok_or(midframe::Error::MissingWeights)?;
    Ok(Some(load_weights(path)?))
}

fn no_flow_files(cfg: &RunConfig, what: &str) -> Result<()> {
    if cfg.flow == FlowSource::File {
        bail!(UsageError(format!("{what} estimates flow itself; use --flow gf, lk or zero")));
    }
    Ok(())
}

fn worker_pool(cfg: &RunConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_threads())
        .build()
        .context("cannot start worker pool")
}

/// `out.png` for a single timestep, `out_t0.250.png` style for several.
pub fn timestep_path(out: &Path, t: Timestep, multiple: bool) -> PathBuf {
    if !multiple {
        return out.to_path_buf();
    }
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}_t{:.3}.{}", t.value(), ext.to_string_lossy()),
        None => format!("{stem}_t{:.3}", t.value()),
    };
    out.with_file_name(name)
}

pub fn interpolate(frame0: &Path, frame1: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let a = load_image(frame0)?;
    let b = load_image(frame1)?;
    let weights = weights_for(cfg)?;
    let pipeline = cfg.pipeline();
    let start = Instant::now();
    let (f01, f10) = if cfg.flow == FlowSource::File {
        (read_flo(&cfg.flo[0])?, read_flo(&cfg.flo[1])?)
    } else {
        bidirectional_flow(&a, &b, &pipeline)?
    };
    let flow_ms = start.elapsed().as_secs_f64() * 1e3;
    let outs = interpolate_with_flows(&a, &b, &f01, &f10, &cfg.timesteps, &pipeline, weights.as_ref())?;
    let total_ms = start.elapsed().as_secs_f64() * 1e3;
    let multiple = cfg.timesteps.len() > 1;
    for (img, &t) in outs.iter().zip(&cfg.timesteps) {
        let path = timestep_path(out, t, multiple);
        save_image(img, &path)?;
        println!("wrote {}", path.display());
    }
    println!("flow {flow_ms:.2} ms, total {total_ms:.2} ms");
    Ok(())
}

fn is_frame(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png" | "ppm" | "pgm" | "pnm")
    )
}

pub fn sequence(in_dir: &Path, out_dir: &Path, factor: usize, cfg: &RunConfig) -> Result<()> {
    no_flow_files(cfg, "sequence")?;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(in_dir)
        .with_context(|| format!("cannot list {}", in_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_frame(p))
        .collect();
    paths.sort();
    if paths.len() < 2 {
        bail!(DataError(format!("{} holds fewer than two frames", in_dir.display())));
    }
    let mut frames: Vec<Image> = Vec::with_capacity(paths.len());
    for p in &paths {
        let img = load_image(p)?;
        if let Some(first) = frames.first() {
            if !img.same_shape(first) {
                bail!(DataError(format!(
                    "{}: {}x{}x{} differs from {}x{}x{} of {}",
                    p.display(),
                    img.width(),
                    img.height(),
                    img.channels(),
                    first.width(),
                    first.height(),
                    first.channels(),
                    paths[0].display()
                )));
            }
        }
        frames.push(img);
    }

    let weights = weights_for(cfg)?;
    let pipeline = cfg.pipeline();
    let pool = worker_pool(cfg)?;
    let mut step = 1;
    while step < factor {
        let mids: Vec<Image> = pool.install(|| {
            frames
                .par_windows(2)
                .map(|w| interpolate_pair(&w[0], &w[1], Timestep::MIDDLE, &pipeline, weights.as_ref()))
                .collect::<midframe::Result<_>>()
        })?;
        let mut next = Vec::with_capacity(frames.len() + mids.len());
        for (f, m) in frames.into_iter().zip(mids.into_iter().map(Some).chain(std::iter::once(None))) {
            next.push(f);
            next.extend(m);
        }
        frames = next;
        step *= 2;
    }

    std::fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let width = frames.len().to_string().len().max(5);
    for (i, f) in frames.iter().enumerate() {
        save_image(f, out_dir.join(format!("frame_{i:0width$}.png")))?;
    }
    println!("wrote {} frames to {}", frames.len(), out_dir.display());
    Ok(())
}

fn write_flow_pair(flow: &DenseFlow, prefix: &Path, suffix: &str) -> Result<()> {
    let name = prefix.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let flo = prefix.with_file_name(format!("{name}{suffix}.flo"));
    let png = prefix.with_file_name(format!("{name}{suffix}.png"));
    write_flo(flow, &flo)?;
    save_image(&flow_to_color(flow, None), &png)?;
    println!("wrote {} and {}", flo.display(), png.display());
    Ok(())
}

pub fn flow(frame0: &Path, frame1: &Path, out: &Path, bidirectional: bool, cfg: &RunConfig) -> Result<()> {
    no_flow_files(cfg, "flow")?;
    let a = load_image(frame0)?;
    let b = load_image(frame1)?;
    let prefix = if out.extension().is_some_and(|e| e == "flo" || e == "png") {
        out.with_extension("")
    } else {
        out.to_path_buf()
    };
    let pipeline = cfg.pipeline();
    let start = Instant::now();
    if bidirectional {
        let (f01, f10) = bidirectional_flow(&a, &b, &pipeline)?;
        write_flow_pair(&f01, &prefix, "")?;
        write_flow_pair(&f10, &prefix, "_10")?;
    } else {
        write_flow_pair(&estimate_flow(&a, &b, &pipeline)?, &prefix, "")?;
    }
    info!("flow took {:.2} ms", start.elapsed().as_secs_f64() * 1e3);
    Ok(())
}

/// Lines that identify a run: the command line and the resolved config.
fn echo(command: &str, cfg: &RunConfig) -> Vec<String> {
    let mut lines = vec![format!("command: {command}")];
    lines.extend(cfg.to_toml().lines().map(String::from));
    lines
}

pub fn benchmark(root: &Path, layout: DatasetLayout, report: &Path, cfg: &RunConfig) -> Result<()> {
    no_flow_files(cfg, "benchmark")?;
    let ds = load_dataset(root, layout)?;
    for w in &ds.warnings {
        warn!("{w}");
    }
    if ds.records.is_empty() {
        bail!(DataError(format!("no triplets found under {} ({layout})", root.display())));
    }
    let weights = weights_for(cfg)?;
    let bench = BenchmarkConfig {
        repeat: cfg.repeat,
        warmup: cfg.warmup,
        threads: cfg.worker_threads(),
    };
    info!("benchmarking {} triplets on {} worker(s)", ds.records.len(), bench.threads);
    let mut rep = run_benchmark(&ds.records, &cfg.pipeline(), &bench, weights.as_ref())?;
    rep.config_echo = echo(
        &format!("midframe benchmark {} --layout {layout}", root.display()),
        cfg,
    );
    rep.config_echo.push(format!("metrics: {METRIC_SPACE}"));
    std::fs::write(report, rep.to_csv()).with_context(|| format!("cannot write {}", report.display()))?;
    let table = rep.to_table();
    let table_path = report.with_extension("txt");
    std::fs::write(&table_path, &table).with_context(|| format!("cannot write {}", table_path.display()))?;
    print!("{table}");
    if !rep.failures.is_empty() {
        warn!("{} of {} triplets failed", rep.failures.len(), ds.records.len());
    }
    Ok(())
}

pub fn train(
    root: &Path,
    layout: DatasetLayout,
    out: &Path,
    history: Option<&Path>,
    cfg: &RunConfig,
) -> Result<()> {
    no_flow_files(cfg, "train")?;
    let ds = load_dataset(root, layout)?;
    for w in &ds.warnings {
        warn!("{w}");
    }
    let samples: Vec<TrainSample> = ds
        .records
        .iter()
        .map(|r| r.load().map(TrainSample::from))
        .collect::<midframe::Result<_>>()?;
    if samples.is_empty() {
        bail!(DataError(format!("no triplets found under {} ({layout})", root.display())));
    }
    let mut fusion = cfg.fusion_config();
    fusion.mode = FusionMode::Learned;
    let mut pipeline = cfg.pipeline();
    pipeline.fusion = fusion;
    let outcome = train_fusion(&samples, &fusion, &pipeline, &cfg.train)?;

    save_weights(&outcome.weights, out)?;
    let history_path = history.map_or_else(|| sibling(out, "history.csv"), Path::to_path_buf);
    let mut csv = Vec::new();
    write_history_csv(&outcome.history, &mut csv)?;
    std::fs::write(&history_path, csv).with_context(|| format!("cannot write {}", history_path.display()))?;
    let echo_path = sibling(out, "toml");
    let mut resolved = cfg.clone();
    resolved.fusion = crate::config::Fusion::Learned;
    let text = echo(&format!("midframe train {} --layout {layout}", root.display()), &resolved)
        .iter()
        .map(|l| if l.starts_with("command:") { format!("# {l}") } else { l.clone() })
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(&echo_path, text + "\n").with_context(|| format!("cannot write {}", echo_path.display()))?;

    if let (Some(first), Some(last)) = (outcome.history.first(), outcome.history.last()) {
        println!(
            "{} steps: l_rec {:.6} -> {:.6}, total {:.6} -> {:.6}",
            outcome.history.len(),
            first.l_rec,
            last.l_rec,
            first.total,
            last.total
        );
    }
    println!("wrote {}, {} and {}", out.display(), history_path.display(), echo_path.display());
    Ok(())
}

/// `dir/name.ext` -> `dir/name.ext.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}
