//! Benchmark harness: timed interpolation of evaluation triplets, quality
//! metrics against ground truth, and CSV / table reports.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Triplet, TripletRecord};
use crate::error::{Error, Result};
use crate::fusion::FusionWeights;
use crate::image::Image;
use crate::metrics::{interpolation_error, psnr, ssim};
use crate::pipeline::{bidirectional_flow, synthesize, PipelineConfig};
use crate::warp::Timestep;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Timed runs per triplet; the reported times are their medians.
    pub repeat: usize,
    /// One untimed run per triplet before measuring.
    pub warmup: bool,
    /// Worker threads over triplets; `1` runs serially, which timing
    /// comparisons require.
    pub threads: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            repeat: 3,
            warmup: true,
            threads: 1,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeat == 0 || self.threads == 0 {
            return Err(Error::InvalidParameter("repeat and threads must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub ie: f64,
    pub flow_ms: f64,
    pub total_ms: f64,
    /// Every timed `(flow_ms, total_ms)` pair, in run order.
    pub runs: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub median: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregates {
    pub psnr: Stat,
    pub ssim: Stat,
    pub ie: Stat,
    pub flow_ms: Stat,
    pub total_ms: Stat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    /// `(id, error)` of triplets that could not be evaluated.
    pub failures: Vec<(String, String)>,
    /// `None` when every triplet failed.
    pub aggregates: Option<Aggregates>,
    /// `key = value` lines describing the run, echoed into reports.
    pub config_echo: Vec<String>,
}

/// Color space the quality metrics are computed in.
pub const METRIC_SPACE: &str = "luma";

/// Median of a non-empty slice; even lengths average the middle pair.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Arithmetic mean in row order. Any infinite PSNR makes the mean
/// infinite.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn stat(values: &[f64]) -> Stat {
    Stat {
        mean: mean(values),
        median: median(values),
    }
}

pub fn aggregate(rows: &[BenchmarkRow]) -> Option<Aggregates> {
    if rows.is_empty() {
        return None;
    }
    let col = |f: fn(&BenchmarkRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    Some(Aggregates {
        psnr: stat(&col(|r| r.psnr)),
        ssim: stat(&col(|r| r.ssim)),
        ie: stat(&col(|r| r.ie)),
        flow_ms: stat(&col(|r| r.flow_ms)),
        total_ms: stat(&col(|r| r.total_ms)),
    })
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Interpolates one triplet at `t = 0.5`, timing the flow phase and the
/// whole pipeline.
fn run_once(
    t: &Triplet,
    pipeline: &PipelineConfig,
    weights: Option<&FusionWeights>,
) -> Result<(Image, f64, f64)> {
    let start = Instant::now();
    let (f01, f10) = bidirectional_flow(&t.frame0, &t.frame1, pipeline)?;
    let flow_ms = ms(start);
    let out = synthesize(&t.frame0, &t.frame1, &f01, &f10, Timestep::MIDDLE, &pipeline.fusion, weights)?;
    Ok((out, flow_ms, ms(start)))
}

fn evaluate(
    t: &Triplet,
    pipeline: &PipelineConfig,
    bench: &BenchmarkConfig,
    weights: Option<&FusionWeights>,
) -> Result<BenchmarkRow> {
    t.frame0.check_same_shape(&t.gt)?;
    t.frame0.check_same_shape(&t.frame1)?;
    if bench.warmup {
        run_once(t, pipeline, weights)?;
    }
    let mut runs = Vec::with_capacity(bench.repeat);
    let mut output = None;
    for _ in 0..bench.repeat {
        let (out, flow_ms, total_ms) = run_once(t, pipeline, weights)?;
        runs.push((flow_ms, total_ms));
        output = Some(out);
    }
    let out = output.expect("repeat >= 1");
    let flows: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let totals: Vec<f64> = runs.iter().map(|r| r.1).collect();
    log::debug!("{}: flow runs {flows:?} ms, total runs {totals:?} ms", t.id);
    Ok(BenchmarkRow {
        id: t.id.clone(),
        psnr: psnr(&out, &t.gt)?,
        ssim: ssim(&out, &t.gt)?,
        ie: interpolation_error(&out, &t.gt)?,
        flow_ms: median(&flows),
        total_ms: median(&totals),
        runs,
    })
}

/// `key = value` description of a run.
pub fn describe(pipeline: &PipelineConfig, bench: &BenchmarkConfig) -> Vec<String> {
    let f = &pipeline.fusion;
    vec![
        format!("flow = {}", pipeline.flow),
        format!("gf = {:?}", pipeline.gf),
        format!("shi_tomasi = {:?}", pipeline.shi_tomasi),
        format!("lk = {:?}", pipeline.lk),
        format!(
            "fusion = {} (base_channels {}, resblocks_per_stage {})",
            f.mode, f.base_channels, f.resblocks_per_stage
        ),
        format!("repeat = {}, warmup = {}, threads = {}", bench.repeat, bench.warmup, bench.threads),
        format!("metrics = {METRIC_SPACE}"),
    ]
}

fn run<T: Sync>(
    items: &[T],
    load: impl Fn(&T) -> (String, Result<Triplet>) + Sync,
    pipeline: &PipelineConfig,
    bench: &BenchmarkConfig,
    weights: Option<&FusionWeights>,
) -> Result<BenchmarkReport> {
    bench.validate()?;
    pipeline.validate()?;
    if items.is_empty() {
        return Err(Error::Dataset("benchmark dataset is empty".into()));
    }
    let one = |item: &T| -> std::result::Result<BenchmarkRow, (String, String)> {
        let (id, triplet) = load(item);
        triplet
            .and_then(|t| evaluate(&t, pipeline, bench, weights))
            .map_err(|e| (id, e.to_string()))
    };
    let results: Vec<_> = if bench.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(bench.threads)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))?;
        pool.install(|| items.par_iter().map(one).collect())
    } else {
        items.iter().map(one).collect()
    };
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err((id, msg)) => {
                log::warn!("{id}: {msg}");
                failures.push((id, msg));
            }
        }
    }
    Ok(BenchmarkReport {
        aggregates: aggregate(&rows),
        rows,
        failures,
        config_echo: describe(pipeline, bench),
    })
}

/// Benchmarks triplets stored on disk. Triplets that fail to load or
/// interpolate are listed in the report's failures.
pub fn run_benchmark(
    records: &[TripletRecord],
    pipeline: &PipelineConfig,
    bench: &BenchmarkConfig,
    weights: Option<&FusionWeights>,
) -> Result<BenchmarkReport> {
    run(records, |r| (r.id.clone(), r.load()), pipeline, bench, weights)
}

/// Benchmarks triplets already in memory.
pub fn run_benchmark_triplets(
    triplets: &[Triplet],
    pipeline: &PipelineConfig,
    bench: &BenchmarkConfig,
    weights: Option<&FusionWeights>,
) -> Result<BenchmarkReport> {
    run(triplets, |t| (t.id.clone(), Ok(t.clone())), pipeline, bench, weights)
}

/// Formats a value so that parsing it back yields the same `f64`;
/// infinities print as `inf`.
fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

pub const CSV_HEADER: &str = "id,psnr_db,ssim,ie,flow_ms,total_ms";

impl BenchmarkReport {
    /// CSV: `#` comment lines with the config echo, the per-triplet rows,
    /// a blank line, the aggregate block (`statistic,...` header with
    /// `mean` and `median` rows), and `#` lines for failures.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for line in &self.config_echo {
            let _ = writeln!(s, "# {line}");
        }
        let _ = writeln!(s, "{CSV_HEADER}");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                csv_field(&r.id),
                num(r.psnr),
                num(r.ssim),
                num(r.ie),
                num(r.flow_ms),
                num(r.total_ms)
            );
        }
        if let Some(a) = &self.aggregates {
            let _ = writeln!(s);
            let _ = writeln!(s, "statistic,psnr_db,ssim,ie,flow_ms,total_ms");
            for (name, pick) in [("mean", (|x: &Stat| x.mean) as fn(&Stat) -> f64), ("median", |x: &Stat| x.median)] {
                let _ = writeln!(
                    s,
                    "{name},{},{},{},{},{}",
                    num(pick(&a.psnr)),
                    num(pick(&a.ssim)),
                    num(pick(&a.ie)),
                    num(pick(&a.flow_ms)),
                    num(pick(&a.total_ms))
                );
            }
        }
        for (id, msg) in &self.failures {
            let _ = writeln!(s, "# failed {id}: {msg}");
        }
        s
    }

    /// Human-readable aligned table.
    pub fn to_table(&self) -> String {
        let mut lines: Vec<[String; 6]> = vec![["id", "PSNR dB", "SSIM", "IE", "flow ms", "total ms"].map(String::from)];
        let fmt = |r: (&str, f64, f64, f64, f64, f64)| {
            [
                r.0.to_string(),
                if r.1.is_infinite() { "inf".into() } else { format!("{:.3}", r.1) },
                format!("{:.4}", r.2),
                format!("{:.3}", r.3),
                format!("{:.2}", r.4),
                format!("{:.2}", r.5),
            ]
        };
        for r in &self.rows {
            lines.push(fmt((&r.id, r.psnr, r.ssim, r.ie, r.flow_ms, r.total_ms)));
        }
        if let Some(a) = &self.aggregates {
            lines.push(fmt(("mean", a.psnr.mean, a.ssim.mean, a.ie.mean, a.flow_ms.mean, a.total_ms.mean)));
            lines.push(fmt((
                "median",
                a.psnr.median,
                a.ssim.median,
                a.ie.median,
                a.flow_ms.median,
                a.total_ms.median,
            )));
        }
        let widths: Vec<usize> = (0..6).map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0)).collect();
        let mut s = String::new();
        for line in &self.config_echo {
            let _ = writeln!(s, "{line}");
        }
        let body = lines.len() - if self.aggregates.is_some() { 2 } else { 0 };
        for (i, l) in lines.iter().enumerate() {
            if i == 1 || (i == body && body < lines.len()) {
                let _ = writeln!(s, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
            }
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (v, w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
                .collect();
            let _ = writeln!(s, "{}", cells.join("  "));
        }
        for (id, msg) in &self.failures {
            let _ = writeln!(s, "failed {id}: {msg}");
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Parses the rows and aggregate block written by
/// [`BenchmarkReport::to_csv`]. Returns `(rows, [mean, median])` where each
/// row holds the five numeric columns.
pub fn parse_csv(text: &str) -> Result<(Vec<[f64; 5]>, Option<[[f64; 5]; 2]>)> {
    let parse_nums = |fields: &[&str]| -> Result<[f64; 5]> {
        let mut out = [0.0; 5];
        for (o, f) in out.iter_mut().zip(fields) {
            *o = f
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("bad number `{f}` in report")))?;
        }
        Ok(out)
    };
    let mut rows = Vec::new();
    let mut stats: Vec<[f64; 5]> = Vec::new();
    let mut in_stats = false;
    for line in text.lines() {
        if line.starts_with('#') || line.is_empty() || line == CSV_HEADER {
            continue;
        }
        if line.starts_with("statistic,") {
            in_stats = true;
            continue;
        }
        let fields: Vec<&str> = line.rsplitn(6, ',').collect();
        if fields.len() != 6 {
            return Err(Error::Format(format!("bad report line `{line}`")));
        }
        let mut nums: Vec<&str> = fields[..5].to_vec();
        nums.reverse();
        let v = parse_nums(&nums)?;
        if in_stats {
            stats.push(v);
        } else {
            rows.push(v);
        }
    }
    let stats = match stats.len() {
        0 => None,
        2 => Some([stats[0], stats[1]]),
        n => return Err(Error::Format(format!("expected 2 aggregate rows, found {n}"))),
    };
    Ok((rows, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::FlowMethod;
    use crate::synthetic;

    fn static_triplet() -> Triplet {
        let f = synthetic::multi_channel_noise(32, 24, 3, 1.5, 1);
        Triplet { id: "static".into(), frame0: f.clone(), gt: f.clone(), frame1: f }
    }

    fn fast() -> BenchmarkConfig {
        BenchmarkConfig { repeat: 1, warmup: false, threads: 1 }
    }

    #[test]
    fn static_triplet_is_perfect() {
        let r = run_benchmark_triplets(&[static_triplet()], &PipelineConfig::default(), &fast(), None).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].psnr, f64::INFINITY);
        assert_eq!(r.rows[0].ie, 0.0);
        assert!(r.to_csv().contains(",inf,"));
    }

    #[test]
    fn median_and_mean() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(mean(&[1.0, 2.0, 6.0]), 3.0);
        assert_eq!(mean(&[1.0, f64::INFINITY]), f64::INFINITY);
    }

    #[test]
    fn failures_are_recorded_and_the_run_continues() {
        let mut bad = static_triplet();
        bad.id = "bad".into();
        bad.gt = Image::new(8, 8, 3).unwrap();
        let r = run_benchmark_triplets(&[bad, static_triplet()], &PipelineConfig::default(), &fast(), None).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.failures[0].0, "bad");
        assert!(r.to_csv().contains("# failed bad"));
        assert!(run_benchmark_triplets(&[], &PipelineConfig::default(), &fast(), None).is_err());
    }

    #[test]
    fn missing_files_fail_per_sample() {
        let rec = TripletRecord {
            id: "gone".into(),
            frame0: "/nonexistent/a.png".into(),
            gt: "/nonexistent/b.png".into(),
            frame1: "/nonexistent/c.png".into(),
        };
        let r = run_benchmark(&[rec], &PipelineConfig::default(), &fast(), None).unwrap();
        assert!(r.rows.is_empty() && r.aggregates.is_none());
        assert_eq!(r.failures.len(), 1);
    }

    #[test]
    fn metrics_are_deterministic_and_independent_of_workers() {
        let suite: Vec<Triplet> = synthetic::motion_suite(3, 48, 40, 3, 5)
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let (frame0, gt, frame1) = s.triplet();
                Triplet { id: format!("s{i}"), frame0, gt, frame1 }
            })
            .collect();
        let cfg = PipelineConfig { flow: FlowMethod::Lk, ..Default::default() };
        let metrics = |r: &BenchmarkReport| r.rows.iter().map(|x| (x.id.clone(), x.psnr, x.ssim, x.ie)).collect::<Vec<_>>();
        let a = run_benchmark_triplets(&suite, &cfg, &fast(), None).unwrap();
        let b = run_benchmark_triplets(&suite, &cfg, &fast(), None).unwrap();
        let c = run_benchmark_triplets(&suite, &cfg, &BenchmarkConfig { threads: 3, ..fast() }, None).unwrap();
        assert_eq!(metrics(&a), metrics(&b));
        assert_eq!(metrics(&a), metrics(&c));
    }

    #[test]
    fn repeat_records_every_run_and_reports_the_median() {
        let cfg = BenchmarkConfig { repeat: 3, warmup: true, threads: 1 };
        let r = run_benchmark_triplets(&[static_triplet()], &PipelineConfig::default(), &cfg, None).unwrap();
        let row = &r.rows[0];
        assert_eq!(row.runs.len(), 3);
        let flows: Vec<f64> = row.runs.iter().map(|x| x.0).collect();
        assert_eq!(row.flow_ms, median(&flows));
        assert!(row.runs.iter().all(|&(f, t)| f <= t));
    }

    #[test]
    fn csv_aggregates_recompute_exactly() {
        let suite: Vec<Triplet> = synthetic::motion_suite(2, 40, 40, 1, 9)
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let (frame0, gt, frame1) = s.triplet();
                Triplet { id: format!("s,{i}"), frame0, gt, frame1 }
            })
            .collect();
        let r = run_benchmark_triplets(&suite, &PipelineConfig::default(), &fast(), None).unwrap();
        let csv = r.to_csv();
        let (rows, stats) = parse_csv(&csv).unwrap();
        assert_eq!(rows.len(), 2);
        let [m, med] = stats.unwrap();
        for c in 0..5 {
            let col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            assert_eq!(mean(&col), m[c]);
            assert_eq!(median(&col), med[c]);
        }
        let table = r.to_table();
        assert!(table.contains("metrics = luma"));
        assert!(table.lines().any(|l| l.starts_with("mean")));
    }
}
