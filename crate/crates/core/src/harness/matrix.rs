use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::config::{ExperimentConfig, Method};
use super::episode::{run_episode_on, EpisodeOutput, MetricsRecord, Sequence};
use crate::detection::FidelityDetector;
use crate::error::{Error, Result};
use crate::importance::export_heatmap;

#[derive(Debug, Clone)]
pub struct MatrixResult {
    pub records: Vec<MetricsRecord>,
    pub summary: String,
}

impl MatrixResult {
    /// Seed-averaged metric for one (method, rate) cell.
    pub fn mean(&self, method: Method, rate: f64, metric: impl Fn(&MetricsRecord) -> f64) -> Option<f64> {
        let values: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.method == method.as_str() && r.rate == rate)
            .map(metric)
            .collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Runs every method × rate × seed episode. Episodes run in parallel; the
/// record order is always methods, then rates, then seeds, as configured.
pub fn run_matrix(cfg: &ExperimentConfig) -> Result<MatrixResult> {
    cfg.validate()?;
    let sequences: Vec<Sequence> = if cfg.dataset.is_some() {
        vec![Sequence::load(cfg, 0)?]
    } else {
        cfg.seeds
            .par_iter()
            .map(|&s| Sequence::load(cfg, s))
            .collect::<Result<_>>()?
    };
    let detector = FidelityDetector { theta: cfg.theta };
    let mut jobs = Vec::new();
    for &method in &cfg.methods {
        for &rate in &cfg.rates {
            for (si, &seed) in cfg.seeds.iter().enumerate() {
                jobs.push((method, rate, seed, si.min(sequences.len() - 1)));
            }
        }
    }
    let outputs: Vec<EpisodeOutput> = jobs
        .par_iter()
        .map(|&(method, rate, seed, si)| run_episode_on(&sequences[si], cfg, method, rate, seed, &detector))
        .collect::<Result<_>>()?;

    if let Some(dir) = &cfg.output_dir {
        write_outputs(cfg, &jobs, &outputs, dir)?;
    }
    let records: Vec<MetricsRecord> = outputs.into_iter().map(|o| o.record).collect();
    let mut result = MatrixResult {
        records,
        summary: String::new(),
    };
    result.summary = render_summary(cfg, &result);
    if let Some(dir) = &cfg.output_dir {
        let path = dir.join("summary.txt");
        fs::write(&path, &result.summary).map_err(|e| Error::io(&path, e))?;
    }
    Ok(result)
}

fn write_outputs(
    cfg: &ExperimentConfig,
    jobs: &[(Method, f64, u64, usize)],
    outputs: &[EpisodeOutput],
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let snapshot = dir.join("config.toml");
    fs::write(&snapshot, cfg.to_toml()).map_err(|e| Error::io(&snapshot, e))?;

    write_records_csv(outputs.iter().map(|o| &o.record), &dir.join("metrics.csv"))?;

    let heat_dir = dir.join("heatmaps");
    for ((method, rate, seed, _), out) in jobs.iter().zip(outputs) {
        if let Some(probs) = &out.final_probabilities {
            fs::create_dir_all(&heat_dir).map_err(|e| Error::io(&heat_dir, e))?;
            let name = format!("{}_r{:03}_s{seed}.pgm", method.as_str().replace('+', "_"), (rate * 100.0).round());
            export_heatmap(probs, heat_dir.join(name))?;
        }
    }

    let bits_path = dir.join("bits.csv");
    let mut bits = String::from("method,rate,mean_bits_total,mean_bits_per_frame\n");
    for &method in &cfg.methods {
        for &rate in &cfg.rates {
            let rows: Vec<&MetricsRecord> = outputs
                .iter()
                .map(|o| &o.record)
                .filter(|r| r.method == method.as_str() && r.rate == rate)
                .collect();
            let total = rows.iter().map(|r| r.bits_total as f64).sum::<f64>() / rows.len() as f64;
            let per_frame = rows
                .iter()
                .map(|r| r.bits_total as f64 / r.frames.max(1) as f64)
                .sum::<f64>()
                / rows.len() as f64;
            writeln!(bits, "{method},{rate},{total:.1},{per_frame:.1}").unwrap();
        }
    }
    fs::write(&bits_path, bits).map_err(|e| Error::io(&bits_path, e))
}

pub fn write_records_csv<'a>(records: impl IntoIterator<Item = &'a MetricsRecord>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    for r in records {
        w.serialize(r).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Seed-averaged F1 / precision per rate and method, one row pair per rate.
pub fn render_summary(cfg: &ExperimentConfig, result: &MatrixResult) -> String {
    let mut out = String::new();
    let width = 16;
    write!(out, "{:<8}{:<11}", "rate", "metric").unwrap();
    for m in &cfg.methods {
        write!(out, "{:>width$}", m.as_str()).unwrap();
    }
    out.push('\n');
    for &rate in &cfg.rates {
        for (label, pick) in [
            ("F1", (|r: &MetricsRecord| r.f1) as fn(&MetricsRecord) -> f64),
            ("Precision", |r: &MetricsRecord| r.precision),
        ] {
            let rate_col = if label == "F1" { format!("{:.0}%", rate * 100.0) } else { String::new() };
            write!(out, "{rate_col:<8}{label:<11}").unwrap();
            for &m in &cfg.methods {
                let v = result.mean(m, rate, pick).unwrap_or(f64::NAN);
                write!(out, "{:>width$}", format!("{:.1}%", v * 100.0)).unwrap();
            }
            out.push('\n');
        }
    }
    let fps: Vec<f64> = result
        .records
        .iter()
        .filter(|r| r.wall_time > 0.0)
        .map(|r| (r.frames + cfg.bootstrap_frames) as f64 / r.wall_time)
        .collect();
    if !fps.is_empty() {
        let mean = fps.iter().sum::<f64>() / fps.len() as f64;
        writeln!(out, "\nsimulated throughput: {mean:.0} frames/s per episode").unwrap();
    }
    out
}
