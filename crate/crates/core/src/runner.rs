//! Grid runner: one training run per (cell, seed), per-epoch CSV rows and a
//! JSON summary.
//!
//! Output layout under the output directory:
//!
//! ```text
//! config.json           resolved config
//! runs/<cell>__seed<s>.csv
//! results.csv           every run, cells in grid order then seeds
//! summary.json
//! images/<cell>/...     with dump_images
//! ```
//!
//! An aborted run ends with one row whose losses and metrics are `NaN`; its
//! `epoch` is the epoch at which the loss stopped being finite.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::harness::data::Dataset;
use crate::harness::metrics::MetricsRecord;
use crate::harness::pgm::{write_pgm, PgmFormat};
use crate::harness::train::{train_on, TrainReport};
use crate::presets::{cells, Cell};

pub const BASELINE_LABEL: &str = "Original";
const DUMPED_IMAGES: usize = 4;

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub config_label: String,
    pub seed: u64,
    pub epoch: usize,
    pub base_loss: f64,
    pub prior_loss: f64,
    pub total_loss: f64,
    pub val_psnr: f64,
    pub val_ssim: f64,
    pub seconds: f64,
}

impl ResultRow {
    fn new(label: &str, seed: u64, m: &MetricsRecord) -> Self {
        ResultRow {
            config_label: label.to_string(),
            seed,
            epoch: m.epoch,
            base_loss: m.base_loss,
            prior_loss: m.prior_loss,
            total_loss: m.total_loss,
            val_psnr: m.val_psnr,
            val_ssim: m.val_ssim,
            seconds: m.seconds,
        }
    }

    fn abort_marker(label: &str, seed: u64, epoch: usize) -> Self {
        ResultRow {
            config_label: label.to_string(),
            seed,
            epoch,
            base_loss: f64::NAN,
            prior_loss: f64::NAN,
            total_loss: f64::NAN,
            val_psnr: f64::NAN,
            val_ssim: f64::NAN,
            seconds: f64::NAN,
        }
    }

    fn is_abort_marker(&self) -> bool {
        self.total_loss.is_nan()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_label: String,
    pub seed: u64,
    pub status: RunStatus,
    pub epochs: usize,
    pub final_psnr: Option<f64>,
    pub final_ssim: Option<f64>,
    pub aborted_epoch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub config_label: String,
    pub runs: usize,
    pub completed: usize,
    pub psnr_mean: Option<f64>,
    pub psnr_std: Option<f64>,
    pub ssim_mean: Option<f64>,
    pub ssim_std: Option<f64>,
    /// Mean PSNR minus the `Original` cell's, when both exist.
    pub delta_psnr: Option<f64>,
    pub delta_ssim: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub baseline: String,
    pub runs: Vec<RunSummary>,
    pub cells: Vec<CellSummary>,
}

impl Summary {
    pub fn any_aborted(&self) -> bool {
        self.runs.iter().any(|r| r.status == RunStatus::Aborted)
    }

    pub fn cell(&self, label: &str) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.config_label == label)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Worker threads; 0 and 1 both mean sequential.
    pub jobs: usize,
    pub dump_images: bool,
}

/// `+CDC(3)+epochR+Depth` becomes `cdc_3_epochr_depth`.
pub fn slug(label: &str) -> String {
    let mut s = String::new();
    for ch in label.chars() {
        if ch.is_ascii_alphanumeric() {
            s.push(ch.to_ascii_lowercase());
        } else if !s.is_empty() && !s.ends_with('_') {
            s.push('_');
        }
    }
    s.trim_end_matches('_').to_string()
}

fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

/// Builds the summary from CSV rows. Runs appear in first-seen order.
pub fn summarize(rows: &[ResultRow]) -> Summary {
    let mut runs: Vec<RunSummary> = Vec::new();
    for r in rows {
        let run = match runs.iter_mut().find(|s| s.config_label == r.config_label && s.seed == r.seed) {
            Some(s) => s,
            None => {
                runs.push(RunSummary {
                    config_label: r.config_label.clone(),
                    seed: r.seed,
                    status: RunStatus::Completed,
                    epochs: 0,
                    final_psnr: None,
                    final_ssim: None,
                    aborted_epoch: None,
                });
                runs.last_mut().expect("just pushed")
            }
        };
        if r.is_abort_marker() {
            run.status = RunStatus::Aborted;
            run.aborted_epoch = Some(r.epoch);
        } else {
            run.epochs += 1;
            run.final_psnr = Some(r.val_psnr);
            run.final_ssim = Some(r.val_ssim);
        }
    }
    for r in runs.iter_mut().filter(|r| r.status == RunStatus::Aborted) {
        r.final_psnr = None;
        r.final_ssim = None;
    }
    let mut labels: Vec<&str> = Vec::new();
    for r in &runs {
        if !labels.contains(&r.config_label.as_str()) {
            labels.push(&r.config_label);
        }
    }
    let mut cells: Vec<CellSummary> = labels
        .iter()
        .map(|&label| {
            let done: Vec<&RunSummary> = runs
                .iter()
                .filter(|r| r.config_label == label && r.status == RunStatus::Completed)
                .collect();
            let psnr: Vec<f64> = done.iter().filter_map(|r| r.final_psnr).collect();
            let ssim: Vec<f64> = done.iter().filter_map(|r| r.final_ssim).collect();
            let (psnr_mean, psnr_std) = mean_std(&psnr);
            let (ssim_mean, ssim_std) = mean_std(&ssim);
            CellSummary {
                config_label: label.to_string(),
                runs: runs.iter().filter(|r| r.config_label == label).count(),
                completed: done.len(),
                psnr_mean,
                psnr_std,
                ssim_mean,
                ssim_std,
                delta_psnr: None,
                delta_ssim: None,
            }
        })
        .collect();
    if let Some(base) = cells.iter().find(|c| c.config_label == BASELINE_LABEL).cloned() {
        for c in &mut cells {
            c.delta_psnr = c.psnr_mean.zip(base.psnr_mean).map(|(a, b)| a - b);
            c.delta_ssim = c.ssim_mean.zip(base.ssim_mean).map(|(a, b)| a - b);
        }
    }
    Summary {
        baseline: BASELINE_LABEL.to_string(),
        runs,
        cells,
    }
}

pub fn write_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| Ok(row?)).collect()
}

fn run_rows(label: &str, seed: u64, report: &TrainReport) -> Vec<ResultRow> {
    let mut rows: Vec<ResultRow> = report.records.iter().map(|m| ResultRow::new(label, seed, m)).collect();
    if let Some(e) = report.diverged_at {
        rows.push(ResultRow::abort_marker(label, seed, e));
    }
    rows
}

fn dump_images(dir: &Path, seed: u64, report: &TrainReport, val: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    for i in 0..val.len().min(DUMPED_IMAGES) {
        let out = report.model.forward(&val.noisy[i])?;
        for (name, img) in [("clean", &val.clean[i]), ("noisy", &val.noisy[i]), ("denoised", &out)] {
            let f = fs::File::create(dir.join(format!("seed{seed}_{i}_{name}.pgm")))?;
            write_pgm(std::io::BufWriter::new(f), img, PgmFormat::Raw)?;
        }
    }
    Ok(())
}

/// Everything [`run_experiment`] produced.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub rows: Vec<ResultRow>,
    pub summary: Summary,
    pub output_dir: PathBuf,
}

/// Trains every (cell, seed) pair of `cfg` and writes the outputs to
/// `cfg.output_dir`. A diverging run is recorded and the others continue.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let grid: Vec<Cell> = cells(cfg)?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(out.join("runs"))?;
    fs::write(out.join("config.json"), cfg.to_json()?)?;

    let ds = &cfg.dataset;
    let train_set = Dataset::generate(ds, 0..ds.count)?;
    let val_set = Dataset::generate(ds, ds.count..ds.total())?;

    let jobs: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let slots: Vec<Mutex<Option<Result<Vec<ResultRow>>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let j = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(c, seed)) = jobs.get(j) else { break };
        let cell = &grid[c];
        let result = (|| {
            let report = train_on(&cell.config, seed, &train_set, &val_set)?;
            let rows = run_rows(&cell.label, seed, &report);
            write_rows(&out.join("runs").join(format!("{}__seed{seed}.csv", slug(&cell.label))), &rows)?;
            if opts.dump_images {
                dump_images(&out.join("images").join(slug(&cell.label)), seed, &report, &val_set)?;
            }
            Ok(rows)
        })();
        *slots[j].lock().expect("slot lock") = Some(result);
    };
    let workers = opts.jobs.clamp(1, jobs.len().max(1));
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }

    let mut rows = Vec::new();
    for slot in slots {
        let r = slot.into_inner().expect("slot lock").ok_or_else(|| Error::invalid("run_experiment", "a job never ran"))?;
        rows.extend(r?);
    }
    write_rows(&out.join("results.csv"), &rows)?;
    let summary = summarize(&rows);
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(RunOutcome {
        rows,
        summary,
        output_dir: out,
    })
}

/// Rebuilds `summary.json` in `dir` from `results.csv`.
pub fn analyze(dir: &Path) -> Result<Summary> {
    let rows = read_rows(&dir.join("results.csv"))?;
    let summary = summarize(&rows);
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}
