//! Run-directory orchestration: locking, config snapshots, streamed run
//! logs, checkpoints, and post-training evaluation.

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::Config;
use crate::datasets::{format_f64, write_points_csv, Dataset};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::metrics::{heatmap_analysis, mode_coverage, sliced_wasserstein, HeatmapReport};
use crate::rng::{streams, StreamRng};
use crate::runlog::{read_log, RunLogWriter, HEADER};
use crate::sampler::sample;
use crate::tensor::Tensor;
use crate::trainer::{Trainer, TrainState, TrainMode};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Exclusive lock on a run directory; the file disappears on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<DirLock> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::RunDirLocked(dir.display().to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn default_out_root() -> PathBuf {
    std::env::var_os("SADM_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn write_config_snapshot(dir: &Path, config: &Config) -> Result<()> {
    let json = serde_json::to_string_pretty(config)?;
    fs::write(dir.join("config.json"), json + "\n")?;
    Ok(())
}

/// Distribution metrics of a trained state against fresh dataset draws.
#[derive(Debug, Clone)]
pub struct Metrics {
    pub sliced_w: f64,
    pub coverage: Option<usize>,
    pub histogram: Option<Vec<usize>>,
    pub heatmap_gap: Option<f64>,
}

pub fn evaluate_state(state: &TrainState, dataset: &Dataset, config: &Config) -> Result<Metrics> {
    let schedule = NoiseSchedule::cosine(config.trainer.t_min)?;
    let generated = sample(
        &state.denoiser,
        &schedule,
        &config.sampler,
        config.eval.n_samples,
        dataset.dim(),
    )?;
    let (real, _) = dataset.draw(config.eval.n_samples)?;
    let sliced_w = sliced_wasserstein(
        &generated.samples,
        &real,
        config.eval.n_projections,
        config.sampler.seed,
    )?;

    let (coverage, histogram) = match dataset.mode_centers() {
        Some(centers) => {
            let radius = config.eval.coverage_radius_sigmas * dataset.spec.sigma;
            let (c, h) = mode_coverage(&generated.samples, &centers, radius)?;
            (Some(c), Some(h))
        }
        None => (None, None),
    };

    let heatmap_gap = heatmap_for_state(state, dataset, config)?.map(|r| r.frobenius_gap);

    Ok(Metrics {
        sliced_w,
        coverage,
        histogram,
        heatmap_gap,
    })
}

pub fn heatmap_for_state(
    state: &TrainState,
    dataset: &Dataset,
    config: &Config,
) -> Result<Option<HeatmapReport>> {
    let centers = match dataset.mode_centers() {
        Some(c) => c,
        None => return Ok(None),
    };
    if !dataset.labeled() {
        return Ok(None);
    }
    let schedule = NoiseSchedule::cosine(config.trainer.t_min)?;
    let mut rng = StreamRng::new(config.seed, streams::HEATMAP);
    let (x0, labels) = dataset.sample(&mut rng, config.eval.heatmap_batch)?;
    let labels = labels.expect("labeled dataset");
    let report = heatmap_analysis(
        &state.denoiser,
        &schedule,
        &x0,
        &labels,
        &centers,
        config.eval.heatmap_t,
        config.seed,
    )?;
    Ok(Some(report))
}

pub fn write_metrics_csv(path: &Path, metrics: &Metrics) -> Result<()> {
    let mut out = String::from("metric,value\n");
    out.push_str(&format!("sliced_wasserstein,{}\n", format_f64(metrics.sliced_w)));
    if let Some(c) = metrics.coverage {
        out.push_str(&format!("mode_coverage,{c}\n"));
    }
    if let Some(gap) = metrics.heatmap_gap {
        out.push_str(&format!("heatmap_gap,{}\n", format_f64(gap)));
    }
    if let Some(hist) = &metrics.histogram {
        for (k, h) in hist.iter().enumerate() {
            out.push_str(&format!("mode_histogram_{k},{h}\n"));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_matrix_csv(path: &Path, m: &Tensor) -> Result<()> {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| format_f64(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub steps_run: u64,
}

/// Train (or resume) inside a run directory: writes the config snapshot,
/// streams the run log, saves periodic and final checkpoints, and emits
/// metrics for the final model.
pub fn run_train_experiment(
    dir: &Path,
    config: &Config,
    resume_from: Option<&Path>,
    max_steps: Option<u64>,
) -> Result<TrainOutcome> {
    let _lock = DirLock::acquire(dir)?;
    write_config_snapshot(dir, config)?;

    let dataset = Dataset::open(&config.dataset)?;
    let mut trainer = match resume_from {
        Some(ckpt) => {
            let (state, _saved_cfg) = load_checkpoint(ckpt)?;
            Trainer::resume(config.trainer.clone(), &dataset, state)?
        }
        None => Trainer::with_model_spec(config.trainer.clone(), &dataset, &config.model)?,
    };

    let log_path = dir.join("train_log.csv");
    let start_step = trainer.state.step;
    let mut writer = if resume_from.is_some() && log_path.exists() {
        // keep rows up to the checkpoint, then continue in place
        let existing = read_log(fs::File::open(&log_path)?)?;
        let mut file = fs::File::create(&log_path)?;
        writeln!(file, "{HEADER}")?;
        let mut keep = RunLogWriter::resume(std::io::BufWriter::new(file), 0);
        for row in existing.iter().filter(|r| r.step <= start_step) {
            keep.write_row(&crate::trainer::LogRow {
                step: row.step,
                phase: if row.phase == "phase1" {
                    "phase1"
                } else {
                    "adversarial"
                },
                round: row.round,
                t: row.t,
                loss_dsm: row.loss_dsm,
                loss_struct: row.loss_struct,
                loss_total: row.loss_total,
                wall_ms: row.wall_ms,
            })?;
        }
        keep
    } else {
        RunLogWriter::new(std::io::BufWriter::new(fs::File::create(&log_path)?))?
    };

    let ckpt_every = config.trainer.checkpoint_every;
    let mut steps_run = 0u64;
    loop {
        if let Some(limit) = max_steps {
            if steps_run >= limit {
                break;
            }
        }
        match trainer.step()? {
            Some(row) => {
                writer.write_row(&row)?;
                steps_run += 1;
                if ckpt_every > 0 && row.step % ckpt_every == 0 {
                    writer.flush()?;
                    save_checkpoint(
                        &dir.join(format!("checkpoint_step_{}.bin", row.step)),
                        &trainer.state,
                        &trainer.config,
                    )?;
                }
            }
            None => break,
        }
    }
    writer.flush()?;
    save_checkpoint(&dir.join("checkpoint.bin"), &trainer.state, &trainer.config)?;

    if trainer.finished() {
        let metrics = evaluate_state(&trainer.state, &dataset, config)?;
        write_metrics_csv(&dir.join("metrics.csv"), &metrics)?;
        if let Some(report) = heatmap_for_state(&trainer.state, &dataset, config)? {
            write_matrix_csv(&dir.join("heatmap_label.csv"), &report.label_affinity)?;
            write_matrix_csv(&dir.join("heatmap_model.csv"), &report.model_affinity)?;
            write_matrix_csv(&dir.join("heatmap_raw.csv"), &report.raw_affinity)?;
        }
    }

    Ok(TrainOutcome {
        state: trainer.state,
        steps_run,
    })
}

/// Fine-tune a checkpoint on the configured target dataset.
pub fn run_finetune_experiment(
    dir: &Path,
    config: &Config,
    pretrained_ckpt: &Path,
) -> Result<TrainOutcome> {
    let _lock = DirLock::acquire(dir)?;
    write_config_snapshot(dir, config)?;

    let (pretrained, _) = load_checkpoint(pretrained_ckpt)?;
    let target = Dataset::open(&config.finetune.target)?;
    let ft_config = config.finetune_train_config();
    let mut trainer = Trainer::finetune(ft_config, &target, &pretrained)?;

    let mut writer = RunLogWriter::new(std::io::BufWriter::new(fs::File::create(
        dir.join("train_log.csv"),
    )?))?;
    let mut steps_run = 0u64;
    while let Some(row) = trainer.step()? {
        writer.write_row(&row)?;
        steps_run += 1;
    }
    writer.flush()?;
    save_checkpoint(&dir.join("checkpoint.bin"), &trainer.state, &trainer.config)?;

    let metrics = evaluate_state(&trainer.state, &target, config)?;
    write_metrics_csv(&dir.join("metrics.csv"), &metrics)?;
    Ok(TrainOutcome {
        state: trainer.state,
        steps_run,
    })
}

/// Generate samples from a checkpoint into `samples.csv`.
pub fn run_sample_experiment(
    dir: &Path,
    config: &Config,
    ckpt: &Path,
    count: usize,
) -> Result<PathBuf> {
    let _lock = DirLock::acquire(dir)?;
    let (state, saved_cfg) = load_checkpoint(ckpt)?;
    let schedule = NoiseSchedule::cosine(saved_cfg.t_min)?;
    let out = sample(
        &state.denoiser,
        &schedule,
        &config.sampler,
        count,
        state.model_spec.data_dim,
    )?;
    let path = dir.join("samples.csv");
    let mut file = std::io::BufWriter::new(fs::File::create(&path)?);
    write_points_csv(&mut file, &out.samples, None)?;
    file.flush()?;
    Ok(path)
}

/// Evaluate a checkpoint against the configured dataset.
pub fn run_eval_experiment(dir: &Path, config: &Config, ckpt: &Path) -> Result<Metrics> {
    let _lock = DirLock::acquire(dir)?;
    let (state, _) = load_checkpoint(ckpt)?;
    let dataset = Dataset::open(&config.dataset)?;
    let metrics = evaluate_state(&state, &dataset, config)?;
    write_metrics_csv(&dir.join("metrics.csv"), &metrics)?;
    if let Some(report) = heatmap_for_state(&state, &dataset, config)? {
        write_matrix_csv(&dir.join("heatmap_label.csv"), &report.label_affinity)?;
        write_matrix_csv(&dir.join("heatmap_model.csv"), &report.model_affinity)?;
        write_matrix_csv(&dir.join("heatmap_raw.csv"), &report.raw_affinity)?;
    }
    Ok(metrics)
}

/// One ablation row: a mode and its metrics.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub mode: TrainMode,
    pub metrics: Metrics,
}

/// Train the three modes with shared seeds and compare their metrics.
pub fn run_ablation(dir: &Path, config: &Config) -> Result<Vec<AblationRow>> {
    let _lock = DirLock::acquire(dir)?;
    write_config_snapshot(dir, config)?;
    let dataset = Dataset::open(&config.dataset)?;

    let mut rows = Vec::new();
    for mode in [
        TrainMode::InstanceOnly,
        TrainMode::StructureGuided,
        TrainMode::FullSadm,
    ] {
        let mut cfg = config.clone();
        cfg.trainer.mode = mode;
        let mut trainer = Trainer::with_model_spec(cfg.trainer.clone(), &dataset, &cfg.model)?;
        trainer.run(|_| Ok(()))?;
        let metrics = evaluate_state(&trainer.state, &dataset, &cfg)?;
        let label = match mode {
            TrainMode::InstanceOnly => "instance_only",
            TrainMode::StructureGuided => "structure_guided",
            TrainMode::FullSadm => "full_sadm",
        };
        save_checkpoint(
            &dir.join(format!("checkpoint_{label}.bin")),
            &trainer.state,
            &trainer.config,
        )?;
        rows.push(AblationRow { mode, metrics });
    }

    let mut table = String::from("mode,sliced_wasserstein,mode_coverage,heatmap_gap\n");
    for row in &rows {
        table.push_str(&format!(
            "{},{},{},{}\n",
            match row.mode {
                TrainMode::InstanceOnly => "instance_only",
                TrainMode::StructureGuided => "structure_guided",
                TrainMode::FullSadm => "full_sadm",
            },
            format_f64(row.metrics.sliced_w),
            row.metrics
                .coverage
                .map(|c| c.to_string())
                .unwrap_or_else(|| "-".into()),
            row.metrics
                .heatmap_gap
                .map(format_f64)
                .unwrap_or_else(|| "-".into()),
        ));
    }
    fs::write(dir.join("ablation.csv"), table)?;
    Ok(rows)
}
