//! Two-phase training loop: structure-guided denoiser training with a
//! frozen encoder, then alternating adversarial rounds between the denoiser
//! (descending the combined loss) and the structure discriminator's encoder
//! (ascending the structural loss).

use crate::datasets::Dataset;
use crate::diffusion::{dsm_loss, perturb, DiffusionBatch, NoiseSchedule, WeightFn, T_MAX};
use crate::error::{Error, Result};
use crate::models::{
    init_denoiser, init_encoder, Denoiser, Encoder, MlpVars, ModelSpec, ParamMode,
};
use crate::optim::Adam;
use crate::rng::{streams, StreamRng};
use crate::structure::{structural_loss, DistanceFn, RelationFn, StructureOpts};
use crate::tensor::{Gradients, Tape, Tensor};
use serde::{Deserialize, Serialize};

/// Steps per convergence window in phase 1.
pub const PHASE1_WINDOW: u64 = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    InstanceOnly,
    StructureGuided,
    #[default]
    FullSadm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezeMask {
    #[default]
    Full,
    BiasesOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_theta: f64,
    pub lr_phi: f64,
    pub phase1_steps: u64,
    /// Relative loss-improvement threshold between consecutive 500-step
    /// windows; phase 1 stops at `phase1_steps` or here, whichever first.
    pub phase1_tolerance: Option<f64>,
    pub adversarial_rounds: u32,
    pub steps_per_round_theta: u64,
    pub steps_per_round_phi: u64,
    pub seed: u64,
    pub relation: RelationFn,
    pub distance: DistanceFn,
    pub exclude_diagonal: bool,
    /// Multiplier λ_s on the structural term of the denoiser objective.
    pub weight_struct: f64,
    pub mode: TrainMode,
    pub t_min: f64,
    /// When true, a batch drawn for a discriminator step is reused by the
    /// next generator step instead of re-noising. With 1-step rounds this is
    /// the shared-batch alternation; default is a fresh batch per step.
    pub shared_batch_per_iteration: bool,
    /// Restrict denoiser updates (weights frozen, biases trainable).
    pub freeze_mask: FreezeMask,
    /// Checkpoint interval in optimizer steps; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            lr_theta: 1e-3,
            lr_phi: 1e-5,
            phase1_steps: 4000,
            phase1_tolerance: None,
            adversarial_rounds: 3,
            steps_per_round_theta: 2000,
            steps_per_round_phi: 500,
            seed: 0,
            relation: RelationFn::Cosine,
            distance: DistanceFn::L2Sq,
            exclude_diagonal: false,
            weight_struct: 1.0,
            mode: TrainMode::FullSadm,
            t_min: 1e-3,
            shared_batch_per_iteration: false,
            freeze_mask: FreezeMask::Full,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale fine-tuning protocol: 6:1 structure-guided to adversarial
    /// denoiser steps, one round, no early stop.
    pub fn finetune_defaults(&self) -> TrainConfig {
        TrainConfig {
            phase1_steps: 1200,
            phase1_tolerance: None,
            adversarial_rounds: 1,
            steps_per_round_theta: 200,
            steps_per_round_phi: 50,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch_size >= 2 required (pairwise relations need at least two samples)".into(),
            ));
        }
        if !(self.t_min > 0.0 && self.t_min <= 0.1) {
            return Err(Error::Config(format!(
                "t_min {} outside (0, 0.1]",
                self.t_min
            )));
        }
        if self.lr_theta <= 0.0 || self.lr_phi <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.weight_struct < 0.0 {
            return Err(Error::Config("weight_struct must be >= 0".into()));
        }
        Ok(())
    }

    pub fn structure_opts(&self) -> StructureOpts {
        StructureOpts {
            rel: self.relation,
            dist: self.distance,
            exclude_diagonal: self.exclude_diagonal,
        }
    }
}

/// Training phases. The adversarial phase alternates a discriminator
/// segment and a generator segment per round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Phase1,
    AdvPhi,
    AdvTheta,
    Done,
}

impl Phase {
    /// Two-valued label used in the run log.
    pub fn label(&self) -> &'static str {
        match self {
            Phase::Phase1 => "phase1",
            _ => "adversarial",
        }
    }
}

/// Phase-1 convergence window accumulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase1Window {
    pub sum: f64,
    pub count: u64,
    pub prev_mean: Option<f64>,
    pub stopped: bool,
}

impl Default for Phase1Window {
    fn default() -> Self {
        Phase1Window {
            sum: 0.0,
            count: 0,
            prev_mean: None,
            stopped: false,
        }
    }
}

/// Everything that evolves during training. Checkpoints capture it exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model_spec: ModelSpec,
    pub denoiser: Denoiser,
    pub encoder: Encoder,
    pub opt_theta: Adam,
    pub opt_phi: Adam,
    pub step: u64,
    pub phase: Phase,
    pub round: u32,
    pub seg_step: u64,
    pub rng: StreamRng,
    pub window: Phase1Window,
}

impl TrainState {
    pub fn fresh(config: &TrainConfig, model_spec: &ModelSpec) -> Result<TrainState> {
        let denoiser = init_denoiser(config.seed, model_spec)?;
        let encoder = init_encoder(config.seed, model_spec)?;
        let theta_sizes: Vec<usize> = denoiser.mlp.params().iter().map(|p| p.numel()).collect();
        let phi_sizes: Vec<usize> = encoder.mlp.params().iter().map(|p| p.numel()).collect();
        Ok(TrainState {
            model_spec: model_spec.clone(),
            denoiser,
            encoder,
            opt_theta: Adam::new(&theta_sizes, config.lr_theta),
            opt_phi: Adam::new(&phi_sizes, config.lr_phi),
            step: 0,
            phase: Phase::Phase1,
            round: 0,
            seg_step: 0,
            rng: StreamRng::new(config.seed, streams::TRAIN),
            window: Phase1Window::default(),
        })
    }

    /// Restart the phase machine on an already-trained model (fine-tuning):
    /// fresh optimizers, counters, and noise stream.
    pub fn restarted(&self, config: &TrainConfig) -> TrainState {
        let theta_sizes: Vec<usize> =
            self.denoiser.mlp.params().iter().map(|p| p.numel()).collect();
        let phi_sizes: Vec<usize> = self.encoder.mlp.params().iter().map(|p| p.numel()).collect();
        TrainState {
            model_spec: self.model_spec.clone(),
            denoiser: self.denoiser.clone(),
            encoder: Encoder {
                mlp: self.encoder.mlp.clone(),
                frozen: true,
            },
            opt_theta: Adam::new(&theta_sizes, config.lr_theta),
            opt_phi: Adam::new(&phi_sizes, config.lr_phi),
            step: 0,
            phase: Phase::Phase1,
            round: 0,
            seg_step: 0,
            rng: StreamRng::new(config.seed, streams::TRAIN),
            window: Phase1Window::default(),
        }
    }
}

/// One per-step log record. `wall_ms` is pinned to zero so that logs are
/// byte-reproducible across runs of the same (config, seed).
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub phase: &'static str,
    pub round: u32,
    pub t: f64,
    pub loss_dsm: f64,
    pub loss_struct: f64,
    pub loss_total: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct LossReport {
    pub dsm: f64,
    pub structural: f64,
    pub total: f64,
}

/// Value-only denoising loss, for logging on steps that do not differentiate
/// it.
fn dsm_value(schedule: &NoiseSchedule, x0: &Tensor, xhat: &Tensor, t: f64, w: WeightFn) -> f64 {
    let mut total = 0.0;
    for (a, b) in x0.data().iter().zip(xhat.data().iter()) {
        let d = a - b;
        total += d * d;
    }
    w.eval(schedule.lambda(t)) * total / x0.shape()[0] as f64
}

pub struct Trainer<'d> {
    pub config: TrainConfig,
    pub dataset: &'d Dataset,
    pub schedule: NoiseSchedule,
    pub state: TrainState,
    shared_batch: Option<DiffusionBatch>,
}

impl<'d> Trainer<'d> {
    pub fn new(config: TrainConfig, dataset: &'d Dataset) -> Result<Trainer<'d>> {
        let model_spec = ModelSpec::with_dim(dataset.dim());
        Self::with_model_spec(config, dataset, &model_spec)
    }

    pub fn with_model_spec(
        config: TrainConfig,
        dataset: &'d Dataset,
        model_spec: &ModelSpec,
    ) -> Result<Trainer<'d>> {
        config.validate()?;
        if model_spec.data_dim != dataset.dim() {
            return Err(Error::Config(format!(
                "dataset dimension {} does not match model dimension {}",
                dataset.dim(),
                model_spec.data_dim
            )));
        }
        let state = TrainState::fresh(&config, model_spec)?;
        Ok(Trainer {
            schedule: NoiseSchedule::cosine(config.t_min)?,
            config,
            dataset,
            state,
            shared_batch: None,
        })
    }

    /// Continue from a saved state (checkpoint resume).
    pub fn resume(config: TrainConfig, dataset: &'d Dataset, state: TrainState) -> Result<Trainer<'d>> {
        config.validate()?;
        if state.model_spec.data_dim != dataset.dim() {
            return Err(Error::Config(format!(
                "dataset dimension {} does not match checkpoint dimension {}",
                dataset.dim(),
                state.model_spec.data_dim
            )));
        }
        Ok(Trainer {
            schedule: NoiseSchedule::cosine(config.t_min)?,
            config,
            dataset,
            state,
            shared_batch: None,
        })
    }

    /// Fine-tune a pretrained state on a (same-dimension) target dataset.
    pub fn finetune(
        config: TrainConfig,
        dataset: &'d Dataset,
        pretrained: &TrainState,
    ) -> Result<Trainer<'d>> {
        config.validate()?;
        if pretrained.model_spec.data_dim != dataset.dim() {
            return Err(Error::Config(format!(
                "target dataset dimension {} does not match pretrained dimension {}",
                dataset.dim(),
                pretrained.model_spec.data_dim
            )));
        }
        let state = pretrained.restarted(&config);
        Ok(Trainer {
            schedule: NoiseSchedule::cosine(config.t_min)?,
            state,
            config,
            dataset,
            shared_batch: None,
        })
    }

    pub fn finished(&self) -> bool {
        self.state.phase == Phase::Done
    }

    /// Optimizer steps the schedule will run end to end (tolerance stops
    /// only shorten it). Adversarial segments exist only in full_sadm mode.
    pub fn planned_steps(&self) -> u64 {
        let adversarial = if self.config.mode == TrainMode::FullSadm {
            self.config.adversarial_rounds as u64
                * (self.config.steps_per_round_phi + self.config.steps_per_round_theta)
        } else {
            0
        };
        self.config.phase1_steps + adversarial
    }

    /// Cosine learning-rate decay over the planned run, floored at 5% of
    /// the base rate. Shared by both optimizers, so the encoder updates in
    /// the late adversarial phase are naturally gentle.
    fn lr_scale(&self) -> f64 {
        let total = self.planned_steps().max(1);
        let s = self.state.step.min(total) as f64 / total as f64;
        let floor = 0.05;
        floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * s).cos())
    }

    fn theta_mode(&self) -> ParamMode {
        match self.config.freeze_mask {
            FreezeMask::Full => ParamMode::Trainable,
            FreezeMask::BiasesOnly => ParamMode::BiasesOnly,
        }
    }

    /// Move the phase machine forward until the current segment can run a
    /// step (or training is done). Also maintains the encoder freeze flag.
    fn advance_phase(&mut self) {
        loop {
            match self.state.phase {
                Phase::Phase1 => {
                    self.state.encoder.frozen = true;
                    let exhausted = self.state.seg_step >= self.config.phase1_steps
                        || self.state.window.stopped;
                    if !exhausted {
                        return;
                    }
                    let adversarial = self.config.mode == TrainMode::FullSadm
                        && self.config.adversarial_rounds > 0;
                    self.state.phase = if adversarial { Phase::AdvPhi } else { Phase::Done };
                    self.state.seg_step = 0;
                    self.state.round = 0;
                }
                Phase::AdvPhi => {
                    self.state.encoder.frozen = false;
                    if self.state.seg_step < self.config.steps_per_round_phi {
                        return;
                    }
                    self.state.phase = Phase::AdvTheta;
                    self.state.seg_step = 0;
                }
                Phase::AdvTheta => {
                    if self.state.seg_step < self.config.steps_per_round_theta {
                        return;
                    }
                    self.state.round += 1;
                    self.state.seg_step = 0;
                    self.state.phase = if self.state.round >= self.config.adversarial_rounds {
                        Phase::Done
                    } else {
                        Phase::AdvPhi
                    };
                }
                Phase::Done => return,
            }
        }
    }

    /// Minibatch, noise, and time draws, in that fixed order on the train
    /// stream.
    pub fn draw_batch(&mut self) -> Result<DiffusionBatch> {
        let (x0, _) = self
            .dataset
            .sample(&mut self.state.rng, self.config.batch_size)?;
        let eps = Tensor::new(
            x0.shape().to_vec(),
            self.state.rng.normal_vec(x0.numel()),
        )?;
        let t = self.state.rng.uniform(self.config.t_min, T_MAX);
        perturb(&self.schedule, &x0, t, &eps)
    }

    fn numeric_context(&self, t: f64, err: Error) -> Error {
        match err {
            e @ Error::Numeric { .. } => e,
            e => Error::Numeric {
                step: self.state.step + 1,
                t,
                message: e.to_string(),
            },
        }
    }

    fn collect_grads<'g>(
        grads: &'g Gradients,
        vars: &MlpVars,
    ) -> Vec<Option<&'g Tensor>> {
        vars.layers
            .iter()
            .flat_map(|(w, b)| [grads.wrt(w), grads.wrt(b)])
            .collect()
    }

    /// One Adam step on the denoiser against the (mode-dependent) combined
    /// loss; the encoder is registered frozen so φ is untouched while
    /// gradients still flow through Ψ to the prediction.
    pub fn generator_step(&mut self, batch: &DiffusionBatch) -> Result<LossReport> {
        let t = batch.t;
        let report = (|| -> Result<LossReport> {
            let mut tape = Tape::new();
            let theta_vars = self.state.denoiser.register(&mut tape, self.theta_mode());
            let x0 = tape.constant(&batch.x0);
            let xt = tape.constant(&batch.xt);
            let xhat = self.state.denoiser.apply(&mut tape, &theta_vars, &xt, t)?;
            let dsm = dsm_loss(&mut tape, &self.schedule, &x0, &xhat, t, WeightFn::Constant)?;

            let (total, struct_value) = if self.config.mode == TrainMode::InstanceOnly {
                (dsm.clone(), 0.0)
            } else {
                let enc_vars = self.state.encoder.register(&mut tape, ParamMode::Frozen);
                let s = structural_loss(
                    &mut tape,
                    &self.state.encoder,
                    &enc_vars,
                    &x0,
                    &xhat,
                    t,
                    self.config.t_min,
                    &self.config.structure_opts(),
                )?;
                let weighted = tape.scale(&s, self.config.weight_struct)?;
                (tape.add(&dsm, &weighted)?, s.item()?)
            };

            let grads = tape.backward(&total)?;
            let theta_grads = Self::collect_grads(&grads, &theta_vars);
            let scale = self.lr_scale();
            let mut params = self.state.denoiser.mlp.params_mut();
            self.state.opt_theta.apply_scaled(&mut params, &theta_grads, scale);

            Ok(LossReport {
                dsm: dsm.item()?,
                structural: struct_value,
                total: total.item()?,
            })
        })();
        report.map_err(|e| self.numeric_context(t, e))
    }

    /// One Adam step on the encoder ascending the structural loss
    /// (implemented as descent on its negation); the denoiser is registered
    /// frozen so θ is bit-identical afterwards.
    pub fn discriminator_step(&mut self, batch: &DiffusionBatch) -> Result<(LossReport, f64)> {
        if self.state.phase != Phase::AdvPhi {
            return Err(Error::DiscriminatorInPhase1);
        }
        let t = batch.t;
        let out = (|| -> Result<(LossReport, f64)> {
            let mut tape = Tape::new();
            let theta_vars = self.state.denoiser.register(&mut tape, ParamMode::Frozen);
            let enc_vars = self.state.encoder.register(&mut tape, ParamMode::Trainable);
            let x0 = tape.constant(&batch.x0);
            let xt = tape.constant(&batch.xt);
            let xhat = self.state.denoiser.apply(&mut tape, &theta_vars, &xt, t)?;
            let s = structural_loss(
                &mut tape,
                &self.state.encoder,
                &enc_vars,
                &x0,
                &xhat,
                t,
                self.config.t_min,
                &self.config.structure_opts(),
            )?;
            let neg = tape.scale(&s, -1.0)?;
            let grads = tape.backward(&neg)?;
            let phi_grads = Self::collect_grads(&grads, &enc_vars);
            let scale = self.lr_scale();
            let mut params = self.state.encoder.mlp.params_mut();
            self.state.opt_phi.apply_scaled(&mut params, &phi_grads, scale);

            let struct_value = s.item()?;
            let dsm = dsm_value(&self.schedule, &batch.x0, &xhat, t, WeightFn::Constant);
            Ok((
                LossReport {
                    dsm,
                    structural: struct_value,
                    total: dsm + self.config.weight_struct * struct_value,
                },
                struct_value,
            ))
        })();
        out.map_err(|e| self.numeric_context(t, e))
    }

    /// Run one optimizer step of the overall schedule. Returns `None` once
    /// training is complete.
    pub fn step(&mut self) -> Result<Option<LogRow>> {
        self.advance_phase();
        if self.state.phase == Phase::Done {
            return Ok(None);
        }

        let row = match self.state.phase {
            Phase::Phase1 => {
                let batch = self.draw_batch()?;
                let report = self.generator_step(&batch)?;
                self.state.seg_step += 1;
                self.state.step += 1;
                self.update_window(report.total);
                self.make_row(&batch, &report)
            }
            Phase::AdvPhi => {
                let batch = self.draw_batch()?;
                let (report, _) = self.discriminator_step(&batch)?;
                if self.config.shared_batch_per_iteration {
                    self.shared_batch = Some(batch.clone());
                }
                self.state.seg_step += 1;
                self.state.step += 1;
                self.make_row(&batch, &report)
            }
            Phase::AdvTheta => {
                let batch = match self.shared_batch.take() {
                    Some(b) if self.config.shared_batch_per_iteration => b,
                    _ => self.draw_batch()?,
                };
                let report = self.generator_step(&batch)?;
                self.state.seg_step += 1;
                self.state.step += 1;
                self.make_row(&batch, &report)
            }
            Phase::Done => unreachable!(),
        };
        Ok(Some(row))
    }

    fn update_window(&mut self, loss: f64) {
        let w = &mut self.state.window;
        w.sum += loss;
        w.count += 1;
        if w.count == PHASE1_WINDOW {
            let mean = w.sum / PHASE1_WINDOW as f64;
            if let (Some(prev), Some(tol)) = (w.prev_mean, self.config.phase1_tolerance) {
                let improvement = (prev - mean) / prev.abs().max(1e-12);
                if improvement < tol {
                    w.stopped = true;
                }
            }
            w.prev_mean = Some(mean);
            w.sum = 0.0;
            w.count = 0;
        }
    }

    fn make_row(&self, batch: &DiffusionBatch, report: &LossReport) -> LogRow {
        LogRow {
            step: self.state.step,
            phase: self.state.phase.label(),
            round: self.state.round,
            t: batch.t,
            loss_dsm: report.dsm,
            loss_struct: report.structural,
            loss_total: report.total,
            wall_ms: 0,
        }
    }

    /// Drive training to completion, invoking the sink for every step.
    pub fn run<F: FnMut(&LogRow) -> Result<()>>(&mut self, mut on_row: F) -> Result<()> {
        while let Some(row) = self.step()? {
            on_row(&row)?;
        }
        Ok(())
    }
}

/// Finite-difference check of the full training loss (denoising +
/// time-weighted structural term) over every denoiser and encoder
/// coordinate. Returns the max relative error.
pub fn sadm_loss_grad_check(model_spec: &ModelSpec, seed: u64, eps: f64) -> Result<f64> {
    use crate::gradcheck::grad_check;

    let mut denoiser = init_denoiser(seed, model_spec)?;
    // the zero-initialized output layer would hide parts of the gradient
    // path; give it generic values for the check
    let mut rng = StreamRng::new(seed, streams::TRAIN);
    {
        let last = denoiser.mlp.layers.len() - 1;
        for v in denoiser.mlp.layers[last].w.data_mut() {
            *v = rng.uniform(-0.3, 0.3);
        }
        for v in denoiser.mlp.layers[last].b.data_mut() {
            *v = rng.uniform(-0.1, 0.1);
        }
    }
    let encoder = init_encoder(seed, model_spec)?;
    let schedule = NoiseSchedule::default();

    let d = model_spec.data_dim;
    let n = 4;
    let x0 = Tensor::new(vec![n, d], (0..n * d).map(|_| rng.uniform(-1.0, 1.0)).collect())?;
    let noise = Tensor::new(vec![n, d], rng.normal_vec(n * d))?;
    let t = 0.37;
    let batch = perturb(&schedule, &x0, t, &noise)?;

    let theta_count = denoiser.mlp.layers.len() * 2;
    let opts = StructureOpts::default();
    let den_ref = &denoiser;
    let enc_ref = &encoder;
    let x0_ref = &batch.x0;
    let xt_ref = &batch.xt;
    let f = move |tape: &mut Tape, ps: &[Tensor]| {
        let theta_vars = MlpVars {
            layers: ps[..theta_count]
                .chunks(2)
                .map(|c| (c[0].clone(), c[1].clone()))
                .collect(),
        };
        let phi_vars = MlpVars {
            layers: ps[theta_count..]
                .chunks(2)
                .map(|c| (c[0].clone(), c[1].clone()))
                .collect(),
        };
        let x0v = tape.constant(x0_ref);
        let xtv = tape.constant(xt_ref);
        let xhat = den_ref.apply(tape, &theta_vars, &xtv, t)?;
        let dsm = dsm_loss(tape, &schedule, &x0v, &xhat, t, WeightFn::Constant)?;
        let s = crate::structure::structural_loss(
            tape,
            enc_ref,
            &phi_vars,
            &x0v,
            &xhat,
            t,
            schedule.t_min,
            &opts,
        )?;
        tape.add(&dsm, &s)
    };
    let mut params: Vec<Tensor> = denoiser.mlp.params().into_iter().cloned().collect();
    params.extend(encoder.mlp.params().into_iter().cloned());
    grad_check(&f, &params, eps)
}

/// Train from scratch, collecting the full log in memory.
pub fn run_training(config: &TrainConfig, dataset: &Dataset) -> Result<(TrainState, Vec<LogRow>)> {
    let mut trainer = Trainer::new(config.clone(), dataset)?;
    let mut rows = Vec::new();
    trainer.run(|row| {
        rows.push(row.clone());
        Ok(())
    })?;
    Ok((trainer.state, rows))
}

/// Fine-tune a pretrained state, collecting the log in memory.
pub fn run_finetune(
    config: &TrainConfig,
    dataset: &Dataset,
    pretrained: &TrainState,
) -> Result<(TrainState, Vec<LogRow>)> {
    let mut trainer = Trainer::finetune(config.clone(), dataset, pretrained)?;
    let mut rows = Vec::new();
    trainer.run(|row| {
        rows.push(row.clone());
        Ok(())
    })?;
    Ok((trainer.state, rows))
}
