//! Continuous-time forward diffusion: noise schedule, marginal and
//! transition kernels, and the instance-level denoising loss.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Upper end of the usable time range; keeps the log-SNR and the 1/t
/// weighting finite at both ends.
pub const T_MAX: f64 = 1.0 - 1e-3;

/// Variance-preserving cosine schedule: alpha(t) = cos(πt/2),
/// sigma(t) = sin(πt/2), so alpha² + sigma² = 1 exactly for all t.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub t_min: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule { t_min: 1e-3 }
    }
}

impl NoiseSchedule {
    pub fn cosine(t_min: f64) -> Result<Self> {
        if !(t_min > 0.0 && t_min <= 0.1) {
            return Err(Error::InvalidArgument(format!(
                "t_min {t_min} outside (0, 0.1]"
            )));
        }
        Ok(NoiseSchedule { t_min })
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if t >= self.t_min && t <= 1.0 {
            Ok(())
        } else {
            Err(Error::TimeOutOfRange {
                t,
                lo: self.t_min,
                hi: 1.0,
            })
        }
    }

    pub fn alpha(&self, t: f64) -> f64 {
        (PI * t / 2.0).cos()
    }

    pub fn sigma(&self, t: f64) -> f64 {
        (PI * t / 2.0).sin()
    }

    /// Log signal-to-noise ratio λ(t) = log(alpha²/sigma²).
    pub fn lambda(&self, t: f64) -> f64 {
        2.0 * (self.alpha(t).ln() - self.sigma(t).ln())
    }

    /// d/dt log alpha(t).
    pub fn dlog_alpha(&self, t: f64) -> f64 {
        -(PI / 2.0) * (PI * t / 2.0).tan()
    }

    /// d/dt sigma²(t).
    pub fn dsigma2(&self, t: f64) -> f64 {
        (PI / 2.0) * (PI * t).sin()
    }

    /// Transition kernel parameters for s < t: x_t | x_s has mean
    /// (alpha_t/alpha_s)·x_s and variance (1 − exp(λ_t − λ_s))·sigma_t².
    pub fn transition_params(&self, s: f64, t: f64) -> Result<(f64, f64)> {
        self.check_time(s)?;
        self.check_time(t)?;
        if s >= t {
            return Err(Error::InvalidArgument(format!(
                "transition requires s < t, got s={s}, t={t}"
            )));
        }
        let ratio = self.alpha(t) / self.alpha(s);
        let var = (1.0 - (self.lambda(t) - self.lambda(s)).exp()) * self.sigma(t).powi(2);
        Ok((ratio, var))
    }
}

/// One perturbed training batch: x_t = alpha(t)·x_0 + sigma(t)·eps, stored.
#[derive(Debug, Clone)]
pub struct DiffusionBatch {
    pub x0: Tensor,
    pub t: f64,
    pub eps: Tensor,
    pub xt: Tensor,
}

/// Forward-perturb a clean batch at time t with the given noise.
pub fn perturb(schedule: &NoiseSchedule, x0: &Tensor, t: f64, eps: &Tensor) -> Result<DiffusionBatch> {
    schedule.check_time(t)?;
    if x0.shape() != eps.shape() {
        return Err(Error::ShapeMismatch {
            op: "perturb",
            left: x0.shape().to_vec(),
            right: eps.shape().to_vec(),
        });
    }
    let a = schedule.alpha(t);
    let s = schedule.sigma(t);
    let data: Vec<f64> = x0
        .data()
        .iter()
        .zip(eps.data().iter())
        .map(|(&x, &e)| a * x + s * e)
        .collect();
    let xt = Tensor::new(x0.shape().to_vec(), data)?;
    Ok(DiffusionBatch {
        x0: x0.clone(),
        t,
        eps: eps.clone(),
        xt,
    })
}

/// Weighting function w(λ_t) applied to the denoising loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFn {
    /// w ≡ 1 (x̂-prediction parameterization).
    #[default]
    Constant,
}

impl WeightFn {
    pub fn eval(&self, _lambda: f64) -> f64 {
        match self {
            WeightFn::Constant => 1.0,
        }
    }
}

/// Batch denoising loss w(λ_t)·(1/|B|)·Σᵢ‖x₀ⁱ − x̂ⁱ‖², built on the tape so
/// it is differentiable in everything upstream of `xhat`.
pub fn dsm_loss(
    tape: &mut Tape,
    schedule: &NoiseSchedule,
    x0: &Tensor,
    xhat: &Tensor,
    t: f64,
    w: WeightFn,
) -> Result<Tensor> {
    let batch = x0.shape()[0] as f64;
    let diff = tape.sub(x0, xhat)?;
    let total = tape.sq_l2(&diff)?;
    let weight = w.eval(schedule.lambda(t));
    tape.scale(&total, weight / batch)
}
