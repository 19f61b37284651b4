//! The denoising network x̂ and the structure-discriminator encoder Ψ:
//! small MLPs over f64 tensors, with sinusoidal time conditioning for the
//! denoiser.

use crate::error::{Error, Result};
use crate::rng::{streams, StreamRng};
use crate::tensor::{Tape, Tensor};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
    Tanh,
}

/// How a model's parameters participate in one tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamMode {
    Trainable,
    /// Gradients flow through but are not accumulated for the parameters.
    Frozen,
    /// Weight matrices frozen, bias vectors trainable.
    BiasesOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// [fan_in, fan_out]
    pub w: Tensor,
    /// [1, fan_out]
    pub b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub widths: Vec<usize>,
    pub layers: Vec<Linear>,
    pub activation: Activation,
    /// Whether the activation is applied after the final layer too.
    pub activate_last: bool,
}

/// On-tape leaves for one forward/backward pass.
pub struct MlpVars {
    pub layers: Vec<(Tensor, Tensor)>,
}

impl Mlp {
    pub fn zeroed(widths: Vec<usize>, activation: Activation, activate_last: bool) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Linear {
                w: Tensor::zeros(vec![w[0], w[1]]),
                b: Tensor::zeros(vec![1, w[1]]),
            })
            .collect();
        Mlp {
            widths,
            layers,
            activation,
            activate_last,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Parameter tensors in declared order: w0, b0, w1, b1, ...
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn register(&self, tape: &mut Tape, mode: ParamMode) -> MlpVars {
        let layers = self
            .layers
            .iter()
            .map(|l| match mode {
                ParamMode::Trainable => (tape.param(&l.w), tape.param(&l.b)),
                ParamMode::Frozen => (tape.frozen(&l.w), tape.frozen(&l.b)),
                ParamMode::BiasesOnly => (tape.frozen(&l.w), tape.param(&l.b)),
            })
            .collect();
        MlpVars { layers }
    }

    pub fn apply(&self, tape: &mut Tape, vars: &MlpVars, input: &Tensor) -> Result<Tensor> {
        if input.cols() != self.in_dim() {
            return Err(Error::ShapeMismatch {
                op: "mlp_apply",
                left: input.shape().to_vec(),
                right: vec![self.in_dim()],
            });
        }
        let mut h = input.clone();
        let last = vars.layers.len() - 1;
        for (i, (w, b)) in vars.layers.iter().enumerate() {
            h = tape.matmul(&h, w)?;
            h = tape.add(&h, b)?;
            if i != last || self.activate_last {
                h = match self.activation {
                    Activation::Silu => tape.silu(&h)?,
                    Activation::Tanh => tape.tanh(&h)?,
                };
            }
        }
        Ok(h)
    }
}

/// Denoising network x̂(x_t, t): MLP over the noisy batch concatenated with
/// sinusoidal features of t. Widths [d + 2F, h, h, d], SiLU activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub mlp: Mlp,
    /// Geometrically spaced angular frequencies for the time features.
    pub time_freqs: Vec<f64>,
    pub data_dim: usize,
}

impl Denoiser {
    /// sin/cos features of t, one row.
    pub fn time_features(&self, t: f64) -> Vec<f64> {
        let mut f = Vec::with_capacity(2 * self.time_freqs.len());
        for &w in &self.time_freqs {
            f.push((w * t).sin());
            f.push((w * t).cos());
        }
        f
    }

    pub fn register(&self, tape: &mut Tape, mode: ParamMode) -> MlpVars {
        self.mlp.register(tape, mode)
    }

    /// x̂ = MLP(concat(x_t, time features)); differentiable in parameters
    /// and in x_t.
    pub fn apply(&self, tape: &mut Tape, vars: &MlpVars, xt: &Tensor, t: f64) -> Result<Tensor> {
        if xt.cols() != self.data_dim {
            return Err(Error::ShapeMismatch {
                op: "denoise",
                left: xt.shape().to_vec(),
                right: vec![self.data_dim],
            });
        }
        let n = xt.rows();
        let feats = self.time_features(t);
        let mut tiled = Vec::with_capacity(n * feats.len());
        for _ in 0..n {
            tiled.extend_from_slice(&feats);
        }
        let tf = tape.constant(&Tensor::new(vec![n, feats.len()], tiled)?);
        let joined = tape.concat_cols(xt, &tf)?;
        self.mlp.apply(tape, vars, &joined)
    }

    /// One forward pass on a throwaway tape, values only.
    pub fn denoise_values(&self, xt: &Tensor, t: f64) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, ParamMode::Frozen);
        let x = tape.constant(xt);
        self.apply(&mut tape, &vars, &x, t)
    }
}

/// Structure-discriminator encoder Ψ: MLP with tanh after every layer
/// (bounded embeddings), no time conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub mlp: Mlp,
    pub frozen: bool,
}

impl Encoder {
    pub fn register(&self, tape: &mut Tape, mode: ParamMode) -> MlpVars {
        self.mlp.register(tape, mode)
    }

    /// Mode implied by the freeze flag.
    pub fn default_mode(&self) -> ParamMode {
        if self.frozen {
            ParamMode::Frozen
        } else {
            ParamMode::Trainable
        }
    }

    /// Ψ(x) row-wise; gradients flow to x even when the encoder is frozen.
    pub fn apply(&self, tape: &mut Tape, vars: &MlpVars, x: &Tensor) -> Result<Tensor> {
        self.mlp.apply(tape, vars, x)
    }

    pub fn embed_dim(&self) -> usize {
        self.mlp.out_dim()
    }
}

/// Architecture hyperparameters, stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub data_dim: usize,
    pub denoiser_hidden: usize,
    pub time_frequencies: usize,
    pub encoder_hidden: usize,
    pub embed_dim: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            data_dim: 2,
            denoiser_hidden: 64,
            time_frequencies: 8,
            encoder_hidden: 32,
            embed_dim: 8,
        }
    }
}

impl ModelSpec {
    pub fn with_dim(data_dim: usize) -> Self {
        ModelSpec {
            data_dim,
            ..Default::default()
        }
    }

    pub fn denoiser_widths(&self) -> Vec<usize> {
        vec![
            self.data_dim + 2 * self.time_frequencies,
            self.denoiser_hidden,
            self.denoiser_hidden,
            self.data_dim,
        ]
    }

    pub fn encoder_widths(&self) -> Vec<usize> {
        vec![self.data_dim, self.encoder_hidden, self.embed_dim]
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.data_dim > 0
            && self.denoiser_hidden > 0
            && self.time_frequencies > 0
            && self.encoder_hidden > 0
            && self.embed_dim > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "model widths must be positive".into(),
            ))
        }
    }
}

fn fill_uniform_fan_in(rng: &mut StreamRng, layer: &mut Linear) {
    let fan_in = layer.w.shape()[0] as f64;
    let bound = 1.0 / fan_in.sqrt();
    for v in layer.w.data_mut() {
        *v = rng.uniform(-bound, bound);
    }
    // biases stay zero
}

/// Geometric frequency ladder π·2^k.
fn time_frequencies(count: usize) -> Vec<f64> {
    (0..count).map(|k| PI * (1u64 << k) as f64).collect()
}

impl Denoiser {
    /// Zero-parameter denoiser with the architecture implied by the spec;
    /// checkpoint loading fills the parameters afterwards.
    pub fn from_spec(spec: &ModelSpec) -> Result<Denoiser> {
        spec.validate()?;
        Ok(Denoiser {
            mlp: Mlp::zeroed(spec.denoiser_widths(), Activation::Silu, false),
            time_freqs: time_frequencies(spec.time_frequencies),
            data_dim: spec.data_dim,
        })
    }
}

impl Encoder {
    pub fn from_spec(spec: &ModelSpec) -> Result<Encoder> {
        spec.validate()?;
        Ok(Encoder {
            mlp: Mlp::zeroed(spec.encoder_widths(), Activation::Tanh, true),
            frozen: true,
        })
    }
}

/// Fan-in-scaled uniform weights, zero biases, zero-initialized final layer;
/// deterministic in the seed.
pub fn init_denoiser(seed: u64, spec: &ModelSpec) -> Result<Denoiser> {
    spec.validate()?;
    let mut mlp = Mlp::zeroed(spec.denoiser_widths(), Activation::Silu, false);
    let mut rng = StreamRng::new(seed, streams::INIT_DENOISER);
    let last = mlp.layers.len() - 1;
    for (i, layer) in mlp.layers.iter_mut().enumerate() {
        if i != last {
            fill_uniform_fan_in(&mut rng, layer);
        }
    }
    Ok(Denoiser {
        mlp,
        time_freqs: time_frequencies(spec.time_frequencies),
        data_dim: spec.data_dim,
    })
}

/// Random frozen projection standing in for a pretrained feature extractor.
/// Encoder biases are small and nonzero: with the denoiser's output layer
/// zero-initialized, x̂ ≡ 0 on the first step, and a zero-biased tanh stack
/// would embed it to the zero vector, where cosine is undefined.
pub fn init_encoder(seed: u64, spec: &ModelSpec) -> Result<Encoder> {
    spec.validate()?;
    let mut mlp = Mlp::zeroed(spec.encoder_widths(), Activation::Tanh, true);
    let mut rng = StreamRng::new(seed, streams::INIT_ENCODER);
    for layer in mlp.layers.iter_mut() {
        fill_uniform_fan_in(&mut rng, layer);
        for v in layer.b.data_mut() {
            *v = rng.uniform(-0.5, 0.5);
        }
    }
    Ok(Encoder { mlp, frozen: true })
}
