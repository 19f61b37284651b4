//! Pairwise sample relations, affinity matrices, and the time-weighted
//! structural loss that the denoiser minimizes and the structure
//! discriminator maximizes.

use crate::error::{Error, Result};
use crate::models::{Encoder, MlpVars};
use crate::tensor::{Tape, Tensor};
use serde::{Deserialize, Serialize};

/// Pairwise relation R(·,·) between two embeddings. All kinds are symmetric.
/// `neg_l2` is the negated squared Euclidean distance (smooth through the
/// diagonal, which the affinity sum includes).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationFn {
    InnerProduct,
    #[default]
    Cosine,
    NegL2,
    NegL1,
}

/// Distance D(·,·) between two affinity matrices, normalized by |B|².
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceFn {
    #[default]
    L2Sq,
    L1,
}

/// |B|×|B| matrix of pairwise relations between batch embeddings; lives on
/// the tape so it stays differentiable in the embeddings.
#[derive(Debug)]
pub struct AffinityMatrix {
    pub m: Tensor,
}

impl AffinityMatrix {
    pub fn batch(&self) -> usize {
        self.m.shape()[0]
    }
}

/// Scalar relation between two embedding vectors; the reference the affinity
/// op is checked against.
pub fn relation_value(rel: RelationFn, a: &[f64], b: &[f64]) -> f64 {
    match rel {
        RelationFn::InnerProduct => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        RelationFn::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        }
        RelationFn::NegL2 => -a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>(),
        RelationFn::NegL1 => -a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>(),
    }
}

/// Affinity matrix M[i][j] = R(embᵢ, embⱼ) over all pairs, diagonal included.
pub fn affinity(tape: &mut Tape, emb: &Tensor, rel: RelationFn) -> Result<AffinityMatrix> {
    if emb.shape().len() != 2 || emb.shape()[0] < 2 {
        return Err(Error::InvalidArgument(format!(
            "affinity needs a [|B|,d] batch with |B| >= 2, got {:?}",
            emb.shape()
        )));
    }
    let m = match rel {
        RelationFn::InnerProduct => tape.gram(emb)?,
        RelationFn::Cosine => {
            let unit = tape.normalize_rows(emb)?;
            tape.gram(&unit)?
        }
        RelationFn::NegL2 => tape.pairwise_neg_sqdist(emb)?,
        RelationFn::NegL1 => tape.pairwise_neg_l1(emb)?,
    };
    Ok(AffinityMatrix { m })
}

/// D(real, fake) normalized by |B|²: mean of squared (or absolute)
/// entrywise differences. Differentiable in both matrices.
pub fn structural_distance(
    tape: &mut Tape,
    real: &AffinityMatrix,
    fake: &AffinityMatrix,
    dist: DistanceFn,
) -> Result<Tensor> {
    if real.m.shape() != fake.m.shape() {
        return Err(Error::ShapeMismatch {
            op: "structural_distance",
            left: real.m.shape().to_vec(),
            right: fake.m.shape().to_vec(),
        });
    }
    let diff = tape.sub(&real.m, &fake.m)?;
    match dist {
        DistanceFn::L2Sq => {
            let sq = tape.mul(&diff, &diff)?;
            tape.mean_all(&sq)
        }
        DistanceFn::L1 => {
            let ab = tape.abs(&diff)?;
            tape.mean_all(&ab)
        }
    }
}

/// Options for the structural loss.
#[derive(Debug, Clone, Copy)]
pub struct StructureOpts {
    pub rel: RelationFn,
    pub dist: DistanceFn,
    /// Zero out diagonal pairs before the distance. Default false: the
    /// sum runs over all i, j including i = j.
    pub exclude_diagonal: bool,
}

impl Default for StructureOpts {
    fn default() -> Self {
        StructureOpts {
            rel: RelationFn::Cosine,
            dist: DistanceFn::L2Sq,
            exclude_diagonal: false,
        }
    }
}

fn mask_diagonal(tape: &mut Tape, aff: AffinityMatrix) -> Result<AffinityMatrix> {
    let n = aff.batch();
    let mut mask = vec![1.0; n * n];
    for i in 0..n {
        mask[i * n + i] = 0.0;
    }
    let mask = tape.constant(&Tensor::new(vec![n, n], mask)?);
    let m = tape.mul(&aff.m, &mask)?;
    Ok(AffinityMatrix { m })
}

/// Time-weighted structural loss
/// η_t · D(M(Ψ(x₀)), M(Ψ(x̂₀))) with η_t = 1/t.
///
/// Gradients reach x̂₀ (and through it the denoiser) always, and the encoder
/// parameters whenever they were registered trainable.
pub fn structural_loss(
    tape: &mut Tape,
    encoder: &Encoder,
    enc_vars: &MlpVars,
    x0: &Tensor,
    x0_hat: &Tensor,
    t: f64,
    t_min: f64,
    opts: &StructureOpts,
) -> Result<Tensor> {
    if !(t >= t_min && t <= 1.0) {
        return Err(Error::TimeOutOfRange {
            t,
            lo: t_min,
            hi: 1.0,
        });
    }
    if x0.shape() != x0_hat.shape() {
        return Err(Error::ShapeMismatch {
            op: "structural_loss",
            left: x0.shape().to_vec(),
            right: x0_hat.shape().to_vec(),
        });
    }
    let emb_real = encoder.apply(tape, enc_vars, x0)?;
    let emb_fake = encoder.apply(tape, enc_vars, x0_hat)?;
    let mut real = affinity(tape, &emb_real, opts.rel)?;
    let mut fake = affinity(tape, &emb_fake, opts.rel)?;
    if opts.exclude_diagonal {
        real = mask_diagonal(tape, real)?;
        fake = mask_diagonal(tape, fake)?;
    }
    let d = structural_distance(tape, &real, &fake, opts.dist)?;
    let eta = 1.0 / t;
    tape.scale(&d, eta)
}
