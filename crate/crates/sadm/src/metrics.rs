//! Desk-scale evaluation: sliced Wasserstein distance, mode coverage, and
//! the affinity-heatmap comparison between label structure and denoised
//! predictions.

use crate::diffusion::{perturb, NoiseSchedule};
use crate::error::{Error, Result};
use crate::rng::{streams, StreamRng};
use crate::sampler::DenoiseFn;
use crate::tensor::Tensor;

/// Mean over random unit directions of the 1D 2-Wasserstein distance
/// between the projected empirical distributions (sorted-quantile form with
/// linear interpolation to the finer grid). Deterministic in the seed.
pub fn sliced_wasserstein(a: &Tensor, b: &Tensor, n_proj: usize, seed: u64) -> Result<f64> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.cols() {
        return Err(Error::ShapeMismatch {
            op: "sliced_wasserstein",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    if a.rows() < 2 || b.rows() < 2 {
        return Err(Error::InvalidArgument(
            "sliced_wasserstein needs at least 2 samples per side".into(),
        ));
    }
    if n_proj < 16 {
        return Err(Error::InvalidArgument("n_proj must be >= 16".into()));
    }
    let d = a.cols();
    if d == 0 {
        return Err(Error::InvalidArgument("zero-dimensional samples".into()));
    }

    let mut rng = StreamRng::new(seed, streams::METRICS);
    let mut total = 0.0;
    let mut proj_a = vec![0.0; a.rows()];
    let mut proj_b = vec![0.0; b.rows()];
    for _ in 0..n_proj {
        let mut dir = rng.normal_vec(d);
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut dir {
            *v /= norm;
        }
        project(a, &dir, &mut proj_a);
        project(b, &dir, &mut proj_b);
        proj_a.sort_unstable_by(|x, y| x.partial_cmp(y).unwrap());
        proj_b.sort_unstable_by(|x, y| x.partial_cmp(y).unwrap());
        total += wasserstein_1d(&proj_a, &proj_b);
    }
    Ok(total / n_proj as f64)
}

fn project(points: &Tensor, dir: &[f64], out: &mut [f64]) {
    let d = points.cols();
    for (i, o) in out.iter_mut().enumerate() {
        let row = points.row(i);
        let mut s = 0.0;
        for j in 0..d {
            s += row[j] * dir[j];
        }
        *o = s;
    }
}

/// Midpoint-convention empirical quantile with linear interpolation.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q * n as f64 - 0.5;
    if pos <= 0.0 {
        return sorted[0];
    }
    if pos >= (n - 1) as f64 {
        return sorted[n - 1];
    }
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
}

/// W2 between two sorted 1D samples via quantiles on the finer grid.
fn wasserstein_1d(sorted_a: &[f64], sorted_b: &[f64]) -> f64 {
    let grid = sorted_a.len().max(sorted_b.len());
    let mut total = 0.0;
    for i in 0..grid {
        let q = (i as f64 + 0.5) / grid as f64;
        let diff = quantile_sorted(sorted_a, q) - quantile_sorted(sorted_b, q);
        total += diff * diff;
    }
    (total / grid as f64).sqrt()
}

/// Count modes reached by at least one sample within `radius`, plus the
/// histogram of nearest-center assignments.
pub fn mode_coverage(
    samples: &Tensor,
    modes: &[Vec<f64>],
    radius: f64,
) -> Result<(usize, Vec<usize>)> {
    if modes.is_empty() {
        return Err(Error::InvalidArgument("empty mode list".into()));
    }
    if radius <= 0.0 {
        return Err(Error::InvalidArgument("radius must be > 0".into()));
    }
    let d = samples.cols();
    let mut histogram = vec![0usize; modes.len()];
    let mut hit = vec![false; modes.len()];
    for i in 0..samples.rows() {
        let row = samples.row(i);
        let mut best = 0usize;
        let mut best_d2 = f64::INFINITY;
        for (k, c) in modes.iter().enumerate() {
            let mut d2 = 0.0;
            for j in 0..d {
                let diff = row[j] - c[j];
                d2 += diff * diff;
            }
            if d2 < best_d2 {
                best_d2 = d2;
                best = k;
            }
        }
        histogram[best] += 1;
        if best_d2.sqrt() <= radius {
            hit[best] = true;
        }
    }
    Ok((hit.iter().filter(|&&h| h).count(), histogram))
}

/// Label-vs-prediction affinity comparison over one small labeled batch.
#[derive(Debug, Clone)]
pub struct HeatmapReport {
    /// L·Lᵀ over one-hot labels, [n,n].
    pub label_affinity: Tensor,
    /// Symmetrized ½(L·Pᵀ + P·Lᵀ), [n,n].
    pub model_affinity: Tensor,
    /// Raw L·Pᵀ, kept alongside the symmetrized form.
    pub raw_affinity: Tensor,
    pub frobenius_gap: f64,
}

fn matmul_plain(a: &Tensor, bt: &Tensor) -> Tensor {
    // a: [n,k], bt: [m,k] → a·btᵀ: [n,m]
    let (n, k, m) = (a.rows(), a.cols(), bt.rows());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for p in 0..k {
                s += a.row(i)[p] * bt.row(j)[p];
            }
            out[i * m + j] = s;
        }
    }
    Tensor::new(vec![n, m], out).expect("finite")
}

/// Core of the heatmap comparison, on an explicit prediction matrix P
/// ([n,K], rows summing to 1).
pub fn heatmap_from_predictions(labels: &[usize], k: usize, pred: &Tensor) -> Result<HeatmapReport> {
    let n = labels.len();
    if pred.rows() != n || pred.cols() != k {
        return Err(Error::ShapeMismatch {
            op: "heatmap",
            left: vec![n, k],
            right: pred.shape().to_vec(),
        });
    }
    let mut l = vec![0.0; n * k];
    for (i, &li) in labels.iter().enumerate() {
        if li >= k {
            return Err(Error::InvalidArgument(format!(
                "label {li} out of range for {k} modes"
            )));
        }
        l[i * k + li] = 1.0;
    }
    let l = Tensor::new(vec![n, k], l)?;

    let label_affinity = matmul_plain(&l, &l);
    let raw_affinity = matmul_plain(&l, pred);
    let pl = matmul_plain(pred, &l);
    let mut sym = vec![0.0; n * n];
    for i in 0..n * n {
        sym[i] = 0.5 * (raw_affinity.data()[i] + pl.data()[i]);
    }
    let model_affinity = Tensor::new(vec![n, n], sym)?;

    let mut gap2 = 0.0;
    for i in 0..n * n {
        let d = label_affinity.data()[i] - model_affinity.data()[i];
        gap2 += d * d;
    }
    Ok(HeatmapReport {
        label_affinity,
        model_affinity,
        raw_affinity,
        frobenius_gap: gap2.sqrt(),
    })
}

/// Noise a labeled batch to time t, denoise it, and compare the affinity of
/// one-hot labels with the affinity of soft mode assignments of the
/// denoised outputs (row-softmax of negative squared distances to the mode
/// centers).
#[allow(clippy::too_many_arguments)]
pub fn heatmap_analysis(
    model: &dyn DenoiseFn,
    schedule: &NoiseSchedule,
    x0: &Tensor,
    labels: &[usize],
    centers: &[Vec<f64>],
    t: f64,
    seed: u64,
) -> Result<HeatmapReport> {
    if labels.len() != x0.rows() {
        return Err(Error::InvalidArgument(
            "heatmap needs one label per sample (unlabeled dataset?)".into(),
        ));
    }
    if centers.is_empty() {
        return Err(Error::InvalidArgument("empty mode list".into()));
    }
    let mut rng = StreamRng::new(seed, streams::HEATMAP);
    let eps = Tensor::new(x0.shape().to_vec(), rng.normal_vec(x0.numel()))?;
    let batch = perturb(schedule, x0, t, &eps)?;
    let xhat = model.denoise(&batch.xt, t)?;

    let (n, k, d) = (x0.rows(), centers.len(), x0.cols());
    let mut pred = vec![0.0; n * k];
    for i in 0..n {
        let row = xhat.row(i);
        let mut logits = vec![0.0; k];
        for (c, center) in centers.iter().enumerate() {
            let mut d2 = 0.0;
            for j in 0..d {
                let diff = row[j] - center[j];
                d2 += diff * diff;
            }
            logits[c] = -d2;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for l in &mut logits {
            *l = (*l - max).exp();
            z += *l;
        }
        for (c, l) in logits.iter().enumerate() {
            pred[i * k + c] = l / z;
        }
    }
    heatmap_from_predictions(labels, k, &Tensor::new(vec![n, k], pred)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_have_zero_distance() {
        let a = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.5], vec![-1.0, 2.0]]).unwrap();
        let d = sliced_wasserstein(&a, &a, 64, 1).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn point_masses_at_distance_delta() {
        let delta = 0.73;
        let a = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![1.0 + delta], vec![1.0 + delta]]).unwrap();
        let d = sliced_wasserstein(&a, &b, 64, 2).unwrap();
        // in 1D the unit directions are ±1 and both give exactly delta
        assert!((d - delta).abs() < 1e-12, "{d}");
    }

    #[test]
    fn shifted_gaussians_match_analytic_value() {
        // N(0, I) vs N((2,0), I) in 2D: per direction u the distance is
        // |<u, (2,0)>|, whose average over the circle is 2·(2/π) = 4/π.
        let mut rng = StreamRng::new(5, 950);
        let n = 10_000;
        let a = Tensor::new(vec![n, 2], rng.normal_vec(2 * n)).unwrap();
        let mut b = Tensor::new(vec![n, 2], rng.normal_vec(2 * n)).unwrap();
        for i in 0..n {
            b.data_mut()[2 * i] += 2.0;
        }
        let d = sliced_wasserstein(&a, &b, 256, 3).unwrap();
        let expect = 4.0 / std::f64::consts::PI;
        assert!(
            (d - expect).abs() < 0.1 * expect,
            "{d} vs {expect} (10% tolerance)"
        );
    }

    #[test]
    fn pseudometric_properties() {
        let mut rng = StreamRng::new(9, 951);
        let sample = |rng: &mut StreamRng, shift: f64| {
            let mut t = Tensor::new(vec![200, 2], rng.normal_vec(400)).unwrap();
            for v in t.data_mut() {
                *v += shift;
            }
            t
        };
        let a = sample(&mut rng, 0.0);
        let b = sample(&mut rng, 0.7);
        let c = sample(&mut rng, 1.5);
        let dab = sliced_wasserstein(&a, &b, 128, 7).unwrap();
        let dba = sliced_wasserstein(&b, &a, 128, 7).unwrap();
        assert!((dab - dba).abs() < 1e-12, "symmetry");
        let dac = sliced_wasserstein(&a, &c, 128, 7).unwrap();
        let dbc = sliced_wasserstein(&b, &c, 128, 7).unwrap();
        assert!(dac <= dab + dbc + 1e-6, "triangle: {dac} vs {dab}+{dbc}");
        assert!(dab > 0.0);
    }

    #[test]
    fn unequal_sample_counts_interpolate() {
        let a = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![0.0], vec![1.5], vec![3.0]]).unwrap();
        let d = sliced_wasserstein(&a, &b, 32, 11).unwrap();
        assert!(d.is_finite() && d < 1.0);
    }

    #[test]
    fn coverage_counts_hit_modes() {
        let modes: Vec<Vec<f64>> = (0..8)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / 8.0;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let exact = Tensor::from_rows(&modes).unwrap();
        let (covered, hist) = mode_coverage(&exact, &modes, 0.3).unwrap();
        assert_eq!(covered, 8);
        assert_eq!(hist, vec![1; 8]);

        let collapsed = Tensor::from_rows(&vec![modes[0].clone(); 20]).unwrap();
        let (covered, hist) = mode_coverage(&collapsed, &modes, 0.3).unwrap();
        assert_eq!(covered, 1);
        assert_eq!(hist[0], 20);
        assert!(hist[1..].iter().all(|&h| h == 0));
    }

    #[test]
    fn coverage_rejects_bad_inputs() {
        let s = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(mode_coverage(&s, &[], 0.3).is_err());
        assert!(mode_coverage(&s, &[vec![0.0, 0.0]], 0.0).is_err());
    }

    #[test]
    fn perfect_predictions_have_tiny_gap() {
        // spread the centers far apart so softmax saturates
        let centers: Vec<Vec<f64>> = (0..4).map(|k| vec![8.0 * k as f64, 0.0]).collect();
        let labels = [0usize, 1, 2, 3, 0, 1, 2, 3];
        let x0 = Tensor::from_rows(
            &labels
                .iter()
                .map(|&l| centers[l].clone())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let sch = NoiseSchedule::default();
        let x0_clone = x0.clone();
        let perfect = move |_x: &Tensor, _t: f64| Ok(x0_clone.clone());
        let report =
            heatmap_analysis(&perfect, &sch, &x0, &labels, &centers, 0.5, 4).unwrap();
        assert!(report.frobenius_gap < 1e-6, "gap {}", report.frobenius_gap);
    }

    #[test]
    fn uniform_predictions_match_closed_form_gap() {
        let k = 4;
        let labels = [0usize, 1, 2, 3, 0, 1, 2, 3];
        let n = labels.len();
        let pred = Tensor::new(vec![n, k], vec![1.0 / k as f64; n * k]).unwrap();
        let report = heatmap_from_predictions(&labels, k, &pred).unwrap();
        // model affinity is constant 1/K
        assert!(report
            .model_affinity
            .data()
            .iter()
            .all(|&v| (v - 0.25).abs() < 1e-12));
        // gap² = Σ_same (1 − 1/K)² + Σ_diff (1/K)²; with 2 samples per class:
        // same-label pairs (incl. diagonal) = n·2, different = n·(n−2)
        let same = n as f64 * 2.0;
        let diff = n as f64 * (n as f64 - 2.0);
        let expect = (same * 0.75 * 0.75 + diff * 0.25 * 0.25).sqrt();
        assert!((report.frobenius_gap - expect).abs() < 1e-12);
    }

    #[test]
    fn heatmap_gap_is_permutation_invariant() {
        let sch = NoiseSchedule::default();
        let centers: Vec<Vec<f64>> = (0..4).map(|k| vec![k as f64, -(k as f64)]).collect();
        let labels = [0usize, 1, 2, 3, 0, 1, 2, 3];
        let mut rng = StreamRng::new(6, 952);
        let x0 = Tensor::new(vec![8, 2], rng.normal_vec(16)).unwrap();
        let halve = |x: &Tensor, _t: f64| {
            Tensor::new(
                x.shape().to_vec(),
                x.data().iter().map(|v| 0.5 * v).collect(),
            )
        };

        let report = heatmap_analysis(&halve, &sch, &x0, &labels, &centers, 0.5, 4).unwrap();

        // permuting samples and labels together leaves the gap unchanged;
        // reuse the same noised inputs by permuting the report matrices
        let perm = [5usize, 2, 7, 0, 3, 6, 1, 4];
        let mut permuted_label = vec![0.0; 64];
        let mut permuted_model = vec![0.0; 64];
        for i in 0..8 {
            for j in 0..8 {
                permuted_label[i * 8 + j] = report.label_affinity.data()[perm[i] * 8 + perm[j]];
                permuted_model[i * 8 + j] = report.model_affinity.data()[perm[i] * 8 + perm[j]];
            }
        }
        let mut gap2 = 0.0;
        for i in 0..64 {
            let d = permuted_label[i] - permuted_model[i];
            gap2 += d * d;
        }
        assert!((gap2.sqrt() - report.frobenius_gap).abs() < 1e-12);
    }

    #[test]
    fn heatmap_matrices_are_symmetric() {
        let sch = NoiseSchedule::default();
        let centers: Vec<Vec<f64>> = (0..3).map(|k| vec![k as f64, 0.0]).collect();
        let labels = [0usize, 1, 2, 0, 1, 2, 0, 1];
        let mut rng = StreamRng::new(13, 953);
        let x0 = Tensor::new(vec![8, 2], rng.normal_vec(16)).unwrap();
        let noisy = |x: &Tensor, _t: f64| Ok(x.clone());
        let report = heatmap_analysis(&noisy, &sch, &x0, &labels, &centers, 0.5, 4).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let la = report.label_affinity.data()[i * 8 + j];
                let lb = report.label_affinity.data()[j * 8 + i];
                assert!((la - lb).abs() < 1e-9);
                let ma = report.model_affinity.data()[i * 8 + j];
                let mb = report.model_affinity.data()[j * 8 + i];
                assert!((ma - mb).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn unlabeled_batch_is_rejected() {
        let sch = NoiseSchedule::default();
        let x0 = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let id = |x: &Tensor, _t: f64| Ok(x.clone());
        let r = heatmap_analysis(&id, &sch, &x0, &[], &[vec![0.0, 0.0]], 0.5, 1);
        assert!(r.is_err());
    }
}
