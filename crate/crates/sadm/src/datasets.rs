//! Built-in synthetic 2D distributions and CSV point-set ingestion.

use crate::error::{Error, Result};
use crate::rng::{streams, StreamRng};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    EightGaussians,
    TwoMoons,
    SwissRoll2d,
    Checkerboard,
    File,
}

fn default_sigma() -> f64 {
    0.1
}
fn default_noise() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default)]
    pub kind: DatasetKind,
    /// Component standard deviation for eight_gaussians (radius-1 circle).
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Noise level for two_moons / swiss_roll_2d.
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Rigid rotation applied to eight_gaussians centers, in degrees.
    #[serde(default)]
    pub rotation_deg: f64,
    /// Seed for the dataset's own stream when drawing outside a training
    /// loop (the trainer passes its own stream instead).
    #[serde(default)]
    pub seed: u64,
    /// Point file for kind = file.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            kind: DatasetKind::EightGaussians,
            sigma: default_sigma(),
            noise: default_noise(),
            rotation_deg: 0.0,
            seed: 0,
            path: None,
        }
    }
}

impl DatasetSpec {
    pub fn eight_gaussians() -> Self {
        Self::default()
    }

    pub fn rotated_eight_gaussians(deg: f64) -> Self {
        DatasetSpec {
            rotation_deg: deg,
            ..Self::default()
        }
    }

    pub fn two_moons() -> Self {
        DatasetSpec {
            kind: DatasetKind::TwoMoons,
            ..Self::default()
        }
    }
}

/// A ready-to-sample dataset. File-backed kinds hold their loaded points.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: DatasetSpec,
    file_points: Option<Tensor>,
    file_labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn open(spec: &DatasetSpec) -> Result<Dataset> {
        let (file_points, file_labels) = match spec.kind {
            DatasetKind::File => {
                let path = spec.path.as_ref().ok_or_else(|| {
                    Error::Config("dataset.kind = file requires dataset.path".into())
                })?;
                let (points, labels) = load_file(path)?;
                (Some(points), labels)
            }
            _ => (None, None),
        };
        if spec.kind == DatasetKind::EightGaussians && spec.sigma < 0.0 {
            return Err(Error::Config("dataset.sigma must be >= 0".into()));
        }
        Ok(Dataset {
            spec: spec.clone(),
            file_points,
            file_labels,
        })
    }

    pub fn dim(&self) -> usize {
        match self.spec.kind {
            DatasetKind::File => self.file_points.as_ref().unwrap().cols(),
            _ => 2,
        }
    }

    pub fn labeled(&self) -> bool {
        match self.spec.kind {
            DatasetKind::EightGaussians | DatasetKind::TwoMoons => true,
            DatasetKind::File => self.file_labels.is_some(),
            _ => false,
        }
    }

    /// Mixture-component centers, when the distribution has them.
    pub fn mode_centers(&self) -> Option<Vec<Vec<f64>>> {
        match self.spec.kind {
            DatasetKind::EightGaussians => {
                let rot = self.spec.rotation_deg.to_radians();
                Some(
                    (0..8)
                        .map(|k| {
                            let a = 2.0 * PI * k as f64 / 8.0 + rot;
                            vec![a.cos(), a.sin()]
                        })
                        .collect(),
                )
            }
            _ => None,
        }
    }

    /// i.i.d. draws using the provided stream.
    pub fn sample(&self, rng: &mut StreamRng, n: usize) -> Result<(Tensor, Option<Vec<usize>>)> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be >= 1".into()));
        }
        match self.spec.kind {
            DatasetKind::EightGaussians => {
                let centers = self.mode_centers().unwrap();
                let mut data = Vec::with_capacity(n * 2);
                let mut labels = Vec::with_capacity(n);
                for _ in 0..n {
                    let k = rng.index(8);
                    let c = &centers[k];
                    data.push(c[0] + self.spec.sigma * rng.standard_normal());
                    data.push(c[1] + self.spec.sigma * rng.standard_normal());
                    labels.push(k);
                }
                Ok((Tensor::new(vec![n, 2], data)?, Some(labels)))
            }
            DatasetKind::TwoMoons => {
                let mut data = Vec::with_capacity(n * 2);
                let mut labels = Vec::with_capacity(n);
                for _ in 0..n {
                    let k = rng.index(2);
                    let u = rng.uniform(0.0, PI);
                    let (x, y) = if k == 0 {
                        (u.cos(), u.sin())
                    } else {
                        (1.0 - u.cos(), 0.5 - u.sin())
                    };
                    data.push(x - 0.5 + self.spec.noise * rng.standard_normal());
                    data.push(y - 0.25 + self.spec.noise * rng.standard_normal());
                    labels.push(k);
                }
                Ok((Tensor::new(vec![n, 2], data)?, Some(labels)))
            }
            DatasetKind::SwissRoll2d => {
                let mut data = Vec::with_capacity(n * 2);
                for _ in 0..n {
                    let u = rng.uniform(0.0, 1.0);
                    let theta = 1.5 * PI * (1.0 + 2.0 * u);
                    let r = theta / (4.5 * PI);
                    data.push(r * theta.cos() + self.spec.noise * rng.standard_normal());
                    data.push(r * theta.sin() + self.spec.noise * rng.standard_normal());
                }
                Ok((Tensor::new(vec![n, 2], data)?, None))
            }
            DatasetKind::Checkerboard => {
                // black cells of a 4x4 board over [-1, 1]²
                let mut cells = Vec::new();
                for i in 0..4 {
                    for j in 0..4 {
                        if (i + j) % 2 == 0 {
                            cells.push((i, j));
                        }
                    }
                }
                let mut data = Vec::with_capacity(n * 2);
                for _ in 0..n {
                    let (i, j) = cells[rng.index(cells.len())];
                    let x = -1.0 + 0.5 * (i as f64 + rng.uniform(0.0, 1.0));
                    let y = -1.0 + 0.5 * (j as f64 + rng.uniform(0.0, 1.0));
                    data.push(x);
                    data.push(y);
                }
                Ok((Tensor::new(vec![n, 2], data)?, None))
            }
            DatasetKind::File => {
                let points = self.file_points.as_ref().unwrap();
                let d = points.cols();
                let mut data = Vec::with_capacity(n * d);
                let mut labels = self.file_labels.as_ref().map(|_| Vec::with_capacity(n));
                for _ in 0..n {
                    let idx = rng.index(points.rows());
                    data.extend_from_slice(points.row(idx));
                    if let (Some(ls), Some(src)) = (labels.as_mut(), self.file_labels.as_ref()) {
                        ls.push(src[idx]);
                    }
                }
                Ok((Tensor::new(vec![n, d], data)?, labels))
            }
        }
    }

    /// Draws on the dataset's own stream, seeded from its spec.
    pub fn draw(&self, n: usize) -> Result<(Tensor, Option<Vec<usize>>)> {
        let mut rng = StreamRng::new(self.spec.seed, streams::DATASET);
        self.sample(&mut rng, n)
    }
}

/// Format a float with 17 significant digits, enough to round-trip f64.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write points (and optional labels) as CSV, one sample per line.
pub fn write_points_csv<W: Write>(
    out: &mut W,
    points: &Tensor,
    labels: Option<&[usize]>,
) -> Result<()> {
    for i in 0..points.rows() {
        let mut fields: Vec<String> = points.row(i).iter().map(|&v| format_f64(v)).collect();
        if let Some(ls) = labels {
            fields.push(ls[i].to_string());
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Parse a CSV point set: one sample per line, '#' comment lines, optional
/// final integer label column (detected when every row's last field is a
/// bare integer and there are at least two columns).
pub fn load_file(path: &Path) -> Result<(Tensor, Option<Vec<usize>>)> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let path_str = path.display().to_string();

    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<String> = trimmed.split(',').map(|f| f.trim().to_string()).collect();
        rows.push((lineno + 1, fields));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path_str,
            line: 0,
            message: "no data rows".into(),
        });
    }

    let width = rows[0].1.len();
    for (lineno, fields) in &rows {
        if fields.len() != width {
            return Err(Error::Parse {
                path: path_str,
                line: *lineno,
                message: format!("ragged row: expected {width} fields, got {}", fields.len()),
            });
        }
    }

    let is_int = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_digit());
    let labeled = width >= 2 && rows.iter().all(|(_, f)| is_int(&f[width - 1]));
    let d = if labeled { width - 1 } else { width };

    let mut data = Vec::with_capacity(rows.len() * d);
    let mut labels = if labeled {
        Some(Vec::with_capacity(rows.len()))
    } else {
        None
    };
    for (lineno, fields) in &rows {
        for f in &fields[..d] {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                path: path_str.clone(),
                line: *lineno,
                message: format!("non-numeric field `{f}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path_str.clone(),
                    line: *lineno,
                    message: format!("non-finite value `{f}`"),
                });
            }
            data.push(v);
        }
        if let Some(ls) = labels.as_mut() {
            let l: usize = fields[width - 1].parse().map_err(|_| Error::Parse {
                path: path_str.clone(),
                line: *lineno,
                message: format!("bad label `{}`", fields[width - 1]),
            })?;
            ls.push(l);
        }
    }
    Ok((Tensor::new(vec![rows.len(), d], data)?, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    #[test]
    fn eight_gaussians_sigma_zero_sits_on_centers() {
        let spec = DatasetSpec {
            sigma: 0.0,
            ..DatasetSpec::eight_gaussians()
        };
        let ds = Dataset::open(&spec).unwrap();
        let (pts, labels) = ds.draw(200).unwrap();
        let centers = ds.mode_centers().unwrap();
        let labels = labels.unwrap();
        for i in 0..200 {
            let c = &centers[labels[i]];
            assert!((pts.row(i)[0] - c[0]).abs() < 1e-15);
            assert!((pts.row(i)[1] - c[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn same_seed_gives_identical_draws() {
        let ds = Dataset::open(&DatasetSpec::eight_gaussians()).unwrap();
        let (a, la) = ds.draw(64).unwrap();
        let (b, lb) = ds.draw(64).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(la, lb);
    }

    #[test]
    fn per_component_means_match_centers() {
        let ds = Dataset::open(&DatasetSpec::eight_gaussians()).unwrap();
        let n = 8000;
        let (pts, labels) = ds.draw(n).unwrap();
        let labels = labels.unwrap();
        let centers = ds.mode_centers().unwrap();
        let mut sums = vec![[0.0f64; 2]; 8];
        let mut counts = vec![0usize; 8];
        for i in 0..n {
            sums[labels[i]][0] += pts.row(i)[0];
            sums[labels[i]][1] += pts.row(i)[1];
            counts[labels[i]] += 1;
        }
        for k in 0..8 {
            assert!(counts[k] > 0);
            let tol = 3.0 * 0.1 / (counts[k] as f64).sqrt();
            for ax in 0..2 {
                let mean = sums[k][ax] / counts[k] as f64;
                assert!(
                    (mean - centers[k][ax]).abs() < tol,
                    "component {k} axis {ax}: {mean} vs {}",
                    centers[k][ax]
                );
            }
        }
    }

    #[test]
    fn rotation_moves_centers() {
        let ds = Dataset::open(&DatasetSpec::rotated_eight_gaussians(22.5)).unwrap();
        let centers = ds.mode_centers().unwrap();
        let a = 22.5f64.to_radians();
        assert!((centers[0][0] - a.cos()).abs() < 1e-12);
        assert!((centers[0][1] - a.sin()).abs() < 1e-12);
    }

    #[test]
    fn other_kinds_produce_finite_2d_points() {
        for kind in [DatasetKind::TwoMoons, DatasetKind::SwissRoll2d, DatasetKind::Checkerboard] {
            let spec = DatasetSpec {
                kind,
                ..DatasetSpec::default()
            };
            let ds = Dataset::open(&spec).unwrap();
            let (pts, _) = ds.draw(500).unwrap();
            assert_eq!(pts.shape(), &[500, 2]);
            assert!(pts.data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn load_plain_points() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "1.0,2.0\n3.0,4.0").unwrap();
        let (pts, labels) = load_file(f.path()).unwrap();
        assert_eq!(pts.shape(), &[2, 2]);
        assert_eq!(pts.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(labels.is_none());
    }

    #[test]
    fn load_points_with_labels() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# comment\n1.0,2.0,0\n3.0,4.0,1").unwrap();
        let (pts, labels) = load_file(f.path()).unwrap();
        assert_eq!(pts.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(labels.unwrap(), vec![0, 1]);
    }

    #[test]
    fn ragged_row_errors_with_line_number() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "1.0\n2.0,3.0").unwrap();
        match load_file(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_field_errors_with_line_number() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "1.0,2.0\nx,4.0").unwrap();
        match load_file(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip_is_bit_identical() {
        let ds = Dataset::open(&DatasetSpec::eight_gaussians()).unwrap();
        let (pts, labels) = ds.draw(100).unwrap();
        let mut buf = Vec::new();
        write_points_csv(&mut buf, &pts, labels.as_deref()).unwrap();
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(&buf).unwrap();
        let (loaded, loaded_labels) = load_file(f.path()).unwrap();
        assert_eq!(loaded.data(), pts.data());
        assert_eq!(loaded_labels, labels);

        // and writing again reproduces the same bytes
        let mut buf2 = Vec::new();
        write_points_csv(&mut buf2, &loaded, loaded_labels.as_deref()).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn file_dataset_samples_from_loaded_points() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "1.0,2.0,0\n3.0,4.0,1\n5.0,6.0,0").unwrap();
        let spec = DatasetSpec {
            kind: DatasetKind::File,
            path: Some(f.path().to_path_buf()),
            ..DatasetSpec::default()
        };
        let ds = Dataset::open(&spec).unwrap();
        assert_eq!(ds.dim(), 2);
        assert!(ds.labeled());
        let (pts, labels) = ds.draw(10).unwrap();
        let labels = labels.unwrap();
        for i in 0..10 {
            let row = pts.row(i);
            let ok = [(1.0, 2.0, 0), (3.0, 4.0, 1), (5.0, 6.0, 0)]
                .iter()
                .any(|&(x, y, l)| row[0] == x && row[1] == y && labels[i] == l);
            assert!(ok);
        }
    }
}
