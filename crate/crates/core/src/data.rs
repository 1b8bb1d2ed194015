//! Datasets, seeded synthetic generators, and CSV I/O.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Default grid spacing in units of the generating standard deviation.
pub const DEFAULT_SPACING_FACTOR: f64 = 4.0;

/// An immutable N×D matrix of finite observations, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    n: usize,
    d: usize,
    labels: Option<Vec<usize>>,
    spread: f64,
}

impl Dataset {
    pub fn new(values: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::config("dataset dimension must be >= 1"));
        }
        if values.is_empty() || !values.len().is_multiple_of(d) {
            return Err(Error::config(format!(
                "dataset needs a non-empty multiple of {d} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(format!(
                "non-finite entry at row {}, column {}",
                i / d,
                i % d
            )));
        }
        let n = values.len() / d;
        let spread = mean_centered_sq_norm(&values, n, d);
        Ok(Self {
            values,
            n,
            d,
            labels: None,
            spread,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::config(format!(
                "row {r} has {} columns, expected {d}",
                rows[r].len()
            )));
        }
        Self::new(rows.concat(), d)
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::config(format!(
                "{} labels for {} points",
                labels.len(),
                self.n
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn points(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.d)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for p in self.points() {
            for (a, x) in m.iter_mut().zip(p) {
                *a += x;
            }
        }
        m.iter_mut().for_each(|a| *a /= self.n as f64);
        m
    }

    /// Mean squared norm of the mean-centered points.
    pub fn spread(&self) -> f64 {
        self.spread
    }

    /// Lower bound applied to every variance estimate: `1e-12` times the
    /// squared RMS norm of the mean-centered data (`1e-12` if the data has no
    /// spread at all).
    pub fn sigma2_floor(&self) -> f64 {
        if self.spread > 0.0 {
            1e-12 * self.spread
        } else {
            1e-12
        }
    }
}

fn mean_centered_sq_norm(values: &[f64], n: usize, d: usize) -> f64 {
    let mut mean = vec![0.0; d];
    for p in values.chunks_exact(d) {
        for (a, x) in mean.iter_mut().zip(p) {
            *a += x;
        }
    }
    mean.iter_mut().for_each(|a| *a /= n as f64);
    values
        .chunks_exact(d)
        .map(|p| crate::math::sq_dist(p, &mean))
        .sum::<f64>()
        / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    /// Centers on a square grid in two dimensions.
    Grid,
    /// Centers drawn uniformly from an axis-aligned box.
    Uniform,
    /// Caller-supplied centers.
    ExplicitGmm,
}

/// Recipe for a synthetic dataset of isotropic Gaussian blobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub c_true: usize,
    pub per_cluster_n: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Grid step; defaults to `DEFAULT_SPACING_FACTOR * gen_sigma`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<f64>,
    /// `[lo, hi]` on every axis; defaults to a cube with the grid's density.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_box: Option<[f64; 2]>,
    pub gen_sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<Vec<f64>>>,
    pub seed: u64,
}

fn default_dim() -> usize {
    2
}

impl GeneratorSpec {
    pub fn grid(c_true: usize, per_cluster_n: usize, gen_sigma: f64, seed: u64) -> Self {
        Self {
            kind: GeneratorKind::Grid,
            c_true,
            per_cluster_n,
            dim: 2,
            spacing: None,
            domain_box: None,
            gen_sigma,
            centers: None,
            seed,
        }
    }

    pub fn uniform(
        c_true: usize,
        per_cluster_n: usize,
        dim: usize,
        gen_sigma: f64,
        seed: u64,
    ) -> Self {
        Self {
            kind: GeneratorKind::Uniform,
            dim,
            ..Self::grid(c_true, per_cluster_n, gen_sigma, seed)
        }
    }

    pub fn explicit(
        centers: Vec<Vec<f64>>,
        per_cluster_n: usize,
        gen_sigma: f64,
        seed: u64,
    ) -> Self {
        Self {
            kind: GeneratorKind::ExplicitGmm,
            c_true: centers.len(),
            dim: centers.first().map_or(0, Vec::len),
            centers: Some(centers),
            ..Self::grid(0, per_cluster_n, gen_sigma, seed)
        }
    }

    pub fn effective_spacing(&self) -> f64 {
        self.spacing
            .unwrap_or(DEFAULT_SPACING_FACTOR * self.gen_sigma)
    }

    pub fn effective_box(&self) -> [f64; 2] {
        self.domain_box.unwrap_or_else(|| {
            let side = (self.c_true as f64).powf(1.0 / self.dim as f64) * self.effective_spacing();
            [0.0, side]
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_true == 0 {
            return Err(Error::config("c_true must be >= 1"));
        }
        if self.per_cluster_n == 0 {
            return Err(Error::config("per_cluster_n must be >= 1"));
        }
        if self.dim == 0 {
            return Err(Error::config("dim must be >= 1"));
        }
        if !(self.gen_sigma > 0.0 && self.gen_sigma.is_finite()) {
            return Err(Error::config("gen_sigma must be positive and finite"));
        }
        if let Some(s) = self.spacing {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::config("spacing must be positive and finite"));
            }
        }
        match self.kind {
            GeneratorKind::Grid => {
                if self.dim != 2 {
                    return Err(Error::config("grid generator requires dim = 2"));
                }
                if grid_side(self.c_true).is_none() {
                    return Err(Error::config(format!(
                        "grid generator requires a perfect-square c_true, got {}",
                        self.c_true
                    )));
                }
            }
            GeneratorKind::Uniform => {
                let [lo, hi] = self.effective_box();
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::config("domain_box must satisfy lo < hi"));
                }
            }
            GeneratorKind::ExplicitGmm => {
                let centers = self
                    .centers
                    .as_ref()
                    .ok_or_else(|| Error::config("explicit-gmm generator requires centers"))?;
                if centers.len() != self.c_true {
                    return Err(Error::config("centers length must equal c_true"));
                }
                if centers
                    .iter()
                    .any(|c| c.len() != self.dim || c.iter().any(|v| !v.is_finite()))
                {
                    return Err(Error::config("centers must be finite and of length dim"));
                }
            }
        }
        Ok(())
    }

    /// Generating centers, one per true cluster.
    pub fn true_centers(&self) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        Ok(match self.kind {
            GeneratorKind::Grid => {
                let side = grid_side(self.c_true).expect("validated");
                let step = self.effective_spacing();
                (0..self.c_true)
                    .map(|c| vec![(c % side) as f64 * step, (c / side) as f64 * step])
                    .collect()
            }
            GeneratorKind::Uniform => {
                // Centers use their own stream so they don't shift with per_cluster_n.
                let mut rng = rng_from_seed(self.seed);
                rng.set_stream(1);
                let [lo, hi] = self.effective_box();
                (0..self.c_true)
                    .map(|_| (0..self.dim).map(|_| rng.random_range(lo..hi)).collect())
                    .collect()
            }
            GeneratorKind::ExplicitGmm => self.centers.clone().expect("validated"),
        })
    }
}

fn grid_side(c: usize) -> Option<usize> {
    let s = (c as f64).sqrt().round() as usize;
    (s * s == c).then_some(s)
}

/// Draw `per_cluster_n` isotropic Gaussian points around each true center.
///
/// Points are ordered cluster by cluster and labelled with their cluster index.
pub fn generate(spec: &GeneratorSpec) -> Result<Dataset> {
    let centers = spec.true_centers()?;
    let mut rng = rng_from_seed(spec.seed);
    let n = spec.c_true * spec.per_cluster_n;
    let mut values = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..spec.per_cluster_n {
            for &m in center {
                let z: f64 = rng.sample(StandardNormal);
                values.push(m + spec.gen_sigma * z);
            }
            labels.push(c);
        }
    }
    Dataset::new(values, spec.dim)?.with_labels(labels)
}

/// Sidecar path holding one label per line.
pub fn labels_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".labels");
    PathBuf::from(s)
}

/// Write one point per row; labels, if any, go to `<path>.labels`.
///
/// Values use Rust's shortest round-trip float formatting.
pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(dataset.values.len() * 20);
    for p in dataset.points() {
        for (j, v) in p.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v:?}").expect("string write");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    if let Some(labels) = dataset.labels() {
        let lp = labels_path(path);
        let body: String = labels.iter().map(|l| format!("{l}\n")).collect();
        fs::write(&lp, body).map_err(|e| Error::io(&lp, e))?;
    }
    Ok(())
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut dataset = parse_csv(&text, path)?;
    let lp = labels_path(path);
    if lp.exists() {
        let body = fs::read_to_string(&lp).map_err(|e| Error::io(&lp, e))?;
        let mut labels = Vec::with_capacity(dataset.n());
        for (i, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            labels.push(line.trim().parse::<usize>().map_err(|e| Error::Parse {
                path: lp.clone(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        dataset = dataset.with_labels(labels)?;
    }
    Ok(dataset)
}

fn parse_csv(text: &str, path: &Path) -> Result<Dataset> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut values = Vec::new();
    let mut width: Option<usize> = None;
    let mut first_content = true;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if first_content {
            first_content = false;
            if cells.iter().any(|c| c.parse::<f64>().is_err()) {
                width = Some(cells.len());
                continue;
            }
        }
        match width {
            Some(w) if w != cells.len() => {
                return Err(parse_err(
                    lineno,
                    format!("expected {w} fields, found {}", cells.len()),
                ))
            }
            _ => width = Some(cells.len()),
        }
        for cell in cells {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(lineno, format!("non-numeric cell {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(lineno, format!("non-finite cell {cell:?}")));
            }
            values.push(v);
        }
    }
    match width {
        Some(d) if !values.is_empty() => Dataset::new(values, d),
        _ => Err(parse_err(1, "no data rows".into())),
    }
}
