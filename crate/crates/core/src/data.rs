//! Synthetic ordinal domain-shift benchmark, dataset files and split
//! bookkeeping.
//!
//! Each sample has a latent severity drawn around its class center
//! (`k * spacing` for class `k`). Source features embed that latent into
//! `input_dim` dimensions through a fixed nonlinear map plus nuisance factors
//! and isotropic noise. Target features push source-style features through an
//! affine shift (rotation plus offset) and add noise again.
//!
//! Dataset files are comma-separated with header
//! `id,domain,split,label,f0,...,f{d-1}`; label `-1` marks unlabeled rows.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Domain {
    pub const ALL: [Domain; 2] = [Domain::Source, Domain::Target];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(format!("unknown domain {other:?}")),
        }
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub features: Vec<f64>,
    /// Class in `1..=C`, or `None` for unlabeled target samples.
    pub label: Option<usize>,
    pub domain: Domain,
    pub split: Split,
}

impl Sample {
    pub fn is_labeled(&self) -> bool {
        self.label.is_some()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub num_classes: usize,
    pub input_dim: usize,
    pub samples: Vec<Sample>,
}

impl DatasetBundle {
    /// Indices of samples in the given domain and split, optionally
    /// restricted by labeled status.
    pub fn indices(&self, domain: Domain, split: Split, labeled: Option<bool>) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| {
                s.domain == domain
                    && s.split == split
                    && labeled.is_none_or(|l| s.is_labeled() == l)
            })
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (row, s) in self.samples.iter().enumerate() {
            let line = row + 2;
            validate_sample(s, self.num_classes, self.input_dim).map_err(|message| Error::Parse { line, message })?;
            if !seen.insert(s.id) {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate id {}", s.id),
                });
            }
        }
        Ok(())
    }
}

fn validate_sample(s: &Sample, num_classes: usize, input_dim: usize) -> std::result::Result<(), String> {
    if s.features.len() != input_dim {
        return Err(format!("expected {input_dim} features, got {}", s.features.len()));
    }
    if s.features.iter().any(|v| !v.is_finite()) {
        return Err("non-finite feature".into());
    }
    match s.label {
        Some(y) if y < 1 || y > num_classes => {
            Err(format!("label {y} outside 1..={num_classes}"))
        }
        None if !(s.domain == Domain::Target && s.split == Split::Train) => Err(format!(
            "unlabeled sample in {} {}; only target train may be unlabeled",
            s.domain, s.split
        )),
        _ => Ok(()),
    }
}

/// Affine map `x -> matrix * x + offset` applied to target features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineShift {
    /// Row-major square matrix.
    pub matrix: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

impl AffineShift {
    pub fn identity(dim: usize) -> Self {
        let matrix = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            matrix,
            offset: vec![0.0; dim],
        }
    }

    /// Random rotation whose largest plane angle is `angle` radians, plus a
    /// random offset of Euclidean norm `offset_norm`.
    pub fn random<R: Rng>(dim: usize, angle: f64, offset_norm: f64, rng: &mut R) -> Self {
        // Cayley transform of a skew-symmetric matrix is orthogonal; scaling
        // the skew part by tan(angle / 2) over its spectral norm pins the
        // largest rotation angle.
        let mut skew = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..dim {
            for j in (i + 1)..dim {
                let v: f64 = rng.sample(StandardNormal);
                skew[(i, j)] = v;
                skew[(j, i)] = -v;
            }
        }
        let norm = if dim > 1 {
            skew.clone().singular_values().max()
        } else {
            0.0
        };
        if norm > 0.0 {
            skew *= (angle / 2.0).tan() / norm;
        }
        let eye = DMatrix::<f64>::identity(dim, dim);
        let inv = (&eye - &skew)
            .try_inverse()
            .expect("I - K is invertible for skew-symmetric K");
        let rot = (&eye + &skew) * inv;

        let raw: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let raw_norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let offset = if raw_norm > 0.0 {
            raw.iter().map(|v| v * offset_norm / raw_norm).collect()
        } else {
            vec![0.0; dim]
        };
        Self {
            matrix: (0..dim).map(|i| (0..dim).map(|j| rot[(i, j)]).collect()).collect(),
            offset,
        }
    }

    fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.matrix.len();
        DMatrix::from_fn(n, n, |i, j| self.matrix[i][j])
    }

    pub fn condition_number(&self) -> f64 {
        let sv = self.to_matrix().singular_values();
        let max = sv.max();
        let min = sv.min();
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix
            .iter()
            .zip(&self.offset)
            .map(|(row, b)| row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub input_dim: usize,
    /// Source samples per class, split 60/20/20 into train/val/test.
    pub source_per_class: usize,
    pub target_labeled_per_class: usize,
    pub target_unlabeled: usize,
    pub target_val_per_class: usize,
    pub target_test_per_class: usize,
    pub spacing: f64,
    pub spread: f64,
    /// Explicit target shift; generated from the seed when absent.
    pub shift: Option<AffineShift>,
    pub rotation_angle: f64,
    pub offset_norm: f64,
    /// Number of severity-independent latent factors mixed into the features.
    pub nuisance_factors: usize,
    pub nuisance_scale: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            input_dim: 16,
            source_per_class: 400,
            target_labeled_per_class: 10,
            target_unlabeled: 2000,
            target_val_per_class: 10,
            target_test_per_class: 100,
            spacing: 1.0,
            spread: 0.6,
            shift: None,
            rotation_angle: 0.6,
            offset_norm: 1.5,
            nuisance_factors: 2,
            nuisance_scale: 1.0,
            noise: 0.1,
            seed: 0,
        }
    }
}

/// Source sample counts per class for (train, val, test).
pub fn source_split_counts(per_class: usize) -> (usize, usize, usize) {
    let train = (per_class as f64 * 0.6).round() as usize;
    let val = (per_class as f64 * 0.2).round() as usize;
    (train, val, per_class - train - val)
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be at least 1".into()));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::Config("spacing must be positive".into()));
        }
        for (name, v) in [
            ("spread", self.spread),
            ("noise", self.noise),
            ("nuisance_scale", self.nuisance_scale),
            ("offset_norm", self.offset_norm),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be nonnegative and finite")));
            }
        }
        if !(0.0..std::f64::consts::PI).contains(&self.rotation_angle) {
            return Err(Error::Config("rotation_angle must lie in [0, pi)".into()));
        }
        if let Some(shift) = &self.shift {
            let d = self.input_dim;
            if shift.matrix.len() != d || shift.matrix.iter().any(|r| r.len() != d) || shift.offset.len() != d {
                return Err(Error::Config(format!("shift must be a {d}x{d} matrix with a length-{d} offset")));
            }
            let cond = shift.condition_number();
            if cond.is_nan() || cond >= 100.0 {
                return Err(Error::Config(format!(
                    "shift matrix condition number {cond} is not below 100"
                )));
            }
        }
        Ok(())
    }

    /// Latent class centers, `k * spacing` for classes `1..=C`.
    pub fn class_centers(&self) -> Vec<f64> {
        (1..=self.num_classes).map(|k| k as f64 * self.spacing).collect()
    }

    pub fn expected_summary(&self) -> SplitSummary {
        let c = self.num_classes;
        let (tr, va, te) = source_split_counts(self.source_per_class);
        let mut s = SplitSummary::default();
        s.set(Domain::Source, Split::Train, true, tr * c);
        s.set(Domain::Source, Split::Val, true, va * c);
        s.set(Domain::Source, Split::Test, true, te * c);
        s.set(Domain::Target, Split::Train, true, self.target_labeled_per_class * c);
        s.set(Domain::Target, Split::Train, false, self.target_unlabeled);
        s.set(Domain::Target, Split::Val, true, self.target_val_per_class * c);
        s.set(Domain::Target, Split::Test, true, self.target_test_per_class * c);
        s
    }
}

/// Fixed latent-to-feature map drawn once per dataset.
struct Embedding {
    direction: Vec<f64>,
    bend: Vec<f64>,
    bend_center: Vec<f64>,
    nuisance: Vec<Vec<f64>>,
}

impl Embedding {
    fn draw<R: Rng>(config: &SynthConfig, rng: &mut R) -> Self {
        let d = config.input_dim;
        let unit = |rng: &mut R| {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        let direction = unit(rng);
        let bend = unit(rng);
        let lo = config.spacing;
        let hi = config.spacing * config.num_classes as f64;
        let bend_center = (0..d).map(|_| rng.random_range(lo..=hi)).collect();
        let nuisance = (0..config.nuisance_factors).map(|_| unit(rng)).collect();
        Self {
            direction,
            bend,
            bend_center,
            nuisance,
        }
    }

    fn embed(&self, latent: f64, nuisance: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = (0..self.direction.len())
            .map(|j| self.direction[j] * latent + self.bend[j] * (latent - self.bend_center[j]).tanh())
            .collect();
        for (dir, &v) in self.nuisance.iter().zip(nuisance) {
            for (xj, dj) in x.iter_mut().zip(dir) {
                *xj += v * dj;
            }
        }
        x
    }
}

struct Generator<'a> {
    config: &'a SynthConfig,
    embedding: Embedding,
    shift: AffineShift,
    rng: ChaCha8Rng,
    latent: Normal<f64>,
    next_id: u64,
    samples: Vec<Sample>,
}

impl Generator<'_> {
    fn source_style(&mut self, class: usize) -> Vec<f64> {
        let center = class as f64 * self.config.spacing;
        let z = center + self.latent.sample(&mut self.rng);
        let nuisance: Vec<f64> = (0..self.config.nuisance_factors)
            .map(|_| self.config.nuisance_scale * self.rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut x = self.embedding.embed(z, &nuisance);
        self.add_noise(&mut x);
        x
    }

    fn add_noise(&mut self, x: &mut [f64]) {
        if self.config.noise > 0.0 {
            for v in x.iter_mut() {
                *v += self.config.noise * self.rng.sample::<f64, _>(StandardNormal);
            }
        }
    }

    fn push(&mut self, class: usize, domain: Domain, split: Split, labeled: bool) {
        let mut features = self.source_style(class);
        if domain == Domain::Target {
            features = self.shift.apply(&features);
            self.add_noise(&mut features);
        }
        self.samples.push(Sample {
            id: self.next_id,
            features,
            label: labeled.then_some(class),
            domain,
            split,
        });
        self.next_id += 1;
    }
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<DatasetBundle> {
    config.validate()?;
    let centers = config.class_centers();
    assert!(centers.windows(2).all(|w| w[0] < w[1]), "class centers must increase");

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let embedding = Embedding::draw(config, &mut rng);
    let shift = match &config.shift {
        Some(s) => s.clone(),
        None => AffineShift::random(config.input_dim, config.rotation_angle, config.offset_norm, &mut rng),
    };
    let latent = Normal::new(0.0, config.spread).map_err(|e| Error::Config(e.to_string()))?;
    let mut g = Generator {
        config,
        embedding,
        shift,
        rng,
        latent,
        next_id: 0,
        samples: Vec::new(),
    };

    let c = config.num_classes;
    let (tr, va, te) = source_split_counts(config.source_per_class);
    for (split, n) in [(Split::Train, tr), (Split::Val, va), (Split::Test, te)] {
        for class in 1..=c {
            for _ in 0..n {
                g.push(class, Domain::Source, split, true);
            }
        }
    }
    for class in 1..=c {
        for _ in 0..config.target_labeled_per_class {
            g.push(class, Domain::Target, Split::Train, true);
        }
    }
    for i in 0..config.target_unlabeled {
        g.push(i % c + 1, Domain::Target, Split::Train, false);
    }
    for (split, n) in [
        (Split::Val, config.target_val_per_class),
        (Split::Test, config.target_test_per_class),
    ] {
        for class in 1..=c {
            for _ in 0..n {
                g.push(class, Domain::Target, split, true);
            }
        }
    }

    Ok(DatasetBundle {
        num_classes: c,
        input_dim: config.input_dim,
        samples: g.samples,
    })
}

pub fn write_dataset<W: Write>(bundle: &DatasetBundle, mut out: W) -> Result<()> {
    write!(out, "id,domain,split,label")?;
    for j in 0..bundle.input_dim {
        write!(out, ",f{j}")?;
    }
    writeln!(out)?;
    for s in &bundle.samples {
        let label = s.label.map_or(-1, |y| y as i64);
        write!(out, "{},{},{},{}", s.id, s.domain, s.split, label)?;
        for v in &s.features {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn save_dataset(bundle: &DatasetBundle, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(bundle, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Parses a dataset file. When `num_classes` is `None` it is taken to be the
/// largest label present.
pub fn parse_dataset(text: &str, num_classes: Option<usize>) -> Result<DatasetBundle> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing header".into(),
    })?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 4 || cols[..4] != ["id", "domain", "split", "label"] {
        return Err(Error::Parse {
            line: 1,
            message: "header must start with id,domain,split,label".into(),
        });
    }
    for (j, c) in cols[4..].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected feature column f{j}, found {c:?}"),
            });
        }
    }
    let input_dim = cols.len() - 4;

    let mut samples = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { line, message };
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != cols.len() {
            return Err(err(format!("expected {} fields, got {}", cols.len(), fields.len())));
        }
        let id: u64 = fields[0].parse().map_err(|_| err(format!("bad id {:?}", fields[0])))?;
        let domain: Domain = fields[1].parse().map_err(err)?;
        let split: Split = fields[2].parse().map_err(err)?;
        let label: i64 = fields[3].parse().map_err(|_| err(format!("bad label {:?}", fields[3])))?;
        let label = match label {
            -1 => None,
            y if y >= 1 => Some(y as usize),
            y => return Err(err(format!("label {y} is neither -1 nor a class"))),
        };
        let features = fields[4..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| err(format!("bad feature {f:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        samples.push((line, Sample { id, features, label, domain, split }));
    }

    let num_classes = num_classes.unwrap_or_else(|| {
        samples.iter().filter_map(|(_, s)| s.label).max().unwrap_or(0)
    });
    let mut seen = std::collections::HashSet::new();
    for (line, s) in &samples {
        validate_sample(s, num_classes, input_dim).map_err(|message| Error::Parse { line: *line, message })?;
        if !seen.insert(s.id) {
            return Err(Error::Parse {
                line: *line,
                message: format!("duplicate id {}", s.id),
            });
        }
    }
    Ok(DatasetBundle {
        num_classes,
        input_dim,
        samples: samples.into_iter().map(|(_, s)| s).collect(),
    })
}

pub fn load_dataset(path: &Path, num_classes: Option<usize>) -> Result<DatasetBundle> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text, num_classes)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub domain: Domain,
    pub split: Split,
    pub labeled: bool,
    pub count: usize,
}

/// Sample counts for every (domain, split, labeled) cell, zeros included.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub rows: Vec<SummaryRow>,
}

impl Default for SplitSummary {
    fn default() -> Self {
        let mut rows = Vec::with_capacity(12);
        for domain in Domain::ALL {
            for split in Split::ALL {
                for labeled in [true, false] {
                    rows.push(SummaryRow { domain, split, labeled, count: 0 });
                }
            }
        }
        Self { rows }
    }
}

impl SplitSummary {
    fn slot(&mut self, domain: Domain, split: Split, labeled: bool) -> &mut usize {
        &mut self
            .rows
            .iter_mut()
            .find(|r| r.domain == domain && r.split == split && r.labeled == labeled)
            .expect("every cell present")
            .count
    }

    fn set(&mut self, domain: Domain, split: Split, labeled: bool, count: usize) {
        *self.slot(domain, split, labeled) = count;
    }

    pub fn count(&self, domain: Domain, split: Split, labeled: bool) -> usize {
        self.rows
            .iter()
            .find(|r| r.domain == domain && r.split == split && r.labeled == labeled)
            .map_or(0, |r| r.count)
    }

    pub fn total(&self) -> usize {
        self.rows.iter().map(|r| r.count).sum()
    }
}

pub fn split_summary(bundle: &DatasetBundle) -> SplitSummary {
    let mut s = SplitSummary::default();
    for sample in &bundle.samples {
        *s.slot(sample.domain, sample.split, sample.is_labeled()) += 1;
    }
    s
}
