//! Synthetic teacher-student data and the CSV sample format.

use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::scalar::{lit, to_f64, Float};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputCov {
    Isotropic { variance: f64 },
    /// First `d_x / 2` coordinates have variance `phi`, the rest `2 - phi`.
    Split { phi: f64 },
    Diagonal { variances: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Teacher {
    /// Autoencoding, `y' = x`.
    Identity,
    /// Rows of `V`, each of length `d_x`.
    Explicit { rows: Vec<Vec<f64>> },
    /// Entries `N(0, scale² / d_x)`; with `rank` set, `V` is a product of
    /// Gaussian factors through a rank-`rank` bottleneck.
    RandomGaussian {
        d_y: usize,
        #[serde(default)]
        rank: Option<usize>,
        #[serde(default = "one")]
        scale: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LabelNoise {
    #[default]
    None,
    Isotropic { variance: f64 },
    Diagonal { variances: Vec<f64> },
    /// Variance `first` on the first label coordinate, `rest` elsewhere.
    Leading { first: f64, rest: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub d_x: usize,
    pub input_cov: InputCov,
    pub teacher: Teacher,
    #[serde(default)]
    pub label_noise: LabelNoise,
    pub n: usize,
    pub seed: u64,
}

impl DataSpec {
    pub fn d_y(&self) -> usize {
        match &self.teacher {
            Teacher::Identity => self.d_x,
            Teacher::Explicit { rows } => rows.len(),
            Teacher::RandomGaussian { d_y, .. } => *d_y,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_x == 0 {
            return bad("data.d_x must be at least 1".into());
        }
        if self.n == 0 {
            return bad("data.n must be at least 1".into());
        }
        let vx = self.input_variances();
        if vx.len() != self.d_x {
            return bad(format!("data.input_cov has {} variances for d_x = {}", vx.len(), self.d_x));
        }
        if vx.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("data.input_cov variances must be finite and non-negative".into());
        }
        match &self.teacher {
            Teacher::Identity => {}
            Teacher::Explicit { rows } => {
                if rows.is_empty() || rows.iter().any(|r| r.len() != self.d_x) {
                    return bad(format!("data.teacher.rows must be non-empty rows of length {}", self.d_x));
                }
                if rows.iter().flatten().any(|v| !v.is_finite()) {
                    return bad("data.teacher.rows must be finite".into());
                }
            }
            Teacher::RandomGaussian { d_y, rank, scale } => {
                if *d_y == 0 || rank == &Some(0) || !scale.is_finite() {
                    return bad("data.teacher needs d_y >= 1, rank >= 1 and a finite scale".into());
                }
            }
        }
        let ve = self.noise_variances();
        if ve.len() != self.d_y() {
            return bad(format!("data.label_noise has {} variances for d_y = {}", ve.len(), self.d_y()));
        }
        if ve.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("data.label_noise variances must be finite and non-negative".into());
        }
        Ok(())
    }

    pub fn input_variances(&self) -> Vec<f64> {
        match &self.input_cov {
            InputCov::Isotropic { variance } => vec![*variance; self.d_x],
            InputCov::Split { phi } => {
                let half = self.d_x / 2;
                (0..self.d_x).map(|i| if i < half { *phi } else { 2.0 - phi }).collect()
            }
            InputCov::Diagonal { variances } => variances.clone(),
        }
    }

    pub fn noise_variances(&self) -> Vec<f64> {
        let d_y = self.d_y();
        match &self.label_noise {
            LabelNoise::None => vec![0.0; d_y],
            LabelNoise::Isotropic { variance } => vec![*variance; d_y],
            LabelNoise::Diagonal { variances } => variances.clone(),
            LabelNoise::Leading { first, rest } => {
                (0..d_y).map(|i| if i == 0 { *first } else { *rest }).collect()
            }
        }
    }

    /// Population input covariance `Σ_x` (diagonal).
    pub fn sigma_x<T: Float>(&self) -> DMatrix<T> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.d_x,
            self.input_variances().into_iter().map(lit),
        ))
    }

    /// Population label-noise covariance `Σ_ε` (diagonal).
    pub fn sigma_eps<T: Float>(&self) -> DMatrix<T> {
        let v = self.noise_variances();
        DMatrix::from_diagonal(&DVector::from_iterator(v.len(), v.into_iter().map(lit)))
    }

    /// The teacher `V` (`d_y × d_x`), deterministic in the seed.
    pub fn teacher_matrix<T: Float>(&self) -> DMatrix<T> {
        let d_x = self.d_x;
        match &self.teacher {
            Teacher::Identity => DMatrix::identity(d_x, d_x),
            Teacher::Explicit { rows } => {
                DMatrix::from_fn(rows.len(), d_x, |i, j| lit(rows[i][j]))
            }
            Teacher::RandomGaussian { d_y, rank, scale } => {
                let mut r = rng::stream(self.seed, Stream::Teacher);
                let v = match rank {
                    None => {
                        let s = scale / (d_x as f64).sqrt();
                        DMatrix::from_fn(*d_y, d_x, |_, _| s * r.sample::<f64, _>(StandardNormal))
                    }
                    Some(k) => {
                        let a_s = 1.0 / (*k as f64).sqrt();
                        let b_s = scale / (d_x as f64).sqrt();
                        let a = DMatrix::from_fn(*d_y, *k, |_, _| a_s * r.sample::<f64, _>(StandardNormal));
                        let b = DMatrix::from_fn(*k, d_x, |_, _| b_s * r.sample::<f64, _>(StandardNormal));
                        a * b
                    }
                };
                v.map(lit)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T: Float> {
    pub x: DVector<T>,
    pub y: DVector<T>,
}

/// Empirical second moments over the whole dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T: Float> {
    /// `E[x xᵀ]`
    pub xx: DMatrix<T>,
    /// `E[y xᵀ]`
    pub yx: DMatrix<T>,
    /// `E[‖y‖²]`
    pub yy: T,
}

/// Row-per-sample storage: `x` is `n × d_x`, `y` is `n × d_y`.
#[derive(Clone, Debug)]
pub struct Dataset<T: Float> {
    x: DMatrix<T>,
    y: DMatrix<T>,
    moments: OnceLock<Moments<T>>,
}

impl<T: Float> PartialEq for Dataset<T> {
    fn eq(&self, other: &Self) -> bool {
        self.x == other.x && self.y == other.y
    }
}

impl<T: Float> Dataset<T> {
    pub fn new(x: DMatrix<T>, y: DMatrix<T>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::NoSamples);
        }
        if x.nrows() != y.nrows() {
            return Err(Error::Dimension { expected: x.nrows(), found: y.nrows() });
        }
        if x.ncols() == 0 || y.ncols() == 0 {
            return Err(Error::Config("samples need at least one input and one label".into()));
        }
        if !x.iter().chain(y.iter()).all(|v| nalgebra::ComplexField::is_finite(v)) {
            return Err(Error::NonFinite("dataset entry".into()));
        }
        Ok(Self { x, y, moments: OnceLock::new() })
    }

    pub fn from_samples(samples: &[Sample<T>]) -> Result<Self> {
        let first = samples.first().ok_or(Error::NoSamples)?;
        let (dx, dy) = (first.x.len(), first.y.len());
        for s in samples {
            if s.x.len() != dx || s.y.len() != dy {
                return Err(Error::Dimension { expected: dx + dy, found: s.x.len() + s.y.len() });
            }
        }
        let x = DMatrix::from_fn(samples.len(), dx, |i, j| samples[i].x[j]);
        let y = DMatrix::from_fn(samples.len(), dy, |i, j| samples[i].y[j]);
        Self::new(x, y)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d_x(&self) -> usize {
        self.x.ncols()
    }

    pub fn d_y(&self) -> usize {
        self.y.ncols()
    }

    pub fn x(&self) -> &DMatrix<T> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<T> {
        &self.y
    }

    pub fn sample(&self, i: usize) -> Sample<T> {
        Sample {
            x: self.x.row(i).transpose(),
            y: self.y.row(i).transpose(),
        }
    }

    pub fn samples(&self) -> Vec<Sample<T>> {
        (0..self.n()).map(|i| self.sample(i)).collect()
    }

    /// Gathers rows `idx` into a batch `(x, y)`.
    pub fn batch(&self, idx: &[usize]) -> (DMatrix<T>, DMatrix<T>) {
        (self.x.select_rows(idx), self.y.select_rows(idx))
    }

    pub fn moments(&self) -> &Moments<T> {
        self.moments.get_or_init(|| {
            let inv_n = T::one() / lit::<T>(self.n() as f64);
            Moments {
                xx: self.x.tr_mul(&self.x) * inv_n,
                yx: self.y.tr_mul(&self.x) * inv_n,
                yy: self.y.norm_squared() * inv_n,
            }
        })
    }

    /// Writes the dataset with header `x_0..,y_0..`; values print in
    /// shortest round-trip form, so a reload is bit-exact.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let header: Vec<String> = (0..self.d_x())
            .map(|i| format!("x_{i}"))
            .chain((0..self.d_y()).map(|i| format!("y_{i}")))
            .collect();
        out.write_record(&header)?;
        for i in 0..self.n() {
            let row: Vec<String> = self
                .x
                .row(i)
                .iter()
                .chain(self.y.row(i).iter())
                .map(|v| to_f64(*v).to_string())
                .collect();
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
        let mut records = rdr.records();
        let header = match records.next() {
            None => return Err(Error::NoSamples),
            Some(h) => h?,
        };
        let (mut d_x, mut d_y) = (0, 0);
        for (col, name) in header.iter().enumerate() {
            let name = name.trim();
            let (prefix, idx) = name
                .split_once('_')
                .and_then(|(p, i)| i.parse::<usize>().ok().map(|i| (p, i)))
                .ok_or_else(|| Error::Parse { line: 1, msg: format!("bad column name {name:?}") })?;
            let expected = match prefix {
                "x" if d_y == 0 => {
                    d_x += 1;
                    d_x - 1
                }
                "y" => {
                    d_y += 1;
                    d_y - 1
                }
                _ => {
                    return Err(Error::Parse {
                        line: 1,
                        msg: format!("column {col} ({name:?}) out of order; expected x_* then y_*"),
                    })
                }
            };
            if idx != expected {
                return Err(Error::Parse { line: 1, msg: format!("column {name:?} out of sequence") });
            }
        }
        if d_x == 0 || d_y == 0 {
            return Err(Error::Parse { line: 1, msg: "header needs x_* and y_* columns".into() });
        }
        let mut samples = Vec::new();
        for (k, rec) in records.enumerate() {
            let line = k + 2;
            let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
            if rec.len() != d_x + d_y {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {} fields, found {}", d_x + d_y, rec.len()),
                });
            }
            let mut vals = Vec::with_capacity(rec.len());
            for field in rec.iter() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse { line, msg: format!("not a number: {field:?}") })?;
                if !v.is_finite() {
                    return Err(Error::Parse { line, msg: format!("non-finite value {field:?}") });
                }
                vals.push(lit::<T>(v));
            }
            samples.push(Sample {
                x: DVector::from_column_slice(&vals[..d_x]),
                y: DVector::from_column_slice(&vals[d_x..]),
            });
        }
        Self::from_samples(&samples)
    }
}

/// Draws `n` samples `y = V x + ε` from the spec's seeded streams.
pub fn generate_dataset<T: Float>(spec: &DataSpec) -> Result<Dataset<T>> {
    spec.validate()?;
    let v = spec.teacher_matrix::<f64>();
    let sx: Vec<f64> = spec.input_variances().iter().map(|v| v.sqrt()).collect();
    let se: Vec<f64> = spec.noise_variances().iter().map(|v| v.sqrt()).collect();
    let mut rx = rng::stream(spec.seed, Stream::Inputs);
    let mut re = rng::stream(spec.seed, Stream::LabelNoise);
    // Row-major draw order keeps sample i independent of n.
    let mut x = DMatrix::<f64>::zeros(spec.n, spec.d_x);
    for i in 0..spec.n {
        for j in 0..spec.d_x {
            x[(i, j)] = sx[j] * rx.sample::<f64, _>(StandardNormal);
        }
    }
    let mut y = &x * v.transpose();
    for i in 0..spec.n {
        for j in 0..y.ncols() {
            y[(i, j)] += se[j] * re.sample::<f64, _>(StandardNormal);
        }
    }
    Dataset::new(x.map(lit), y.map(lit))
}

pub fn load_dataset_csv<T: Float>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    Dataset::read_csv(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iso(n: usize, d_x: usize) -> DataSpec {
        DataSpec {
            d_x,
            input_cov: InputCov::Isotropic { variance: 1.0 },
            teacher: Teacher::Identity,
            label_noise: LabelNoise::None,
            n,
            seed: 3,
        }
    }

    #[test]
    fn identity_teacher_without_noise_copies_inputs() {
        let d: Dataset<f64> = generate_dataset(&iso(50, 4)).unwrap();
        assert_eq!(d.x(), d.y());
    }

    #[test]
    fn split_variance_at_phi_one_is_unit() {
        let mut s = iso(10, 6);
        s.input_cov = InputCov::Split { phi: 1.0 };
        assert_eq!(s.input_variances(), vec![1.0; 6]);
        s.input_cov = InputCov::Split { phi: 0.25 };
        assert_eq!(s.input_variances(), vec![0.25, 0.25, 0.25, 1.75, 1.75, 1.75]);
    }

    #[test]
    fn empirical_covariance_converges() {
        let d: Dataset<f64> = generate_dataset(&iso(100_000, 5)).unwrap();
        let err = (&d.moments().xx - DMatrix::identity(5, 5)).norm() / 5f64.sqrt();
        assert!(err < 0.05, "relative Frobenius error {err}");
    }

    #[test]
    fn same_seed_same_bits() {
        let mut s = iso(20, 3);
        s.teacher = Teacher::RandomGaussian { d_y: 2, rank: None, scale: 1.0 };
        s.label_noise = LabelNoise::Isotropic { variance: 0.5 };
        let a: Dataset<f64> = generate_dataset(&s).unwrap();
        let b: Dataset<f64> = generate_dataset(&s).unwrap();
        assert_eq!(a, b);
        s.seed += 1;
        let c: Dataset<f64> = generate_dataset(&s).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn csv_roundtrip_is_bit_exact() {
        let mut s = iso(7, 2);
        s.teacher = Teacher::RandomGaussian { d_y: 1, rank: None, scale: 1.0 };
        s.label_noise = LabelNoise::Isotropic { variance: 1.0 };
        let d: Dataset<f64> = generate_dataset(&s).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = Dataset::<f64>::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(Dataset::<f64>::read_csv("".as_bytes()), Err(Error::NoSamples)));
        assert!(matches!(Dataset::<f64>::read_csv("x_0,y_0\n".as_bytes()), Err(Error::NoSamples)));
        let bad = "x_0,x_1,y_0\n1,2,3\n1,oops,3\n";
        match Dataset::<f64>::read_csv(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let ok = "x_0,x_1,y_0\n1,2,3\n4,5,6\n7,8,9\n";
        let d = Dataset::<f64>::read_csv(ok.as_bytes()).unwrap();
        assert_eq!((d.n(), d.d_x(), d.d_y()), (3, 2, 1));
    }
}
