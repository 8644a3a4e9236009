//! Model zoo with closed-form squared-error losses and gradients.
//!
//! Every model is evaluated on a row-per-sample batch. The backward pass
//! returns, per block, a pair of factor matrices whose per-row outer product
//! is that sample's gradient, plus an optional per-sample multiple of the
//! block itself (the normalization terms of the scale-invariant nets). The
//! batch-mean gradient, the per-sample gradient rows and the single-sample
//! gradient all come from the same factors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::noise::GradientSet;
use crate::params::{BlockLayout, ParamBlocks};
use crate::rng::{self, Stream};
use crate::scalar::{lit, Float};
use crate::symmetry::SymmetryKind;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Activation {
    Tanh,
    Relu,
    LeakyRelu { alpha: f64 },
    Swish,
}

impl Activation {
    #[inline]
    fn value<T: Float>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => {
                if z > T::zero() {
                    z
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu { alpha } => {
                if z > T::zero() {
                    z
                } else {
                    lit::<T>(alpha) * z
                }
            }
            Activation::Swish => z * sigmoid(z),
        }
    }

    /// Derivative; the kink of relu and leaky relu takes the left slope.
    #[inline]
    fn slope<T: Float>(self, z: T) -> T {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                T::one() - t * t
            }
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu { alpha } => {
                if z > T::zero() {
                    T::one()
                } else {
                    lit(alpha)
                }
            }
            Activation::Swish => {
                let s = sigmoid(z);
                s + z * s * (T::one() - s)
            }
        }
    }

    fn is_homogeneous(self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu { .. })
    }
}

#[inline]
fn sigmoid<T: Float>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NetVariant {
    /// `f(x) = Σ_j (u_j/‖W‖) tanh(w_jᵀx/‖U‖)`
    A,
    /// `f(x) = Σ_j (u_j/‖U‖) tanh(w_jᵀx/‖W‖)`
    B,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `f(x) = U W x`
    TwoLayerLinear { d_x: usize, d: usize, d_y: usize },
    /// `f(x) = W_D ⋯ W_1 x` with `W_i : dims[i-1] → dims[i]`.
    DeepLinear { dims: Vec<usize> },
    /// `f(x) = U act(W x)`
    TwoLayerNonlinear {
        d_x: usize,
        d: usize,
        d_y: usize,
        activation: Activation,
    },
    ScaleInvariantNet {
        variant: NetVariant,
        d_x: usize,
        d: usize,
        d_y: usize,
    },
    /// Scalar-to-scalar factorization `u W x` with `U ∈ ℝ^{1×d}`, `W ∈ ℝ^{d×1}`.
    Rank1Factorization { d: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitScheme {
    /// Entry variance `1/(fan_in + fan_out)`.
    Xavier,
    /// Entry variance `1/fan_in`.
    Kaiming,
    /// Output layer variance 1, other layers `1/fan_in`.
    KaimingUnitOutput,
    /// Every entry `N(0, std²)`.
    UniformNorm { std: f64 },
    /// Gaussian direction rescaled so every block has Frobenius norm `norm`.
    EqualNorm { norm: f64 },
    /// Gaussian direction per block with norm drawn uniformly from `[low, high]`.
    RandomNorm { low: f64, high: f64 },
}

/// Gradient of one block: row `s` of the batch contributes
/// `left[s,:]ᵀ right[s,:] + coef[s] · block`.
struct BlockGrad<T: Float> {
    left: DMatrix<T>,
    right: DMatrix<T>,
    coef: Option<DVector<T>>,
}

struct Backward<T: Float> {
    losses: DVector<T>,
    blocks: Vec<BlockGrad<T>>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let pos = |what: &str, v: usize| {
            if v == 0 {
                Err(Error::Config(format!("model.{what} must be at least 1")))
            } else {
                Ok(())
            }
        };
        match self {
            ModelSpec::TwoLayerLinear { d_x, d, d_y }
            | ModelSpec::ScaleInvariantNet { d_x, d, d_y, .. } => {
                pos("d_x", *d_x)?;
                pos("d", *d)?;
                pos("d_y", *d_y)
            }
            ModelSpec::TwoLayerNonlinear { d_x, d, d_y, activation } => {
                pos("d_x", *d_x)?;
                pos("d", *d)?;
                pos("d_y", *d_y)?;
                if let Activation::LeakyRelu { alpha } = activation {
                    if !(*alpha > 0.0 && *alpha < 1.0) {
                        return Err(Error::Config("model.activation.alpha must lie in (0, 1)".into()));
                    }
                }
                Ok(())
            }
            ModelSpec::DeepLinear { dims } => {
                if dims.len() < 2 {
                    return Err(Error::Config("model.dims needs at least two entries".into()));
                }
                for (i, d) in dims.iter().enumerate() {
                    pos(&format!("dims[{i}]"), *d)?;
                }
                Ok(())
            }
            ModelSpec::Rank1Factorization { d } => pos("d", *d),
        }
    }

    pub fn d_x(&self) -> usize {
        match self {
            ModelSpec::TwoLayerLinear { d_x, .. }
            | ModelSpec::TwoLayerNonlinear { d_x, .. }
            | ModelSpec::ScaleInvariantNet { d_x, .. } => *d_x,
            ModelSpec::DeepLinear { dims } => dims[0],
            ModelSpec::Rank1Factorization { .. } => 1,
        }
    }

    pub fn d_y(&self) -> usize {
        match self {
            ModelSpec::TwoLayerLinear { d_y, .. }
            | ModelSpec::TwoLayerNonlinear { d_y, .. }
            | ModelSpec::ScaleInvariantNet { d_y, .. } => *d_y,
            ModelSpec::DeepLinear { dims } => *dims.last().expect("validated dims"),
            ModelSpec::Rank1Factorization { .. } => 1,
        }
    }

    /// Blocks in flattening order, input side first.
    pub fn block_shapes(&self) -> Vec<(String, usize, usize)> {
        match self {
            ModelSpec::TwoLayerLinear { d_x, d, d_y }
            | ModelSpec::TwoLayerNonlinear { d_x, d, d_y, .. }
            | ModelSpec::ScaleInvariantNet { d_x, d, d_y, .. } => {
                vec![("W".into(), *d, *d_x), ("U".into(), *d_y, *d)]
            }
            ModelSpec::Rank1Factorization { d } => vec![("W".into(), *d, 1), ("U".into(), 1, *d)],
            ModelSpec::DeepLinear { dims } => dims
                .windows(2)
                .enumerate()
                .map(|(i, w)| (format!("W{}", i + 1), w[1], w[0]))
                .collect(),
        }
    }

    pub fn layout(&self) -> Result<BlockLayout> {
        self.validate()?;
        BlockLayout::new(self.block_shapes())
    }

    /// Models whose output is linear in the input (full-batch moments apply).
    pub fn is_linear(&self) -> bool {
        matches!(
            self,
            ModelSpec::TwoLayerLinear { .. } | ModelSpec::DeepLinear { .. } | ModelSpec::Rank1Factorization { .. }
        )
    }

    pub fn check_params<T: Float>(&self, p: &ParamBlocks<T>) -> Result<()> {
        let layout = self.layout()?;
        if p.layout() != &layout {
            for (want, have) in layout.blocks().iter().zip(p.layout().blocks()) {
                if want.name != have.name || (want.rows, want.cols) != (have.rows, have.cols) {
                    return Err(Error::Shape {
                        what: want.name.clone(),
                        expected: (want.rows, want.cols),
                        found: (have.rows, have.cols),
                    });
                }
            }
            return Err(Error::Dimension { expected: layout.blocks().len(), found: p.len() });
        }
        Ok(())
    }

    fn check_batch<T: Float>(&self, x: &DMatrix<T>, y: &DMatrix<T>) -> Result<()> {
        if x.nrows() == 0 {
            return Err(Error::NoSamples);
        }
        if x.shape().1 != self.d_x() {
            return Err(Error::Shape { what: "x".into(), expected: (x.nrows(), self.d_x()), found: x.shape() });
        }
        if y.shape() != (x.nrows(), self.d_y()) {
            return Err(Error::Shape { what: "y".into(), expected: (x.nrows(), self.d_y()), found: y.shape() });
        }
        Ok(())
    }

    /// Exponential symmetries of the loss at zero weight decay, with ids.
    pub fn declared_symmetries(&self) -> Vec<(String, SymmetryKind)> {
        let rescale = |plus: &str, minus: &str| SymmetryKind::Rescaling {
            plus: vec![plus.to_string()],
            minus: vec![minus.to_string()],
        };
        let rot = |upper: &str, lower: &str, k: usize, l: usize| SymmetryKind::DoubleRotation {
            upper: upper.to_string(),
            lower: lower.to_string(),
            k,
            l,
        };
        let scaling = |blocks: &[&str]| SymmetryKind::Scaling {
            blocks: blocks.iter().map(|b| b.to_string()).collect(),
        };
        match self {
            ModelSpec::TwoLayerLinear { d, .. } => {
                let mut out = vec![("rescale".into(), rescale("U", "W")), ("rot_0_0".into(), rot("U", "W", 0, 0))];
                if *d > 1 {
                    out.push(("rot_0_1".into(), rot("U", "W", 0, 1)));
                }
                out
            }
            ModelSpec::Rank1Factorization { d } => {
                let mut out = vec![("rescale".into(), rescale("U", "W"))];
                for k in 0..*d {
                    for l in k..*d {
                        out.push((format!("rot_{k}_{l}"), rot("U", "W", k, l)));
                    }
                }
                out
            }
            ModelSpec::DeepLinear { dims } => {
                let mut out = Vec::new();
                for i in 1..dims.len() - 1 {
                    let (up, lo) = (format!("W{}", i + 1), format!("W{i}"));
                    out.push((format!("rescale_{i}"), rescale(&up, &lo)));
                    if dims[i] > 1 {
                        out.push((format!("rot_{i}_0_1"), rot(&up, &lo, 0, 1)));
                    }
                }
                out
            }
            ModelSpec::TwoLayerNonlinear { activation, .. } => {
                if activation.is_homogeneous() {
                    vec![("rescale".into(), rescale("U", "W")), ("rot_0_0".into(), rot("U", "W", 0, 0))]
                } else {
                    Vec::new()
                }
            }
            ModelSpec::ScaleInvariantNet { variant: NetVariant::A, .. } => {
                vec![("scale_all".into(), scaling(&["W", "U"]))]
            }
            ModelSpec::ScaleInvariantNet { variant: NetVariant::B, .. } => vec![
                ("scale_all".into(), scaling(&["W", "U"])),
                ("scale_W".into(), scaling(&["W"])),
                ("scale_U".into(), scaling(&["U"])),
            ],
        }
    }

    pub fn init<T: Float>(&self, scheme: &InitScheme, seed: u64) -> Result<ParamBlocks<T>> {
        let shapes = self.layout()?;
        let mut r = rng::stream(seed, Stream::Init);
        let last = shapes.blocks().len() - 1;
        let mut blocks = Vec::new();
        for (i, b) in shapes.blocks().iter().enumerate() {
            let (fan_out, fan_in) = (b.rows as f64, b.cols as f64);
            let gauss = DMatrix::<f64>::from_fn(b.rows, b.cols, |_, _| r.sample(StandardNormal));
            let m = match scheme {
                InitScheme::Xavier => gauss / (fan_in + fan_out).sqrt(),
                InitScheme::Kaiming => gauss / fan_in.sqrt(),
                InitScheme::KaimingUnitOutput if i == last => gauss,
                InitScheme::KaimingUnitOutput => gauss / fan_in.sqrt(),
                InitScheme::UniformNorm { std } => gauss * *std,
                InitScheme::EqualNorm { norm } => {
                    let n = gauss.norm();
                    gauss * (*norm / n)
                }
                InitScheme::RandomNorm { low, high } => {
                    if !(low <= high && *low >= 0.0) {
                        return Err(Error::Config("init.low must satisfy 0 <= low <= high".into()));
                    }
                    let target = r.gen_range(*low..=*high);
                    let n = gauss.norm();
                    gauss * (target / n)
                }
            };
            blocks.push((b.name.clone(), m.map(lit::<T>)));
        }
        ParamBlocks::new(blocks)
    }

    /// Outputs for a row-per-sample input batch.
    pub fn predict<T: Float>(&self, p: &ParamBlocks<T>, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.check_params(p)?;
        let y = DMatrix::zeros(x.nrows(), self.d_y());
        self.check_batch(x, &y)?;
        Ok(self.forward(p, x))
    }

    fn forward<T: Float>(&self, p: &ParamBlocks<T>, x: &DMatrix<T>) -> DMatrix<T> {
        let m = p.matrices();
        match self {
            ModelSpec::TwoLayerLinear { .. } | ModelSpec::Rank1Factorization { .. } | ModelSpec::DeepLinear { .. } => {
                m.iter().fold(x.clone(), |h, w| h * w.transpose())
            }
            ModelSpec::TwoLayerNonlinear { activation, .. } => {
                let act = *activation;
                (x * m[0].transpose()).map(|z| act.value(z)) * m[1].transpose()
            }
            ModelSpec::ScaleInvariantNet { variant, .. } => {
                let (w, u) = (&m[0], &m[1]);
                let (zs, fs) = scale_factors(*variant, w, u);
                ((x * w.transpose()) * zs).map(|z| z.tanh()) * u.transpose() * fs
            }
        }
    }

    fn backward<T: Float>(&self, p: &ParamBlocks<T>, x: &DMatrix<T>, y: &DMatrix<T>) -> Backward<T> {
        let m = p.matrices();
        let two = lit::<T>(2.0);
        let row_sq = |r: &DMatrix<T>| DVector::from_iterator(r.nrows(), r.row_iter().map(|row| row.norm_squared()));
        match self {
            ModelSpec::TwoLayerLinear { .. } | ModelSpec::Rank1Factorization { .. } | ModelSpec::DeepLinear { .. } => {
                let mut hs = vec![x.clone()];
                for w in m {
                    let next = hs.last().expect("non-empty") * w.transpose();
                    hs.push(next);
                }
                let r = hs.pop().expect("output") - y;
                let losses = row_sq(&r);
                let mut delta = r * two;
                let mut blocks = Vec::with_capacity(m.len());
                for (w, h) in m.iter().zip(hs).rev() {
                    let next = &delta * w;
                    blocks.push(BlockGrad { left: delta, right: h, coef: None });
                    delta = next;
                }
                blocks.reverse();
                Backward { losses, blocks }
            }
            ModelSpec::TwoLayerNonlinear { activation, .. } => {
                let act = *activation;
                let (w, u) = (&m[0], &m[1]);
                let z = x * w.transpose();
                let h = z.map(|v| act.value(v));
                let r = &h * u.transpose() - y;
                let losses = row_sq(&r);
                let gf = r * two;
                let gz = (&gf * u).component_mul(&z.map(|v| act.slope(v)));
                Backward {
                    losses,
                    blocks: vec![
                        BlockGrad { left: gz, right: x.clone(), coef: None },
                        BlockGrad { left: gf, right: h, coef: None },
                    ],
                }
            }
            ModelSpec::ScaleInvariantNet { variant, .. } => {
                let (w, u) = (&m[0], &m[1]);
                let (a, b) = (u.norm(), w.norm());
                let (zs, fs) = scale_factors(*variant, w, u);
                let z = (x * w.transpose()) * zs;
                let h = z.map(|v| v.tanh());
                let f = &h * u.transpose() * fs;
                let r = &f - y;
                let losses = row_sq(&r);
                let gf = r * two;
                let gz = (&gf * u * fs).component_mul(&h.map(|t| T::one() - t * t));
                let rowdot = |p: &DMatrix<T>, q: &DMatrix<T>| {
                    DVector::from_iterator(p.nrows(), p.row_iter().zip(q.row_iter()).map(|(a, b)| a.dot(&b)))
                };
                let gz_z = rowdot(&gz, &z);
                let gf_f = rowdot(&gf, &f);
                // z scales with 1/‖·‖ of one block and f with 1/‖·‖ of the other.
                let (w_coef, u_coef) = match variant {
                    NetVariant::A => (gf_f / -(b * b), gz_z / -(a * a)),
                    NetVariant::B => (gz_z / -(b * b), gf_f / -(a * a)),
                };
                Backward {
                    losses,
                    blocks: vec![
                        BlockGrad { left: gz * zs, right: x.clone(), coef: Some(w_coef) },
                        BlockGrad { left: gf * fs, right: h, coef: Some(u_coef) },
                    ],
                }
            }
        }
    }

    /// Batch-mean loss `mean ‖f(x) − y‖² + γ‖θ‖²`.
    pub fn loss<T: Float>(&self, p: &ParamBlocks<T>, x: &DMatrix<T>, y: &DMatrix<T>, gamma: T) -> Result<T> {
        self.check_params(p)?;
        self.check_batch(x, y)?;
        let r = self.forward(p, x) - y;
        Ok(r.norm_squared() / lit::<T>(x.nrows() as f64) + gamma * p.norm_sq())
    }

    /// Batch-mean gradient of [`ModelSpec::loss`].
    pub fn grad<T: Float>(&self, p: &ParamBlocks<T>, x: &DMatrix<T>, y: &DMatrix<T>, gamma: T) -> Result<ParamBlocks<T>> {
        self.check_params(p)?;
        self.check_batch(x, y)?;
        let bw = self.backward(p, x, y);
        let inv_n = T::one() / lit::<T>(x.nrows() as f64);
        let two_gamma = lit::<T>(2.0) * gamma;
        let mats = bw
            .blocks
            .iter()
            .zip(p.matrices())
            .map(|(g, m)| {
                let mut out = g.left.tr_mul(&g.right) * inv_n;
                let c = g.coef.as_ref().map_or(T::zero(), |c| c.sum() * inv_n);
                out += m * (c + two_gamma);
                out
            })
            .collect();
        p.with_matrices(mats)
    }

    /// Mean loss over a whole dataset; linear models use cached moments.
    pub fn full_loss<T: Float>(&self, p: &ParamBlocks<T>, data: &Dataset<T>, gamma: T) -> Result<T> {
        if !self.is_linear() {
            return self.loss(p, data.x(), data.y(), gamma);
        }
        self.check_params(p)?;
        self.check_batch(data.x(), data.y())?;
        let mo = data.moments();
        let prod = chain_product(p.matrices());
        let quad = (&prod * &mo.xx).component_mul(&prod).sum();
        let cross = prod.component_mul(&mo.yx).sum();
        Ok(quad - lit::<T>(2.0) * cross + mo.yy + gamma * p.norm_sq())
    }

    /// Mean gradient over a whole dataset; linear models use cached moments.
    pub fn full_grad<T: Float>(&self, p: &ParamBlocks<T>, data: &Dataset<T>, gamma: T) -> Result<ParamBlocks<T>> {
        if !self.is_linear() {
            return self.grad(p, data.x(), data.y(), gamma);
        }
        self.check_params(p)?;
        self.check_batch(data.x(), data.y())?;
        let mo = data.moments();
        let ws = p.matrices();
        let prod = chain_product(ws);
        let g_prod = (&prod * &mo.xx - &mo.yx) * lit::<T>(2.0);
        let two_gamma = lit::<T>(2.0) * gamma;
        let mats = (0..ws.len())
            .map(|i| {
                let above = chain_product_range(ws, i + 1, ws.len(), ws[ws.len() - 1].nrows());
                let below = chain_product_range(ws, 0, i, ws[0].ncols());
                let mut out = above.tr_mul(&g_prod) * below.transpose();
                out += &ws[i] * two_gamma;
                out
            })
            .collect();
        p.with_matrices(mats)
    }

    /// Per-sample gradients, one flattened row per sample.
    pub fn per_sample_grads<T: Float>(
        &self,
        p: &ParamBlocks<T>,
        x: &DMatrix<T>,
        y: &DMatrix<T>,
        gamma: T,
    ) -> Result<GradientSet<T>> {
        self.check_params(p)?;
        self.check_batch(x, y)?;
        let n = x.nrows();
        let bw = self.backward(p, x, y);
        let layout = p.layout().clone();
        let mut rows = DMatrix::<T>::zeros(n, layout.dim());
        let two_gamma = lit::<T>(2.0) * gamma;
        for ((info, g), m) in layout.blocks().iter().zip(&bw.blocks).zip(p.matrices()) {
            for c in 0..info.cols {
                for r in 0..info.rows {
                    let mut col = rows.column_mut(info.index(r, c));
                    col.copy_from(&g.left.column(r).component_mul(&g.right.column(c)));
                    let own = m[(r, c)];
                    match &g.coef {
                        Some(k) => {
                            for s in 0..n {
                                col[s] += (k[s] + two_gamma) * own;
                            }
                        }
                        None if gamma != T::zero() => col.add_scalar_mut(two_gamma * own),
                        None => {}
                    }
                }
            }
        }
        GradientSet::new(layout, rows)
    }

    /// Per-sample losses without the weight-decay term.
    pub fn sample_losses<T: Float>(&self, p: &ParamBlocks<T>, x: &DMatrix<T>, y: &DMatrix<T>) -> Result<DVector<T>> {
        self.check_params(p)?;
        self.check_batch(x, y)?;
        Ok(self.backward(p, x, y).losses)
    }

    /// End-to-end matrix of a linear model.
    pub fn product<T: Float>(&self, p: &ParamBlocks<T>) -> Result<DMatrix<T>> {
        if !self.is_linear() {
            return Err(Error::Config("end-to-end product needs a linear model".into()));
        }
        self.check_params(p)?;
        Ok(chain_product(p.matrices()))
    }
}

/// Multipliers applied to `Wx` and to the output of a scale-invariant net.
fn scale_factors<T: Float>(variant: NetVariant, w: &DMatrix<T>, u: &DMatrix<T>) -> (T, T) {
    let (a, b) = (u.norm(), w.norm());
    match variant {
        NetVariant::A => (T::one() / a, T::one() / b),
        NetVariant::B => (T::one() / b, T::one() / a),
    }
}

/// `W_D ⋯ W_1` for blocks in input-first order.
fn chain_product<T: Float>(ws: &[DMatrix<T>]) -> DMatrix<T> {
    chain_product_range(ws, 0, ws.len(), ws[0].ncols())
}

/// `W_{hi} ⋯ W_{lo+1}` (zero-based, half-open), identity of size `dim` when empty.
fn chain_product_range<T: Float>(ws: &[DMatrix<T>], lo: usize, hi: usize, dim: usize) -> DMatrix<T> {
    if lo >= hi {
        return DMatrix::identity(dim, dim);
    }
    ws[lo + 1..hi].iter().fold(ws[lo].clone(), |acc, w| w * acc)
}

fn one_row<T: Float>(s: &Sample<T>) -> (DMatrix<T>, DMatrix<T>) {
    (
        DMatrix::from_row_slice(1, s.x.len(), s.x.as_slice()),
        DMatrix::from_row_slice(1, s.y.len(), s.y.as_slice()),
    )
}

/// `ℓ_γ(θ, z) = ‖f(x) − y‖² + γ‖θ‖²` for one sample.
pub fn per_sample_loss<T: Float>(spec: &ModelSpec, p: &ParamBlocks<T>, sample: &Sample<T>, gamma: T) -> Result<T> {
    let (x, y) = one_row(sample);
    spec.loss(p, &x, &y, gamma)
}

pub fn per_sample_grad<T: Float>(
    spec: &ModelSpec,
    p: &ParamBlocks<T>,
    sample: &Sample<T>,
    gamma: T,
) -> Result<ParamBlocks<T>> {
    let (x, y) = one_row(sample);
    spec.grad(p, &x, &y, gamma)
}
