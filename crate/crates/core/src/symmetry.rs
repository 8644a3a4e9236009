//! Exponential symmetries `θ ↦ e^{λA}θ`, their charges `C = θᵀAθ`, the
//! Noether flow, and the fixed point of the flow along the orbit.
//!
//! Structured generators are stored by their eigenbasis: each eigenspace is
//! spanned by coordinate axes or by normalized coordinate pairs
//! `(e_i ± e_j)/√2`. Nothing of size `P × P` is formed unless asked for.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{trace_sigma_a, GradientSet, NoiseStats};
use crate::params::{na_is_finite, BlockLayout, ParamBlocks};
use crate::scalar::{lit, max_abs, to_f64, Float};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SymmetryKind {
    /// `A = diag(I, −I)` over the `plus` and `minus` blocks.
    Rescaling { plus: Vec<String>, minus: Vec<String> },
    /// `A = I` over the listed blocks.
    Scaling { blocks: Vec<String> },
    /// Basis element `B^{(k,l)}` acting on the hidden index shared by the
    /// columns of `upper` and the rows of `lower`, halved so that
    /// `C = u_kᵀu_l − w_kᵀw_l`.
    DoubleRotation {
        upper: String,
        lower: String,
        k: usize,
        l: usize,
    },
    /// Explicit symmetric matrix over the concatenated flat coordinates of
    /// `blocks`.
    GenericDense { blocks: Vec<String>, matrix: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq)]
struct Component<T: Float> {
    mu: T,
    coords: Vec<usize>,
    /// `(i, j, s)` stands for the unit direction `(e_i + s e_j)/√2`.
    pairs: Vec<(usize, usize, T)>,
}

#[derive(Clone, Debug, PartialEq)]
enum Spectrum<T: Float> {
    Structured(Vec<Component<T>>),
    Dense {
        coords: Vec<usize>,
        values: DVector<T>,
        vectors: DMatrix<T>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymmetryDescriptor<T: Float> {
    id: String,
    kind: SymmetryKind,
    layout: BlockLayout,
    spectrum: Spectrum<T>,
}

/// One eigenvalue's share of the flow: `noise = Σ_i n_iᵀΣn_i` and
/// `weight = Σ_i (n_iᵀθ)²` over an orthonormal basis of its eigenspace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralTerm<T: Float> {
    pub mu: T,
    pub noise: T,
    pub weight: T,
}

impl<T: Float> SymmetryDescriptor<T> {
    pub fn new(id: impl Into<String>, kind: SymmetryKind, layout: &BlockLayout) -> Result<Self> {
        let id = id.into();
        let coords_of = |name: &str| -> Result<Vec<usize>> { Ok(layout.get(name)?.range().collect()) };
        let spectrum = match &kind {
            SymmetryKind::Rescaling { plus, minus } => {
                if plus.is_empty() || minus.is_empty() {
                    return Err(Error::Config(format!("symmetry {id}: rescaling needs plus and minus blocks")));
                }
                if let Some(b) = plus.iter().find(|b| minus.contains(b)) {
                    return Err(Error::Config(format!("symmetry {id}: block {b:?} is both plus and minus")));
                }
                let mut pos = Vec::new();
                for b in plus {
                    pos.extend(coords_of(b)?);
                }
                let mut neg = Vec::new();
                for b in minus {
                    neg.extend(coords_of(b)?);
                }
                Spectrum::Structured(vec![
                    Component { mu: T::one(), coords: pos, pairs: Vec::new() },
                    Component { mu: -T::one(), coords: neg, pairs: Vec::new() },
                ])
            }
            SymmetryKind::Scaling { blocks } => {
                if blocks.is_empty() {
                    return Err(Error::Config(format!("symmetry {id}: scaling needs at least one block")));
                }
                let mut coords = Vec::new();
                for b in blocks {
                    let c = coords_of(b)?;
                    if c.iter().any(|i| coords.contains(i)) {
                        return Err(Error::Config(format!("symmetry {id}: block {b:?} listed twice")));
                    }
                    coords.extend(c);
                }
                Spectrum::Structured(vec![Component { mu: T::one(), coords, pairs: Vec::new() }])
            }
            SymmetryKind::DoubleRotation { upper, lower, k, l } => {
                let (u, w) = (layout.get(upper)?, layout.get(lower)?);
                if upper == lower {
                    return Err(Error::Config(format!("symmetry {id}: upper and lower blocks coincide")));
                }
                if u.cols != w.rows {
                    return Err(Error::Config(format!(
                        "symmetry {id}: {upper:?} has {} columns but {lower:?} has {} rows",
                        u.cols, w.rows
                    )));
                }
                if *k >= u.cols || *l >= u.cols {
                    return Err(Error::Config(format!("symmetry {id}: index out of range for width {}", u.cols)));
                }
                let (k, l) = (*k.min(l), *k.max(l));
                if k == l {
                    Spectrum::Structured(vec![
                        Component { mu: T::one(), coords: (0..u.rows).map(|r| u.index(r, k)).collect(), pairs: Vec::new() },
                        Component { mu: -T::one(), coords: (0..w.cols).map(|c| w.index(k, c)).collect(), pairs: Vec::new() },
                    ])
                } else {
                    let half = lit::<T>(0.5);
                    let one = T::one();
                    let up = |s: T| (0..u.rows).map(move |r| (u.index(r, k), u.index(r, l), s));
                    let lo = |s: T| (0..w.cols).map(move |c| (w.index(k, c), w.index(l, c), s));
                    Spectrum::Structured(vec![
                        Component { mu: half, coords: Vec::new(), pairs: up(one).chain(lo(-one)).collect() },
                        Component { mu: -half, coords: Vec::new(), pairs: up(-one).chain(lo(one)).collect() },
                    ])
                }
            }
            SymmetryKind::GenericDense { blocks, matrix } => {
                let mut coords = Vec::new();
                for b in blocks {
                    coords.extend(coords_of(b)?);
                }
                let m = coords.len();
                if matrix.len() != m || matrix.iter().any(|r| r.len() != m) {
                    return Err(Error::Config(format!("symmetry {id}: matrix must be {m}×{m}")));
                }
                let a = DMatrix::<T>::from_fn(m, m, |i, j| lit(matrix[i][j]));
                let scale = a.norm();
                if (&a - a.transpose()).norm() > lit::<T>(1e-12) * scale {
                    return Err(Error::Config(format!("symmetry {id}: matrix is not symmetric")));
                }
                let eig = SymmetricEigen::new(a.clone());
                let recon = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues) * eig.eigenvectors.transpose();
                if (&recon - &a).norm() > lit::<T>(1e-10) * scale {
                    return Err(Error::Config(format!("symmetry {id}: eigendecomposition failed to reconstruct A")));
                }
                Spectrum::Dense { coords, values: eig.eigenvalues, vectors: eig.eigenvectors }
            }
        };
        Ok(Self { id, kind, layout: layout.clone(), spectrum })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> &SymmetryKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn check_layout(&self, p: &ParamBlocks<T>) -> Result<()> {
        if p.layout() != &self.layout {
            return Err(Error::Config(format!("symmetry {}: parameter blocks do not match its layout", self.id)));
        }
        Ok(())
    }

    /// `(μ, Σ_i (n_iᵀv)²)` for every eigenspace; dense spectra report one
    /// entry per eigenvector.
    fn projections(&self, v: &[T]) -> Vec<(T, T)> {
        let inv2 = lit::<T>(0.5);
        match &self.spectrum {
            Spectrum::Structured(cs) => cs
                .iter()
                .map(|c| {
                    let mut s = T::zero();
                    for &i in &c.coords {
                        s += v[i] * v[i];
                    }
                    for &(i, j, sg) in &c.pairs {
                        let p = v[i] + sg * v[j];
                        s += p * p * inv2;
                    }
                    (c.mu, s)
                })
                .collect(),
            Spectrum::Dense { coords, values, vectors } => {
                let sub = DVector::from_iterator(coords.len(), coords.iter().map(|&i| v[i]));
                let proj = vectors.tr_mul(&sub);
                values.iter().zip(proj.iter()).map(|(&m, &p)| (m, p * p)).collect()
            }
        }
    }

    /// Per-row version of [`Self::projections`] for a row-per-sample matrix.
    fn projections_rows(&self, rows: &DMatrix<T>) -> Vec<(T, DVector<T>)> {
        let n = rows.nrows();
        let inv2 = lit::<T>(0.5);
        match &self.spectrum {
            Spectrum::Structured(cs) => cs
                .iter()
                .map(|c| {
                    let mut s = DVector::zeros(n);
                    for &i in &c.coords {
                        let col = rows.column(i);
                        s += col.component_mul(&col);
                    }
                    for &(i, j, sg) in &c.pairs {
                        let p = rows.column(i) + rows.column(j) * sg;
                        s += p.component_mul(&p) * inv2;
                    }
                    (c.mu, s)
                })
                .collect(),
            Spectrum::Dense { coords, values, vectors } => {
                let sub = rows.select_columns(coords);
                let proj = sub * vectors;
                values
                    .iter()
                    .zip(proj.column_iter())
                    .map(|(&m, p)| (m, p.component_mul(&p)))
                    .collect()
            }
        }
    }

    /// `vᵀAv` for a flat vector.
    pub fn quad(&self, v: &[T]) -> T {
        self.projections(v).into_iter().fold(T::zero(), |acc, (m, s)| acc + m * s)
    }

    /// `g_sᵀAg_s` for every row of a row-per-sample matrix.
    pub fn quad_rows(&self, rows: &DMatrix<T>) -> DVector<T> {
        let mut out = DVector::zeros(rows.nrows());
        for (m, s) in self.projections_rows(rows) {
            out.axpy(m, &s, T::one());
        }
        out
    }

    /// `C(θ) = θᵀAθ`.
    pub fn charge(&self, p: &ParamBlocks<T>) -> Result<T> {
        self.check_layout(p)?;
        Ok(self.quad(p.flatten().as_slice()))
    }

    /// Applies `Σ_μ f(μ) P_μ` to `v`, where `P_μ` projects onto an eigenspace.
    fn spectral_apply(&self, v: &DVector<T>, f: impl Fn(T) -> T) -> DVector<T> {
        let mut out = DVector::zeros(v.len());
        let inv2 = lit::<T>(0.5);
        match &self.spectrum {
            Spectrum::Structured(cs) => {
                for c in cs {
                    let fm = f(c.mu);
                    for &i in &c.coords {
                        out[i] += fm * v[i];
                    }
                    for &(i, j, sg) in &c.pairs {
                        let p = (v[i] + sg * v[j]) * inv2 * fm;
                        out[i] += p;
                        out[j] += sg * p;
                    }
                }
            }
            Spectrum::Dense { coords, values, vectors } => {
                let sub = DVector::from_iterator(coords.len(), coords.iter().map(|&i| v[i]));
                let mut proj = vectors.tr_mul(&sub);
                for (p, &m) in proj.iter_mut().zip(values.iter()) {
                    *p *= f(m);
                }
                let back = vectors * proj;
                for (k, &i) in coords.iter().enumerate() {
                    out[i] += back[k];
                }
            }
        }
        out
    }

    /// `J(θ) = Aθ` as a flat vector.
    pub fn apply(&self, v: &DVector<T>) -> DVector<T> {
        self.spectral_apply(v, |m| m)
    }

    /// `e^{λA}θ`. Coordinates outside every eigenspace carry eigenvalue 0
    /// and stay put.
    pub fn exp_map(&self, lambda: T, p: &ParamBlocks<T>) -> Result<ParamBlocks<T>> {
        self.check_layout(p)?;
        if !na_is_finite(lambda) {
            return Err(Error::NonFinite("exponential-map parameter".into()));
        }
        let v = p.flatten();
        let delta = self.spectral_apply(&v, |m| (lambda * m).exp() - T::one());
        ParamBlocks::from_flat(p.layout(), (v + delta).as_slice())
    }

    /// The dense `P × P` generator, for small problems and tests.
    pub fn dense(&self) -> DMatrix<T> {
        let p = self.dim();
        let mut a = DMatrix::zeros(p, p);
        for j in 0..p {
            let mut e = DVector::zeros(p);
            e[j] = T::one();
            a.set_column(j, &self.apply(&e));
        }
        a
    }

    /// `Tr[ΣA]` for an explicit `Σ`.
    pub fn trace_with(&self, sigma: &DMatrix<T>) -> T {
        let inv2 = lit::<T>(0.5);
        match &self.spectrum {
            Spectrum::Structured(cs) => cs.iter().fold(T::zero(), |acc, c| {
                let mut s = T::zero();
                for &i in &c.coords {
                    s += sigma[(i, i)];
                }
                for &(i, j, sg) in &c.pairs {
                    s += (sigma[(i, i)] + sigma[(j, j)] + sg * (sigma[(i, j)] + sigma[(j, i)])) * inv2;
                }
                acc + c.mu * s
            }),
            Spectrum::Dense { coords, values, vectors } => {
                let sub = sigma.select_rows(coords).select_columns(coords);
                let a = vectors * DMatrix::from_diagonal(values) * vectors.transpose();
                sub.component_mul(&a).sum()
            }
        }
    }

    /// Eigenvalue-resolved noise and charge weights at `θ`.
    pub fn spectral_profile(&self, p: &ParamBlocks<T>, grads: &GradientSet<T>) -> Result<SpectralProfile<T>> {
        self.check_layout(p)?;
        if grads.dim() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), found: grads.dim() });
        }
        let inv_n = T::one() / lit::<T>(grads.n() as f64);
        let noise = self.projections_rows(&grads.centered());
        let weight = self.projections(p.flatten().as_slice());
        let terms = noise
            .into_iter()
            .zip(weight)
            .map(|((mu, ns), (_, w))| SpectralTerm { mu, noise: ns.sum() * inv_n, weight: w })
            .collect();
        Ok(SpectralProfile { terms })
    }
}

/// `G(θ) = −4γC(θ) + σ²Tr[Σ(θ)A]`.
pub fn noether_flow_rate<T: Float>(
    desc: &SymmetryDescriptor<T>,
    stats: &NoiseStats<T>,
    p: &ParamBlocks<T>,
    gamma: T,
    sigma_sq: T,
) -> Result<T> {
    let c = desc.charge(p)?;
    Ok(-lit::<T>(4.0) * gamma * c + sigma_sq * stats.trace(desc)?)
}

/// The flow along the orbit `λ ↦ e^{λA}θ` in closed form.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralProfile<T: Float> {
    pub terms: Vec<SpectralTerm<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaStatus {
    /// Finite root of the flow.
    Interior,
    /// One side of the flow vanishes identically; the root is at ±∞.
    Boundary,
    /// Both sides vanish identically; every λ is a root and 0 is reported.
    DegenerateEverywhereZero,
    /// The bracket hit the overflow guard before changing sign.
    Saturated,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaStar<T: Float> {
    /// `±∞` for boundary and saturated outcomes.
    pub lambda: T,
    pub status: LambdaStatus,
    /// Uniqueness holds whenever `Tr[ΣA] ≠ 0` or `θᵀAθ ≠ 0`.
    pub unique: bool,
}

impl<T: Float> SpectralProfile<T> {
    fn active(&self) -> impl Iterator<Item = &SpectralTerm<T>> {
        let cut = lit::<T>(1e-12) * self.max_abs_mu();
        self.terms.iter().filter(move |t| t.mu.abs() > cut)
    }

    pub fn max_abs_mu(&self) -> T {
        max_abs(self.terms.iter().map(|t| t.mu))
    }

    /// `(I₁(λ), I₂(λ))`: the flow's increasing-charge and decreasing-charge
    /// parts, both non-negative, `G(θ_λ) = I₁ − I₂`.
    pub fn parts(&self, lambda: T, gamma: T, sigma_sq: T) -> (T, T) {
        let two = lit::<T>(2.0);
        let four_g = lit::<T>(4.0) * gamma;
        let (mut i1, mut i2) = (T::zero(), T::zero());
        for t in self.active() {
            let m = t.mu.abs();
            let decay = (-two * lambda * t.mu).exp();
            let grow = (two * lambda * t.mu).exp();
            if t.mu > T::zero() {
                i1 += sigma_sq * m * decay * t.noise;
                i2 += four_g * m * grow * t.weight;
            } else {
                i1 += four_g * m * grow * t.weight;
                i2 += sigma_sq * m * decay * t.noise;
            }
        }
        (i1, i2)
    }

    pub fn flow(&self, lambda: T, gamma: T, sigma_sq: T) -> T {
        let (a, b) = self.parts(lambda, gamma, sigma_sq);
        a - b
    }

    /// `C(e^{λA}θ)`.
    pub fn charge_at(&self, lambda: T) -> T {
        let two = lit::<T>(2.0);
        self.terms
            .iter()
            .fold(T::zero(), |acc, t| acc + t.mu * (two * lambda * t.mu).exp() * t.weight)
    }

    /// `Tr[Σ(e^{λA}θ)A] = Tr[e^{−2λA}Σ(θ)A]`.
    pub fn trace_at(&self, lambda: T) -> T {
        let two = lit::<T>(2.0);
        self.terms
            .iter()
            .fold(T::zero(), |acc, t| acc + t.mu * (-two * lambda * t.mu).exp() * t.noise)
    }

    /// Root of the strictly decreasing flow `λ ↦ I₁(λ) − I₂(λ)`.
    pub fn solve(&self, gamma: T, sigma_sq: T) -> Result<LambdaStar<T>> {
        let finite = |x: T| na_is_finite(x);
        if !(finite(gamma) && finite(sigma_sq))
            || self.terms.iter().any(|t| !(finite(t.mu) && finite(t.noise) && finite(t.weight)))
        {
            return Err(Error::NonFinite("flow profile".into()));
        }
        let trace: T = self.terms.iter().fold(T::zero(), |a, t| a + t.mu * t.noise);
        let charge: T = self.terms.iter().fold(T::zero(), |a, t| a + t.mu * t.weight);
        let unique = trace != T::zero() || charge != T::zero();
        let four_g = lit::<T>(4.0) * gamma;
        let (mut has1, mut has2) = (false, false);
        for t in self.active() {
            let (noise_side, weight_side) = (sigma_sq * t.noise != T::zero(), four_g * t.weight != T::zero());
            if t.mu > T::zero() {
                has1 |= noise_side;
                has2 |= weight_side;
            } else {
                has1 |= weight_side;
                has2 |= noise_side;
            }
        }
        let inf = lit::<T>(f64::INFINITY);
        let out = |lambda, status| Ok(LambdaStar { lambda, status, unique });
        match (has1, has2) {
            (false, false) => return out(T::zero(), LambdaStatus::DegenerateEverywhereZero),
            (true, false) => return out(inf, LambdaStatus::Boundary),
            (false, true) => return out(-inf, LambdaStatus::Boundary),
            (true, true) => {}
        }
        // e^{2λ|μ|} must stay below the f64 overflow threshold e^{709}.
        let limit = lit::<T>(350.0) / self.max_abs_mu();
        let f = |l: T| self.flow(l, gamma, sigma_sq);
        let (mut lo, mut hi) = (-T::one().min(limit), T::one().min(limit));
        let two = lit::<T>(2.0);
        while f(hi) > T::zero() {
            if hi >= limit {
                return out(inf, LambdaStatus::Saturated);
            }
            lo = hi;
            hi = (hi * two).min(limit);
        }
        while f(lo) < T::zero() {
            if lo <= -limit {
                return out(-inf, LambdaStatus::Saturated);
            }
            hi = lo;
            lo = (lo * two).max(-limit);
        }
        let tol_w = lit::<T>(1e-12);
        loop {
            let mid = (lo + hi) / two;
            let (a, b) = self.parts(mid, gamma, sigma_sq);
            let g = a - b;
            if g.abs() <= tol_w * (a + b) || hi - lo <= tol_w || mid == lo || mid == hi {
                return out(mid, LambdaStatus::Interior);
            }
            if g > T::zero() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
}

/// Fixed point `λ*` of the flow along the orbit through `θ`,
/// computed from spectra measured once at `θ`.
pub fn solve_lambda_star<T: Float>(
    desc: &SymmetryDescriptor<T>,
    p: &ParamBlocks<T>,
    grads: &GradientSet<T>,
    gamma: T,
    sigma_sq: T,
) -> Result<LambdaStar<T>> {
    if !p.is_finite() || !grads.rows().iter().all(|v| na_is_finite(*v)) {
        return Err(Error::NonFinite("parameters or gradients".into()));
    }
    desc.spectral_profile(p, grads)?.solve(gamma, sigma_sq)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowSign<T: Float> {
    pub lambda_star: LambdaStar<T>,
    pub flow: T,
    pub charge: T,
    /// Unset when `λ*` is infinite.
    pub charge_star: Option<T>,
    pub sign_flow: i8,
    pub sign_offset: Option<i8>,
    /// `sign(G) = −sign(C − C*)` whenever both are nonzero.
    pub consistent: bool,
}

fn sign<T: Float>(x: T) -> i8 {
    if x > T::zero() {
        1
    } else if x < T::zero() {
        -1
    } else {
        0
    }
}

pub fn flow_sign_check<T: Float>(
    desc: &SymmetryDescriptor<T>,
    p: &ParamBlocks<T>,
    grads: &GradientSet<T>,
    gamma: T,
    sigma_sq: T,
) -> Result<FlowSign<T>> {
    let lambda_star = solve_lambda_star(desc, p, grads, gamma, sigma_sq)?;
    let charge = desc.charge(p)?;
    let flow = -lit::<T>(4.0) * gamma * charge + sigma_sq * trace_sigma_a(grads, desc)?;
    let sign_flow = sign(flow);
    let (charge_star, sign_offset) = if na_is_finite(lambda_star.lambda) {
        let cs = desc.charge(&desc.exp_map(lambda_star.lambda, p)?)?;
        (Some(cs), Some(sign(charge - cs)))
    } else {
        (None, None)
    };
    let consistent = match sign_offset {
        Some(s) if s != 0 && sign_flow != 0 => s == -sign_flow,
        _ => true,
    };
    Ok(FlowSign { lambda_star, flow, charge, charge_star, sign_flow, sign_offset, consistent })
}

/// `λ*` as an `f64` for records, keeping infinities.
pub fn lambda_to_f64<T: Float>(l: &LambdaStar<T>) -> f64 {
    to_f64(l.lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> BlockLayout {
        BlockLayout::new([("W", 3, 2), ("U", 2, 3)]).unwrap()
    }

    fn params() -> ParamBlocks<f64> {
        let l = layout();
        let flat: Vec<f64> = (0..l.dim()).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3 + 0.1 * i as f64).collect();
        ParamBlocks::from_flat(&l, &flat).unwrap()
    }

    #[test]
    fn scaling_charge_is_squared_norm() {
        let l = BlockLayout::new([("theta", 2, 1)]).unwrap();
        let d = SymmetryDescriptor::<f64>::new("s", SymmetryKind::Scaling { blocks: vec!["theta".into()] }, &l).unwrap();
        let p = ParamBlocks::from_flat(&l, &[0.0, 2.0]).unwrap();
        assert_eq!(d.charge(&p).unwrap(), 4.0);
    }

    #[test]
    fn rescaling_charge_vanishes_when_balanced() {
        let l = BlockLayout::new([("a", 2, 1), ("b", 1, 2)]).unwrap();
        let d = SymmetryDescriptor::<f64>::new(
            "r",
            SymmetryKind::Rescaling { plus: vec!["a".into()], minus: vec!["b".into()] },
            &l,
        )
        .unwrap();
        let p = ParamBlocks::from_flat(&l, &[3.0, 4.0, 0.0, 5.0]).unwrap();
        assert_eq!(d.charge(&p).unwrap(), 0.0);
    }

    #[test]
    fn double_rotation_charge_is_column_row_overlap() {
        let p = params();
        let d = SymmetryDescriptor::<f64>::new(
            "r",
            SymmetryKind::DoubleRotation { upper: "U".into(), lower: "W".into(), k: 0, l: 2 },
            &layout(),
        )
        .unwrap();
        let (u, w) = (p.get("U").unwrap(), p.get("W").unwrap());
        let want = u.column(0).dot(&u.column(2)) - w.row(0).dot(&w.row(2));
        assert!((d.charge(&p).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn invalid_descriptors_are_rejected() {
        let l = layout();
        let mk = |k| SymmetryDescriptor::<f64>::new("x", k, &l);
        assert!(mk(SymmetryKind::Rescaling { plus: vec!["U".into()], minus: vec!["U".into()] }).is_err());
        assert!(mk(SymmetryKind::Scaling { blocks: vec!["V".into()] }).is_err());
        assert!(mk(SymmetryKind::DoubleRotation { upper: "U".into(), lower: "W".into(), k: 0, l: 3 }).is_err());
        assert!(mk(SymmetryKind::DoubleRotation { upper: "U".into(), lower: "U".into(), k: 0, l: 0 }).is_err());
        let asym = vec![vec![0.0, 1.0], vec![0.0, 0.0]];
        let l2 = BlockLayout::new([("t", 2, 1)]).unwrap();
        assert!(SymmetryDescriptor::<f64>::new("x", SymmetryKind::GenericDense { blocks: vec!["t".into()], matrix: asym }, &l2).is_err());
    }

    #[test]
    fn one_sided_noise_gives_boundary_root() {
        let prof = SpectralProfile {
            terms: vec![
                SpectralTerm { mu: 1.0, noise: 2.0, weight: 1.0 },
                SpectralTerm { mu: -1.0, noise: 0.0, weight: 1.0 },
            ],
        };
        let s = prof.solve(0.0, 0.1).unwrap();
        assert_eq!(s.status, LambdaStatus::Boundary);
        assert_eq!(s.lambda, f64::INFINITY);
        let zero = SpectralProfile { terms: vec![SpectralTerm { mu: 1.0, noise: 0.0, weight: 1.0 }] };
        let z = zero.solve(0.0, 0.1).unwrap();
        assert_eq!((z.lambda, z.status), (0.0, LambdaStatus::DegenerateEverywhereZero));
    }

    #[test]
    fn balanced_noise_has_root_at_zero() {
        let prof: SpectralProfile<f64> = SpectralProfile {
            terms: vec![
                SpectralTerm { mu: 1.0, noise: 2.0, weight: 1.0 },
                SpectralTerm { mu: -1.0, noise: 2.0, weight: 1.0 },
            ],
        };
        let s = prof.solve(0.0, 0.1).unwrap();
        assert_eq!(s.status, LambdaStatus::Interior);
        assert!(s.lambda.abs() < 1e-12);
    }

    #[test]
    fn closed_form_two_term_root() {
        // σ²μ₁e^{−2λμ₁}a = σ²|μ₂|e^{2λ|μ₂|}b  ⇒  λ = ln(μ₁a/(|μ₂|b)) / (2(μ₁+|μ₂|)).
        let prof = SpectralProfile {
            terms: vec![
                SpectralTerm { mu: 2.0, noise: 3.0, weight: 0.0 },
                SpectralTerm { mu: -0.5, noise: 0.7, weight: 0.0 },
            ],
        };
        let want: f64 = ((2.0f64 * 3.0) / (0.5 * 0.7)).ln() / (2.0 * 2.5);
        let s = prof.solve(0.0, 0.01).unwrap();
        assert!((s.lambda - want).abs() < 1e-10, "{} vs {want}", s.lambda);
    }
}
