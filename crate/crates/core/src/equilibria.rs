//! Closed-form predictions: the two-layer balance condition, the
//! noise-aligned deep linear solution, the sharpness trace, and the offset
//! produced by an approximate symmetry.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::noise::NoiseStats;
use crate::params::ParamBlocks;
use crate::scalar::{lit, Float};
use crate::symmetry::SymmetryDescriptor;

/// `Γ_W = E[‖r‖²xxᵀ] + 2γI`, `Γ_U = E[‖x‖²rrᵀ] + 2γI` with `r = UWx − y`.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaPair<T: Float> {
    pub gamma_w: DMatrix<T>,
    pub gamma_u: DMatrix<T>,
}

fn check_two_layer<T: Float>(u: &DMatrix<T>, w: &DMatrix<T>) -> Result<()> {
    if u.ncols() != w.nrows() {
        return Err(Error::Shape { what: "U".into(), expected: (u.nrows(), w.nrows()), found: u.shape() });
    }
    Ok(())
}

pub fn gamma_pair<T: Float>(u: &DMatrix<T>, w: &DMatrix<T>, data: &Dataset<T>, gamma: T) -> Result<GammaPair<T>> {
    check_two_layer(u, w)?;
    if data.d_x() != w.ncols() || data.d_y() != u.nrows() {
        return Err(Error::Shape {
            what: "dataset".into(),
            expected: (w.ncols(), u.nrows()),
            found: (data.d_x(), data.d_y()),
        });
    }
    let x = data.x();
    let r = x * (u * w).transpose() - data.y();
    let inv_n = T::one() / lit::<T>(data.n() as f64);
    let mut xs = x.clone();
    let mut rs = r.clone();
    for s in 0..data.n() {
        let (rn, xn) = (r.row(s).norm(), x.row(s).norm());
        xs.row_mut(s).scale_mut(rn);
        rs.row_mut(s).scale_mut(xn);
    }
    let two_g = lit::<T>(2.0) * gamma;
    let gamma_w = xs.tr_mul(&xs) * inv_n + DMatrix::identity(x.ncols(), x.ncols()) * two_g;
    let gamma_u = rs.tr_mul(&rs) * inv_n + DMatrix::identity(r.ncols(), r.ncols()) * two_g;
    Ok(GammaPair { gamma_w, gamma_u })
}

/// `(WΓ_WWᵀ, UᵀΓ_UU)`.
pub fn balance_matrices<T: Float>(u: &DMatrix<T>, w: &DMatrix<T>, pair: &GammaPair<T>) -> Result<(DMatrix<T>, DMatrix<T>)> {
    check_two_layer(u, w)?;
    if pair.gamma_w.nrows() != w.ncols() || pair.gamma_u.nrows() != u.nrows() {
        return Err(Error::Shape {
            what: "gamma pair".into(),
            expected: (w.ncols(), u.nrows()),
            found: (pair.gamma_w.nrows(), pair.gamma_u.nrows()),
        });
    }
    Ok((w * &pair.gamma_w * w.transpose(), u.transpose() * &pair.gamma_u * u))
}

/// `‖a − b‖_F / max(‖a‖_F, ‖b‖_F, 1e-30)`.
pub fn normalized_difference<T: Float>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    let floor = lit::<T>(1e-30);
    (a - b).norm() / a.norm().max(b.norm()).max(floor)
}

/// Relative violation of `WΓ_WWᵀ = UᵀΓ_UU`; zero exactly at balance.
pub fn balance_residual<T: Float>(u: &DMatrix<T>, w: &DMatrix<T>, pair: &GammaPair<T>) -> Result<T> {
    let (a, b) = balance_matrices(u, w, pair)?;
    Ok(normalized_difference(&a, &b))
}

/// Relative violation of `W Σ̄_x Wᵀ = Uᵀ Σ̄_ε U` with `Σ̄ = Σ / Tr Σ`, the
/// balance condition at a global minimum with independent label noise.
pub fn global_min_balance_residual<T: Float>(
    u: &DMatrix<T>,
    w: &DMatrix<T>,
    sigma_x: &DMatrix<T>,
    sigma_eps: &DMatrix<T>,
) -> Result<T> {
    let (tx, te) = (sigma_x.trace(), sigma_eps.trace());
    if tx <= T::zero() || te <= T::zero() {
        return Err(Error::Config("input and label-noise covariances need positive trace".into()));
    }
    let pair = GammaPair { gamma_w: sigma_x / tx, gamma_u: sigma_eps / te };
    balance_residual(u, w, &pair)
}

/// Symmetric PSD square root; negative eigenvalues from roundoff clip to 0.
pub fn psd_sqrt<T: Float>(m: &DMatrix<T>) -> DMatrix<T> {
    let eig = SymmetricEigen::new(m.clone());
    let root = eig.eigenvalues.map(|v| v.max(T::zero()).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

fn pd_inv_sqrt<T: Float>(m: &DMatrix<T>, what: &str) -> Result<DMatrix<T>> {
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().any(|v| *v <= T::zero()) {
        return Err(Error::Config(format!("{what} must be positive definite")));
    }
    let inv = eig.eigenvalues.map(|v| T::one() / v.sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose())
}

/// `S(θ) = d_y‖WΣ_x^{1/2}‖²_F + ‖U‖²_F Tr[Σ_x]`, evaluated as
/// `d_y Tr[WΣ_xWᵀ] + ‖U‖²_F Tr[Σ_x]`.
pub fn sharpness<T: Float>(u: &DMatrix<T>, w: &DMatrix<T>, sigma_x: &DMatrix<T>, d_y: usize) -> T {
    let ws = (w * sigma_x).component_mul(w).sum();
    lit::<T>(d_y as f64) * ws + u.norm_squared() * sigma_x.trace()
}

/// Expected sharpness at a Gaussian initialization and at the balanced
/// global minimum: `(d_x d (σ_U² + σ_W²) Tr Σ_x, 2 min(d, d_x) Tr Σ_x)`.
/// `_d_y` is accepted for call-site symmetry and does not enter.
pub fn sharpness_init_end<T: Float>(d: usize, d_x: usize, _d_y: usize, var_u: T, var_w: T, tr_sigma_x: T) -> (T, T) {
    let s_init = lit::<T>((d_x * d) as f64) * (var_u + var_w) * tr_sigma_x;
    let s_end = lit::<T>(2.0 * d.min(d_x) as f64) * tr_sigma_x;
    (s_init, s_end)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeepLinearEquilibrium<T: Float> {
    /// `W_1 … W_D`, input side first.
    pub layers: Vec<DMatrix<T>>,
    /// SVD `V' = L diag(S') R` of `V' = √Σ_ε V √Σ_x`, truncated to rank `d`.
    pub l: DMatrix<T>,
    pub s_prime: DVector<T>,
    pub r: DMatrix<T>,
    pub rank: usize,
    /// Diagonal factors `Σ_1 … Σ_D`.
    pub sigmas: Vec<DMatrix<T>>,
    /// Inner frames `U_1 … U_{D−1}`, each with orthonormal columns.
    pub frames: Vec<DMatrix<T>>,
    /// Common scale of the inner factors, `Σ_i = cI` for `1 < i < D`.
    pub c: T,
    /// Output-to-input ratio `Σ_D = aΣ_1`, `a = √(Tr Σ_ε / Tr Σ_x)`.
    pub a: T,
}

/// Noise-aligned global minimum of `‖W_D⋯W_1x − y‖²` with `y = Vx + ε`.
///
/// `widths` are the inner widths `d_1 … d_{D−1}`. When `frames` is `None`
/// the frames are the leading `d` columns of the identity.
pub fn deep_linear_equilibrium<T: Float>(
    v: &DMatrix<T>,
    sigma_x: &DMatrix<T>,
    sigma_eps: &DMatrix<T>,
    depth: usize,
    widths: &[usize],
    frames: Option<Vec<DMatrix<T>>>,
) -> Result<DeepLinearEquilibrium<T>> {
    if depth < 2 {
        return Err(Error::Config("depth must be at least 2".into()));
    }
    if widths.len() != depth - 1 {
        return Err(Error::Dimension { expected: depth - 1, found: widths.len() });
    }
    let (d_y, d_x) = v.shape();
    if sigma_x.shape() != (d_x, d_x) || sigma_eps.shape() != (d_y, d_y) {
        return Err(Error::Config("covariance shapes do not match the teacher".into()));
    }
    let sx_half = psd_sqrt(sigma_x);
    let se_half = psd_sqrt(sigma_eps);
    let sx_inv_half = pd_inv_sqrt(sigma_x, "input covariance")?;
    let se_inv_half = pd_inv_sqrt(sigma_eps, "label-noise covariance")?;
    let vp = &se_half * v * &sx_half;

    let svd = SVD::new(vp, true, true);
    let (uu, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].partial_cmp(&svd.singular_values[i]).expect("finite"));
    let top = svd.singular_values[order[0]];
    let cut = lit::<T>(1e-10) * top;
    let keep: Vec<usize> = order.into_iter().filter(|&i| svd.singular_values[i] > cut).collect();
    let d = keep.len();
    if d == 0 {
        return Err(Error::Config("teacher has rank zero".into()));
    }
    if let Some(&w) = widths.iter().find(|&&w| w < d) {
        return Err(Error::Infeasible { rank: d, width: w });
    }
    let l = uu.select_columns(&keep);
    let r = vt.select_rows(&keep);
    let s_prime = DVector::from_iterator(d, keep.iter().map(|&i| svd.singular_values[i]));

    let frames = match frames {
        Some(f) => {
            if f.len() != depth - 1 {
                return Err(Error::Dimension { expected: depth - 1, found: f.len() });
            }
            for (i, (u_i, &w)) in f.iter().zip(widths).enumerate() {
                if u_i.shape() != (w, d) {
                    return Err(Error::Shape { what: format!("frame {}", i + 1), expected: (w, d), found: u_i.shape() });
                }
                if (u_i.tr_mul(u_i) - DMatrix::identity(d, d)).norm() > lit::<T>(1e-10) {
                    return Err(Error::Config(format!("frame {} does not have orthonormal columns", i + 1)));
                }
            }
            f
        }
        None => widths.iter().map(|&w| DMatrix::identity(w, d)).collect(),
    };

    let (tx, te) = (sigma_x.trace(), sigma_eps.trace());
    let a = (te / tx).sqrt();
    let tr_s = s_prime.sum();
    let c = (tr_s / (tx * te).sqrt()).powf(T::one() / lit::<T>(depth as f64));
    let inner = c.powi(depth as i32 - 2);
    let s1 = DMatrix::from_diagonal(&s_prime.map(|s| (s / (a * inner)).sqrt()));
    let mut sigmas = vec![s1.clone()];
    for _ in 1..depth - 1 {
        sigmas.push(DMatrix::identity(d, d) * c);
    }
    sigmas.push(&s1 * a);

    let mut layers = Vec::with_capacity(depth);
    layers.push(&frames[0] * &sigmas[0] * &r * &sx_inv_half);
    for i in 1..depth - 1 {
        layers.push(&frames[i] * &sigmas[i] * frames[i - 1].transpose());
    }
    layers.push(&se_inv_half * &l * &sigmas[depth - 1] * frames[depth - 2].transpose());

    Ok(DeepLinearEquilibrium { layers, l, s_prime, r, rank: d, sigmas, frames, c, a })
}

/// Squared Frobenius norm shared by the balanced layers when
/// `Tr Σ_x = Tr Σ_ε = d`: `(Tr S')^{2/D} d^{1−2/D}`.
pub fn balanced_layer_norm_sq<T: Float>(tr_s_prime: T, rank: usize, depth: usize) -> T {
    let e = lit::<T>(2.0 / depth as f64);
    tr_s_prime.powf(e) * lit::<T>(rank as f64).powf(T::one() - e)
}

/// Relative violation of the layer-`i` noise-balance condition at a global
/// minimum with independent label noise, for `i = 1 … D−1`:
/// `W_{i+1}ᵀ ξᵀΣ_εξ W_{i+1} · Tr[hΣ_xhᵀ] = W_i hΣ_xhᵀ W_iᵀ · Tr[ξᵀΣ_εξ]`
/// with `ξ = W_D⋯W_{i+2}` and `h = W_{i−1}⋯W_1`.
pub fn deep_linear_stationarity<T: Float>(
    layers: &[DMatrix<T>],
    sigma_x: &DMatrix<T>,
    sigma_eps: &DMatrix<T>,
) -> Vec<T> {
    let depth = layers.len();
    let d_x = layers[0].ncols();
    // Zero-based: layer i+1 sits above layer i.
    (0..depth - 1)
        .map(|i| {
            let mut h = DMatrix::identity(d_x, d_x);
            for w in &layers[..i] {
                h = w * h;
            }
            let top = layers[i + 1].nrows();
            let mut xi = DMatrix::identity(top, top);
            for w in &layers[i + 2..] {
                xi = w * xi;
            }
            let below = &h * sigma_x * h.transpose();
            let above = xi.transpose() * sigma_eps * &xi;
            let lhs = layers[i + 1].transpose() * &above * &layers[i + 1] * below.trace();
            let rhs = &layers[i] * &below * layers[i].transpose() * above.trace();
            normalized_difference(&lhs, &rhs)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Deviation<T: Float> {
    /// Offset `(θ − θ*)ᵀn` along the chosen Hessian eigenvector.
    pub s: T,
    /// Charge offset `C(θ) − C*`.
    pub charge_offset: T,
}

/// Offset of the SGD stationary point from a minimum `θ*` of
/// `ℓ₁ + ζℓ₂` when only `ℓ₁` has the symmetry, along the eigenvector `n`
/// of the Hessian of `ℓ₂` with eigenvalue `h*`:
/// `s = σ²Tr[ΣA] / (ζh* nᵀAθ*)` and `C − C* = 2σ²Tr[ΣA] / (ζh*)`.
pub fn approx_symmetry_deviation<T: Float>(
    desc: &SymmetryDescriptor<T>,
    stats: &NoiseStats<T>,
    sigma_sq: T,
    zeta: T,
    h_star: T,
    n: &DVector<T>,
    theta_star: &ParamBlocks<T>,
) -> Result<Deviation<T>> {
    if n.len() != desc.dim() {
        return Err(Error::Dimension { expected: desc.dim(), found: n.len() });
    }
    if h_star == T::zero() || zeta == T::zero() {
        return Err(Error::UndefinedDeviation("ζh* vanishes".into()));
    }
    let trace = stats.trace(desc)?;
    let a_theta = desc.apply(&theta_star.flatten());
    let denom = zeta * h_star * n.dot(&a_theta);
    if denom == T::zero() {
        return Err(Error::UndefinedDeviation("nᵀAθ* vanishes".into()));
    }
    let num = sigma_sq * trace;
    Ok(Deviation { s: num / denom, charge_offset: lit::<T>(2.0) * num / (zeta * h_star) })
}
