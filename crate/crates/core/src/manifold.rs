//! Riemannian structure of the S-GMM-QF parameter space
//! `(ℝ^{K×Nₐ})^J × ℝ^{D×K} × (SPD_D)^K`.
//!
//! Euclidean slots (Hadamard weight factors and means) use the Frobenius
//! metric, additive retraction and identity transport. Covariance slots use
//! the affine-invariant metric `Tr(C⁻¹X₁C⁻¹X₂)`, the exponential-map
//! retraction `C^{1/2} Exp(C^{-1/2} X C^{-1/2}) C^{1/2}` and congruence
//! transport `X ↦ E X Eᵀ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eig, Mat, SpdMatrix, SymMatrix};
use crate::scalar::Scalar;

/// Shape of a parameter point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    /// Mixture components `K`.
    pub components: usize,
    /// Hadamard factors `J`.
    pub factors: usize,
    /// State dimension `D_s`.
    pub state_dim: usize,
    /// Action count `N_a`.
    pub actions: usize,
}

/// Which congruence factor the covariance transport uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportMode {
    /// `E = A^{1/2} (A^{-1/2} B A^{-1/2})^{1/2} A^{-1/2}`: isometric, identity when `A == B`.
    #[default]
    Standard,
    /// `Φ = A^{1/2} (A^{-1/2} B A^{-1/2})^{1/2}`, without the trailing `A^{-1/2}`.
    PaperLiteral,
}

impl std::str::FromStr for TransportMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "paper-literal" => Ok(Self::PaperLiteral),
            other => Err(Error::Config(format!("unknown transport mode `{other}`"))),
        }
    }
}

/// A point `Ω = (Υ₁..Υ_J, M, C₁..C_K)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterPoint<T> {
    upsilon: Vec<Mat<T>>,
    means: Mat<T>,
    covs: Vec<SpdMatrix<T>>,
}

/// A tangent vector `Λ = (Θ₁..Θ_J, P, X₁..X_K)`; covariance slots are symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector<T> {
    d_upsilon: Vec<Mat<T>>,
    d_means: Mat<T>,
    d_covs: Vec<SymMatrix<T>>,
}

fn check_slots<T: Scalar>(upsilon: &[Mat<T>], means: &Mat<T>, cov_dims: &[usize]) -> Result<Dims> {
    let first = upsilon
        .first()
        .ok_or_else(|| Error::Shape("at least one Hadamard factor is required".into()))?;
    let (k, na) = first.shape();
    if k == 0 || na == 0 {
        return Err(Error::Shape("weight factors must be non-empty".into()));
    }
    if let Some(bad) = upsilon.iter().position(|u| u.shape() != (k, na)) {
        return Err(Error::Shape(format!("factor {bad} has shape {:?}, expected ({k}, {na})", upsilon[bad].shape())));
    }
    let ds = means.rows();
    if ds == 0 || means.cols() != k {
        return Err(Error::Shape(format!("means have shape {:?}, expected (D_s, {k})", means.shape())));
    }
    if cov_dims.len() != k {
        return Err(Error::Shape(format!("{} covariance slots, expected {k}", cov_dims.len())));
    }
    if let Some(bad) = cov_dims.iter().position(|&d| d != ds) {
        return Err(Error::Shape(format!("covariance {bad} has dim {}, expected {ds}", cov_dims[bad])));
    }
    Ok(Dims { components: k, factors: upsilon.len(), state_dim: ds, actions: na })
}

impl<T: Scalar> ParameterPoint<T> {
    pub fn new(upsilon: Vec<Mat<T>>, means: Mat<T>, covs: Vec<SpdMatrix<T>>) -> Result<Self> {
        let dims: Vec<usize> = covs.iter().map(SpdMatrix::dim).collect();
        check_slots(&upsilon, &means, &dims)?;
        Ok(Self { upsilon, means, covs })
    }

    pub fn dims(&self) -> Dims {
        Dims {
            components: self.means.cols(),
            factors: self.upsilon.len(),
            state_dim: self.means.rows(),
            actions: self.upsilon[0].cols(),
        }
    }

    pub fn upsilon(&self) -> &[Mat<T>] {
        &self.upsilon
    }

    /// `D_s × K`; column `k` is the mean `m_k`.
    pub fn means(&self) -> &Mat<T> {
        &self.means
    }

    pub fn covs(&self) -> &[SpdMatrix<T>] {
        &self.covs
    }

    pub fn mean(&self, k: usize) -> Vec<T> {
        self.means.column(k)
    }

    /// Mutable access to one weight entry `υ_{k,j}(a)`.
    pub fn upsilon_entry_mut(&mut self, j: usize, k: usize, a: usize) -> &mut T {
        &mut self.upsilon[j][(k, a)]
    }

    pub fn means_entry_mut(&mut self, d: usize, k: usize) -> &mut T {
        &mut self.means[(d, k)]
    }

    pub fn set_cov(&mut self, k: usize, c: SpdMatrix<T>) {
        assert_eq!(c.dim(), self.means.rows(), "covariance dimension mismatch");
        self.covs[k] = c;
    }

    pub fn is_finite(&self) -> bool {
        self.upsilon.iter().all(Mat::is_finite)
            && self.means.is_finite()
            && self.covs.iter().all(|c| c.as_mat().is_finite())
    }
}

impl<T: Scalar> TangentVector<T> {
    pub fn new(d_upsilon: Vec<Mat<T>>, d_means: Mat<T>, d_covs: Vec<SymMatrix<T>>) -> Result<Self> {
        let dims: Vec<usize> = d_covs.iter().map(SymMatrix::dim).collect();
        check_slots(&d_upsilon, &d_means, &dims)?;
        Ok(Self { d_upsilon, d_means, d_covs })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self {
            d_upsilon: vec![Mat::zeros(dims.components, dims.actions); dims.factors],
            d_means: Mat::zeros(dims.state_dim, dims.components),
            d_covs: vec![SymMatrix::zeros(dims.state_dim); dims.components],
        }
    }

    pub fn zeros_like(p: &ParameterPoint<T>) -> Self {
        Self::zeros(p.dims())
    }

    pub fn dims(&self) -> Dims {
        Dims {
            components: self.d_means.cols(),
            factors: self.d_upsilon.len(),
            state_dim: self.d_means.rows(),
            actions: self.d_upsilon[0].cols(),
        }
    }

    pub fn d_upsilon(&self) -> &[Mat<T>] {
        &self.d_upsilon
    }

    pub fn d_means(&self) -> &Mat<T> {
        &self.d_means
    }

    pub fn d_covs(&self) -> &[SymMatrix<T>] {
        &self.d_covs
    }

    /// Keeps only the weight-factor slots.
    pub fn upsilon_part(&self) -> Self {
        let mut out = Self::zeros(self.dims());
        out.d_upsilon.clone_from(&self.d_upsilon);
        out
    }

    /// Keeps only the mean slots.
    pub fn means_part(&self) -> Self {
        let mut out = Self::zeros(self.dims());
        out.d_means.clone_from(&self.d_means);
        out
    }

    /// Keeps only the covariance slots.
    pub fn covs_part(&self) -> Self {
        let mut out = Self::zeros(self.dims());
        out.d_covs.clone_from(&self.d_covs);
        out
    }

    pub fn scale(&self, a: T) -> Self {
        Self {
            d_upsilon: self.d_upsilon.iter().map(|m| m.scale(a)).collect(),
            d_means: self.d_means.scale(a),
            d_covs: self.d_covs.iter().map(|m| m.scale(a)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_upsilon.iter().all(Mat::is_finite)
            && self.d_means.is_finite()
            && self.d_covs.iter().all(|c| c.as_mat().is_finite())
    }

    /// Largest absolute entry over all slots.
    pub fn max_abs(&self) -> T {
        let slots = self
            .d_upsilon
            .iter()
            .chain(std::iter::once(&self.d_means))
            .chain(self.d_covs.iter().map(SymMatrix::as_mat));
        slots.flat_map(|m| m.as_slice().iter()).fold(T::zero(), |acc, &x| acc.max(x.abs()))
    }
}

fn assert_same_dims(a: Dims, b: Dims) {
    assert_eq!(a, b, "tangent/point shape mismatch");
}

/// `⟨A, B⟩_Ω`: Frobenius on the Euclidean slots plus `Σ_k Tr(C_k⁻¹ A_k C_k⁻¹ B_k)`.
pub fn metric<T: Scalar>(base: &ParameterPoint<T>, a: &TangentVector<T>, b: &TangentVector<T>) -> T {
    assert_same_dims(base.dims(), a.dims());
    assert_same_dims(base.dims(), b.dims());
    let mut acc = T::zero();
    for (x, y) in a.d_upsilon.iter().zip(&b.d_upsilon) {
        acc += x.frob_dot(y);
    }
    acc += a.d_means.frob_dot(&b.d_means);
    for ((c, x), y) in base.covs.iter().zip(&a.d_covs).zip(&b.d_covs) {
        acc += spd_inner(c, x, y);
    }
    acc
}

/// Affine-invariant inner product `Tr(C⁻¹XC⁻¹Y) = ⟨L⁻¹XL⁻ᵀ, L⁻¹YL⁻ᵀ⟩_F`.
pub fn spd_inner<T: Scalar>(c: &SpdMatrix<T>, x: &SymMatrix<T>, y: &SymMatrix<T>) -> T {
    let wx = c.whiten(x);
    if std::ptr::eq(x, y) {
        return wx.as_mat().frob_dot(wx.as_mat());
    }
    wx.as_mat().frob_dot(c.whiten(y).as_mat())
}

pub fn norm_sq<T: Scalar>(base: &ParameterPoint<T>, v: &TangentVector<T>) -> T {
    metric(base, v, v)
}

/// Slot-wise `a·X + Y`.
pub fn tangent_axpy<T: Scalar>(a: T, x: &TangentVector<T>, y: &TangentVector<T>) -> TangentVector<T> {
    assert_same_dims(x.dims(), y.dims());
    TangentVector {
        d_upsilon: y.d_upsilon.iter().zip(&x.d_upsilon).map(|(y, x)| y.axpy(a, x)).collect(),
        d_means: y.d_means.axpy(a, &x.d_means),
        d_covs: y.d_covs.iter().zip(&x.d_covs).map(|(y, x)| y.axpy(a, x)).collect(),
    }
}

/// Exponential map of one covariance slot, together with the eigen pieces
/// needed to transport along the same geodesic.
struct SpdStep<T> {
    point: SpdMatrix<T>,
    /// `C^{1/2} V diag(e^{λ/2})`, with `W = C^{-1/2} X C^{-1/2} = V diag(λ) Vᵀ`.
    half_factor: Mat<T>,
    /// `Vᵀ`.
    vectors_t: Mat<T>,
    /// `C^{-1/2}`.
    inv_sqrt: Mat<T>,
}

fn spd_exp_step<T: Scalar>(c: &SpdMatrix<T>, x: &SymMatrix<T>) -> Result<SpdStep<T>> {
    let half = T::lit(0.5);
    let ce = c.eigen()?;
    if !(ce.min_value() > T::zero()) {
        return Err(Error::NotPositiveDefinite);
    }
    let sqrt = ce.map_values(|l| l.sqrt()).into_mat();
    let inv_sqrt = ce.map_values(|l| T::one() / l.sqrt()).into_mat();
    let w = x.congruence(&inv_sqrt);
    let we = sym_eig(&w)?;
    let half_factor = sqrt.matmul(&we.scaled_vectors(|l| (l * half).exp()));
    let point = SpdMatrix::new(SymMatrix::from_mat(half_factor.matmul_t(&half_factor)))?;
    Ok(SpdStep { point, half_factor, vectors_t: we.vectors.transpose(), inv_sqrt })
}

/// Exponential map through the Cholesky factor `C = L Lᵀ`: with
/// `L⁻¹ X L⁻ᵀ = V diag(λ) Vᵀ` and `F = L V diag(e^{λ/2})`, the new point is
/// `F Fᵀ` and `F Vᵀ L⁻¹ = C^{1/2} Exp(½ C^{-1/2} X C^{-1/2}) C^{-1/2}` is the
/// transport factor along the same geodesic.
fn spd_exp_step_cholesky<T: Scalar>(c: &SpdMatrix<T>, x: &SymMatrix<T>) -> Result<(SpdMatrix<T>, Mat<T>)> {
    let half = T::lit(0.5);
    let w = c.whiten(x);
    let l = c.cholesky_factor();
    // Exp(W/2) is symmetric, so F Fᵀ = L Exp(W/2)² Lᵀ and F Vᵀ = L Exp(W/2).
    let (f, mut e) = if w.as_mat().frobenius_norm() <= T::one() {
        let s = exp_taylor(&w.scale(half));
        let f = l.matmul(&s);
        (f.clone(), f)
    } else {
        let we = sym_eig(&w)?;
        let f = l.matmul(&we.scaled_vectors(|l| (l * half).exp()));
        let e = f.matmul_t(&we.vectors);
        (f, e)
    };
    let point = SpdMatrix::new(SymMatrix::from_mat(f.matmul_t(&f)))?;
    let n = c.dim();
    let mut row = vec![T::zero(); n];
    for i in 0..n {
        row.copy_from_slice(e.row(i));
        c.backward_solve_in_place(&mut row);
        for j in 0..n {
            e[(i, j)] = row[j];
        }
    }
    Ok((point, e))
}

/// Taylor series of the matrix exponential, summed until terms fall below
/// machine precision; intended for `‖A‖_F ≤ 1/2`.
fn exp_taylor<T: Scalar>(a: &SymMatrix<T>) -> Mat<T> {
    let n = a.dim();
    let x = a.as_mat();
    let mut sum = Mat::identity(n);
    let mut term = Mat::identity(n);
    for k in 1..=40 {
        term = term.matmul(x).scale(T::one() / T::from_usize(k).unwrap());
        sum.axpy_in_place(T::one(), &term);
        if term.frobenius_norm() <= T::epsilon() * T::lit(0.25) {
            break;
        }
    }
    sum
}

/// `R_Ω(Λ)`: additive on Euclidean slots, exponential map on covariance slots.
pub fn retract<T: Scalar>(base: &ParameterPoint<T>, step: &TangentVector<T>) -> Result<ParameterPoint<T>> {
    assert_same_dims(base.dims(), step.dims());
    let covs = base
        .covs
        .iter()
        .zip(&step.d_covs)
        .map(|(c, x)| {
            if x.as_mat().as_slice().iter().all(|v| *v == T::zero()) {
                Ok(c.clone())
            } else {
                spd_exp_step_cholesky(c, x).map(|(p, _)| p)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(retract_euclidean(base, step, covs))
}

fn retract_euclidean<T: Scalar>(
    base: &ParameterPoint<T>,
    step: &TangentVector<T>,
    covs: Vec<SpdMatrix<T>>,
) -> ParameterPoint<T> {
    ParameterPoint {
        upsilon: base.upsilon.iter().zip(&step.d_upsilon).map(|(u, t)| u.axpy(T::one(), t)).collect(),
        means: base.means.axpy(T::one(), &step.d_means),
        covs,
    }
}

/// Congruence factors for the covariance slots of a transport between two points.
#[derive(Clone, Debug)]
pub struct TransportOps<T> {
    factors: Vec<Mat<T>>,
}

impl<T: Scalar> TransportOps<T> {
    pub fn factors(&self) -> &[Mat<T>] {
        &self.factors
    }

    /// Identity on Euclidean slots, `X_k ↦ E_k X_k E_kᵀ` on covariance slots.
    pub fn apply(&self, v: &TangentVector<T>) -> TangentVector<T> {
        assert_eq!(self.factors.len(), v.d_covs.len(), "transport shape mismatch");
        TangentVector {
            d_upsilon: v.d_upsilon.clone(),
            d_means: v.d_means.clone(),
            d_covs: v.d_covs.iter().zip(&self.factors).map(|(x, e)| x.congruence(e)).collect(),
        }
    }
}

/// Retraction that also returns the transport factors from `base` to the result
/// along the same geodesic, sharing the eigendecompositions.
pub fn retract_with_transport<T: Scalar>(
    base: &ParameterPoint<T>,
    step: &TangentVector<T>,
    mode: TransportMode,
) -> Result<(ParameterPoint<T>, TransportOps<T>)> {
    assert_same_dims(base.dims(), step.dims());
    let n = base.dims().state_dim;
    let mut covs = Vec::with_capacity(base.covs.len());
    let mut factors = Vec::with_capacity(base.covs.len());
    for (c, x) in base.covs.iter().zip(&step.d_covs) {
        if mode == TransportMode::Standard && x.as_mat().as_slice().iter().all(|v| *v == T::zero()) {
            covs.push(c.clone());
            factors.push(Mat::identity(n));
            continue;
        }
        if mode == TransportMode::Standard {
            let (point, e) = spd_exp_step_cholesky(c, x)?;
            covs.push(point);
            factors.push(e);
            continue;
        }
        let s = spd_exp_step(c, x)?;
        // (A^{-1/2} B A^{-1/2})^{1/2} = Exp(W/2) = V e^{Λ/2} Vᵀ.
        let phi = s.half_factor.matmul(&s.vectors_t);
        let e = match mode {
            TransportMode::Standard => phi.matmul(&s.inv_sqrt),
            TransportMode::PaperLiteral => phi,
        };
        covs.push(s.point);
        factors.push(e);
    }
    Ok((retract_euclidean(base, step, covs), TransportOps { factors }))
}

/// Transport factors between two arbitrary points.
pub fn transport_ops<T: Scalar>(
    from: &ParameterPoint<T>,
    to: &ParameterPoint<T>,
    mode: TransportMode,
) -> Result<TransportOps<T>> {
    assert_same_dims(from.dims(), to.dims());
    let factors = from
        .covs
        .iter()
        .zip(&to.covs)
        .map(|(a, b)| spd_transport_factor(a, b, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(TransportOps { factors })
}

fn spd_transport_factor<T: Scalar>(a: &SpdMatrix<T>, b: &SpdMatrix<T>, mode: TransportMode) -> Result<Mat<T>> {
    let n = a.dim();
    if mode == TransportMode::Standard && a.as_mat() == b.as_mat() {
        return Ok(Mat::identity(n));
    }
    let ae = a.eigen()?;
    if !(ae.min_value() > T::zero()) {
        return Err(Error::NotPositiveDefinite);
    }
    let sqrt = ae.map_values(|l| l.sqrt()).into_mat();
    let inv_sqrt = ae.map_values(|l| T::one() / l.sqrt()).into_mat();
    let inner = b.as_sym().congruence(&inv_sqrt);
    let ie = sym_eig(&inner)?;
    if !(ie.min_value() > T::zero()) {
        return Err(Error::NotPositiveDefinite);
    }
    // Exp(½ Log(M)) = M^{1/2}.
    let mid = ie.map_values(|l| l.sqrt()).into_mat();
    let phi = sqrt.matmul(&mid);
    Ok(match mode {
        TransportMode::Standard => phi.matmul(&inv_sqrt),
        TransportMode::PaperLiteral => phi,
    })
}

/// Parallel transport of `v` from `T_from` to `T_to`.
pub fn transport<T: Scalar>(
    from: &ParameterPoint<T>,
    to: &ParameterPoint<T>,
    v: &TangentVector<T>,
    mode: TransportMode,
) -> Result<TangentVector<T>> {
    assert_same_dims(from.dims(), v.dims());
    Ok(transport_ops(from, to, mode)?.apply(v))
}
