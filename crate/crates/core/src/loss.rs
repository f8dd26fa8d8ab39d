//! Regularized empirical Bellman-residual loss and its Riemannian gradient.
//!
//! For a batch `𝒟` of `T` transitions, a frozen target `Q̄` and a policy `μ̄`:
//!
//! ```text
//! δ_t = Q_Ω(s_t, a_t) - r_t - α Q̄(s'_t, μ̄(s'_t))        (bootstrap masked on termination)
//! 𝓛(Ω) = (1/T) Σ_t δ_t² + ρ Σ_j ‖Υ_j‖²_F
//! ```
//!
//! The target is a parameter, not a variable: no gradient flows through `Q̄`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, SymMatrix};
use crate::manifold::{ParameterPoint, TangentVector};
use crate::model::QFunction;
use crate::scalar::Scalar;

/// One experience tuple `(s, a, r, s', terminal)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition<T> {
    pub s: Vec<T>,
    pub a: usize,
    pub r: T,
    pub s_next: Vec<T>,
    /// True environment termination; step-cap truncation is not terminal.
    pub terminal: bool,
}

impl<T> AsRef<Transition<T>> for Transition<T> {
    fn as_ref(&self) -> &Transition<T> {
        self
    }
}

/// Gradient used for the Frobenius regularizer on the weight factors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegGradMode {
    /// `2ρ Υ_j`, the derivative of `ρ Σ_j ‖Υ_j‖²_F`.
    #[default]
    Analytic,
    /// `ρ ⊙_{j'≠j} Υ_{j'}`.
    PaperLiteral,
}

impl std::str::FromStr for RegGradMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(Self::Analytic),
            "paper-literal" => Ok(Self::PaperLiteral),
            other => Err(Error::Config(format!("unknown regularizer-gradient mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Discount `α ∈ [0, 1)`.
    pub alpha: f64,
    /// Regularization coefficient `ρ ≥ 0`.
    pub rho: f64,
    #[serde(default)]
    pub reg_grad: RegGradMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 0.99, rho: 0.0, reg_grad: RegGradMode::Analytic }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("discount must lie in [0, 1), got {}", self.alpha)));
        }
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(Error::Config(format!("rho must be finite and >= 0, got {}", self.rho)));
        }
        Ok(())
    }
}

/// Policy `μ̄` used to pick the bootstrap action at `s'`.
pub trait Policy<T: Scalar> {
    fn action(&self, q_bar: &QFunction<'_, T>, s: &[T]) -> usize;

    /// `Q̄(s, μ̄(s))`.
    fn bootstrap_value(&self, q_bar: &QFunction<'_, T>, s: &[T]) -> T {
        q_bar.q(s, self.action(q_bar, s))
    }
}

/// `μ̄(s) = argmax_a Q̄(s, a)`, ties to the smallest index.
#[derive(Clone, Copy, Debug, Default)]
pub struct Greedy;

impl<T: Scalar> Policy<T> for Greedy {
    fn action(&self, q_bar: &QFunction<'_, T>, s: &[T]) -> usize {
        q_bar.greedy_action(s)
    }

    fn bootstrap_value(&self, q_bar: &QFunction<'_, T>, s: &[T]) -> T {
        q_bar.greedy(s).1
    }
}

impl<T: Scalar, F: Fn(&[T]) -> usize> Policy<T> for F {
    fn action(&self, _q_bar: &QFunction<'_, T>, s: &[T]) -> usize {
        self(s)
    }
}

fn bootstrap<T: Scalar, P: Policy<T>>(q_bar: &QFunction<'_, T>, policy: &P, t: &Transition<T>) -> T {
    if t.terminal {
        return T::zero();
    }
    policy.bootstrap_value(q_bar, &t.s_next)
}

pub fn td_residual<T: Scalar, P: Policy<T>>(
    omega: &ParameterPoint<T>,
    q_bar: &ParameterPoint<T>,
    policy: &P,
    t: &Transition<T>,
    cfg: &LossConfig,
) -> T {
    let q = QFunction::new(omega);
    let qb = QFunction::new(q_bar);
    q.q(&t.s, t.a) - t.r - T::lit(cfg.alpha) * bootstrap(&qb, policy, t)
}

fn regularizer<T: Scalar>(omega: &ParameterPoint<T>) -> T {
    omega.upsilon().iter().map(|u| u.frob_dot(u)).sum()
}

pub fn loss<T: Scalar, P: Policy<T>, B: AsRef<Transition<T>>>(
    omega: &ParameterPoint<T>,
    q_bar: &ParameterPoint<T>,
    policy: &P,
    batch: &[B],
    cfg: &LossConfig,
) -> T {
    assert!(!batch.is_empty(), "loss over an empty batch");
    let q = QFunction::new(omega);
    let qb = QFunction::new(q_bar);
    let alpha = T::lit(cfg.alpha);
    let mut sum = T::zero();
    for t in batch {
        let t = t.as_ref();
        let d = q.q(&t.s, t.a) - t.r - alpha * bootstrap(&qb, policy, t);
        sum += d * d;
    }
    sum / T::from_usize(batch.len()).unwrap() + T::lit(cfg.rho) * regularizer(omega)
}

/// Riemannian gradient of [`loss`] at `omega`.
pub fn riemannian_gradient<T: Scalar, P: Policy<T>, B: AsRef<Transition<T>>>(
    omega: &ParameterPoint<T>,
    q_bar: &ParameterPoint<T>,
    policy: &P,
    batch: &[B],
    cfg: &LossConfig,
) -> TangentVector<T> {
    loss_and_gradient(omega, q_bar, policy, batch, cfg).1
}

/// Loss value and Riemannian gradient in one pass over the batch.
///
/// Per transition and component, with `v = s_t - m_k`, `c = (2/T) δ_t 𝒢_k(s_t)`:
/// `∂/∂υ_{k,j}(a_t) += c Π_{j'≠j} υ_{k,j'}(a_t)`, `grad m_k += 2c ξ_k(a_t) C_k⁻¹ v`,
/// `grad C_k += c ξ_k(a_t) v vᵀ` (the affine-invariant gradient `C G_euc C`).
pub fn loss_and_gradient<T: Scalar, P: Policy<T>, B: AsRef<Transition<T>>>(
    omega: &ParameterPoint<T>,
    q_bar: &ParameterPoint<T>,
    policy: &P,
    batch: &[B],
    cfg: &LossConfig,
) -> (T, TangentVector<T>) {
    assert!(!batch.is_empty(), "gradient over an empty batch");
    let dims = omega.dims();
    let (kk, jj, ds) = (dims.components, dims.factors, dims.state_dim);
    let q = QFunction::new(omega);
    let qb_owned;
    let qb = if std::ptr::eq(omega, q_bar) {
        &q
    } else {
        qb_owned = QFunction::new(q_bar);
        &qb_owned
    };
    let na = dims.actions;
    let tri = ds * (ds + 1) / 2;
    let xi = q.weights().as_mat().as_slice();
    let ups = omega.upsilon();
    // Factor entries regrouped as [k][a][j] so each (k, a) reads one contiguous run.
    let mut ups_kaj = vec![T::zero(); kk * na * jj];
    for (j, u) in ups.iter().enumerate() {
        for (ka, &x) in u.as_slice().iter().enumerate() {
            ups_kaj[ka * jj + j] = x;
        }
    }
    let alpha = T::lit(cfg.alpha);
    let two = T::lit(2.0);
    let inv_t = T::one() / T::from_usize(batch.len()).unwrap();

    // Accumulators: Υ as [k][a][j], means as [k][i], covariances as packed upper [k][i ≤ j].
    let mut acc_ups = vec![T::zero(); kk * na * jj];
    let mut acc_means = vec![T::zero(); kk * ds];
    let mut acc_covs = vec![T::zero(); kk * tri];

    let mut diffs = vec![T::zero(); kk * ds];
    let mut whitened = vec![T::zero(); kk * ds];
    let mut gauss = vec![T::zero(); kk];
    let mut sq_sum = T::zero();

    for t in batch {
        let t = t.as_ref();
        assert_eq!(t.s.len(), ds, "state dimension mismatch");
        assert!(t.a < na, "action {} out of range", t.a);
        for (k, ((g, v), y)) in gauss.iter_mut().zip(diffs.chunks_exact_mut(ds)).zip(whitened.chunks_exact_mut(ds)).enumerate() {
            *g = (-q.whiten_into(k, &t.s, v, y)).exp();
        }
        let a = t.a;
        let pred = gauss.iter().enumerate().fold(T::zero(), |acc, (k, &g)| acc + xi[k * na + a] * g);
        let delta = pred - t.r - alpha * bootstrap(qb, policy, t);
        sq_sum += delta * delta;

        for k in 0..kk {
            let gk = gauss[k];
            if gk == T::zero() {
                continue;
            }
            let c = two * inv_t * delta * gk;
            let ka = (k * na + a) * jj;
            let u = &ups_kaj[ka..ka + jj];
            for (j, out) in acc_ups[ka..ka + jj].iter_mut().enumerate() {
                let others = u.iter().enumerate().fold(T::one(), |p, (jp, &x)| if jp == j { p } else { p * x });
                *out += c * others;
            }
            let cx = c * xi[k * na + a];
            if cx == T::zero() {
                continue;
            }
            // C⁻¹ v = L⁻ᵀ (L⁻¹ v).
            let y = &mut whitened[k * ds..(k + 1) * ds];
            q.unwhiten_transpose(k, y);
            for (m, &yi) in acc_means[k * ds..(k + 1) * ds].iter_mut().zip(y.iter()) {
                *m += two * cx * yi;
            }
            let v = &diffs[k * ds..(k + 1) * ds];
            let mut cov = acc_covs[k * tri..(k + 1) * tri].iter_mut();
            for i in 0..ds {
                let cvi = cx * v[i];
                for &vj in &v[i..] {
                    *cov.next().unwrap() += cvi * vj;
                }
            }
        }
    }

    let mut g_ups = vec![Mat::zeros(kk, na); jj];
    for (j, gu) in g_ups.iter_mut().enumerate() {
        for (ka, x) in gu.as_mut_slice().iter_mut().enumerate() {
            *x = acc_ups[ka * jj + j];
        }
    }
    let g_means = Mat::from_fn(ds, kk, |i, k| acc_means[k * ds + i]);
    let g_covs: Vec<Mat<T>> = acc_covs
        .chunks_exact(tri)
        .map(|p| {
            let mut m = Mat::zeros(ds, ds);
            let mut idx = 0;
            for i in 0..ds {
                for j in i..ds {
                    m[(i, j)] = p[idx];
                    m[(j, i)] = p[idx];
                    idx += 1;
                }
            }
            m
        })
        .collect();

    let rho = T::lit(cfg.rho);
    if rho != T::zero() {
        match cfg.reg_grad {
            RegGradMode::Analytic => {
                for (gu, u) in g_ups.iter_mut().zip(ups) {
                    gu.axpy_in_place(two * rho, u);
                }
            }
            RegGradMode::PaperLiteral => {
                for (j, gu) in g_ups.iter_mut().enumerate() {
                    let mut prod = Mat::from_fn(kk, dims.actions, |_, _| T::one());
                    for (jp, u) in ups.iter().enumerate() {
                        if jp != j {
                            prod = prod.hadamard(u);
                        }
                    }
                    gu.axpy_in_place(rho, &prod);
                }
            }
        }
    }

    let d_covs = g_covs.into_iter().map(SymMatrix::from_mat).collect();
    let grad = TangentVector::new(g_ups, g_means, d_covs).expect("gradient shaped like the point");
    let value = sq_sum * inv_t + rho * regularizer(omega);
    (value, grad)
}
