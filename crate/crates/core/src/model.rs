//! The S-GMM-QF `Q(s, a) = Σ_k ξ_k(a) exp(-(s - m_k)ᵀ C_k⁻¹ (s - m_k))`
//! with Hadamard-factored weights `Ξ = Υ₁ ⊙ … ⊙ Υ_J`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Mat, SpdMatrix};
use crate::manifold::{Dims, ParameterPoint};
use crate::scalar::Scalar;

/// Default numerical-zero threshold on `|ξ|`.
pub const DEFAULT_SPARSITY_TAU: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Mixture components `K`.
    pub components: usize,
    /// Hadamard factors `J`.
    pub factors: usize,
    /// State dimension `D_s`.
    pub state_dim: usize,
    /// Action count `N_a`.
    pub actions: usize,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0 || self.factors == 0 || self.state_dim == 0 {
            return Err(Error::Config("K, J and D_s must be positive".into()));
        }
        if self.actions < 2 {
            return Err(Error::Config("at least two actions are required".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        Dims {
            components: self.components,
            factors: self.factors,
            state_dim: self.state_dim,
            actions: self.actions,
        }
    }
}

/// `Ξ`, the `K × N_a` matrix of effective mixture weights.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveWeights<T>(pub Mat<T>);

impl<T: Scalar> EffectiveWeights<T> {
    #[inline]
    pub fn get(&self, k: usize, a: usize) -> T {
        self.0[(k, a)]
    }

    pub fn as_mat(&self) -> &Mat<T> {
        &self.0
    }
}

pub fn effective_weights<T: Scalar>(omega: &ParameterPoint<T>) -> EffectiveWeights<T> {
    let ups = omega.upsilon();
    let mut xi = ups[0].clone();
    for u in &ups[1..] {
        xi = xi.hadamard(u);
    }
    EffectiveWeights(xi)
}

/// `exp(-(s - m_k)ᵀ C_k⁻¹ (s - m_k))`.
pub fn gaussian_eval<T: Scalar>(omega: &ParameterPoint<T>, k: usize, s: &[T]) -> T {
    let dims = omega.dims();
    assert!(k < dims.components, "component index {k} out of range");
    assert_eq!(s.len(), dims.state_dim, "state dimension mismatch");
    let mut v: Vec<T> = s.iter().enumerate().map(|(d, &x)| x - omega.means()[(d, k)]).collect();
    let c = &omega.covs()[k];
    c.forward_solve_in_place(&mut v);
    (-dot(&v, &v)).exp()
}

pub fn q_eval<T: Scalar>(omega: &ParameterPoint<T>, s: &[T], a: usize) -> T {
    QFunction::new(omega).q(s, a)
}

pub fn greedy_action<T: Scalar>(omega: &ParameterPoint<T>, s: &[T]) -> usize {
    QFunction::new(omega).greedy_action(s)
}

/// Fraction of `Ξ` entries with `|ξ| > τ`.
pub fn nonzero_fraction<T: Scalar>(omega: &ParameterPoint<T>, tau: T) -> f64 {
    assert!(tau >= T::zero(), "threshold must be non-negative");
    let xi = effective_weights(omega);
    let total = xi.0.as_slice().len();
    let nz = xi.0.as_slice().iter().filter(|x| x.abs() > tau).count();
    nz as f64 / total as f64
}

/// Learnable-parameter count of the pruned model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSize {
    /// Surviving `Ξ` entries plus mean and covariance entries of components
    /// that keep at least one surviving weight.
    pub active: usize,
    pub total: usize,
}

impl ModelSize {
    pub fn fraction(&self) -> f64 {
        self.active as f64 / self.total as f64
    }
}

pub fn model_size<T: Scalar>(omega: &ParameterPoint<T>, tau: T) -> ModelSize {
    let d = omega.dims();
    let xi = effective_weights(omega);
    let per_component = d.state_dim + d.state_dim * (d.state_dim + 1) / 2;
    let mut active = 0;
    for k in 0..d.components {
        let live = xi.0.row(k).iter().filter(|x| x.abs() > tau).count();
        active += live;
        if live > 0 {
            active += per_component;
        }
    }
    ModelSize { active, total: d.components * (d.actions + per_component) }
}

/// Evaluation view of a parameter point with `Ξ`, the component centres and
/// the inverse Cholesky factors precomputed.
pub struct QFunction<'a, T> {
    omega: &'a ParameterPoint<T>,
    xi: EffectiveWeights<T>,
    /// `K × D_s`, component-major copy of the means.
    centers: Vec<T>,
    /// Per component, `L_k⁻¹` packed lower-triangular.
    whiteners: Vec<T>,
}

impl<'a, T: Scalar> QFunction<'a, T> {
    pub fn new(omega: &'a ParameterPoint<T>) -> Self {
        let d = omega.dims();
        let means = omega.means();
        let mut centers = Vec::with_capacity(d.components * d.state_dim);
        for k in 0..d.components {
            centers.extend((0..d.state_dim).map(|i| means[(i, k)]));
        }
        let whiteners = omega.covs().iter().flat_map(|c| c.inverse_cholesky_packed().iter().copied()).collect();
        Self { omega, xi: effective_weights(omega), centers, whiteners }
    }

    pub fn point(&self) -> &'a ParameterPoint<T> {
        self.omega
    }

    pub fn weights(&self) -> &EffectiveWeights<T> {
        &self.xi
    }

    /// Writes `v = s - m_k` and `y = L_k⁻¹ v`; returns `‖y‖² = vᵀ C_k⁻¹ v`.
    #[inline]
    pub fn whiten_into(&self, k: usize, s: &[T], v: &mut [T], y: &mut [T]) -> T {
        let n = s.len();
        let m = &self.centers[k * n..(k + 1) * n];
        for ((vi, &si), &mi) in v.iter_mut().zip(s).zip(m) {
            *vi = si - mi;
        }
        let tri = n * (n + 1) / 2;
        let mut rest = &self.whiteners[k * tri..(k + 1) * tri];
        let mut sq = T::zero();
        for (i, yi) in y.iter_mut().enumerate() {
            let (row, tail) = rest.split_at(i + 1);
            rest = tail;
            let acc = row.iter().zip(&v[..=i]).fold(T::zero(), |acc, (&w, &x)| acc + w * x);
            *yi = acc;
            sq += acc * acc;
        }
        sq
    }

    /// Overwrites `y` with `L_k⁻ᵀ y`, so `L_k⁻ᵀ L_k⁻¹ v = C_k⁻¹ v`.
    #[inline]
    pub fn unwhiten_transpose(&self, k: usize, y: &mut [T]) {
        let n = y.len();
        let tri = n * (n + 1) / 2;
        let w = &self.whiteners[k * tri..(k + 1) * tri];
        // Row i of L⁻¹ touches entries j ≤ i; ascending j reads only rows not yet overwritten.
        for j in 0..n {
            let mut acc = T::zero();
            for i in j..n {
                acc += w[i * (i + 1) / 2 + j] * y[i];
            }
            y[j] = acc;
        }
    }

    /// Writes `𝒢_k(s)` for every component into `out`.
    pub fn gaussians_into(&self, s: &[T], out: &mut [T]) {
        let d = self.omega.dims();
        assert_eq!(s.len(), d.state_dim, "state dimension mismatch");
        assert_eq!(out.len(), d.components);
        let mut v = [T::zero(); 16];
        let mut y = [T::zero(); 16];
        if d.state_dim <= 16 {
            for (k, g) in out.iter_mut().enumerate() {
                *g = (-self.whiten_into(k, s, &mut v[..d.state_dim], &mut y[..d.state_dim])).exp();
            }
        } else {
            let mut v = vec![T::zero(); d.state_dim];
            let mut y = vec![T::zero(); d.state_dim];
            for (k, g) in out.iter_mut().enumerate() {
                *g = (-self.whiten_into(k, s, &mut v, &mut y)).exp();
            }
        }
    }

    pub fn gaussians(&self, s: &[T]) -> Vec<T> {
        let mut g = vec![T::zero(); self.omega.dims().components];
        self.gaussians_into(s, &mut g);
        g
    }

    /// `Σ_k ξ_k(a) g_k` for given component activations.
    pub fn q_from_gaussians(&self, g: &[T], a: usize) -> T {
        let xi = self.xi.as_mat();
        g.iter().enumerate().fold(T::zero(), |acc, (k, &gk)| acc + xi[(k, a)] * gk)
    }

    pub fn q(&self, s: &[T], a: usize) -> T {
        assert!(a < self.omega.dims().actions, "action {a} out of range");
        self.q_from_gaussians(&self.gaussians(s), a)
    }

    pub fn q_values(&self, s: &[T]) -> Vec<T> {
        let d = self.omega.dims();
        assert_eq!(s.len(), d.state_dim, "state dimension mismatch");
        let mut q = vec![T::zero(); d.actions];
        let mut buf = vec![T::zero(); 2 * d.state_dim];
        let (v, y) = buf.split_at_mut(d.state_dim);
        for k in 0..d.components {
            let gk = (-self.whiten_into(k, s, v, y)).exp();
            if gk == T::zero() {
                continue;
            }
            for (a, qa) in q.iter_mut().enumerate() {
                *qa += self.xi.get(k, a) * gk;
            }
        }
        q
    }

    pub fn q_values_from_gaussians(&self, g: &[T]) -> Vec<T> {
        let na = self.omega.dims().actions;
        let mut q = vec![T::zero(); na];
        for (k, &gk) in g.iter().enumerate() {
            if gk == T::zero() {
                continue;
            }
            for (a, qa) in q.iter_mut().enumerate() {
                *qa += self.xi.get(k, a) * gk;
            }
        }
        q
    }

    pub fn greedy_action(&self, s: &[T]) -> usize {
        argmax_first(&self.q_values(s))
    }

    /// `max_a Q(s, a)` with the greedy action.
    pub fn greedy(&self, s: &[T]) -> (usize, T) {
        let q = self.q_values(s);
        let a = argmax_first(&q);
        (a, q[a])
    }
}

/// Smallest index attaining the maximum.
pub fn argmax_first<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Random initial point: uniform means within the state box, `C_k = I`, and
/// weight factors of magnitude in `[u/2, u]` with random sign, `u = K^{-1/(2J)}`.
pub fn init_parameters<T: Scalar>(cfg: &ModelConfig, state_low: &[f64], state_high: &[f64]) -> Result<ParameterPoint<T>> {
    cfg.validate()?;
    if state_low.len() != cfg.state_dim || state_high.len() != cfg.state_dim {
        return Err(Error::Config(format!("state bounds must have length {}", cfg.state_dim)));
    }
    if state_low.iter().zip(state_high).any(|(l, h)| !l.is_finite() || !h.is_finite() || l > h) {
        return Err(Error::Config("state bounds must be finite with low <= high".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
    let k = cfg.components;
    let mut means = Mat::zeros(cfg.state_dim, k);
    for c in 0..k {
        for d in 0..cfg.state_dim {
            let (lo, hi) = (state_low[d], state_high[d]);
            let x = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            means[(d, c)] = T::lit(x);
        }
    }
    let u = (k as f64).powf(-1.0 / (2.0 * cfg.factors as f64));
    let upsilon = (0..cfg.factors)
        .map(|_| {
            Mat::from_fn(k, cfg.actions, |_, _| {
                let mag = rng.gen_range(0.5 * u..=u);
                T::lit(if rng.gen::<bool>() { mag } else { -mag })
            })
        })
        .collect();
    let covs = vec![SpdMatrix::identity(cfg.state_dim); k];
    ParameterPoint::new(upsilon, means, covs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SymMatrix;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn cfg(k: usize, j: usize) -> ModelConfig {
        ModelConfig { components: k, factors: j, state_dim: 2, actions: 3, init_seed: 9 }
    }

    fn random_point(seed: u64, k: usize, j: usize) -> ParameterPoint<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p: ParameterPoint<f64> = init_parameters(&cfg(k, j), &[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        for kk in 0..k {
            let a = Mat::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
            p.set_cov(kk, SpdMatrix::from_mat(a.matmul_t(&a).axpy(1.0, &Mat::identity(2).scale(0.2))).unwrap());
        }
        p
    }

    fn explicit_inverse_gaussian(p: &ParameterPoint<f64>, k: usize, s: &[f64]) -> f64 {
        let c = p.covs()[k].as_mat();
        let det = c[(0, 0)] * c[(1, 1)] - c[(0, 1)] * c[(1, 0)];
        let inv = Mat::from_rows(&[vec![c[(1, 1)] / det, -c[(0, 1)] / det], vec![-c[(1, 0)] / det, c[(0, 0)] / det]]);
        let v: Vec<f64> = (0..2).map(|d| s[d] - p.means()[(d, k)]).collect();
        (-dot(&v, &inv.mat_vec(&v))).exp()
    }

    #[test]
    fn gaussian_cases() {
        let mut p: ParameterPoint<f64> = init_parameters(&cfg(2, 1), &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let m = p.mean(0);
        assert_eq!(gaussian_eval(&p, 0, &m), 1.0);
        *p.means_entry_mut(0, 1) = 0.0;
        *p.means_entry_mut(1, 1) = 0.0;
        assert_relative_eq!(gaussian_eval(&p, 1, &[1.0, 0.0]), 0.3678794412, epsilon = 1e-10);

        let p = random_point(3, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let s = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            for k in 0..4 {
                let g = gaussian_eval(&p, k, &s);
                assert!(g > 0.0 && g <= 1.0);
                assert!((g - explicit_inverse_gaussian(&p, k, &s)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_translation_invariance() {
        let p = random_point(5, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let shift = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let s = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let mut q = p.clone();
            for k in 0..3 {
                for d in 0..2 {
                    *q.means_entry_mut(d, k) += shift[d];
                }
            }
            let s2 = [s[0] + shift[0], s[1] + shift[1]];
            for k in 0..3 {
                assert!((gaussian_eval(&p, k, &s) - gaussian_eval(&q, k, &s2)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn effective_weights_cases() {
        let p = random_point(7, 3, 1);
        assert_eq!(effective_weights(&p).0, p.upsilon()[0]);

        let mut p = random_point(7, 3, 2);
        for k in 0..3 {
            for a in 0..3 {
                *p.upsilon_entry_mut(0, k, a) = 2.0;
                *p.upsilon_entry_mut(1, k, a) = 3.0;
            }
        }
        assert!(effective_weights(&p).0.as_slice().iter().all(|&x| x == 6.0));

        let p = random_point(8, 4, 3);
        let xi = effective_weights(&p);
        for k in 0..4 {
            for a in 0..3 {
                let prod = p.upsilon()[0][(k, a)] * p.upsilon()[1][(k, a)] * p.upsilon()[2][(k, a)];
                assert!((xi.get(k, a) - prod).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn q_eval_cases() {
        let mut p: ParameterPoint<f64> = init_parameters(&cfg(1, 2), &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        *p.upsilon_entry_mut(0, 0, 1) = 2.0;
        *p.upsilon_entry_mut(1, 0, 1) = 3.0;
        let m = p.mean(0);
        assert_eq!(q_eval(&p, &m, 1), 6.0);

        let mut z = random_point(9, 4, 3);
        for j in 0..3 {
            for k in 0..4 {
                for a in 0..3 {
                    *z.upsilon_entry_mut(j, k, a) = 0.0;
                }
            }
        }
        assert_eq!(q_eval(&z, &[0.3, -0.2], 2), 0.0);

        // Literal double sum Σ_k Π_j υ · 𝒢 against the QFunction path.
        let p = random_point(10, 5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let s = [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)];
            let a = rng.gen_range(0..3);
            let mut naive = 0.0;
            for k in 0..5 {
                let mut w = 1.0;
                for j in 0..3 {
                    w *= p.upsilon()[j][(k, a)];
                }
                naive += w * explicit_inverse_gaussian(&p, k, &s);
            }
            let q = q_eval(&p, &s, a);
            assert!((q - naive).abs() <= 1e-10 * naive.abs().max(1e-300));
            let xi = effective_weights(&p);
            let two_paths: f64 = (0..5).map(|k| xi.get(k, a) * gaussian_eval(&p, k, &s)).sum();
            assert!((q - two_paths).abs() <= 1e-12);
        }
    }

    #[test]
    fn greedy_tie_break_and_sweep() {
        let mut p = random_point(12, 2, 1);
        for k in 0..2 {
            for a in 0..3 {
                *p.upsilon_entry_mut(0, k, a) = 1.0;
            }
        }
        assert_eq!(greedy_action(&p, &[0.0, 0.0]), 0);
        *p.upsilon_entry_mut(0, 0, 2) = 2.0;
        assert_eq!(greedy_action(&p, &p.mean(0)), 2);

        let p = random_point(13, 6, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..50 {
            let s = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let qs: Vec<f64> = (0..3).map(|a| q_eval(&p, &s, a)).collect();
            let mut best = 0;
            for a in 1..3 {
                if qs[a] > qs[best] {
                    best = a;
                }
            }
            assert_eq!(greedy_action(&p, &s), best);
        }
    }

    #[test]
    fn scaling_one_factor_scales_q_and_keeps_argmax() {
        let p = random_point(15, 5, 3);
        let mut q = p.clone();
        for k in 0..5 {
            for a in 0..3 {
                *q.upsilon_entry_mut(1, k, a) *= 2.5;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..30 {
            let s = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            for a in 0..3 {
                assert_relative_eq!(q_eval(&q, &s, a), 2.5 * q_eval(&p, &s, a), max_relative = 1e-12);
            }
            assert_eq!(greedy_action(&p, &s), greedy_action(&q, &s));
        }
    }

    #[test]
    fn nonzero_fraction_cases() {
        let mut p = random_point(17, 4, 2);
        assert_eq!(nonzero_fraction(&p, 0.0), 1.0);
        for k in 0..4 {
            for a in 0..3 {
                *p.upsilon_entry_mut(0, k, a) = 1.0;
                *p.upsilon_entry_mut(1, k, a) = if (k * 3 + a) % 2 == 0 { 1e-9 } else { 1.0 };
            }
        }
        assert_eq!(nonzero_fraction(&p, 1e-6), 0.5);
        let mut taus = vec![0.0, 1e-12, 1e-9, 1e-6, 0.5, 1.0, 2.0];
        taus.sort_by(f64::total_cmp);
        let fr: Vec<f64> = taus.iter().map(|&t| nonzero_fraction(&p, t)).collect();
        assert!(fr.windows(2).all(|w| w[0] >= w[1]));

        for k in 0..4 {
            for a in 0..3 {
                *p.upsilon_entry_mut(0, k, a) = 0.0;
            }
        }
        assert_eq!(nonzero_fraction(&p, 1e-4), 0.0);
        assert_eq!(model_size(&p, 1e-4).active, 0);
    }

    #[test]
    fn model_size_counts_dead_components() {
        let mut p = random_point(18, 2, 1);
        for a in 0..3 {
            *p.upsilon_entry_mut(0, 0, a) = 1.0;
            *p.upsilon_entry_mut(0, 1, a) = 0.0;
        }
        // D_s = 2: 2 mean + 3 covariance entries per component.
        let size = model_size(&p, 1e-4);
        assert_eq!(size.total, 2 * (3 + 5));
        assert_eq!(size.active, 3 + 5);
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a: ParameterPoint<f64> = init_parameters(&cfg(5, 3), &[-1.0, 0.0], &[1.0, 2.0]).unwrap();
        let b: ParameterPoint<f64> = init_parameters(&cfg(5, 3), &[-1.0, 0.0], &[1.0, 2.0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.means().cols(), 5);
        assert_eq!(a.covs().len(), 5);
        assert!(a.covs().iter().all(|c| c.as_sym() == &SymMatrix::identity(2)));
        assert_eq!(nonzero_fraction(&a, DEFAULT_SPARSITY_TAU), 1.0);
    }

    #[test]
    fn init_means_within_bounds() {
        let cfg = ModelConfig { components: 2500, factors: 3, state_dim: 4, actions: 2, init_seed: 1 };
        let lo = [-2.4, -4.0, -0.21, -4.0];
        let hi = [2.4, 4.0, 0.21, 4.0];
        let p: ParameterPoint<f64> = init_parameters(&cfg, &lo, &hi).unwrap();
        let m = p.means();
        for k in 0..2500 {
            for d in 0..4 {
                assert!(m[(d, k)] >= lo[d] && m[(d, k)] <= hi[d]);
            }
        }
        // Each coordinate's sample mean sits near the box centre (±4σ of U[lo,hi]).
        for d in 0..4 {
            let mean: f64 = (0..2500).map(|k| m[(d, k)]).sum::<f64>() / 2500.0;
            let sd = (hi[d] - lo[d]) / 12f64.sqrt() / 50.0;
            assert!(mean.abs() < 4.0 * sd);
        }
    }

    #[test]
    fn init_rejects_bad_bounds() {
        assert!(init_parameters::<f64>(&cfg(2, 1), &[0.0, f64::INFINITY], &[1.0, 1.0]).is_err());
        assert!(init_parameters::<f64>(&cfg(2, 1), &[0.0], &[1.0]).is_err());
        let bad = ModelConfig { actions: 1, ..cfg(2, 1) };
        assert!(bad.validate().is_err());
    }
}
