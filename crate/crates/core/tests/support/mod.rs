//! Random instances shared by the integration and acceptance suites.
#![allow(dead_code)]

use rand::Rng;

use sgmm_core::linalg::{Mat, SpdMatrix, SymMatrix};
use sgmm_core::loss::Transition;
use sgmm_core::manifold::{Dims, ParameterPoint, TangentVector};

pub fn random_dims(rng: &mut impl Rng) -> Dims {
    Dims {
        components: rng.gen_range(1..=6),
        factors: rng.gen_range(1..=3),
        state_dim: rng.gen_range(1..=4),
        actions: rng.gen_range(1..=3),
    }
}

pub fn random_sym(rng: &mut impl Rng, n: usize, scale: f64) -> SymMatrix<f64> {
    SymMatrix::from_mat(Mat::from_fn(n, n, |_, _| rng.gen_range(-scale..scale)))
}

/// `A Aᵀ + shift I` with entries of `A` uniform in `[-1, 1]`.
pub fn random_spd(rng: &mut impl Rng, n: usize, shift: f64) -> SpdMatrix<f64> {
    let a = Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    SpdMatrix::from_mat(a.matmul_t(&a).axpy(shift, &Mat::identity(n))).unwrap()
}

pub fn random_point(rng: &mut impl Rng, d: Dims) -> ParameterPoint<f64> {
    ParameterPoint::new(
        (0..d.factors).map(|_| Mat::from_fn(d.components, d.actions, |_, _| rng.gen_range(-1.2..1.2))).collect(),
        Mat::from_fn(d.state_dim, d.components, |_, _| rng.gen_range(-1.0..1.0)),
        (0..d.components).map(|_| random_spd(rng, d.state_dim, 0.3)).collect(),
    )
    .unwrap()
}

pub fn random_tangent(rng: &mut impl Rng, d: Dims) -> TangentVector<f64> {
    TangentVector::new(
        (0..d.factors).map(|_| Mat::from_fn(d.components, d.actions, |_, _| rng.gen_range(-1.0..1.0))).collect(),
        Mat::from_fn(d.state_dim, d.components, |_, _| rng.gen_range(-1.0..1.0)),
        (0..d.components).map(|_| random_sym(rng, d.state_dim, 1.0)).collect(),
    )
    .unwrap()
}

/// A state near a randomly chosen mean so that some Gaussians are far from zero.
pub fn random_state(rng: &mut impl Rng, p: &ParameterPoint<f64>) -> Vec<f64> {
    let k = rng.gen_range(0..p.dims().components);
    p.mean(k).iter().map(|m| m + rng.gen_range(-0.8..0.8)).collect()
}

pub fn random_batch(rng: &mut impl Rng, p: &ParameterPoint<f64>, n: usize) -> Vec<Transition<f64>> {
    (0..n)
        .map(|_| Transition {
            s: random_state(rng, p),
            a: rng.gen_range(0..p.dims().actions),
            r: rng.gen_range(-1.0..1.0),
            s_next: random_state(rng, p),
            terminal: rng.gen_bool(0.2),
        })
        .collect()
}

/// Tangent vector with only the named slot family populated.
pub fn restrict(v: &TangentVector<f64>, family: Family) -> TangentVector<f64> {
    match family {
        Family::Upsilon => v.upsilon_part(),
        Family::Means => v.means_part(),
        Family::Covs => v.covs_part(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Upsilon,
    Means,
    Covs,
}

pub const FAMILIES: [Family; 3] = [Family::Upsilon, Family::Means, Family::Covs];

pub fn frob_rel(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    let diff = a.axpy(-1.0, b).frobenius_norm();
    diff / b.frobenius_norm().max(1e-300)
}
