//! Sparse Gaussian-mixture Q-functions (S-GMM-QFs) trained online by
//! Riemannian Adam on the product manifold of mixture weights, means and
//! SPD covariances.
//!
//! The numerical core (linear algebra, manifold, model, loss, optimizer and
//! replay buffer) is generic over the [`Scalar`] type; the aliases at the
//! bottom of this file pin the common `f64` and `f32` instantiations.
//! Environments always simulate in `f64`.

pub mod agent;
pub mod checkpoint;
pub mod env;
pub mod error;
pub mod linalg;
pub mod loss;
pub mod manifold;
pub mod model;
pub mod radam;
pub mod replay;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mat64 = linalg::Mat<f64>;
pub type SymMatrix64 = linalg::SymMatrix<f64>;
pub type SpdMatrix64 = linalg::SpdMatrix<f64>;
pub type ParameterPoint64 = manifold::ParameterPoint<f64>;
pub type TangentVector64 = manifold::TangentVector<f64>;
pub type Transition64 = loss::Transition<f64>;
pub type RiemannianAdam64 = radam::RiemannianAdam<f64>;

pub type SymMatrix32 = linalg::SymMatrix<f32>;
pub type SpdMatrix32 = linalg::SpdMatrix<f32>;
pub type ParameterPoint32 = manifold::ParameterPoint<f32>;
pub type TangentVector32 = manifold::TangentVector<f32>;
