//! JSON model checkpoints.
//!
//! Layout: `{version, config{K, J, D_s, N_a}, upsilon[J][K][N_a], means[D_s][K],
//! covs[K][D_s][D_s]}`. Values pass through `f64`, whose decimal form
//! round-trips exactly, so a loaded model reproduces Q-values bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, SpdMatrix};
use crate::manifold::ParameterPoint;
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointShape {
    #[serde(rename = "K")]
    pub components: usize,
    #[serde(rename = "J")]
    pub factors: usize,
    #[serde(rename = "D_s")]
    pub state_dim: usize,
    #[serde(rename = "N_a")]
    pub actions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: CheckpointShape,
    pub upsilon: Vec<Vec<Vec<f64>>>,
    pub means: Vec<Vec<f64>>,
    pub covs: Vec<Vec<Vec<f64>>>,
}

fn rows_f64<T: Scalar>(m: &Mat<T>) -> Vec<Vec<f64>> {
    m.to_rows().into_iter().map(|r| r.into_iter().map(Scalar::as_f64).collect()).collect()
}

fn rows_t<T: Scalar>(rows: &[Vec<f64>], shape: (usize, usize), what: &str) -> Result<Vec<Vec<T>>> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(Error::Checkpoint(format!("{what} must be {}x{}", shape.0, shape.1)));
    }
    Ok(rows.iter().map(|r| r.iter().map(|&x| T::lit(x)).collect()).collect())
}

impl Checkpoint {
    pub fn from_point<T: Scalar>(omega: &ParameterPoint<T>) -> Self {
        let d = omega.dims();
        Self {
            version: CHECKPOINT_VERSION,
            config: CheckpointShape {
                components: d.components,
                factors: d.factors,
                state_dim: d.state_dim,
                actions: d.actions,
            },
            upsilon: omega.upsilon().iter().map(rows_f64).collect(),
            means: rows_f64(omega.means()),
            covs: omega.covs().iter().map(|c| rows_f64(c.as_mat())).collect(),
        }
    }

    pub fn to_point<T: Scalar>(&self) -> Result<ParameterPoint<T>> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", self.version)));
        }
        let c = self.config;
        if self.upsilon.len() != c.factors {
            return Err(Error::Checkpoint(format!("expected {} weight factors", c.factors)));
        }
        let upsilon = self
            .upsilon
            .iter()
            .map(|u| Ok(Mat::from_rows(&rows_t::<T>(u, (c.components, c.actions), "upsilon")?)))
            .collect::<Result<Vec<_>>>()?;
        let means = Mat::from_rows(&rows_t::<T>(&self.means, (c.state_dim, c.components), "means")?);
        if self.covs.len() != c.components {
            return Err(Error::Checkpoint(format!("expected {} covariances", c.components)));
        }
        let covs = self
            .covs
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let rows = rows_t::<T>(m, (c.state_dim, c.state_dim), "covariance")?;
                for i in 0..c.state_dim {
                    for j in 0..i {
                        if rows[i][j] != rows[j][i] {
                            return Err(Error::Checkpoint(format!("covariance {k} is not symmetric")));
                        }
                    }
                }
                SpdMatrix::from_rows(&rows)
                    .map_err(|_| Error::Checkpoint(format!("covariance {k} is not positive definite")))
            })
            .collect::<Result<Vec<_>>>()?;
        ParameterPoint::new(upsilon, means, covs).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

pub fn to_json<T: Scalar>(omega: &ParameterPoint<T>) -> String {
    serde_json::to_string(&Checkpoint::from_point(omega)).expect("checkpoint serialization cannot fail")
}

pub fn from_json<T: Scalar>(text: &str) -> Result<ParameterPoint<T>> {
    let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    ck.to_point()
}
