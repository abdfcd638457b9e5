use serde::{Deserialize, Serialize};

use super::rng::{SimRng, Stream};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul, Matrix};

/// How the query/key/value maps are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionKind {
    /// Independent i.i.d. `N(0, 1/d_latent)` entries for each map.
    Random,
    /// Independent random matrices with orthonormal rows (`d >= d_latent`).
    Orthonormal,
    /// Like `Random`, but `w_k` is forced equal to `w_q`.
    Tied,
    /// All three maps are the identity (`d == d_latent`).
    Identity,
}

impl std::str::FromStr for ProjectionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(ProjectionKind::Random),
            "orthonormal" | "orthinit" => Ok(ProjectionKind::Orthonormal),
            "tied" => Ok(ProjectionKind::Tied),
            "identity" => Ok(ProjectionKind::Identity),
            _ => Err(Error::Parse(format!("unknown projection kind {s:?}"))),
        }
    }
}

/// Shared `d_latent x d` layer weights applied to both images.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionPair<T> {
    pub w_q: Matrix<T>,
    pub w_k: Matrix<T>,
    pub w_v: Matrix<T>,
    pub seed: u64,
}

/// Queries, keys and values of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected<T> {
    pub q: Matrix<T>,
    pub k: Matrix<T>,
    pub v: Matrix<T>,
}

impl<T: Scalar> ProjectionPair<T> {
    pub fn new(kind: ProjectionKind, d_latent: usize, d: usize, seed: u64) -> Result<Self> {
        if d_latent == 0 || d == 0 {
            return Err(Error::BadDimensions(
                "projection dimensions must be positive".into(),
            ));
        }
        match kind {
            ProjectionKind::Random => Ok(Self::random(d_latent, d, seed)),
            ProjectionKind::Tied => Ok(Self::random(d_latent, d, seed).tied()),
            ProjectionKind::Orthonormal => Self::orthonormal(d_latent, d, seed),
            ProjectionKind::Identity => {
                if d != d_latent {
                    return Err(Error::BadDimensions(format!(
                        "identity projection needs d == d_latent ({d} vs {d_latent})"
                    )));
                }
                let id = Matrix::identity(d);
                Ok(Self {
                    w_q: id.clone(),
                    w_k: id.clone(),
                    w_v: id,
                    seed,
                })
            }
        }
    }

    /// Draws `w_q`, `w_k`, `w_v` in that order from the projection stream.
    pub fn random(d_latent: usize, d: usize, seed: u64) -> Self {
        let mut rng = SimRng::new(seed, Stream::Projection);
        let scale = 1.0 / (d_latent as f64).sqrt();
        let mut draw = || {
            let v = rng.gaussians(d_latent * d);
            Matrix::from_parts(
                d_latent,
                d,
                v.iter().map(|x| T::from_acc(x * scale)).collect(),
            )
        };
        let (w_q, w_k, w_v) = (draw(), draw(), draw());
        Self {
            w_q,
            w_k,
            w_v,
            seed,
        }
    }

    /// Each map has orthonormal rows, so `W·Wᵀ = I` and dot products between
    /// latent vectors are preserved by the query map.
    pub fn orthonormal(d_latent: usize, d: usize, seed: u64) -> Result<Self> {
        if d < d_latent {
            return Err(Error::BadDimensions(format!(
                "orthonormal projection needs d >= d_latent ({d} < {d_latent})"
            )));
        }
        let mut rng = SimRng::new(seed, Stream::Projection);
        let mut draw = || -> Result<Matrix<T>> {
            let v = rng.gaussians(d_latent * d);
            let rows = super::orthonormal_rows(&v, d_latent, d)?;
            Ok(Matrix::from_parts(
                d_latent,
                d,
                rows.into_iter().map(T::from_acc).collect(),
            ))
        };
        let (w_q, w_k, w_v) = (draw()?, draw()?, draw()?);
        Ok(Self {
            w_q,
            w_k,
            w_v,
            seed,
        })
    }

    /// Control configuration: keys use the query map.
    pub fn tied(mut self) -> Self {
        self.w_k = self.w_q.clone();
        self
    }

    pub fn d_latent(&self) -> usize {
        self.w_q.rows()
    }

    pub fn d(&self) -> usize {
        self.w_q.cols()
    }
}

/// `Q = Z·w_q`, `K = Z·w_k`, `V = Z·w_v`.
pub fn project_features<T: Scalar>(
    z: &Matrix<T>,
    proj: &ProjectionPair<T>,
) -> Result<Projected<T>> {
    if z.cols() != proj.d_latent() {
        return Err(Error::shape(format!(
            "features have {} channels, projections expect {}",
            z.cols(),
            proj.d_latent()
        )));
    }
    Ok(Projected {
        q: matmul(z, &proj.w_q, false)?,
        k: matmul(z, &proj.w_k, false)?,
        v: matmul(z, &proj.w_v, false)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    type M = Matrix<f64>;

    #[test]
    fn identity_projection_copies_features() {
        let z = M::from_rows(&[[1.0, 2.0], [3.0, -4.0]]);
        let p = ProjectionPair::new(ProjectionKind::Identity, 2, 2, 0).unwrap();
        let out = project_features(&z, &p).unwrap();
        assert_eq!((&out.q, &out.k, &out.v), (&z, &z, &z));
    }

    #[test]
    fn tied_keys_equal_queries() {
        let z = M::from_rows(&[[1.0, 2.0, 0.5], [3.0, -4.0, 1.0]]);
        let p = ProjectionPair::<f64>::new(ProjectionKind::Tied, 3, 4, 9).unwrap();
        let out = project_features(&z, &p).unwrap();
        assert_eq!(out.q, out.k);
        assert_ne!(out.q, out.v);
    }

    #[test]
    fn seeds_give_different_maps() {
        let a = ProjectionPair::<f32>::random(8, 8, 7);
        let b = ProjectionPair::<f32>::random(8, 8, 8);
        assert_ne!(a.w_q, b.w_q);
        assert_ne!(a.w_q, a.w_k);
        assert_eq!(a, ProjectionPair::random(8, 8, 7));
    }

    #[test]
    fn orthonormal_rows_hold() {
        let p = ProjectionPair::<f64>::orthonormal(6, 9, 3).unwrap();
        let g = matmul(&p.w_q, &p.w_q, true).unwrap();
        assert!(g.max_abs_diff(&M::identity(6)).unwrap() < 1e-12);
        assert!(ProjectionPair::<f64>::orthonormal(9, 6, 3).is_err());
    }

    #[test]
    fn shape_checked() {
        let p = ProjectionPair::<f64>::random(3, 3, 0);
        assert!(matches!(
            project_features(&M::zeros(2, 4), &p),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
