use serde::{Deserialize, Serialize};

use super::rng::{SimRng, Stream};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// How the appearance image is laid out relative to the structure image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundTruth {
    /// Appearance position `r` corresponds to structure position `r`.
    Identity,
    /// A uniformly random permutation drawn from the scene stream.
    Random,
}

impl std::str::FromStr for GroundTruth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(GroundTruth::Identity),
            "random" => Ok(GroundTruth::Random),
            _ => Err(Error::Parse(format!(
                "ground truth must be identity or random, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    /// Positions per image.
    pub n: usize,
    /// Region count; label 0 is background, the rest are object parts.
    pub labels: usize,
    pub d_latent: usize,
    /// Standard deviation of the additive per-channel feature noise.
    pub sigma: f64,
    /// Weight of the per-position detail vector relative to the unit prototype.
    pub detail: f64,
    pub ground_truth: GroundTruth,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            n: 64,
            labels: 4,
            d_latent: 32,
            sigma: 0.05,
            detail: 0.5,
            ground_truth: GroundTruth::Random,
        }
    }
}

/// A labelled structure/appearance pair with known correspondence.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene<T> {
    pub params: SceneParams,
    pub seed: u64,
    /// Region id of each structure position.
    pub labels_str: Vec<usize>,
    /// Region id of each appearance position, `labels_str[gt_map[r]]`.
    pub labels_app: Vec<usize>,
    /// Appearance position `r` depicts structure position `gt_map[r]`.
    pub gt_map: Vec<usize>,
    /// One unit-norm latent vector per label, mutually orthogonal.
    pub prototypes: Matrix<T>,
    pub z_str: Matrix<T>,
    pub z_app: Matrix<T>,
}

/// Builds a scene.
///
/// Labels are assigned in contiguous, equal-size blocks. The noiseless
/// latent of structure position `c` is `prototype(label(c)) + detail · u_c`
/// rescaled to unit norm, with `u_c` a Gaussian vector of expected unit norm,
/// so that distinct positions stay distinguishable. Then
/// `Z_str[c] = base_c + σ·ε` and `Z_app[r] = Z_str[gt(r)] + σ·ε′`.
pub fn generate_scene<T: Scalar>(params: &SceneParams, seed: u64) -> Result<Scene<T>> {
    let SceneParams {
        n,
        labels,
        d_latent,
        sigma,
        detail,
        ground_truth,
    } = *params;
    if n < 2 {
        return Err(Error::BadDimensions(format!("scene needs n >= 2, got {n}")));
    }
    if labels == 0 || n % labels != 0 {
        return Err(Error::BadDimensions(format!(
            "n = {n} must be a positive multiple of the label count {labels}"
        )));
    }
    if d_latent < labels {
        return Err(Error::BadDimensions(format!(
            "d_latent = {d_latent} is smaller than the label count {labels}"
        )));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) || !(detail >= 0.0 && detail.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sigma and detail must be finite and >= 0 (got {sigma}, {detail})"
        )));
    }

    let mut scene_rng = SimRng::new(seed, Stream::Scene);
    let draws = scene_rng.gaussians(labels * d_latent);
    let prototypes = super::orthonormal_rows(&draws, labels, d_latent)?;

    let per_label = n / labels;
    let labels_str: Vec<usize> = (0..n).map(|c| c / per_label).collect();

    let detail_scale = detail / (d_latent as f64).sqrt();
    let mut base = Vec::with_capacity(n * d_latent);
    for &label in &labels_str {
        let u = scene_rng.gaussians(d_latent);
        let proto = &prototypes[label * d_latent..(label + 1) * d_latent];
        let row: Vec<f64> = proto
            .iter()
            .zip(&u)
            .map(|(p, u)| p + detail_scale * u)
            .collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        base.extend(row.iter().map(|v| v / norm));
    }

    let mut gt_map: Vec<usize> = (0..n).collect();
    if ground_truth == GroundTruth::Random {
        scene_rng.shuffle(&mut gt_map);
    }
    let labels_app = gt_map.iter().map(|&c| labels_str[c]).collect();

    let mut noise = SimRng::new(seed, Stream::Noise);
    let mut z_str = base;
    if sigma > 0.0 {
        for v in z_str.iter_mut() {
            *v += sigma * noise.gaussian();
        }
    }
    let mut z_app = Vec::with_capacity(n * d_latent);
    for &c in &gt_map {
        let src = &z_str[c * d_latent..(c + 1) * d_latent];
        if sigma > 0.0 {
            z_app.extend(src.iter().map(|v| v + sigma * noise.gaussian()));
        } else {
            z_app.extend_from_slice(src);
        }
    }

    let to_t = |v: Vec<f64>, rows: usize| {
        Matrix::from_vec(rows, d_latent, v.into_iter().map(T::from_acc).collect())
    };
    Ok(Scene {
        params: *params,
        seed,
        labels_str,
        labels_app,
        gt_map,
        prototypes: to_t(prototypes, labels)?,
        z_str: to_t(z_str, n)?,
        z_app: to_t(z_app, n)?,
    })
}
