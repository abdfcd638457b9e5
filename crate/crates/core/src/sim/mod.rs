//! Seeded synthetic scenes with known correspondence, and a toy multi-step
//! transfer loop comparing baseline and rearranged attention.
//!
//! The harness replaces the diffusion model with a linear stand-in: labelled
//! latent features per image, shared projection maps producing queries, keys
//! and values, and re-projection of each step's attention output as the next
//! step's queries.

mod metrics;
mod projection;
pub mod rng;
mod run;
mod scene;

pub use metrics::{alignment_accuracy, region_purity};
pub use projection::{project_features, Projected, ProjectionKind, ProjectionPair};
pub use run::{
    foreground_leakage, run_mode, run_simulation, scene_aggregation, Mode, ModeOutcome, RunParams,
    SimConfig, SimReport,
};
pub use scene::{generate_scene, GroundTruth, Scene, SceneParams};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Runs `config` once per seed, in parallel; results keep the seed order.
pub fn run_suite<T: Scalar>(config: &SimConfig, seeds: &[u64]) -> Result<Vec<SimReport>> {
    seeds
        .par_iter()
        .map(|&seed| config.with_seed(seed).run::<T>())
        .collect()
}

/// Modified Gram-Schmidt over `rows` vectors of length `len`, in order.
pub(crate) fn orthonormal_rows(src: &[f64], rows: usize, len: usize) -> Result<Vec<f64>> {
    debug_assert_eq!(src.len(), rows * len);
    let mut out = src.to_vec();
    for i in 0..rows {
        for j in 0..i {
            let (done, rest) = out.split_at_mut(i * len);
            let prev = &done[j * len..(j + 1) * len];
            let cur = &mut rest[..len];
            let dot: f64 = prev.iter().zip(cur.iter()).map(|(a, b)| a * b).sum();
            for (c, p) in cur.iter_mut().zip(prev) {
                *c -= dot * p;
            }
        }
        let cur = &mut out[i * len..(i + 1) * len];
        let norm = cur.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-10 {
            return Err(Error::BadDimensions(format!(
                "random draw {i} is numerically dependent on earlier rows"
            )));
        }
        cur.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(out)
}
