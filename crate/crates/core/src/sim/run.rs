use serde::{Deserialize, Serialize};

use super::metrics::{alignment_accuracy, region_purity};
use super::projection::{project_features, Projected, ProjectionKind, ProjectionPair};
use super::scene::{generate_scene, GroundTruth, Scene, SceneParams};
use crate::align::{compute_alignment, qq_align_pipeline, AggregationMatrix};
use crate::attention::{
    appearance_attention, cross_image_attention, rearrange_kv, rearranged_attention,
};
use crate::diagnostics::leakage_mass;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul, Matrix};

/// Which attention kernel drives the output image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Output queries against the raw appearance keys and values.
    Baseline,
    /// Output queries against keys and values rearranged by query-query alignment.
    Qalign,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub steps: usize,
    pub k: usize,
    pub contrast: f64,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            steps: 1,
            k: 1,
            contrast: 1.0,
        }
    }
}

/// Final-step state of one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeOutcome<T> {
    /// Attention weight each output row places on each appearance position.
    pub appearance_map: Matrix<T>,
    pub output: Matrix<T>,
    pub leakage: f64,
    pub purity: f64,
}

/// Everything needed to regenerate a run, echoed into its report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub n: usize,
    pub labels: usize,
    pub d_latent: usize,
    pub d: usize,
    pub sigma: f64,
    pub detail: f64,
    pub ground_truth: GroundTruth,
    pub projection: ProjectionKind,
    pub steps: usize,
    pub k: usize,
    pub contrast: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let scene = SceneParams::default();
        let run = RunParams::default();
        Self {
            seed: 0,
            n: scene.n,
            labels: scene.labels,
            d_latent: scene.d_latent,
            d: 32,
            sigma: scene.sigma,
            detail: scene.detail,
            ground_truth: scene.ground_truth,
            projection: ProjectionKind::Random,
            steps: run.steps,
            k: run.k,
            contrast: run.contrast,
        }
    }
}

impl SimConfig {
    pub fn scene_params(&self) -> SceneParams {
        SceneParams {
            n: self.n,
            labels: self.labels,
            d_latent: self.d_latent,
            sigma: self.sigma,
            detail: self.detail,
            ground_truth: self.ground_truth,
        }
    }

    pub fn run_params(&self) -> RunParams {
        RunParams {
            steps: self.steps,
            k: self.k,
            contrast: self.contrast,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    /// Generates the scene and projections from `seed` and runs both modes.
    pub fn run<T: Scalar>(&self) -> Result<SimReport> {
        let scene = generate_scene::<T>(&self.scene_params(), self.seed)?;
        let proj = ProjectionPair::new(self.projection, self.d_latent, self.d, self.seed)?;
        let mut report = run_simulation(&scene, &proj, &self.run_params())?;
        report.config = Some(*self);
        Ok(report)
    }
}

/// Metrics of one seeded run. Field order is the JSON key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub seed: u64,
    pub steps: usize,
    pub top1_accuracy_qq: f64,
    pub top1_accuracy_qk: f64,
    pub leakage_baseline: f64,
    pub leakage_qalign: f64,
    pub purity_baseline: f64,
    pub purity_qalign: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config: Option<SimConfig>,
}

/// Runs both modes for `params.steps` steps and reports accuracy, leakage and purity.
///
/// Step 0 uses `Q_out = Q_str`; afterwards `Q_out ← O·w_q`, re-projecting the
/// attention output as if it were the next latent (requires `d == d_latent`).
/// Leakage and purity are read from the final step; accuracies come from the
/// query-query alignment `Q_app·Q_strᵀ` and the query-key alignment `K_app·Q_strᵀ`.
pub fn run_simulation<T: Scalar>(
    scene: &Scene<T>,
    proj: &ProjectionPair<T>,
    params: &RunParams,
) -> Result<SimReport> {
    let structure = project_features(&scene.z_str, proj)?;
    let appearance = project_features(&scene.z_app, proj)?;

    let qq = compute_alignment(&appearance.q, &structure.q)?;
    let qk = compute_alignment(&appearance.k, &structure.q)?;
    let top1_accuracy_qq = alignment_accuracy(&qq, &scene.gt_map)?;
    let top1_accuracy_qk = alignment_accuracy(&qk, &scene.gt_map)?;

    let baseline = run_projected(scene, proj, &structure, &appearance, params, Mode::Baseline)?;
    let qalign = run_projected(scene, proj, &structure, &appearance, params, Mode::Qalign)?;

    Ok(SimReport {
        seed: scene.seed,
        steps: params.steps,
        top1_accuracy_qq,
        top1_accuracy_qk,
        leakage_baseline: baseline.leakage,
        leakage_qalign: qalign.leakage,
        purity_baseline: baseline.purity,
        purity_qalign: qalign.purity,
        config: None,
    })
}

/// Runs a single mode.
pub fn run_mode<T: Scalar>(
    scene: &Scene<T>,
    proj: &ProjectionPair<T>,
    params: &RunParams,
    mode: Mode,
) -> Result<ModeOutcome<T>> {
    let structure = project_features(&scene.z_str, proj)?;
    let appearance = project_features(&scene.z_app, proj)?;
    run_projected(scene, proj, &structure, &appearance, params, mode)
}

fn run_projected<T: Scalar>(
    scene: &Scene<T>,
    proj: &ProjectionPair<T>,
    structure: &Projected<T>,
    appearance: &Projected<T>,
    params: &RunParams,
    mode: Mode,
) -> Result<ModeOutcome<T>> {
    if params.steps == 0 {
        return Err(Error::InvalidParameter("steps must be >= 1".into()));
    }
    if params.steps > 1 && proj.d() != proj.d_latent() {
        return Err(Error::BadDimensions(format!(
            "re-projecting outputs over several steps needs d == d_latent ({} vs {})",
            proj.d(),
            proj.d_latent()
        )));
    }

    let p_prime = match mode {
        Mode::Baseline => None,
        Mode::Qalign => Some(qq_align_pipeline(&appearance.q, &structure.q, params.k)?),
    };
    let rkv = p_prime
        .as_ref()
        .map(|p| rearrange_kv(p, &appearance.k, &appearance.v))
        .transpose()?;

    let mut q_out = structure.q.clone();
    let mut last = None;
    for step in 0..params.steps {
        let out = match &rkv {
            None => cross_image_attention(&q_out, &appearance.k, &appearance.v, params.contrast)?,
            Some(rkv) => rearranged_attention(&q_out, rkv, params.contrast)?,
        };
        if step + 1 < params.steps {
            q_out = matmul(&out.output, &proj.w_q, false)?;
        }
        last = Some(out);
    }
    let last = last.expect("at least one step");

    let appearance_map = match &p_prime {
        None => last.map.without_grid(),
        Some(p) => appearance_attention(&last.map, p)?,
    };
    let leakage = foreground_leakage(&appearance_map, &scene.labels_str, &scene.labels_app)?;
    let purity = region_purity(&appearance_map, &scene.labels_str, &scene.labels_app)?;
    Ok(ModeOutcome {
        appearance_map,
        output: last.output,
        leakage,
        purity,
    })
}

/// Leakage of object rows (label ≥ 1): attention mass falling outside the
/// appearance positions of the row's own part, averaged over all object rows.
/// With a single label every row counts.
pub fn foreground_leakage<T: Scalar>(
    map: &Matrix<T>,
    labels_str: &[usize],
    labels_app: &[usize],
) -> Result<f64> {
    let n_labels = labels_str.iter().copied().max().map_or(0, |m| m + 1);
    let first = if n_labels > 1 { 1 } else { 0 };
    let mut weighted = 0.0;
    let mut count = 0usize;
    for label in first..n_labels {
        let rows: Vec<usize> = (0..labels_str.len())
            .filter(|&r| labels_str[r] == label)
            .collect();
        let region: Vec<usize> = (0..labels_app.len())
            .filter(|&j| labels_app[j] == label)
            .collect();
        if rows.is_empty() {
            continue;
        }
        weighted += rows.len() as f64 * leakage_mass(map, &rows, &region)?;
        count += rows.len();
    }
    if count == 0 {
        return Err(Error::EmptySelection("foreground rows"));
    }
    Ok(weighted / count as f64)
}

/// Convenience for inspecting the aggregation a scene produces.
pub fn scene_aggregation<T: Scalar>(
    scene: &Scene<T>,
    proj: &ProjectionPair<T>,
    k: usize,
) -> Result<AggregationMatrix<T>> {
    let s = project_features(&scene.z_str, proj)?;
    let a = project_features(&scene.z_app, proj)?;
    qq_align_pipeline(&a.q, &s.q, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(projection: ProjectionKind, sigma: f64, gt: GroundTruth) -> SimConfig {
        SimConfig {
            projection,
            sigma,
            ground_truth: gt,
            ..SimConfig::default()
        }
    }

    #[test]
    fn same_seed_same_report() {
        let c = SimConfig::default().with_seed(5);
        assert_eq!(c.run::<f32>().unwrap(), c.run::<f32>().unwrap());
        assert_ne!(
            c.run::<f32>().unwrap(),
            c.with_seed(6).run::<f32>().unwrap()
        );
    }

    #[test]
    fn tied_projection_collapses_accuracies() {
        for seed in 0..5 {
            let r = config(ProjectionKind::Tied, 0.05, GroundTruth::Random)
                .with_seed(seed)
                .run::<f32>()
                .unwrap();
            assert_eq!(r.top1_accuracy_qq, r.top1_accuracy_qk);
        }
    }

    #[test]
    fn noiseless_orthonormal_matches_perfectly() {
        for seed in 0..5 {
            let r = config(ProjectionKind::Orthonormal, 0.0, GroundTruth::Random)
                .with_seed(seed)
                .run::<f64>()
                .unwrap();
            assert_eq!(r.top1_accuracy_qq, 1.0);
        }
    }

    #[test]
    fn identity_aggregation_leaves_modes_identical() {
        let c = config(ProjectionKind::Orthonormal, 0.0, GroundTruth::Identity).with_seed(2);
        let scene = generate_scene::<f32>(&c.scene_params(), c.seed).unwrap();
        let proj = ProjectionPair::new(c.projection, c.d_latent, c.d, c.seed).unwrap();
        let p = scene_aggregation(&scene, &proj, 1).unwrap();
        assert_eq!(p, AggregationMatrix::identity(c.n));
        let r = c.run::<f32>().unwrap();
        assert_eq!(r.leakage_baseline, r.leakage_qalign);
        assert_eq!(r.purity_baseline, r.purity_qalign);
    }

    #[test]
    fn multi_step_needs_square_projection() {
        let c = SimConfig {
            steps: 2,
            d: 48,
            ..SimConfig::default()
        };
        assert!(matches!(c.run::<f32>(), Err(Error::BadDimensions(_))));
        let ok = SimConfig {
            steps: 3,
            ..SimConfig::default()
        }
        .run::<f32>()
        .unwrap();
        assert_eq!(ok.steps, 3);
    }

    #[test]
    fn appearance_map_rows_are_stochastic() {
        let c = SimConfig::default().with_seed(1);
        let scene = generate_scene::<f64>(&c.scene_params(), c.seed).unwrap();
        let proj = ProjectionPair::new(c.projection, c.d_latent, c.d, c.seed).unwrap();
        for mode in [Mode::Baseline, Mode::Qalign] {
            let out = run_mode(&scene, &proj, &c.run_params(), mode).unwrap();
            for row in out.appearance_map.iter_rows() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            assert!((0.0..=1.0).contains(&out.leakage));
        }
    }

    #[test]
    fn report_json_keys_in_order() {
        let r = SimConfig::default().run::<f32>().unwrap();
        let json = serde_json::to_string(&r).unwrap();
        let keys = [
            "\"seed\"",
            "\"steps\"",
            "\"top1_accuracy_qq\"",
            "\"top1_accuracy_qk\"",
            "\"leakage_baseline\"",
            "\"leakage_qalign\"",
            "\"purity_baseline\"",
            "\"purity_qalign\"",
            "\"config\"",
        ];
        let pos: Vec<usize> = keys.iter().map(|k| json.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{json}");
        let back: SimReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
