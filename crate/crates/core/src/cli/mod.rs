//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error. Diagnostics go to
//! standard error; results are written only to the paths named by flags, and
//! only after every result of the command has been computed.

mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::align::{build_aggregation, compute_alignment, AggregationMatrix, Stage};
use crate::attention::{cross_image_attention, rearrange_kv, rearranged_attention};
use crate::diagnostics::{
    attention_diff_map, leakage_mass, mean_map, patch_attention_map, pgm_bytes, AlignMode,
    HeatmapFormat, PatchSelection, DEFAULT_DIFF_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::metrics::{gram_loss, mask_iou, BinaryMask};
use crate::sim::{run_suite, GroundTruth, ProjectionKind, SimConfig};
use crate::tensor::{load_csv, load_tensor, tensor_bytes, Grid, Matrix};
use crate::{align, FeatureMatrix};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "qalign",
    version,
    about = "Query-query aligned cross-image attention"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Query-query alignment matrix S = Q_app · Q_strᵀ.
    Align(AlignArgs),
    /// Aggregation matrix P′ (top-k votes, fallback, reweighting).
    Aggregate(AggregateArgs),
    /// Rearranged keys and values K* = P′K_app, V* = P′V_app.
    Rearrange(RearrangeArgs),
    /// Cross-image attention, plain or against rearranged keys/values.
    Attend(AttendArgs),
    /// Thresholded attention difference map.
    Diffmap(DiffmapArgs),
    /// Synthetic baseline-vs-rearranged experiment.
    Simulate(SimulateArgs),
    /// Legacy appearance/structure metrics.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Debug, Args)]
struct AlignArgs {
    #[arg(long)]
    q_app: PathBuf,
    #[arg(long)]
    q_str: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AggregateArgs {
    /// Precomputed alignment matrix.
    #[arg(long, conflicts_with_all = ["q_app", "q_str"])]
    sim: Option<PathBuf>,
    #[arg(long, requires = "q_str")]
    q_app: Option<PathBuf>,
    #[arg(long, requires = "q_app")]
    q_str: Option<PathBuf>,
    #[arg(long, short = 'k', default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RearrangeArgs {
    /// Reweighted aggregation matrix (dense n x n).
    #[arg(long)]
    agg: PathBuf,
    #[arg(long)]
    k_app: PathBuf,
    #[arg(long)]
    v_app: PathBuf,
    #[arg(long)]
    out_k: PathBuf,
    #[arg(long)]
    out_v: PathBuf,
}

#[derive(Debug, Args)]
struct AttendArgs {
    #[arg(long)]
    q_out: PathBuf,
    #[arg(long)]
    keys: PathBuf,
    #[arg(long)]
    values: PathBuf,
    /// Rearrange keys and values with --agg before attending.
    #[arg(long, requires = "agg")]
    rearranged: bool,
    #[arg(long)]
    agg: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    contrast: f64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the attention map.
    #[arg(long)]
    map_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DiffmapArgs {
    #[arg(long, requires = "map_b", conflicts_with_all = ["q_str", "q_app", "k_app"])]
    map_a: Option<PathBuf>,
    #[arg(long, requires = "map_a")]
    map_b: Option<PathBuf>,
    #[arg(long, requires_all = ["q_app", "k_app"])]
    q_str: Option<PathBuf>,
    #[arg(long)]
    q_app: Option<PathBuf>,
    #[arg(long)]
    k_app: Option<PathBuf>,
    /// Appearance indices, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "patch_rect")]
    patch: Option<Vec<usize>>,
    /// Appearance rectangle `row,col,height,width` on the appearance grid.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    patch_rect: Option<Vec<usize>>,
    /// Positions counted as the patch's own region when reporting leakage.
    #[arg(long, value_delimiter = ',')]
    region: Option<Vec<usize>>,
    #[arg(long, default_value_t = DEFAULT_DIFF_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = 1.0)]
    contrast: f64,
    /// Grid `HxW` for the maps when the inputs carry none.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Heatmap image (.pgm or .png).
    #[arg(long)]
    heatmap: Option<PathBuf>,
    /// JSON diagnostic report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    labels: usize,
    #[arg(long, default_value_t = 32)]
    d_latent: usize,
    #[arg(long, default_value_t = 32)]
    d: usize,
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    #[arg(long, default_value_t = 0.5)]
    detail: f64,
    #[arg(long, default_value = "random")]
    gt: String,
    /// random | orthonormal | tied | identity
    #[arg(long, default_value = "random")]
    projection: String,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    steps: u64,
    #[arg(long, short = 'k', default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long, default_value_t = 1.0)]
    contrast: f64,
    /// Run every seed in --seeds instead of --seed.
    #[arg(long, requires = "seeds")]
    suite: bool,
    /// `a..b` (half-open) or a comma-separated list.
    #[arg(long)]
    seeds: Option<String>,
    /// Report path; for --suite, a JSON array of all reports.
    #[arg(long, required_unless_present = "out_dir")]
    out: Option<PathBuf>,
    /// Directory for per-seed reports `seed-<seed>.json` (suite mode).
    #[arg(long, requires = "suite")]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// Gram-matrix loss between two lists of per-layer feature tensors.
    Gram {
        #[arg(long, value_delimiter = ',', required = true)]
        a: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        b: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// IoU between two binary masks (tensor or PGM).
    Iou {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match config::expand(argv) {
        Ok(a) => a,
        Err(config::ConfigError::Usage(msg)) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
        Err(config::ConfigError::Data(e)) => {
            eprintln!("error [{}]: {e}", e.kind());
            return EXIT_DATA;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(outputs) => match outputs.commit() {
            Ok(()) => EXIT_OK,
            Err(e) => {
                eprintln!("error [{}]: {e}", e.kind());
                EXIT_DATA
            }
        },
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            eprintln!("error [{}]: {e}", e.kind());
            EXIT_DATA
        }
    }
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CmdResult<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CmdResult<T> {
    Err(Failure::Usage(msg.into()))
}

/// Files staged by a command, written together once it has succeeded.
#[derive(Default)]
struct Outputs(Vec<(PathBuf, Vec<u8>)>);

impl Outputs {
    fn tensor(&mut self, path: &Path, m: &FeatureMatrix) {
        self.0.push((path.to_path_buf(), tensor_bytes(m)));
    }

    fn json<T: Serialize>(&mut self, path: &Path, value: &T) {
        let mut bytes = serde_json::to_vec_pretty(value).expect("reports serialize");
        bytes.push(b'\n');
        self.0.push((path.to_path_buf(), bytes));
    }

    fn raw(&mut self, path: &Path, bytes: Vec<u8>) {
        self.0.push((path.to_path_buf(), bytes));
    }

    /// Stages every file as a temporary next to its target, then renames all.
    fn commit(self) -> Result<()> {
        use std::io::Write;
        let mut staged = Vec::with_capacity(self.0.len());
        for (path, bytes) in &self.0 {
            let dir = match path.parent() {
                Some(p) if !p.as_os_str().is_empty() => p,
                _ => Path::new("."),
            };
            let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
            tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
            staged.push((tmp, path));
        }
        for (tmp, path) in staged {
            tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        }
        Ok(())
    }
}

/// Loads a matrix from a tensor file, or from CSV when the extension is `.csv`.
pub fn load_matrix(path: &Path) -> Result<FeatureMatrix> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => load_csv(path),
        _ => load_tensor(path),
    }
}

fn run(cmd: Command) -> CmdResult<Outputs> {
    let mut out = Outputs::default();
    match cmd {
        Command::Align(a) => {
            let s = compute_alignment(&load_matrix(&a.q_app)?, &load_matrix(&a.q_str)?)?;
            out.tensor(&a.out, s.as_matrix());
        }
        Command::Aggregate(a) => {
            let k = a.k as usize;
            let s = match (&a.sim, &a.q_app, &a.q_str) {
                (Some(sim), None, None) => align::AlignmentMatrix::from_matrix(load_matrix(sim)?),
                (None, Some(qa), Some(qs)) => {
                    compute_alignment(&load_matrix(qa)?, &load_matrix(qs)?)?
                }
                _ => return usage("aggregate needs --sim or both --q-app and --q-str"),
            };
            let p = align::reweight_softmax(align::apply_fallback(build_aggregation(&s, k)?))?;
            out.tensor(&a.out, &p.to_dense());
        }
        Command::Rearrange(a) => {
            let p = load_aggregation(&a.agg)?;
            let rkv = rearrange_kv(&p, &load_matrix(&a.k_app)?, &load_matrix(&a.v_app)?)?;
            out.tensor(&a.out_k, &rkv.k_star);
            out.tensor(&a.out_v, &rkv.v_star);
        }
        Command::Attend(a) => {
            let q = load_matrix(&a.q_out)?;
            let k = load_matrix(&a.keys)?;
            let v = load_matrix(&a.values)?;
            let result = match (a.rearranged, &a.agg) {
                (true, Some(agg)) => {
                    let rkv = rearrange_kv(&load_aggregation(agg)?, &k, &v)?;
                    rearranged_attention(&q, &rkv, a.contrast)?
                }
                (false, Some(_)) => return usage("--agg given without --rearranged"),
                _ => cross_image_attention(&q, &k, &v, a.contrast)?,
            };
            out.tensor(&a.out, &result.output);
            if let Some(p) = &a.map_out {
                out.tensor(p, &result.map);
            }
        }
        Command::Diffmap(a) => diffmap(a, &mut out)?,
        Command::Simulate(a) => simulate(a, &mut out)?,
        Command::Eval(EvalCommand::Gram { a, b, out: path }) => {
            let fa = a
                .iter()
                .map(|p| load_matrix(p))
                .collect::<Result<Vec<_>>>()?;
            let fb = b
                .iter()
                .map(|p| load_matrix(p))
                .collect::<Result<Vec<_>>>()?;
            let loss = gram_loss(&fa, &fb)?;
            out.json(
                &path,
                &GramReport {
                    gram_loss: loss,
                    layers: fa.len(),
                },
            );
        }
        Command::Eval(EvalCommand::Iou { a, b, out: path }) => {
            let iou = mask_iou(&BinaryMask::load(&a)?, &BinaryMask::load(&b)?)?;
            out.json(&path, &IouReport { iou });
        }
    }
    Ok(out)
}

fn load_aggregation(path: &Path) -> Result<AggregationMatrix<f32>> {
    AggregationMatrix::from_dense(&load_matrix(path)?, Stage::Reweighted)
}

#[derive(Serialize)]
struct GramReport {
    gram_loss: f64,
    layers: usize,
}

#[derive(Serialize)]
struct IouReport {
    iou: f64,
}

#[derive(Serialize)]
struct DiffReport {
    mode: &'static str,
    patch: Option<Vec<usize>>,
    leakage: Option<LeakagePair>,
    threshold: f64,
    nonzero: usize,
}

#[derive(Serialize)]
struct LeakagePair {
    a: f64,
    b: f64,
}

fn parse_grid(s: &str) -> CmdResult<Grid> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    match parts[..] {
        [h, w] => match (h.trim().parse(), w.trim().parse()) {
            (Ok(h), Ok(w)) => Ok(Grid::new(h, w)),
            _ => usage(format!("bad --grid {s:?}, expected HxW")),
        },
        _ => usage(format!("bad --grid {s:?}, expected HxW")),
    }
}

/// Share of a nonnegative map's mass outside `region`.
fn map_leakage(values: &[f32], region: &[usize]) -> Result<f64> {
    let total: f64 = values.iter().map(|&v| v as f64).sum();
    if !(total > 0.0) {
        return Err(Error::EmptySelection("map has no mass"));
    }
    let normalized: Vec<f32> = values.iter().map(|&v| (v as f64 / total) as f32).collect();
    let row = Matrix::from_vec(1, values.len(), normalized)?;
    leakage_mass(&row, &[0], region)
}

fn diffmap(a: DiffmapArgs, out: &mut Outputs) -> CmdResult<()> {
    let mut grid = a.grid.as_deref().map(parse_grid).transpose()?;
    let (mode, patch, map_a, map_b) = match (&a.map_a, &a.map_b, &a.q_str, &a.q_app, &a.k_app) {
        (Some(pa), Some(pb), None, None, None) => {
            let ma = load_matrix(pa)?;
            let mb = load_matrix(pb)?;
            grid = grid.or(ma.grid()).or(mb.grid());
            ("maps", None, ma.into_vec(), mb.into_vec())
        }
        (None, None, Some(qs), Some(qa), Some(ka)) => {
            let q_str = load_matrix(qs)?;
            let q_app = load_matrix(qa)?;
            let k_app = load_matrix(ka)?;
            let sel = match (&a.patch, &a.patch_rect) {
                (Some(idx), None) => PatchSelection::new(idx.clone()),
                (None, Some(rect)) => {
                    let [r, c, h, w] = rect[..] else {
                        return usage("--patch-rect takes row,col,height,width");
                    };
                    let g = q_app.grid().or(q_str.grid()).ok_or(Error::NoGrid)?;
                    PatchSelection::from_rect(g, r, c, h, w)?
                }
                _ => return usage("patch mode needs --patch or --patch-rect"),
            };
            let qk = patch_attention_map(
                &q_str,
                &q_app,
                &k_app,
                AlignMode::QueryKey,
                &sel,
                a.contrast,
            )?;
            let qq = patch_attention_map(
                &q_str,
                &q_app,
                &k_app,
                AlignMode::QueryQuery,
                &sel,
                a.contrast,
            )?;
            grid = grid.or(q_str.grid());
            (
                "query-key-vs-query-query",
                Some(sel.indices().to_vec()),
                mean_map(&qk)?,
                mean_map(&qq)?,
            )
        }
        _ => return usage("diffmap needs --map-a/--map-b or --q-str/--q-app/--k-app"),
    };
    if let Some(g) = grid {
        if g.len() != map_a.len() {
            return Err(Error::shape(format!(
                "grid {}x{} does not cover {} map entries",
                g.height,
                g.width,
                map_a.len()
            ))
            .into());
        }
    }
    let diff = attention_diff_map(&map_a, &map_b, a.threshold)?;
    let leakage = match &a.region {
        Some(region) => Some(LeakagePair {
            a: map_leakage(&map_a, region)?,
            b: map_leakage(&map_b, region)?,
        }),
        None => None,
    };

    let mut m = Matrix::from_vec(diff.data.len(), 1, diff.data.clone())?;
    if let Some(g) = grid {
        m = m.with_grid(g)?;
    }
    out.tensor(&a.out, &m);
    if let Some(path) = &a.heatmap {
        let g = grid.ok_or(Error::NoGrid)?;
        let bytes = match HeatmapFormat::from_path(path) {
            HeatmapFormat::Pgm => pgm_bytes(&diff.data, g)?,
            HeatmapFormat::Png => png_bytes(&diff.data, g)?,
        };
        out.raw(path, bytes);
    }
    if let Some(path) = &a.report {
        out.json(
            path,
            &DiffReport {
                mode,
                patch,
                leakage,
                threshold: a.threshold,
                nonzero: diff.nonzero(),
            },
        );
    }
    Ok(())
}

fn png_bytes(values: &[f32], grid: Grid) -> Result<Vec<u8>> {
    let pixels = crate::diagnostics::heatmap_pixels(values);
    let img = image::GrayImage::from_raw(grid.width as u32, grid.height as u32, pixels)
        .ok_or_else(|| Error::shape("pixel count does not match grid"))?;
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| Error::Parse(format!("png encoding: {e}")))?;
    Ok(buf.into_inner())
}

fn parse_seeds(s: &str) -> CmdResult<Vec<u64>> {
    let bad = || Failure::Usage(format!("bad --seeds {s:?}, expected a..b or a,b,c"));
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
        if hi <= lo {
            return Err(bad());
        }
        Ok((lo..hi).collect())
    } else {
        s.split(',')
            .map(|t| t.trim().parse().map_err(|_| bad()))
            .collect()
    }
}

fn simulate(a: SimulateArgs, out: &mut Outputs) -> CmdResult<()> {
    let ground_truth: GroundTruth =
        a.gt.parse()
            .map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let projection: ProjectionKind = a
        .projection
        .parse()
        .map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let config = SimConfig {
        seed: a.seed,
        n: a.n,
        labels: a.labels,
        d_latent: a.d_latent,
        d: a.d,
        sigma: a.sigma,
        detail: a.detail,
        ground_truth,
        projection,
        steps: a.steps as usize,
        k: a.k as usize,
        contrast: a.contrast,
    };
    if a.suite {
        let seeds = parse_seeds(a.seeds.as_deref().unwrap_or_default())?;
        let reports = run_suite::<f32>(&config, &seeds)?;
        if let Some(dir) = &a.out_dir {
            if !dir.is_dir() {
                return Err(Error::io(
                    dir,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "output directory missing"),
                )
                .into());
            }
            for r in &reports {
                out.json(&dir.join(format!("seed-{}.json", r.seed)), r);
            }
        }
        if let Some(path) = &a.out {
            out.json(path, &reports);
        }
    } else {
        if a.out_dir.is_some() {
            return usage("--out-dir requires --suite");
        }
        let report = config.run::<f32>()?;
        out.json(a.out.as_ref().expect("clap enforces --out"), &report);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_parse() {
        assert_eq!(parse_seeds("0..3").ok().unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("4, 9").ok().unwrap(), vec![4, 9]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn grid_parse() {
        assert_eq!(parse_grid("3x4").ok().unwrap(), Grid::new(3, 4));
        assert!(parse_grid("3").is_err());
    }

    #[test]
    fn help_exits_zero_and_unknown_flag_exits_one() {
        assert_eq!(dispatch(["qalign", "--help"]), EXIT_OK);
        assert_eq!(dispatch(["qalign", "align", "--bogus"]), EXIT_USAGE);
        assert_eq!(dispatch(["qalign"]), EXIT_USAGE);
    }
}
