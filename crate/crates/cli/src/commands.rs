use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ilv_model::gsplat::{render_set, save_gaussians};
use ilv_model::train::{self, input_view_indices};
use ilv_model::{IlvModel, RunConfig};
use ilv_tomo::classical::{asd_pocs, fdk, sart, AsdPocsParams, FdkParams, SartParams};
use ilv_tomo::io::{decode_projections, decode_volume, encode_pgm, encode_projections, encode_volume};
use ilv_tomo::metrics::{psnr_3d, ssim_3slab};
use ilv_tomo::phantom::{make_phantom, PhantomSpec};
use ilv_tomo::ramp::Apodization;
use ilv_tomo::xproj::{add_gaussian_noise, forward_project, Grid};
use ilv_tomo::{ConeBeamGeometry, ProjectionSet, Volume};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::geometry::GeometryConfig;

pub const BENCH_HEADER: &str = "method,n_views,psnr_db,ssim,wall_seconds";

#[derive(Debug, Parser)]
#[command(name = "ilv", version, about = "Sparse-view cone-beam CT: phantoms, baselines and the ILV network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a phantom volume.
    Phantom(PhantomArgs),
    /// Forward-project a volume.
    Project(ProjectArgs),
    /// Classical reconstruction from projections.
    Recon(ReconArgs),
    /// Train an ILV model on synthetic scans.
    TrainIlv(TrainArgs),
    /// Reconstruct with a trained ILV model.
    InferIlv(InferArgs),
    /// PSNR and SSIM of a volume against a reference, as one CSV row.
    Eval(EvalArgs),
    /// Write one slice of a volume as PGM.
    ExportSlice(SliceArgs),
    /// Compare all methods at several view counts.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKind {
    SheppLogan,
    Random,
}

#[derive(Debug, Args, Serialize)]
pub struct PhantomArgs {
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 1.0)]
    pub voxel: f64,
    #[arg(long, value_enum, default_value_t = PhantomKind::SheppLogan)]
    pub kind: PhantomKind,
    /// Inner ellipsoids of a random phantom.
    #[arg(long, default_value_t = 6)]
    pub ellipsoids: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ProjectArgs {
    #[arg(long, short, default_value = "-")]
    pub input: PathBuf,
    /// Geometry file; without it the detector is fitted to the volume.
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub views: usize,
    /// Detector side in pixels.
    #[arg(long, default_value_t = 96)]
    pub det: usize,
    #[arg(long, default_value_t = 1000.0)]
    pub dso: f64,
    #[arg(long, default_value_t = 1500.0)]
    pub dsd: f64,
    /// Standard deviation of additive Gaussian noise on the line integrals.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Fdk,
    Sart,
    Asdpocs,
}

#[derive(Debug, Args, Serialize)]
pub struct ReconArgs {
    #[arg(long, short, default_value = "-")]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub algo: Algo,
    /// Use this many of the available images, equally spaced.
    #[arg(long)]
    pub views: Option<usize>,
    /// Output side in voxels; defaults to the detector side.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.3)]
    pub relax: f64,
    #[arg(long, default_value_t = 10)]
    pub tv_steps: usize,
    #[arg(long, default_value_t = 0.2)]
    pub tv_alpha: f64,
    #[arg(long, default_value_t = 0.95)]
    pub tv_alpha_decay: f64,
    /// FDK apodization: none or hann.
    #[arg(long, default_value = "none")]
    pub apodization: String,
    #[arg(long, short, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration (TOML); the toy configuration when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured step count.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    /// Weights written by `train-ilv`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Run configuration; `config.toml` next to the checkpoint by default.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Projections to reconstruct from; the run's own scan when absent.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Input views taken from the run's own scan.
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub coarse_out: Option<PathBuf>,
    #[arg(long, short, default_value = "-")]
    pub out: PathBuf,
    /// Decoded primitives as `.ilvg`.
    #[arg(long)]
    pub gaussians_out: Option<PathBuf>,
    /// Angle (degrees) of a novel view rendered from the primitives.
    #[arg(long)]
    pub render_angle: Option<f64>,
    /// PGM of the novel view, scaled by its maximum.
    #[arg(long)]
    pub render_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub volume: PathBuf,
    pub reference: PathBuf,
    /// Omit the CSV header.
    #[arg(long)]
    pub no_header: bool,
}

#[derive(Debug, Args)]
pub struct SliceArgs {
    #[arg(long, short, default_value = "-")]
    pub input: PathBuf,
    /// 0 = x, 1 = y, 2 = z.
    #[arg(long, default_value_t = 2)]
    pub axis: usize,
    /// Slice index; the middle slice by default.
    #[arg(long)]
    pub index: Option<usize>,
    #[arg(long, short, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [6, 8, 10])]
    pub views: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 96)]
    pub det: usize,
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    /// Training run directory; adds ILV rows on the run's own phantom.
    #[arg(long)]
    pub ilv_run: Option<PathBuf>,
    #[arg(long, short, default_value = "-")]
    pub out: PathBuf,
}

/// Apply `ILV_THREADS` to the global worker pool.
pub fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("ILV_THREADS") else { return Ok(()) };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("ILV_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Phantom(a) => phantom(a),
        Command::Project(a) => project(a),
        Command::Recon(a) => recon(a),
        Command::TrainIlv(a) => train_ilv(a),
        Command::InferIlv(a) => infer_ilv(a),
        Command::Eval(a) => eval(a),
        Command::ExportSlice(a) => export_slice(a),
        Command::Bench(a) => bench(a),
    }
}

fn is_std(path: &Path) -> bool {
    path.as_os_str() == "-"
}

fn read_input(path: &Path) -> CliResult<Vec<u8>> {
    if is_std(path) {
        let mut buf = Vec::new();
        std::io::stdin().lock().read_to_end(&mut buf)?;
        Ok(buf)
    } else {
        Ok(std::fs::read(path)?)
    }
}

fn write_output(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if is_std(path) {
        let mut out = std::io::stdout().lock();
        out.write_all(bytes)?;
        out.flush()?;
    } else {
        std::fs::write(path, bytes)?;
    }
    Ok(())
}

/// Resolved parameters of a command, written as `<out>.params.toml` when the
/// output is a file.
fn write_params<T: Serialize>(out: &Path, command: &str, params: &T) -> CliResult<()> {
    if is_std(out) {
        return Ok(());
    }
    let body = toml::to_string(params).map_err(|e| CliError::Config(e.to_string()))?;
    let mut name = out.as_os_str().to_owned();
    name.push(".params.toml");
    std::fs::write(PathBuf::from(name), format!("command = {command:?}\n{body}"))?;
    Ok(())
}

fn phantom(a: PhantomArgs) -> CliResult<()> {
    let spec = match a.kind {
        PhantomKind::SheppLogan => PhantomSpec::shepp_logan(),
        PhantomKind::Random => PhantomSpec::random(&mut ChaCha8Rng::seed_from_u64(a.seed), a.ellipsoids),
    };
    let v = make_phantom(&spec, [a.size; 3], a.voxel)?;
    write_output(&a.out, &encode_volume(&v))?;
    write_params(&a.out, "phantom", &a)
}

fn volume_bbox_half(v: &Volume) -> f64 {
    v.half_extent().into_iter().fold(0.0, f64::max)
}

fn project(a: ProjectArgs) -> CliResult<()> {
    let v = decode_volume(&read_input(&a.input)?)?;
    let geom = match &a.geometry {
        Some(path) => GeometryConfig::parse(&std::fs::read_to_string(path)?)?.build()?,
        None => ConeBeamGeometry::fitted(a.dso, a.dsd, a.det, a.views, volume_bbox_half(&v))?,
    };
    let views: Vec<usize> = (0..geom.n_views()).collect();
    let mut p = forward_project(&v, &geom, &views)?;
    if a.noise > 0.0 {
        add_gaussian_noise(&mut p, a.noise, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    }
    write_output(&a.out, &encode_projections(&p))?;
    write_params(&a.out, "project", &a)?;
    if !is_std(&a.out) {
        let mut name = a.out.as_os_str().to_owned();
        name.push(".geometry.toml");
        std::fs::write(PathBuf::from(name), GeometryConfig::from(&geom).to_toml())?;
    }
    Ok(())
}

/// `k` of the images of `p`, equally spaced.
fn subset(p: &ProjectionSet, k: Option<usize>) -> CliResult<ProjectionSet> {
    let Some(k) = k else { return Ok(p.clone()) };
    let picks = input_view_indices(p.n_images(), k)?;
    let views: Vec<usize> = picks.iter().map(|&i| p.view_indices[i]).collect();
    Ok(p.select(&views)?)
}

fn reconstruct(p: &ProjectionSet, grid: &Grid, a: &ReconArgs) -> CliResult<Volume> {
    let sart_params = SartParams { iters: a.iters, relax: a.relax };
    Ok(match a.algo {
        Algo::Fdk => fdk(p, grid, FdkParams { apodization: a.apodization.parse::<Apodization>()? })?.volume,
        Algo::Sart => sart(p, grid, sart_params)?.clamped(0.0, 1.0),
        Algo::Asdpocs => asd_pocs(
            p,
            grid,
            AsdPocsParams {
                sart: sart_params,
                tv_steps: a.tv_steps,
                tv_alpha_init: a.tv_alpha,
                tv_alpha_decay: a.tv_alpha_decay,
                ..AsdPocsParams::default()
            },
        )?
        .clamped(0.0, 1.0),
    })
}

/// Centered cubic grid of side `n` filling the geometry's box.
fn box_grid(geom: &ConeBeamGeometry, n: usize) -> Grid {
    Grid::new([n; 3], 2.0 * geom.bbox_half / n as f64)
}

fn recon(a: ReconArgs) -> CliResult<()> {
    let p = subset(&decode_projections(&read_input(&a.input)?)?, a.views)?;
    let n = a.size.unwrap_or(p.geometry.det_cols);
    let v = reconstruct(&p, &box_grid(&p.geometry, n), &a)?;
    write_output(&a.out, &encode_volume(&v))?;
    write_params(&a.out, "recon", &a)
}

fn load_run_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::from_toml(&std::fs::read_to_string(p)?)?),
        None => Ok(RunConfig::toy()),
    }
}

pub const CONFIG_FILE: &str = "config.toml";
pub const TRACE_FILE: &str = "trace.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

fn train_ilv(a: TrainArgs) -> CliResult<()> {
    let mut cfg = load_run_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    if let Some(steps) = a.steps {
        cfg.train.steps = steps;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join(CONFIG_FILE), cfg.to_toml())?;
    let data = train::make_dataset(&cfg)?;
    let mut model = IlvModel::new(&cfg.model, cfg.data.bbox_half, cfg.train.seed)?;
    let start = Instant::now();
    let rows = train::train(&mut model, &data, &cfg, |r| {
        if let Some(p) = r.val_psnr {
            eprintln!(
                "step {:>6}  loss {:.5}  val psnr {p:.2} dB  ({:.0} s)",
                r.step,
                r.loss.total,
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    train::write_trace(&rows, a.out.join(TRACE_FILE))?;
    model.save(a.out.join(CHECKPOINT_FILE))?;
    Ok(())
}

fn infer_ilv(a: InferArgs) -> CliResult<()> {
    let config_path = match &a.config {
        Some(p) => p.clone(),
        None => a.checkpoint.parent().unwrap_or(Path::new(".")).join(CONFIG_FILE),
    };
    let cfg = load_run_config(Some(&config_path))?;
    let mut model = IlvModel::new(&cfg.model, cfg.data.bbox_half, cfg.train.seed)?;
    model.load_weights(&a.checkpoint)?;
    let batch = match &a.input {
        Some(path) => {
            let p = subset(&decode_projections(&read_input(path)?)?, a.views)?;
            let images: Vec<Vec<f64>> =
                (0..p.n_images()).map(|i| p.image(i).iter().map(|&v| v as f64).collect()).collect();
            let refs: Vec<&[f64]> = images.iter().map(|v| v.as_slice()).collect();
            ilv_model::ilvnet::ViewBatch::new(
                &refs,
                &p.geometry,
                &p.view_indices,
                cfg.model.patch,
                train::image_scale(&cfg),
            )?
        }
        None => {
            let data = train::make_dataset(&cfg)?;
            let k = a.views.unwrap_or(cfg.data.input_views);
            let views = input_view_indices(cfg.data.total_views, k)?;
            train::view_batch(&cfg, &data[0], &views)?
        }
    };
    let rec = model.reconstruct(&batch)?;
    write_output(&a.out, &encode_volume(&rec.refined))?;
    if let Some(path) = &a.coarse_out {
        write_output(path, &encode_volume(&rec.coarse))?;
    }
    if let Some(path) = &a.gaussians_out {
        save_gaussians(&rec.gaussians, path)?;
    }
    if let Some(deg) = a.render_angle {
        let out = a
            .render_out
            .as_ref()
            .ok_or_else(|| CliError::Usage("--render-angle needs --render-out".into()))?;
        let g = &batch.geometry;
        let novel =
            ConeBeamGeometry::new(g.dso, g.dsd, g.det_rows, g.det_cols, g.det_pixel, vec![deg.to_radians()], g.bbox_half)?;
        let img = render_set(&rec.gaussians, &novel, 0)?;
        let peak = img.iter().cloned().fold(0.0, f64::max);
        let shown: Vec<f64> = img.iter().map(|v| if peak > 0.0 { v / peak } else { 0.0 }).collect();
        write_output(out, &encode_pgm(g.det_rows, g.det_cols, &shown))?;
    }
    write_params(&a.out, "infer-ilv", &a)
}

/// `psnr_db,ssim` of `v` against `reference`.
pub fn eval_row(v: &Volume, reference: &Volume) -> CliResult<(f64, f64)> {
    Ok((psnr_3d(v, reference)?, ssim_3slab(v, reference)?))
}

fn eval(a: EvalArgs) -> CliResult<()> {
    if is_std(&a.volume) && is_std(&a.reference) {
        return Err(CliError::Usage("at most one of the two volumes can come from stdin".into()));
    }
    let v = decode_volume(&read_input(&a.volume)?)?;
    let r = decode_volume(&read_input(&a.reference)?)?;
    let (p, s) = eval_row(&v, &r)?;
    let mut out = String::new();
    if !a.no_header {
        out.push_str("psnr_db,ssim\n");
    }
    writeln!(out, "{p:.6},{s:.6}").unwrap();
    write_output(Path::new("-"), out.as_bytes())
}

fn export_slice(a: SliceArgs) -> CliResult<()> {
    let v = decode_volume(&read_input(&a.input)?)?;
    if a.axis > 2 {
        return Err(CliError::Usage(format!("axis must be 0, 1 or 2, got {}", a.axis)));
    }
    let index = a.index.unwrap_or(v.dims[a.axis] / 2);
    let (rows, cols, pixels) = v.slice(a.axis, index)?;
    write_output(&a.out, &encode_pgm(rows, cols, &pixels))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: String,
    pub n_views: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub wall_seconds: f64,
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = format!("{BENCH_HEADER}\n");
    for r in rows {
        writeln!(out, "{},{},{:.4},{:.4},{:.3}", r.method, r.n_views, r.psnr_db, r.ssim, r.wall_seconds).unwrap();
    }
    out
}

fn timed<T>(f: impl FnOnce() -> CliResult<T>) -> CliResult<(T, f64)> {
    let t = Instant::now();
    let out = f()?;
    Ok((out, t.elapsed().as_secs_f64()))
}

/// FDK, SART and ASD-POCS on the Shepp-Logan phantom at each view count.
pub fn bench_classical(a: &BenchArgs) -> CliResult<Vec<BenchRow>> {
    let v = make_phantom(&PhantomSpec::shepp_logan(), [a.size; 3], 1.0)?;
    let grid = Grid::of(&v);
    let mut rows = Vec::new();
    for &k in &a.views {
        let geom = ConeBeamGeometry::fitted(1000.0, 1500.0, a.det, k, volume_bbox_half(&v))?;
        let views: Vec<usize> = (0..k).collect();
        let p = forward_project(&v, &geom, &views)?;
        for algo in [Algo::Fdk, Algo::Sart, Algo::Asdpocs] {
            let args = ReconArgs {
                input: PathBuf::new(),
                algo,
                views: None,
                size: None,
                iters: a.iters,
                relax: 0.3,
                tv_steps: 10,
                tv_alpha: 0.2,
                tv_alpha_decay: 0.95,
                apodization: "none".into(),
                out: PathBuf::new(),
            };
            let (rec, secs) = timed(|| reconstruct(&p, &grid, &args))?;
            let (psnr_db, ssim) = eval_row(&rec, &v)?;
            let method = match algo {
                Algo::Fdk => "FDK",
                Algo::Sart => "SART",
                Algo::Asdpocs => "ASD-POCS",
            };
            rows.push(BenchRow { method: method.into(), n_views: k, psnr_db, ssim, wall_seconds: secs });
        }
    }
    Ok(rows)
}

/// A trained model on its own run's first phantom at each view count.
pub fn bench_ilv(run: &Path, view_counts: &[usize]) -> CliResult<Vec<BenchRow>> {
    let cfg = load_run_config(Some(&run.join(CONFIG_FILE)))?;
    let mut model = IlvModel::new(&cfg.model, cfg.data.bbox_half, cfg.train.seed)?;
    model.load_weights(run.join(CHECKPOINT_FILE))?;
    let data = train::make_dataset(&cfg)?;
    let mut rows = Vec::new();
    for &k in view_counts {
        let views = input_view_indices(cfg.data.total_views, k)?;
        let batch = train::view_batch(&cfg, &data[0], &views)?;
        let (rec, secs) = timed(|| Ok(model.reconstruct(&batch)?))?;
        let (psnr_db, ssim) = eval_row(&rec.refined, &data[0].phantom)?;
        rows.push(BenchRow { method: "ILV".into(), n_views: k, psnr_db, ssim, wall_seconds: secs });
    }
    Ok(rows)
}

fn bench(a: BenchArgs) -> CliResult<()> {
    if a.views.is_empty() {
        return Err(CliError::Usage("--views needs at least one count".into()));
    }
    let mut rows = bench_classical(&a)?;
    if let Some(run) = &a.ilv_run {
        rows.extend(bench_ilv(run, &a.views)?);
    }
    write_output(&a.out, bench_csv(&rows).as_bytes())?;
    write_params(&a.out, "bench", &a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pipeline_flags() {
        let cli = Cli::try_parse_from(["ilv", "recon", "--algo", "sart", "--views", "6", "--iters", "3"]).unwrap();
        let Command::Recon(a) = cli.command else { panic!("wrong subcommand") };
        assert_eq!(a.algo, Algo::Sart);
        assert_eq!(a.views, Some(6));
        assert!(is_std(&a.input) && is_std(&a.out));
    }

    #[test]
    fn rejects_unknown_input() {
        assert!(Cli::try_parse_from(["ilv", "frobnicate"]).is_err());
        assert!(Cli::try_parse_from(["ilv", "phantom", "--colour", "red"]).is_err());
        assert!(Cli::try_parse_from(["ilv", "recon", "--algo", "art"]).is_err());
    }

    #[test]
    fn bench_views_list() {
        let cli = Cli::try_parse_from(["ilv", "bench"]).unwrap();
        let Command::Bench(a) = cli.command else { panic!("wrong subcommand") };
        assert_eq!(a.views, vec![6, 8, 10]);
        let cli = Cli::try_parse_from(["ilv", "bench", "--views", "10"]).unwrap();
        let Command::Bench(a) = cli.command else { panic!("wrong subcommand") };
        assert_eq!(a.views, vec![10]);
    }

    #[test]
    fn csv_layout() {
        let rows = [BenchRow { method: "FDK".into(), n_views: 10, psnr_db: 14.75, ssim: 0.5, wall_seconds: 1.25 }];
        assert_eq!(bench_csv(&rows), "method,n_views,psnr_db,ssim,wall_seconds\nFDK,10,14.7500,0.5000,1.250\n");
    }
}
