use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use udf_core::applications::{self, UpsampleConfig, UpsampleError, UpsampleShortfall};
use udf_core::field::{load_checkpoint, save_checkpoint, FieldCheckpoint};
use udf_core::fixtures::AnalyticShape;
use udf_core::geometry::{
    load_mesh, load_point_cloud, write_mesh, write_normals, write_point_cloud, CloudFormat, MeshFormat,
    PointCloud, TriangleMesh, Vec3,
};
use udf_core::mesher::{self, MeshOptions};
use udf_core::metrics::{self, EvalReport};
use udf_core::trainer::{checkpoint_of, fit_with_progress, training_diagnostics, TrainConfig};
use udf_core::Error;

use crate::manifest::{io_error, prepare_run_dir, RunManifest};
use crate::{
    CloudFileFormat, EvalArgs, FitArgs, FixturesArgs, MeshFileFormat, NormalsArgs, Preset, ReconstructArgs,
    RerunArgs, UpsampleArgs,
};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_CONFIG: u8 = 4;
pub const EXIT_NUMERIC: u8 = 5;
pub const EXIT_DEGENERATE: u8 = 6;
pub const EXIT_FORMAT: u8 = 7;
pub const EXIT_PARTIAL: u8 = 8;

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Shortfall(UpsampleShortfall),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Shortfall(_) => EXIT_PARTIAL,
            CliError::Core(e) => match e {
                Error::Io { .. } => EXIT_IO,
                Error::Config(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
                Error::Numeric { .. } => EXIT_NUMERIC,
                Error::EmptyInput(_) | Error::DegenerateInput(_) => EXIT_DEGENERATE,
                Error::Parse { .. } | Error::Checkpoint(_) | Error::Shape(_) | Error::MissingData(_) => {
                    EXIT_FORMAT
                }
            },
        }
    }
}

type CliResult = Result<(), CliError>;

fn load_cloud(path: &Path) -> Result<PointCloud, Error> {
    let format = CloudFormat::from_path(path).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "{}: unknown point cloud extension (use .xyz, .ply or .obj)",
            path.display()
        ))
    })?;
    load_point_cloud(path, format)
}

/// Express `raw` in the frame a checkpoint was trained in.
fn to_field_frame(raw: &PointCloud, ck: &FieldCheckpoint) -> Result<PointCloud, Error> {
    let n = ck.normalization;
    Ok(PointCloud::new(raw.points().iter().map(|&p| n.apply(p)).collect())?.with_normalization(n))
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn finish(manifest: &mut RunManifest, dir: &Path, start: Instant) -> Result<(), Error> {
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    manifest.write(dir)?;
    Ok(())
}

pub fn build_config(a: &FitArgs) -> Result<TrainConfig, Error> {
    let mut cfg = match a.preset {
        Preset::Default => TrainConfig::default(),
        Preset::Fixture => TrainConfig::fixture(),
    };
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        cfg.apply_text(&text)?;
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{kv}' is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Train, then write the checkpoint, trace, diagnostics and manifest.
/// `snapshot` replaces the config file and overrides (used by `rerun`).
pub fn fit(a: &FitArgs, threads: usize, snapshot: Option<&str>) -> CliResult {
    let start = Instant::now();
    let cfg = match snapshot {
        Some(text) => {
            let cfg = TrainConfig::from_text(text)?;
            cfg.validate()?;
            cfg
        }
        None => build_config(a)?,
    };
    let raw = load_cloud(&a.input)?;
    prepare_run_dir(&a.out)?;
    let mut manifest = RunManifest::new("fit", a, threads);
    manifest.add_input(&a.input)?;
    if let (Some(c), None) = (&a.config, snapshot) {
        manifest.add_input(c)?;
    }
    manifest.config = Some(cfg.to_text());
    manifest.seed = Some(cfg.seed);
    let config_path = a.out.join("config.txt");
    write_text(&config_path, &cfg.to_text())?;
    manifest.outputs.push(config_path);

    let cloud = raw.normalize()?;
    let every = (cfg.iterations / 20).max(1);
    let result = fit_with_progress(&cloud, &cfg, |i, b| {
        if !a.quiet && (i % every == 0 || i + 1 == cfg.iterations) {
            eprintln!(
                "iter {i:>7}  total {:.6}  cd {:.6}  proj {:.5}  dist {:.6}  orth {:.5}",
                b.total, b.cd, b.proj, b.dist, b.orth
            );
        }
    });
    let trace_path = a.out.join("trace.tsv");
    match result {
        Ok((field, mut trace)) => {
            let ck_path = a.out.join("checkpoint.udf");
            trace.checkpoint = Some(ck_path.display().to_string());
            let diag = training_diagnostics(&trace, &field, &cloud, cfg.seed)?;
            let ck = checkpoint_of(field, &cloud, &cfg, trace.iterations_completed);
            save_checkpoint(&ck_path, &ck)?;
            write_text(&trace_path, &trace.to_delimited())?;
            let diag_path = a.out.join("diagnostics.txt");
            write_text(&diag_path, &diag.to_text())?;
            manifest.outputs.extend([ck_path.clone(), trace_path, diag_path]);
            finish(&mut manifest, &a.out, start)?;
            println!("checkpoint {}", ck_path.display());
            Ok(())
        }
        Err(aborted) => {
            let done = aborted.trace.iterations_completed;
            let ck_path = a.out.join("checkpoint.last_good.udf");
            save_checkpoint(&ck_path, &checkpoint_of(aborted.last_good, &cloud, &cfg, done))?;
            write_text(&trace_path, &aborted.trace.to_delimited())?;
            manifest.outputs.extend([ck_path, trace_path]);
            manifest.status = format!("aborted after {done} iterations: {}", aborted.error);
            finish(&mut manifest, &a.out, start)?;
            Err(aborted.error.into())
        }
    }
}

pub fn reconstruct(a: &ReconstructArgs, threads: usize) -> CliResult {
    let start = Instant::now();
    let ck = load_checkpoint(&a.checkpoint)?;
    let opts = MeshOptions {
        activation_threshold: a.threshold,
        tau_amb: a.tau,
        threads,
        ..MeshOptions::new(a.resolution)
    };
    opts.validate()?;
    prepare_run_dir(&a.out)?;
    let mut manifest = RunManifest::new("reconstruct", a, threads);
    manifest.add_input(&a.checkpoint)?;
    let out = mesher::extract(&ck.field, &opts)?;
    let n = ck.normalization;
    let mesh = out.mesh.map_vertices(|v| n.invert(v));
    let (path, format) = match a.format {
        MeshFileFormat::Obj => (a.out.join("mesh.obj"), MeshFormat::Obj),
        MeshFileFormat::Ply => (a.out.join("mesh.ply"), MeshFormat::Ply),
    };
    write_mesh(&path, &mesh, format)?;
    if mesh.is_empty() {
        eprintln!(
            "warning: no triangles extracted ({} active cells); wrote an empty mesh",
            out.active_cells
        );
    }
    println!(
        "vertices {}  triangles {}  components {}  boundary_edges {}  active_cells {}",
        mesh.vertices.len(),
        mesh.triangles.len(),
        mesh.connected_components(),
        mesh.boundary_edges().len(),
        out.active_cells
    );
    manifest.outputs.push(path);
    finish(&mut manifest, &a.out, start)?;
    Ok(())
}

pub fn normals(a: &NormalsArgs, threads: usize) -> CliResult {
    let start = Instant::now();
    let ck = load_checkpoint(&a.checkpoint)?;
    let raw = load_cloud(&a.input)?;
    prepare_run_dir(&a.out)?;
    let mut manifest = RunManifest::new("normals", a, threads);
    manifest.add_input(&a.checkpoint)?;
    manifest.add_input(&a.input)?;
    let est = applications::estimate_normals(&ck.field, &to_field_frame(&raw, &ck)?);
    let (pts, ns) = est.emitted(&raw);
    let path = a.out.join("normals.txt");
    write_normals(&path, &pts, &ns)?;
    if est.degenerate_count() > 0 {
        eprintln!(
            "warning: {} points have a vanishing gradient and were left out",
            est.degenerate_count()
        );
    }
    println!("normals {}  degenerate {}", pts.len(), est.degenerate_count());
    manifest.outputs.push(path);
    finish(&mut manifest, &a.out, start)?;
    Ok(())
}

pub fn upsample(a: &UpsampleArgs, threads: usize) -> CliResult {
    let start = Instant::now();
    let ck = load_checkpoint(&a.checkpoint)?;
    let raw = load_cloud(&a.input)?;
    let cfg = UpsampleConfig {
        factor: a.factor,
        beta: a.beta,
        max_rounds: a.max_rounds,
        pull_steps: a.pull_steps,
    };
    cfg.validate()?;
    prepare_run_dir(&a.out)?;
    let mut manifest = RunManifest::new("upsample", a, threads);
    manifest.add_input(&a.checkpoint)?;
    manifest.add_input(&a.input)?;
    manifest.seed = Some(a.seed);
    let n = ck.normalization;
    let (ext, format) = match a.format {
        CloudFileFormat::Xyz => ("xyz", CloudFormat::Xyz),
        CloudFileFormat::Ply => ("ply", CloudFormat::Ply),
    };
    let back = |pts: &[Vec3]| pts.iter().map(|&p| n.invert(p)).collect::<Vec<_>>();
    match applications::upsample(&ck.field, &to_field_frame(&raw, &ck)?, &cfg, a.seed) {
        Ok(up) => {
            let path = a.out.join(format!("upsampled.{ext}"));
            write_point_cloud(&path, &back(up.cloud.points()), format)?;
            println!(
                "points {}  rounds {}  mean_residual {:.3e}",
                up.cloud.len(),
                up.rounds,
                up.mean_residual
            );
            manifest.outputs.push(path);
            finish(&mut manifest, &a.out, start)?;
            Ok(())
        }
        Err(UpsampleError::Invalid(e)) => Err(e.into()),
        Err(UpsampleError::Shortfall(s)) => {
            if !s.gathered.is_empty() {
                let path = a.out.join(format!("upsampled.partial.{ext}"));
                write_point_cloud(&path, &back(&s.gathered), format)?;
                manifest.outputs.push(path);
            }
            manifest.status = format!("partial: {s}");
            finish(&mut manifest, &a.out, start)?;
            Err(CliError::Shortfall(s))
        }
    }
}

enum Loaded {
    Mesh(TriangleMesh),
    Cloud(PointCloud),
}

fn load_any(path: &Path) -> Result<Loaded, Error> {
    if let Some(format) = MeshFormat::from_path(path) {
        let mesh = load_mesh(path, format)?;
        if !mesh.is_empty() {
            return Ok(Loaded::Mesh(mesh));
        }
    }
    load_cloud(path).map(Loaded::Cloud)
}

pub fn eval(a: &EvalArgs, threads: usize) -> CliResult {
    let start = Instant::now();
    let pred = load_any(&a.pred)?;
    let gt = load_any(&a.gt)?;
    prepare_run_dir(&a.out)?;
    let mut manifest = RunManifest::new("eval", a, threads);
    manifest.add_input(&a.pred)?;
    manifest.add_input(&a.gt)?;
    manifest.seed = Some(a.seed);
    let samples = |l: &Loaded, seed: u64| -> Result<PointCloud, Error> {
        match l {
            Loaded::Mesh(m) => metrics::sample_mesh(m, a.samples, seed),
            Loaded::Cloud(c) => Ok(c.clone()),
        }
    };
    let ps = samples(&pred, a.seed)?;
    let gs = samples(&gt, a.seed.wrapping_add(1))?;
    let mut report = EvalReport::compare(&ps, &gs, &a.thresholds)?;
    if let Loaded::Mesh(m) = &gt {
        report.p2f = Some(metrics::p2f(ps.points(), m)?);
    }
    if let (Loaded::Cloud(p), Loaded::Cloud(g)) = (&pred, &gt) {
        if let (Some(np), Some(ng)) = (p.normals(), g.normals()) {
            if np.len() == ng.len() {
                report.rmse_deg = Some(metrics::rmse_unoriented(np, ng)?);
            }
        }
    }
    let table = a.out.join("report.tsv");
    let kv = a.out.join("report.txt");
    write_text(&table, &report.to_table())?;
    write_text(&kv, &report.to_key_value())?;
    print!("{}", report.to_table());
    manifest.outputs.extend([table, kv]);
    finish(&mut manifest, &a.out, start)?;
    Ok(())
}

pub fn fixtures(a: &FixturesArgs, threads: usize) -> CliResult {
    let start = Instant::now();
    let shapes: Vec<AnalyticShape> = if a.shapes.is_empty() {
        AnalyticShape::all().to_vec()
    } else {
        a.shapes
            .iter()
            .map(|s| s.parse::<AnalyticShape>())
            .collect::<Result<_, _>>()?
    };
    if a.count == 0 {
        return Err(Error::InvalidArgument("--count must be positive".into()).into());
    }
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        return Err(Error::InvalidArgument(format!("--noise must be non-negative, got {}", a.noise)).into());
    }
    prepare_run_dir(&a.out)?;
    let mut manifest = RunManifest::new("fixtures", a, threads);
    manifest.seed = Some(a.seed);
    for shape in shapes {
        let cloud = if a.noise > 0.0 {
            shape.sample_surface_noisy(a.count, a.seed, a.noise)?
        } else {
            shape.sample_surface(a.count, a.seed)?
        };
        let path = a.out.join(format!("{}.xyz", shape.name()));
        match (a.with_normals, cloud.normals()) {
            (true, Some(n)) => write_normals(&path, cloud.points(), n)?,
            _ => write_point_cloud(&path, cloud.points(), CloudFormat::Xyz)?,
        }
        println!("{}", path.display());
        manifest.outputs.push(path);
    }
    finish(&mut manifest, &a.out, start)?;
    Ok(())
}

fn args_of<T: DeserializeOwned>(m: &RunManifest) -> Result<T, Error> {
    serde_json::from_value(m.args.clone()).map_err(|e| Error::Parse {
        line: 0,
        message: format!("manifest arguments for '{}': {e}", m.command),
    })
}

fn with_out<T>(mut args: T, out: &Path, set: impl Fn(&mut T, PathBuf)) -> T {
    set(&mut args, out.to_path_buf());
    args
}

/// Repeat a recorded run with its recorded arguments, config snapshot and
/// thread count, writing into a new directory.
pub fn rerun(a: &RerunArgs) -> CliResult {
    let m = RunManifest::read(&a.manifest)?;
    m.check_inputs()?;
    udf_core::parallel::set_thread_limit(m.threads);
    let t = m.threads;
    match m.command.as_str() {
        "fit" => {
            let args = with_out(args_of::<FitArgs>(&m)?, &a.out, |x, o| x.out = o);
            fit(&args, t, m.config.as_deref())
        }
        "reconstruct" => reconstruct(&with_out(args_of::<ReconstructArgs>(&m)?, &a.out, |x, o| x.out = o), t),
        "normals" => normals(&with_out(args_of::<NormalsArgs>(&m)?, &a.out, |x, o| x.out = o), t),
        "upsample" => upsample(&with_out(args_of::<UpsampleArgs>(&m)?, &a.out, |x, o| x.out = o), t),
        "eval" => eval(&with_out(args_of::<EvalArgs>(&m)?, &a.out, |x, o| x.out = o), t),
        "fixtures" => fixtures(&with_out(args_of::<FixturesArgs>(&m)?, &a.out, |x, o| x.out = o), t),
        other => Err(Error::Parse {
            line: 0,
            message: format!("manifest names unknown command '{other}'"),
        }
        .into()),
    }
}
