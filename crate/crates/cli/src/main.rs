//! `gpdf`: build, query, mesh, register against and plan through GP distance fields.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gpdf::bench::{run_benchmark, save_report_csv};
use gpdf::io::{self, PointFormat};
use gpdf::odometry::{register_scan, RegistrationOptions};
use gpdf::persist::{self, Model};
use gpdf::planner::{path_clearance, plan_path};
use gpdf::{
    mesher, scenes, DistanceField, Field, FieldConfig, FieldVariant, GridSpec, KernelFamily, KernelSpec, PlanConfig,
    PointCloud, Pose, SubmapGrid, SubmapParams,
};

#[derive(Parser, Debug)]
#[command(name = "gpdf", version, about = "Gaussian-process distance fields from point clouds")]
struct Cli {
    /// Seed for every random choice a command makes.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a field (or a submap grid) to a point cloud and save it.
    Build(BuildArgs),
    /// Print "d gx gy [gz] nx ny [nz] u" at one point.
    Query(QueryArgs),
    /// Extract the iso-surface (3D, PLY) or iso-contours (2D, polylines).
    Mesh(MeshArgs),
    /// Register one or more scans against the field.
    Odom(OdomArgs),
    /// Optimise a collision-free path between two points.
    Plan(PlanArgs),
    /// Compare the field with the brute-force oracle on a grid band.
    Bench(BenchArgs),
    /// Write a synthetic scene as an XYZ file.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    Loggpis,
    Reverting,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KernelArg {
    Se,
    Matern12,
    Matern32,
}

impl From<KernelArg> for KernelFamily {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Se => KernelFamily::SquaredExponential,
            KernelArg::Matern12 => KernelFamily::Matern12,
            KernelArg::Matern32 => KernelFamily::Matern32,
        }
    }
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, value_enum)]
    variant: VariantArg,
    /// Decay rate of the logarithmic transform (1/m).
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    length_scale: Option<f64>,
    /// Observation noise variance.
    #[arg(long)]
    noise: Option<f64>,
    /// Kernel family; defaults to SE for reverting and Matern12 for Log-GPIS.
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    /// Partition into cubic blocks of this edge length instead of one field.
    #[arg(long)]
    block_size: Option<f64>,
    /// Halo margin around each block (default: a quarter of the block size).
    #[arg(long, requires = "block_size")]
    halo: Option<f64>,
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[arg(short, long)]
    model: PathBuf,
    /// Query point, "x y [z]".
    #[arg(short, long, allow_hyphen_values = true)]
    point: String,
}

#[derive(Args, Debug)]
struct MeshArgs {
    #[arg(short, long)]
    model: PathBuf,
    /// "x0 y0 [z0] x1 y1 [z1]".
    #[arg(long, allow_hyphen_values = true)]
    bbox: String,
    #[arg(long)]
    cell: f64,
    /// Iso level (default: the cell size).
    #[arg(long)]
    iso: Option<f64>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct OdomArgs {
    #[arg(short, long)]
    model: PathBuf,
    /// Scan files, registered in order; each result seeds the next.
    #[arg(short, long, required = true, num_args = 1..)]
    scan: Vec<PathBuf>,
    /// Initial pose, "tx ty theta" in 2D or "tx ty tz rx ry rz" in 3D.
    #[arg(long, allow_hyphen_values = true)]
    init: Option<String>,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[arg(short, long)]
    model: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    start: String,
    #[arg(long, allow_hyphen_values = true)]
    goal: String,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    waypoints: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(short, long)]
    output: PathBuf,
    /// Also write the per-iteration cost as CSV.
    #[arg(long)]
    cost_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(short, long)]
    model: PathBuf,
    /// Reference cloud for the oracle.
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    bbox: String,
    #[arg(long)]
    cell: f64,
    /// Oracle distance band, "a b".
    #[arg(long, allow_hyphen_values = true)]
    band: String,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SceneArg {
    Circle,
    Sphere,
    Lshape,
    Ball,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum)]
    scene: SceneArg,
    #[arg(short = 'n', long, default_value_t = 256)]
    points: usize,
    /// Circle or sphere radius, L-shape wall length, ball radius.
    #[arg(long, default_value_t = 1.0)]
    size: f64,
    /// Dimension of the ball scene.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(2..=3))]
    dim: u8,
    /// Standard deviation of Gaussian noise added to every coordinate.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Rigid transform applied to the points, as for `odom --init`.
    #[arg(long, allow_hyphen_values = true)]
    transform: Option<String>,
    #[arg(short, long)]
    output: PathBuf,
}

fn parse_floats(s: &str, what: &str, lens: &[usize]) -> anyhow::Result<Vec<f64>> {
    let v = s
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .with_context(|| format!("{what}: {t:?} is not a number"))
        })
        .collect::<anyhow::Result<Vec<f64>>>()?;
    if !lens.contains(&v.len()) {
        bail!("{what}: expected {lens:?} numbers, got {}", v.len());
    }
    if v.iter().any(|x| !x.is_finite()) {
        bail!("{what}: values must be finite");
    }
    Ok(v)
}

fn parse_pose(s: &str, dim: usize, what: &str) -> anyhow::Result<Pose> {
    let v = parse_floats(s, what, &[if dim == 2 { 3 } else { 6 }])?;
    Ok(if dim == 2 {
        Pose::from_2d(v[0], v[1], v[2])
    } else {
        Pose::from_translation_rotvec([v[0], v[1], v[2]], [v[3], v[4], v[5]])
    })
}

fn load_cloud(path: &Path) -> anyhow::Result<PointCloud> {
    io::load_point_cloud(path, PointFormat::from_path(path)).with_context(|| format!("reading {}", path.display()))
}

fn load_model(path: &Path) -> anyhow::Result<Model> {
    persist::load_model(path).with_context(|| format!("reading model {}", path.display()))
}

fn grid_from_bbox(bbox: &str, cell: f64, dim: usize) -> anyhow::Result<GridSpec> {
    let v = parse_floats(bbox, "--bbox", &[2 * dim])?;
    Ok(GridSpec::new(v[..dim].to_vec(), v[dim..].to_vec(), cell))
}

fn fmt_row(vals: impl IntoIterator<Item = f64>) -> String {
    vals.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn build_config(a: &BuildArgs, cloud: &PointCloud) -> anyhow::Result<FieldConfig> {
    let mut cfg = match a.variant {
        VariantArg::Reverting => {
            if a.lambda.is_some() {
                bail!("--lambda applies to the loggpis variant only");
            }
            let family = a.kernel.map_or(KernelFamily::SquaredExponential, Into::into);
            match a.length_scale {
                Some(l) => FieldConfig::reverting(KernelSpec::new(family, l, 1.0)?),
                None => {
                    let mut cfg = FieldConfig::from_cloud(cloud, FieldVariant::Reverting)?;
                    cfg.kernel = KernelSpec::new(family, cfg.kernel.length_scale, 1.0)?;
                    cfg
                }
            }
        }
        VariantArg::Loggpis => {
            let family = a.kernel.map_or(KernelFamily::Matern12, Into::into);
            match (a.lambda, a.length_scale) {
                (Some(_), Some(_)) => bail!("give either --lambda or --length-scale, not both"),
                (Some(rate), None) => FieldConfig::log_gpis(family, rate)?,
                (None, Some(l)) => {
                    let mut cfg = FieldConfig::log_gpis(family, 1.0)?;
                    cfg.kernel = KernelSpec::new(family, l, 1.0)?;
                    cfg
                }
                (None, None) => {
                    let rate = FieldConfig::from_cloud(cloud, FieldVariant::LogGpis)?
                        .kernel
                        .logpis_rate;
                    FieldConfig::log_gpis(family, rate)?
                }
            }
        }
    };
    if let Some(noise) = a.noise {
        cfg = cfg.with_noise(noise);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_build(a: BuildArgs) -> anyhow::Result<()> {
    let cloud = load_cloud(&a.input)?;
    let cfg = build_config(&a, &cloud)?;
    match a.block_size {
        None => {
            let field = Field::build(&cloud, cfg)?;
            persist::save_field(&a.output, &field)?;
            println!("field: {} points, dim {}", field.points().len(), field.dim());
        }
        Some(b) => {
            let params = SubmapParams {
                block_size: b,
                halo_margin: a.halo.unwrap_or(b / 4.0),
                max_points_per_block: 400,
                downsample_resolution: 1e-3 * b,
            };
            let mut grid = SubmapGrid::new(cloud.dim(), cfg, params)?;
            let report = grid.insert_points(&cloud, &Pose::identity(cloud.dim()))?;
            persist::save_grid(&a.output, &grid)?;
            println!(
                "submaps: {} blocks, {} points inserted, {} duplicates, {} over capacity",
                grid.block_count(),
                report.inserted,
                report.duplicates,
                report.overflow
            );
        }
    }
    Ok(())
}

fn cmd_query(a: QueryArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let q = parse_floats(&a.point, "--point", &[model.dim()])?;
    let s = model.sample(&q)?;
    let vals = std::iter::once(s.distance)
        .chain(s.gradient.iter().copied())
        .chain(s.normal.iter().copied())
        .chain(std::iter::once(s.uncertainty));
    println!("{}", fmt_row(vals));
    Ok(())
}

fn cmd_mesh(a: MeshArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let mut grid = grid_from_bbox(&a.bbox, a.cell, model.dim())?;
    if let Some(iso) = a.iso {
        grid = grid.with_iso(iso);
    }
    if model.dim() == 3 {
        let mesh = mesher::extract_isosurface_3d(&model, &grid)?;
        io::save_mesh_ply(&a.output, &mesh)?;
        println!(
            "mesh: {} vertices, {} triangles",
            mesh.vertices.len(),
            mesh.triangles.len()
        );
    } else {
        let lines = mesher::extract_contour_2d(&model, &grid)?;
        io::save_polylines(&a.output, &lines)?;
        println!("contour: {} polylines", lines.len());
    }
    Ok(())
}

fn cmd_odom(a: OdomArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let dim = model.dim();
    let mut pose = match &a.init {
        Some(s) => parse_pose(s, dim, "--init")?,
        None => Pose::identity(dim),
    };
    let opts = RegistrationOptions {
        max_iters: a.max_iters,
        ..RegistrationOptions::default()
    };
    let mut poses = Vec::with_capacity(a.scan.len());
    for (i, path) in a.scan.iter().enumerate() {
        let scan = load_cloud(path)?;
        let report = register_scan(&model, &scan, &pose, &opts)?;
        eprintln!(
            "scan {i}: {} iterations, rmse {} -> {}, converged {}",
            report.iterations, report.initial_rmse, report.final_rmse, report.converged
        );
        pose = report.pose;
        poses.push((i as f64, pose));
    }
    io::save_trajectory(&a.output, &poses)?;
    Ok(())
}

fn cmd_plan(a: PlanArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let dim = model.dim();
    let start = parse_floats(&a.start, "--start", &[dim])?;
    let goal = parse_floats(&a.goal, "--goal", &[dim])?;
    let defaults = PlanConfig::default();
    let cfg = PlanConfig {
        safety_margin: a.margin.unwrap_or(defaults.safety_margin),
        num_waypoints: a.waypoints.unwrap_or(defaults.num_waypoints),
        max_iters: a.max_iters.unwrap_or(defaults.max_iters),
        ..defaults
    };
    let result = plan_path(&model, &start, &goal, &cfg)?;
    io::save_path(&a.output, &result.trajectory)?;
    if let Some(p) = &a.cost_csv {
        io::save_cost_csv(p, &result.cost_history)?;
    }
    println!(
        "plan: {} iterations, final cost {}, clearance {}",
        result.iterations,
        result.cost_history.last().copied().unwrap_or(f64::NAN),
        path_clearance(&model, &result.trajectory)?
    );
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let cloud = load_cloud(&a.input)?;
    let grid = grid_from_bbox(&a.bbox, a.cell, model.dim())?;
    let band = parse_floats(&a.band, "--band", &[2])?;
    let report = run_benchmark(&model, &cloud, &grid, [band[0], band[1]])?;
    save_report_csv(&a.output, &report)?;
    let s = report.summary;
    println!(
        "bench: {} queries, rmse {}, mae {}, max {}, {:.3} s",
        s.count,
        s.rmse,
        s.mae,
        s.max_error,
        s.wall_time.as_secs_f64()
    );
    Ok(())
}

fn cmd_synth(a: SynthArgs, seed: u64) -> anyhow::Result<()> {
    if a.points == 0 {
        bail!("--points must be positive");
    }
    let cloud = match a.scene {
        SceneArg::Circle => scenes::circle(a.points, a.size, [0.0, 0.0]),
        SceneArg::Sphere => scenes::sphere(a.points, a.size),
        SceneArg::Lshape => scenes::l_shape(a.points, a.size),
        SceneArg::Ball => scenes::ball(a.points, a.size, a.dim as usize, seed),
    };
    let cloud = if a.noise > 0.0 {
        scenes::jitter(&cloud, a.noise, seed)
    } else {
        cloud
    };
    let cloud = match &a.transform {
        Some(s) => {
            let pose = parse_pose(s, cloud.dim(), "--transform")?;
            let flat = cloud.iter().flat_map(|p| pose.apply(p)).collect();
            PointCloud::from_flat(cloud.dim(), flat)?
        }
        None => cloud,
    };
    io::save_xyz(&a.output, &cloud)?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Build(a) => cmd_build(a),
        Command::Query(a) => cmd_query(a),
        Command::Mesh(a) => cmd_mesh(a),
        Command::Odom(a) => cmd_odom(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Synth(a) => cmd_synth(a, cli.seed),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .any(|e| e.downcast_ref::<gpdf::Error>().is_some_and(gpdf::Error::is_numerical));
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
