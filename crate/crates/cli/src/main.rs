//! `eitga`: meshes, phantoms, simulated measurements, GA / NR / hybrid
//! reconstruction, rendering and solver comparison.

mod config;
mod report;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eitga_core::baseline::{run_hybrid, run_nr};
use eitga_core::experiment::{add_noise, image_metrics, Disturbance, NoiseMode, NoiseSpec, Phantom, PhantomSpec};
use eitga_core::forward::{ForwardModel, MeasurementSet, Protocol, ResistivityField};
use eitga_core::ga::{run_ga, InitMode};
use eitga_core::mesh::{build_disk_mesh, validate, Mesh};
use eitga_core::objective::{Objective, Regularizer};
use eitga_core::recon::write_trace_csv;
use eitga_core::render::{render_svg, RenderOptions};
use eitga_core::seed::component_seed;
use eitga_core::{Error, Result};

use config::{RunConfig, Solver};
use report::{compare, RunSummary};

#[derive(Parser)]
#[command(name = "eitga", version, about = "2D electrical impedance tomography with a genetic algorithm")]
struct Cli {
    /// Directory that relative output paths are resolved against.
    #[arg(long, env = "EITGA_OUT", global = true)]
    out_root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the concentric-ring disk mesh.
    Mesh(MeshCmd),
    /// Rasterize a phantom spec onto a mesh.
    Phantom(PhantomCmd),
    /// Compute boundary measurements of a phantom, optionally with noise.
    Simulate(SimulateCmd),
    /// Reconstruct resistivity from measurements.
    Reconstruct(ReconstructCmd),
    /// Render a per-element field as SVG.
    Render(RenderCmd),
    /// Tabulate cost and quality of finished reconstruction runs.
    Compare(CompareCmd),
}

#[derive(Args)]
struct MeshCmd {
    #[arg(long, default_value_t = 12)]
    rings: usize,
    #[arg(long, default_value_t = 16)]
    electrodes: usize,
    #[arg(long, default_value = "mesh.txt")]
    out: PathBuf,
}

/// Mesh source shared by the commands that need one.
#[derive(Args)]
struct MeshSource {
    /// Mesh file written by `eitga mesh`.
    #[arg(long, conflicts_with_all = ["rings", "electrodes"])]
    mesh: Option<PathBuf>,
    #[arg(long)]
    rings: Option<usize>,
    #[arg(long)]
    electrodes: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Reference,
    TwoAnomaly,
}

#[derive(Args)]
struct PhantomCmd {
    #[command(flatten)]
    mesh: MeshSource,
    /// Phantom spec file (`background v` and `anomaly cx cy r value` lines).
    #[arg(long, conflicts_with = "preset")]
    spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "reference")]
    preset: Preset,
    /// Per-element field output.
    #[arg(long, default_value = "phantom_field.txt")]
    out: PathBuf,
    /// Also write the phantom spec used.
    #[arg(long)]
    spec_out: Option<PathBuf>,
    /// Also render the field.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateCmd {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    mesh: MeshSource,
    /// Phantom spec file.
    #[arg(long, conflicts_with = "field")]
    phantom: Option<PathBuf>,
    /// Per-element resistivity file instead of a phantom spec.
    #[arg(long)]
    field: Option<PathBuf>,
    /// Relative noise level; writes the noisy copy when given.
    #[arg(long)]
    noise: Option<f64>,
    /// Scale noise per channel instead of by the global RMS.
    #[arg(long)]
    per_channel: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "y_clean.dat")]
    out: PathBuf,
    #[arg(long, default_value = "y.dat")]
    noisy_out: PathBuf,
}

#[derive(Args)]
struct ReconstructCmd {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    mesh: MeshSource,
    #[arg(long, visible_alias = "noise-file")]
    measurements: Option<PathBuf>,
    #[arg(long, value_enum)]
    solver: Option<Solver>,
    /// Regularization weight of the objective.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    regularizer: Option<String>,
    /// Regularization weight of the squared-misfit NR objective.
    #[arg(long)]
    nr_alpha: Option<f64>,
    #[arg(long)]
    nr_iterations: Option<usize>,
    #[arg(long)]
    generations: Option<usize>,
    #[arg(long)]
    population: Option<usize>,
    /// Disturbance scale between the NR and GA stages of a hybrid run.
    #[arg(long)]
    disturb: Option<f64>,
    /// Centre the GA's initial population on the warm start with this
    /// log-normal spread.
    #[arg(long)]
    init_spread: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Phantom spec of the true scene, for image metrics.
    #[arg(long)]
    phantom: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Zero all wall-clock fields so outputs are byte-reproducible.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct RenderCmd {
    #[command(flatten)]
    mesh: MeshSource,
    #[arg(long)]
    field: PathBuf,
    #[arg(long, default_value = "field.svg")]
    out: PathBuf,
    /// Fixed color range instead of the field's min and max.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    range: Option<Vec<f64>>,
    #[arg(long)]
    title: Option<String>,
}

#[derive(Args)]
struct CompareCmd {
    /// Output directories of `eitga reconstruct`.
    #[arg(required = true, num_args = 2..)]
    runs: Vec<PathBuf>,
    #[arg(long, default_value = "compare.json")]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::Geometry(_) => 2,
        Error::Io(_) | Error::Parse { .. } => 3,
        Error::Numerical(_) => 4,
    }
}

struct Ctx {
    out_root: Option<PathBuf>,
}

impl Ctx {
    fn out(&self, p: &Path) -> PathBuf {
        match &self.out_root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn create(&self, p: &Path) -> Result<BufWriter<File>> {
        let p = self.out(p);
        if let Some(dir) = p.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        Ok(BufWriter::new(File::create(&p).map_err(|e| with_path(e, &p))?))
    }

    fn write(&self, p: &Path, bytes: &[u8]) -> Result<()> {
        use std::io::Write;
        let mut w = self.create(p)?;
        w.write_all(bytes)?;
        w.flush()?;
        Ok(())
    }
}

fn with_path(e: std::io::Error, p: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))
}

fn open(p: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(p).map_err(|e| with_path(e, p))?))
}

fn load_mesh(src: &MeshSource, cfg: &config::MeshConfig) -> Result<Mesh> {
    let flags = src.rings.is_some() || src.electrodes.is_some();
    if let Some(p) = src.mesh.as_ref().or(cfg.path.as_ref().filter(|_| !flags)) {
        return Mesh::read_from(open(p)?);
    }
    build_disk_mesh(src.rings.unwrap_or(cfg.rings), src.electrodes.unwrap_or(cfg.electrodes))
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn cmd_mesh(ctx: &Ctx, a: &MeshCmd) -> Result<()> {
    let mesh = build_disk_mesh(a.rings, a.electrodes)?;
    mesh.write_to(ctx.create(&a.out)?)?;
    println!(
        "nodes {} elements {} electrodes {} boundary {}",
        mesh.n_nodes(),
        mesh.n_elements(),
        mesh.n_electrodes(),
        mesh.boundary_ring.len()
    );
    let problems = validate(&mesh);
    if problems.is_empty() {
        println!("valid");
    }
    for p in problems {
        eprintln!("warning: {p}");
    }
    Ok(())
}

fn phantom_spec(path: Option<&PathBuf>, preset: Preset) -> Result<PhantomSpec> {
    match path {
        Some(p) => PhantomSpec::read_from(open(p)?),
        None => Ok(match preset {
            Preset::Reference => PhantomSpec::reference(),
            Preset::TwoAnomaly => PhantomSpec::two_anomaly(),
        }),
    }
}

fn cmd_phantom(ctx: &Ctx, a: &PhantomCmd) -> Result<()> {
    let mesh = load_mesh(&a.mesh, &config::MeshConfig::default())?;
    let spec = phantom_spec(a.spec.as_ref(), a.preset)?;
    let phantom = Phantom::from_spec(&mesh, &spec)?;
    phantom.rho_true.write_to(ctx.create(&a.out)?)?;
    if let Some(p) = &a.spec_out {
        spec.write_to(ctx.create(p)?)?;
    }
    if let Some(p) = &a.svg {
        let svg = render_svg(&mesh, &phantom.rho_true, &RenderOptions::default())?;
        ctx.write(p, svg.as_bytes())?;
    }
    let flagged = phantom.rho_true.iter().filter(|&&r| r != spec.background).count();
    println!("elements {} anomalous {}", mesh.n_elements(), flagged);
    Ok(())
}

fn cmd_simulate(ctx: &Ctx, a: &SimulateCmd) -> Result<()> {
    let mut cfg = load_config(a.config.as_ref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.noise {
        cfg.noise.level = n;
    }
    if a.per_channel {
        cfg.noise.mode = NoiseMode::PerChannel;
    }
    if let Some(p) = &a.phantom {
        cfg.phantom = Some(p.clone());
    }
    cfg.check()?;
    let mesh = load_mesh(&a.mesh, &cfg.mesh)?;
    let rho = match (&a.field, &cfg.phantom) {
        (Some(f), _) => ResistivityField::read_from(open(f)?)?,
        (None, Some(p)) => Phantom::from_spec(&mesh, &PhantomSpec::read_from(open(p)?)?)?.rho_true,
        (None, None) => Phantom::from_spec(&mesh, &PhantomSpec::reference())?.rho_true,
    };
    if rho.len() != mesh.n_elements() {
        return Err(Error::Domain(format!(
            "field has {} values, mesh has {} elements",
            rho.len(),
            mesh.n_elements()
        )));
    }
    let protocol = Protocol::adjacent(mesh.n_electrodes(), cfg.current)?;
    let model = ForwardModel::new(&mesh, &protocol)?;
    let y = model.forward(&rho)?;
    y.write_to(ctx.create(&a.out)?)?;
    println!("measurements {}", y.values.len());
    if a.noise.is_some() || cfg.noise.level > 0.0 {
        let spec = NoiseSpec {
            level: cfg.noise.level,
            seed: component_seed(cfg.seed, "noise"),
            mode: cfg.noise.mode,
        };
        add_noise(&y, &spec)?.write_to(ctx.create(&a.noisy_out)?)?;
    }
    Ok(())
}

fn cmd_reconstruct(ctx: &Ctx, a: &ReconstructCmd) -> Result<()> {
    let mut cfg = load_config(a.config.as_ref())?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.solver {
        cfg.solver = v;
    }
    if let Some(v) = a.alpha {
        cfg.objective.alpha = v;
    }
    if let Some(v) = &a.regularizer {
        cfg.objective.regularizer = v.parse::<Regularizer>()?;
    }
    if let Some(v) = a.nr_alpha {
        cfg.nr.alpha = v;
    }
    if let Some(v) = a.nr_iterations {
        cfg.nr.max_iterations = v;
    }
    if let Some(v) = a.generations {
        cfg.ga.max_generations = v;
    }
    if let Some(v) = a.population {
        cfg.ga.population_size = v;
    }
    if let Some(v) = a.disturb {
        cfg.disturb = Some(v);
    }
    if let Some(v) = a.init_spread {
        cfg.ga.init = InitMode::AroundWarmStart { spread: v };
    }
    if let Some(v) = &a.measurements {
        cfg.measurements = Some(v.clone());
    }
    if let Some(v) = &a.phantom {
        cfg.phantom = Some(v.clone());
    }
    if let Some(v) = &a.out_dir {
        cfg.out_dir = Some(v.clone());
    }
    if a.no_timing {
        cfg.timing = false;
    }
    if let Some(v) = &a.mesh.mesh {
        cfg.mesh.path = Some(v.clone());
    }
    if let Some(v) = a.mesh.rings {
        cfg.mesh = config::MeshConfig { path: None, rings: v, ..cfg.mesh };
    }
    if let Some(v) = a.mesh.electrodes {
        cfg.mesh = config::MeshConfig { path: None, electrodes: v, ..cfg.mesh };
    }
    cfg.ga.seed = component_seed(cfg.seed, "ga");
    cfg.check()?;

    let y_path = cfg
        .measurements
        .clone()
        .ok_or_else(|| Error::Config("no measurements given (--measurements or `measurements` in the config)".into()))?;
    let mesh = load_mesh(&a.mesh, &cfg.mesh)?;
    let y = MeasurementSet::read_from(open(&y_path)?)?;
    let protocol = Protocol::adjacent(mesh.n_electrodes(), cfg.current)?;
    let model = ForwardModel::new(&mesh, &protocol)?;
    let objective = Objective::new(&model, &y, cfg.objective.clone())?;
    let phantom = match &cfg.phantom {
        Some(p) => Some(Phantom::from_spec(&mesh, &PhantomSpec::read_from(open(p)?)?)?),
        None => None,
    };

    let mut stages = Vec::new();
    let mut result = match cfg.solver {
        Solver::Ga => run_ga(&objective, &cfg.ga, None)?,
        Solver::Nr => {
            let rho0 = vec![cfg.nr.rho_start; mesh.n_elements()];
            run_nr(&objective, &cfg.nr, &rho0)?
        }
        Solver::Hybrid => {
            let disturbance = cfg.disturb.map(|scale| Disturbance {
                scale,
                seed: component_seed(cfg.seed, "disturb"),
            });
            let h = run_hybrid(&objective, &cfg.nr, &cfg.ga, disturbance.as_ref())?;
            stages = report::stage_totals(&h.result.trace);
            h.result
        }
    };
    if !cfg.timing {
        result.strip_timing();
    }
    let metrics = match &phantom {
        Some(p) => Some(image_metrics(&mesh, &result.rho_est, p)?),
        None => None,
    };

    let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("run"));
    result.rho_est.write_to(ctx.create(&dir.join("estimate.txt"))?)?;
    write_trace_csv(&result.trace, ctx.create(&dir.join("trace.csv"))?)?;
    let summary = RunSummary::new(&cfg, &result, metrics, stages);
    ctx.write(&dir.join("result.json"), summary.to_json().as_bytes())?;
    let svg = render_svg(
        &mesh,
        &result.rho_est,
        &RenderOptions {
            range: None,
            title: Some(format!("{} estimate", cfg.solver.name())),
        },
    )?;
    ctx.write(&dir.join("estimate.svg"), svg.as_bytes())?;
    println!(
        "solver {} termination {} objective {:.6e} forward_solves {} jacobians {}",
        cfg.solver.name(),
        result.termination,
        result.objective.total,
        result.forward_solve_count,
        result.jacobian_count
    );
    Ok(())
}

fn cmd_render(ctx: &Ctx, a: &RenderCmd) -> Result<()> {
    let mesh = load_mesh(&a.mesh, &config::MeshConfig::default())?;
    let field = ResistivityField::read_from(open(&a.field)?)?;
    let options = RenderOptions {
        range: a.range.as_ref().map(|r| (r[0], r[1])),
        title: a.title.clone(),
    };
    ctx.write(&a.out, render_svg(&mesh, &field, &options)?.as_bytes())
}

fn cmd_compare(ctx: &Ctx, a: &CompareCmd) -> Result<()> {
    // run directories written under the output root are found there too
    let runs: Vec<PathBuf> = a
        .runs
        .iter()
        .map(|p| {
            let under_root = ctx.out(p);
            if !p.exists() && under_root.exists() {
                under_root
            } else {
                p.clone()
            }
        })
        .collect();
    let report = compare(&runs)?;
    print!("{}", report.table());
    ctx.write(&a.out, report.to_json().as_bytes())
}

fn run(cli: &Cli) -> Result<()> {
    let ctx = Ctx {
        out_root: cli.out_root.clone(),
    };
    match &cli.command {
        Command::Mesh(a) => cmd_mesh(&ctx, a),
        Command::Phantom(a) => cmd_phantom(&ctx, a),
        Command::Simulate(a) => cmd_simulate(&ctx, a),
        Command::Reconstruct(a) => cmd_reconstruct(&ctx, a),
        Command::Render(a) => cmd_render(&ctx, a),
        Command::Compare(a) => cmd_compare(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
