//! Command-line definitions and drivers. Each driver writes its report to
//! `out` and returns the exit code; diagnostics go through `log`.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hypflow::curvature;
use hypflow::fixtures;
use hypflow::flows::{self, ConformalMesh, FlowConfig, FlowKind, FlowStatus, NewtonConfig, Regime};
use hypflow::surface::{self, MarkedSurface, PhMetric, TOL_DELAUNAY};
use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::phm::PhmFile;
use crate::steplog::{self, LogWriter};
use crate::{values, Exit};

#[derive(Debug, Parser)]
#[command(name = "hypflow", version, about = "Curvature flows with surgery on piecewise hyperbolic surfaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a .phm file and print its combinatorics and admissibility.
    Validate {
        path: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Print per-vertex curvature, Gauss-Bonnet residual and Delaunay status.
    Report {
        path: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        alpha: f64,
        /// Per-vertex conformal factors applied before reporting.
        #[arg(long)]
        u: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Run the alpha-Yamabe or alpha-Calabi flow with surgery.
    Flow(FlowArgs),
    /// Solve for prescribed alpha-curvature with damped Newton.
    Newton(NewtonArgs),
    /// Write a built-in mesh as a .phm file.
    Fixture {
        kind: FixtureKind,
        #[arg(long, default_value_t = 4)]
        rows: usize,
        #[arg(long, default_value_t = 4)]
        cols: usize,
        /// Relative perturbation of the unit edge lengths.
        #[arg(long, default_value_t = 0.1)]
        perturb: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FixtureKind {
    Genus2,
    Torus,
    Tetra,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FlowChoice {
    Yamabe,
    Calabi,
}

#[derive(Debug, Args)]
pub struct TargetArgs {
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub alpha: f64,
    /// Constant target; also the default for vertices missing from --target.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub target_const: f64,
    /// Per-vertex targets, `t <i> <value>` per line.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// JSON lines log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Where to write the final conformal factors.
    #[arg(long)]
    pub u_out: Option<PathBuf>,
    /// Where to dump the state on failure; defaults to `<input>.failed.phm`.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    pub path: PathBuf,
    #[arg(long, value_enum, default_value_t = FlowChoice::Yamabe)]
    pub flow: FlowChoice,
    #[command(flatten)]
    pub target: TargetArgs,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub dt_max: Option<f64>,
    /// JSON file with any of dt_init, dt_min, dt_max, tol, max_steps.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NewtonArgs {
    pub path: PathBuf,
    #[command(flatten)]
    pub target: TargetArgs,
    #[arg(long, default_value_t = flows::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// Seed for the random initial conformal factor.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Half-width of the uniform initial conformal factor.
    #[arg(long, default_value_t = 0.1)]
    pub init_amp: f64,
    /// Solve even when alpha * target > 0 somewhere.
    #[arg(long)]
    pub force: bool,
}

/// Optional integrator settings read from `--config`.
#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSettings {
    pub dt_init: Option<f64>,
    pub dt_min: Option<f64>,
    pub dt_max: Option<f64>,
    pub tol: Option<f64>,
    pub max_steps: Option<usize>,
}

/// Input that failed to parse or validate; maps to exit 1.
#[derive(Debug)]
pub struct InvalidInput(pub String);

impl fmt::Display for InvalidInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InvalidInput {}

fn invalid(path: &Path, err: impl fmt::Display) -> anyhow::Error {
    InvalidInput(format!("{}: {err}", path.display())).into()
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| invalid(path, e))
}

/// Parses and validates a `.phm` file.
pub fn load(path: &Path) -> Result<(MarkedSurface, PhMetric)> {
    let file = PhmFile::parse(&read(path)?).map_err(|e| invalid(path, e))?;
    let (surf, metric) = file.to_surface().map_err(|e| invalid(path, e))?;
    surface::validate(&surf, &metric).map_err(|e| invalid(path, e))?;
    Ok((surf, metric))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<Exit> {
    match cli.command {
        Command::Validate { path, json } => validate(&path, json, out),
        Command::Report { path, alpha, u, json } => report(&path, alpha, u.as_deref(), json, out),
        Command::Flow(args) => flow(&args, out),
        Command::Newton(args) => newton(&args, out),
        Command::Fixture { kind, rows, cols, perturb, seed, output } => {
            let surf = match kind {
                FixtureKind::Genus2 => fixtures::genus_two_grid(rows, cols),
                FixtureKind::Torus => fixtures::torus(rows, cols),
                FixtureKind::Tetra => Ok(fixtures::tetrahedron()),
            }
            .map_err(|e| InvalidInput(e.to_string()))?;
            let m = fixtures::perturbed_unit_lengths(&surf, perturb, seed).map_err(|e| InvalidInput(e.to_string()))?;
            let text = PhmFile::from_state(&surf, &m).write();
            match output {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => out.write_all(text.as_bytes())?,
            }
            Ok(Exit::Ok)
        }
    }
}

#[derive(Serialize)]
struct ValidateJson {
    chi: i64,
    vertices: usize,
    edges: usize,
    faces: usize,
    min_slack: f64,
    min_slack_face: usize,
    delaunay_edges: usize,
}

fn validate(path: &Path, json: bool, out: &mut dyn Write) -> Result<Exit> {
    let (surf, m) = load(path)?;
    let rep = surface::validate(&surf, &m)?;
    let weights = surface::delaunay_weights(&surf, &m)?;
    let delaunay_edges = weights.iter().filter(|w| **w >= -TOL_DELAUNAY).count();
    if json {
        let j = ValidateJson {
            chi: rep.chi,
            vertices: rep.vertices,
            edges: rep.edges,
            faces: rep.faces,
            min_slack: rep.min_slack,
            min_slack_face: rep.min_slack_face,
            delaunay_edges,
        };
        writeln!(out, "{}", serde_json::to_string(&j)?)?;
    } else {
        writeln!(out, "valid {}", path.display())?;
        writeln!(out, "chi {}  vertices {}  edges {}  faces {}", rep.chi, rep.vertices, rep.edges, rep.faces)?;
        writeln!(out, "min triangle-inequality slack {:.6e} at face {}", rep.min_slack, rep.min_slack_face)?;
        writeln!(out, "delaunay edges {}/{}", delaunay_edges, rep.edges)?;
    }
    Ok(Exit::Ok)
}

#[derive(Serialize)]
struct ReportJson {
    alpha: f64,
    k: Vec<f64>,
    r_alpha: Vec<f64>,
    gauss_bonnet_residual: f64,
    delaunay: bool,
    violating_edges: Vec<(usize, usize, f64)>,
}

fn report(path: &Path, alpha: f64, u: Option<&Path>, json: bool, out: &mut dyn Write) -> Result<Exit> {
    let (surf, mut m) = load(path)?;
    let n = surf.n_vertices();
    let state = match u {
        Some(p) => {
            let u = values::parse(&read(p)?, n, 0.0).map_err(|e| invalid(p, e))?;
            m.apply_u(&surf, &u).map_err(|e| invalid(p, e))?;
            surface::validate(&surf, &m).map_err(|e| invalid(p, e))?;
            curvature::ConformalState { u }
        }
        None => curvature::ConformalState::zeros(n),
    };
    let rep = curvature::report(&surf, &m, &state, alpha)?;
    let violating: Vec<(usize, usize, f64)> = surface::violating_edges(&surf, &m, TOL_DELAUNAY)?
        .into_iter()
        .map(|(e, w)| {
            let [i, j] = surf.edge(e).ends;
            (i, j, w)
        })
        .collect();
    if json {
        let j = ReportJson {
            alpha,
            k: rep.k,
            r_alpha: rep.r_alpha,
            gauss_bonnet_residual: rep.gauss_bonnet_residual,
            delaunay: violating.is_empty(),
            violating_edges: violating,
        };
        writeln!(out, "{}", serde_json::to_string(&j)?)?;
        return Ok(Exit::Ok);
    }
    writeln!(out, "{:>6}  {:>24}  {:>24}", "vertex", "K", format!("R_{alpha}"))?;
    for (v, (k, r)) in rep.k.iter().zip(&rep.r_alpha).enumerate() {
        writeln!(out, "{v:>6}  {k:>24.16e}  {r:>24.16e}")?;
    }
    writeln!(out, "gauss-bonnet residual {:.3e}", rep.gauss_bonnet_residual)?;
    if violating.is_empty() {
        writeln!(out, "delaunay yes")?;
    } else {
        writeln!(out, "delaunay no ({} violating edges)", violating.len())?;
        for (i, j, w) in violating {
            writeln!(out, "  edge ({i}, {j}) weight {w:.6e}")?;
        }
    }
    Ok(Exit::Ok)
}

fn targets(args: &TargetArgs, n: usize) -> Result<Vec<f64>> {
    match &args.target {
        Some(p) => Ok(values::parse(&read(p)?, n, args.target_const).map_err(|e| invalid(p, e))?),
        None => Ok(vec![args.target_const; n]),
    }
}

/// Logs a warning for targets outside the existence and convexity regimes.
fn warn_regime(alpha: f64, target: &[f64], chi: i64) {
    if let Regime::Outside(why) = flows::existence_regime(alpha, target, chi) {
        log::warn!("target outside the existence regime: {why}");
    }
    if let Some(v) = flows::convexity_violation(alpha, target) {
        log::warn!("alpha * target > 0 at vertex {v}: the energy is not convex here and convergence is not guaranteed");
    }
}

fn dump(args: &TargetArgs, input: &Path, mesh: &ConformalMesh) -> Result<PathBuf> {
    let path = args.dump.clone().unwrap_or_else(|| {
        let mut p = input.as_os_str().to_owned();
        p.push(".failed.phm");
        PathBuf::from(p)
    });
    std::fs::write(&path, PhmFile::from_state(&mesh.surface, &mesh.metric).write())?;
    let mut u_path = path.clone().into_os_string();
    u_path.push(".u");
    std::fs::write(&u_path, values::write(&mesh.state.u))?;
    Ok(path)
}

fn write_u(args: &TargetArgs, u: &[f64]) -> Result<()> {
    if let Some(p) = &args.u_out {
        std::fs::write(p, values::write(u)).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn settings(args: &FlowArgs) -> Result<FlowSettings> {
    let mut s = match &args.config {
        Some(p) => serde_json::from_str(&read(p)?).map_err(|e| invalid(p, e))?,
        None => FlowSettings::default(),
    };
    s.tol = args.tol.or(s.tol);
    s.max_steps = args.max_steps.or(s.max_steps);
    s.dt_init = args.dt.or(s.dt_init);
    s.dt_max = args.dt_max.or(s.dt_max);
    Ok(s)
}

fn flow(args: &FlowArgs, out: &mut dyn Write) -> Result<Exit> {
    let (surf, m) = load(&args.path)?;
    let chi = surf.euler_characteristic();
    let mut mesh = ConformalMesh::new(surf, m)?;
    let target = targets(&args.target, mesh.n())?;
    warn_regime(args.target.alpha, &target, chi);
    let kind = match args.flow {
        FlowChoice::Yamabe => FlowKind::Yamabe,
        FlowChoice::Calabi => FlowKind::Calabi,
    };
    let mut cfg = FlowConfig::new(kind, args.target.alpha, target);
    let s = settings(args)?;
    cfg.dt_init = s.dt_init.unwrap_or(cfg.dt_init);
    cfg.dt_min = s.dt_min.unwrap_or(cfg.dt_min);
    cfg.dt_max = s.dt_max.unwrap_or(cfg.dt_max).max(cfg.dt_init);
    cfg.tol_converge = s.tol.unwrap_or(cfg.tol_converge);
    cfg.max_steps = s.max_steps.unwrap_or(cfg.max_steps);

    let run = match flows::run_flow(&mut mesh, &cfg) {
        Ok(run) => run,
        Err(hypflow::Error::Dimension { .. } | hypflow::Error::Combinatorics(_)) => {
            return Err(InvalidInput("flow settings are inconsistent (need 0 < dt_min <= dt <= dt_max, tol > 0)".into()).into())
        }
        Err(e) => {
            let p = dump(&args.target, &args.path, &mesh)?;
            log::error!("flow failed: {e}");
            writeln!(out, "status failed\nstate dumped to {}", p.display())?;
            return Ok(Exit::Failure);
        }
    };
    if let Some(p) = &args.target.log {
        LogWriter::create(p).and_then(|mut w| w.flow(&run)).with_context(|| format!("writing {}", p.display()))?;
    }
    write_u(&args.target, &run.u)?;
    writeln!(
        out,
        "status {}  steps {}  rejected {}  t {:.6}  sup_err {:.3e}  flips {}",
        steplog::status_name(&run.status),
        run.steps(),
        run.rejected,
        run.records.last().map_or(0.0, |r| r.t),
        run.final_sup_err(),
        run.flips.len()
    )?;
    if let Some(slope) = run.decay_slope {
        writeln!(out, "decay slope {slope:.6}")?;
    }
    let mp = flows::monitor_max_principle(&run);
    if cfg.monitors && mp.applicable {
        writeln!(
            out,
            "max principle: initial sign {:?}, worst violation {:.3e}, {}",
            mp.initial_sign,
            mp.worst_violation,
            if mp.sign_preserved { "preserved" } else { "VIOLATED" }
        )?;
        if let Some(env) = mp.envelope {
            writeln!(out, "envelope: worst ratio {:.4}, {}", env.worst_ratio, if env.holds { "holds" } else { "VIOLATED" })?;
        }
    }
    Ok(match run.status {
        FlowStatus::Converged => Exit::Ok,
        FlowStatus::MaxSteps => Exit::Invalid,
        FlowStatus::Failed(why) => {
            let p = dump(&args.target, &args.path, &mesh)?;
            log::error!("flow failed: {why}");
            writeln!(out, "state dumped to {}", p.display())?;
            Exit::Failure
        }
    })
}

fn newton(args: &NewtonArgs, out: &mut dyn Write) -> Result<Exit> {
    let (surf, m) = load(&args.path)?;
    let chi = surf.euler_characteristic();
    let mut mesh = ConformalMesh::new(surf, m)?;
    let n = mesh.n();
    let target = targets(&args.target, n)?;
    let alpha = args.target.alpha;
    if let Some(v) = flows::convexity_violation(alpha, &target) {
        if !args.force {
            writeln!(
                out,
                "refused: alpha * target = {} > 0 at vertex {v}; the energy is not convex (use --force to try anyway)",
                alpha * target[v]
            )?;
            return Ok(Exit::Refused);
        }
    }
    warn_regime(alpha, &target, chi);
    if args.init_amp > 0.0 {
        let mut rng = fixtures::rng(args.seed);
        let u0: Vec<f64> = (0..n).map(|_| rng.random_range(-args.init_amp..args.init_amp)).collect();
        if let Err(e) = mesh.move_to(&u0) {
            log::error!("could not reach the initial conformal factor: {e}");
            let p = dump(&args.target, &args.path, &mesh)?;
            writeln!(out, "status failed\nstate dumped to {}", p.display())?;
            return Ok(Exit::Failure);
        }
    }
    let cfg = NewtonConfig { tol: args.tol, max_iter: args.max_iter, enforce_regime: !args.force, ..NewtonConfig::new(alpha, target) };
    let run = match flows::newton_solve(&mut mesh, &cfg) {
        Ok(run) => run,
        Err(e) => {
            log::error!("newton failed: {e}");
            let p = dump(&args.target, &args.path, &mesh)?;
            writeln!(out, "status failed\nstate dumped to {}", p.display())?;
            return Ok(Exit::Failure);
        }
    };
    if let Some(p) = &args.target.log {
        LogWriter::create(p).and_then(|mut w| w.newton(&run)).with_context(|| format!("writing {}", p.display()))?;
    }
    write_u(&args.target, &run.u)?;
    writeln!(
        out,
        "status {}  iterations {}  residual {:.3e}  flips {}",
        if run.converged { "converged" } else { "max_iter" },
        run.iterations.len(),
        run.final_residual,
        run.flips.len()
    )?;
    Ok(if run.converged { Exit::Ok } else { Exit::Invalid })
}
