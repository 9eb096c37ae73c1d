//! Batch experiment runner: TOML configuration, JSON state files, CSV
//! traces, plot-script emission and the verification suite.
//!
//! Subcommands map onto the library: `flow` and `picard` drive
//! [`crate::flow::run_flow`], `hflow` the gauge-invariant scalar flow,
//! `project` the Newton vortex projection, `oracle` the finite-dimensional
//! model, and `verify` the built-in invariant suite. Exit codes: 0 success,
//! 1 configuration error, 2 numerical failure, 3 verification failure.

use crate::fields::{Connection, Section, State};
use crate::flow::{run_flow, FlowConfig, FlowStatus, FlowTrace, Integrator};
use crate::gauge_ops::{gauge_invariants, hflow_run, project_to_vortex, reconstruct_state};
use crate::grid::{build_grid, Grid, GridSpec, Topology};
use crate::moment::diagnostics;
use crate::oracle::{findim_flow, FinDimModel};
use crate::rng::Lcg;
use crate::spectral::{build_basis, BoundaryKind};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error in {path}:\n{message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
    #[error(transparent)]
    Fields(#[from] crate::fields::FieldsError),
    #[error("state file error: {0}")]
    StateFile(String),
}

pub const TRACE_HEADER: &str =
    "step,t,functional,energy,dbar_l2,f_l2,f_max,flux,min_abs_u,energy_identity_residual";

// ── configuration ───────────────────────────────────────────────────

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    grid: RawGrid,
    physics: Option<RawPhysics>,
    initial: RawInitial,
    flow: Option<RawFlow>,
    output: Option<RawOutput>,
    oracle: Option<RawOracle>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    topology: Topology,
    nx: usize,
    ny: usize,
    lx: Option<f64>,
    ly: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhysics {
    tau: Option<f64>,
    degree: Option<i32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    kind: String,
    zeros: Option<Vec<[f64; 2]>>,
    scale: Option<f64>,
    path: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFlow {
    method: Option<String>,
    dt: Option<f64>,
    t_end: Option<f64>,
    output_every: Option<usize>,
    tolerance: Option<f64>,
    max_picard_iters: Option<usize>,
    t0_window: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<String>,
    prefix: Option<String>,
    emit_plots: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOracle {
    n: Option<usize>,
    k: Option<usize>,
    weights: Option<Vec<i64>>,
    tau: Option<Vec<f64>>,
    x0_re: Option<Vec<f64>>,
    x0_im: Option<Vec<f64>>,
    dt: Option<f64>,
    t_end: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InitialKind {
    PolynomialZeros,
    Constant,
    File,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Euler,
    Imex,
    Picard,
    Hflow,
}

#[derive(Clone, Debug)]
pub struct OracleConfig {
    pub model: FinDimModel,
    pub x0: Vec<Complex64>,
    pub dt: f64,
    pub t_end: f64,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub grid_spec: GridSpec,
    pub tau: f64,
    pub degree: i32,
    pub initial: InitialKind,
    pub zeros: Vec<(f64, f64)>,
    pub scale: f64,
    pub state_path: Option<PathBuf>,
    pub method: Method,
    pub flow: FlowConfig,
    pub out_dir: PathBuf,
    pub prefix: String,
    pub emit_plots: bool,
    pub oracle: OracleConfig,
}

pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_str(&text, &path.display().to_string())
}

pub fn parse_config_str(text: &str, origin: &str) -> Result<RunConfig, CliError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;

    let lx = raw.grid.lx.unwrap_or(1.0);
    let ly = raw.grid.ly.unwrap_or(1.0);
    let grid_spec = GridSpec::new(raw.grid.topology, raw.grid.nx, raw.grid.ny, lx, ly);
    let grid = build_grid(grid_spec)?; // validates spacing and size
    let h = grid.h;

    let physics = raw.physics.unwrap_or(RawPhysics { tau: None, degree: None });
    let tau = physics.tau.unwrap_or(1.0);
    if !(tau > 0.0) {
        return Err(CliError::Invalid(format!("physics.tau must be positive, got {tau}")));
    }
    let degree = physics.degree.unwrap_or(0);

    let initial = match raw.initial.kind.as_str() {
        "polynomial_zeros" => InitialKind::PolynomialZeros,
        "constant" => InitialKind::Constant,
        "file" => InitialKind::File,
        other => {
            return Err(CliError::Invalid(format!(
                "initial.kind must be polynomial_zeros, constant or file, got {other:?}"
            )))
        }
    };
    let zeros: Vec<(f64, f64)> = raw
        .initial
        .zeros
        .unwrap_or_default()
        .iter()
        .map(|z| (z[0], z[1]))
        .collect();
    for (zx, zy) in &zeros {
        if !(*zx > 0.0 && *zx < lx && *zy > 0.0 && *zy < ly) {
            return Err(CliError::Invalid(format!(
                "initial zero ({zx}, {zy}) lies outside the open domain (0,{lx})x(0,{ly})"
            )));
        }
    }
    let state_path = raw.initial.path.as_ref().map(PathBuf::from);
    if initial == InitialKind::File && state_path.is_none() {
        return Err(CliError::Invalid("initial.kind = \"file\" requires initial.path".into()));
    }

    let rf = raw.flow.unwrap_or(RawFlow {
        method: None,
        dt: None,
        t_end: None,
        output_every: None,
        tolerance: None,
        max_picard_iters: None,
        t0_window: None,
    });
    let method = match rf.method.as_deref().unwrap_or("imex") {
        "euler" => Method::Euler,
        "imex" => Method::Imex,
        "picard" => Method::Picard,
        "hflow" => Method::Hflow,
        other => {
            return Err(CliError::Invalid(format!(
                "flow.method must be euler, imex, picard or hflow, got {other:?}"
            )))
        }
    };
    if method == Method::Euler && raw.grid.topology == Topology::Rectangle {
        return Err(CliError::Invalid(
            "flow.method = \"euler\" requires torus topology; boundary domains go through \
             imex, picard or hflow"
                .into(),
        ));
    }
    let dt = rf.dt.unwrap_or(h * h / 8.0);
    if !(dt > 0.0) {
        return Err(CliError::Invalid(format!("flow.dt must be positive, got {dt}")));
    }
    let t_end = rf.t_end.unwrap_or(50.0);
    if t_end < dt {
        return Err(CliError::Invalid(format!("flow.t_end = {t_end} is below dt = {dt}")));
    }
    let integrator = match method {
        Method::Euler => Integrator::Euler,
        Method::Picard => Integrator::Picard,
        _ => Integrator::Imex,
    };
    let mut flow = FlowConfig::new(integrator, dt, t_end, rf.tolerance.unwrap_or(1e-3 * tau));
    flow.output_every = rf.output_every.unwrap_or(10).max(1);
    flow.max_picard_iters = rf.max_picard_iters.unwrap_or(40);
    flow.t0_window = rf.t0_window.unwrap_or(0.05);

    let out = raw.output.unwrap_or(RawOutput { dir: None, prefix: None, emit_plots: None });
    let out_dir = PathBuf::from(out.dir.unwrap_or_else(|| ".".into()));
    let prefix = out.prefix.unwrap_or_else(|| "run".into());
    let emit_plots = out.emit_plots.unwrap_or(false);

    let ro = raw.oracle.unwrap_or(RawOracle {
        n: None,
        k: None,
        weights: None,
        tau: None,
        x0_re: None,
        x0_im: None,
        dt: None,
        t_end: None,
    });
    let on = ro.n.unwrap_or(1);
    let ok = ro.k.unwrap_or(1);
    let weights = ro.weights.unwrap_or_else(|| vec![1; on * ok]);
    let otau = ro.tau.unwrap_or_else(|| vec![1.0; ok]);
    if weights.len() != on * ok || otau.len() != ok {
        return Err(CliError::Invalid(
            "oracle.weights must have n·k entries and oracle.tau k entries".into(),
        ));
    }
    let x0_re = ro.x0_re.unwrap_or_else(|| vec![2.0; on]);
    let x0_im = ro.x0_im.unwrap_or_else(|| vec![0.0; on]);
    if x0_re.len() != on || x0_im.len() != on {
        return Err(CliError::Invalid("oracle.x0 must have n entries".into()));
    }
    let oracle = OracleConfig {
        model: FinDimModel::new(on, ok, weights, otau),
        x0: x0_re
            .iter()
            .zip(x0_im.iter())
            .map(|(r, i)| Complex64::new(*r, *i))
            .collect(),
        dt: ro.dt.unwrap_or(0.01),
        t_end: ro.t_end.unwrap_or(20.0),
    };

    Ok(RunConfig {
        seed: raw.seed.unwrap_or(42),
        grid_spec,
        tau,
        degree,
        initial,
        zeros,
        scale: raw.initial.scale.unwrap_or(1.0),
        state_path,
        method,
        flow,
        out_dir,
        prefix,
        emit_plots,
        oracle,
    })
}

// ── state files ─────────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFile {
    pub format_version: u32,
    pub grid: GridSpec,
    pub tau: f64,
    pub ax: Vec<f64>,
    pub ay: Vec<f64>,
    pub u_re: Vec<f64>,
    pub u_im: Vec<f64>,
    pub degree: i32,
}

pub fn state_to_file(state: &State) -> StateFile {
    StateFile {
        format_version: 1,
        grid: state.grid.spec,
        tau: state.tau,
        ax: state.a.ax.clone(),
        ay: state.a.ay.clone(),
        u_re: state.u.values.iter().map(|z| z.re).collect(),
        u_im: state.u.values.iter().map(|z| z.im).collect(),
        degree: state.a.degree,
    }
}

pub fn state_from_file(file: &StateFile) -> Result<State, CliError> {
    if file.format_version != 1 {
        return Err(CliError::StateFile(format!(
            "unsupported format_version {}",
            file.format_version
        )));
    }
    let grid = Arc::new(build_grid(file.grid)?);
    let n = grid.node_count;
    for (name, len) in [
        ("ax", file.ax.len()),
        ("ay", file.ay.len()),
        ("u_re", file.u_re.len()),
        ("u_im", file.u_im.len()),
    ] {
        if len != n {
            return Err(CliError::StateFile(format!(
                "array {name} has {len} entries, grid has {n} nodes"
            )));
        }
    }
    let a = Connection { ax: file.ax.clone(), ay: file.ay.clone(), degree: file.degree };
    let u = Section {
        values: file
            .u_re
            .iter()
            .zip(file.u_im.iter())
            .map(|(r, i)| Complex64::new(*r, *i))
            .collect(),
    };
    Ok(State::new(grid, a, u, file.tau)?)
}

pub fn save_state(state: &State, path: &Path) -> Result<(), CliError> {
    let json = serde_json::to_string(&state_to_file(state))
        .map_err(|e| CliError::StateFile(e.to_string()))?;
    atomic_write(path, json.as_bytes())
}

pub fn load_state(path: &Path) -> Result<State, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: StateFile =
        serde_json::from_str(&text).map_err(|e| CliError::StateFile(e.to_string()))?;
    state_from_file(&file)
}

/// Write through a temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|source| CliError::Io {
        path: tmp.display().to_string(),
        source,
    })?;
    std::fs::rename(&tmp, path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

// ── initial data ────────────────────────────────────────────────────

pub fn make_initial(config: &RunConfig, grid: &Arc<Grid>) -> Result<State, CliError> {
    match config.initial {
        InitialKind::File => {
            let path = config.state_path.as_ref().expect("validated at parse");
            load_state(path)
        }
        InitialKind::Constant => {
            let u = Section::constant(grid, Complex64::new(config.scale, 0.0));
            let mut a = Connection::zero(grid);
            a.degree = config.degree;
            Ok(State::new(grid.clone(), a, u, config.tau)?)
        }
        InitialKind::PolynomialZeros => {
            let mut values = vec![Complex64::new(0.0, 0.0); grid.node_count];
            for j in 0..grid.nrows {
                for i in 0..grid.ncols {
                    let (x, y) = grid.coord(i, j);
                    let z = Complex64::new(x, y);
                    let mut v = Complex64::new(config.scale, 0.0);
                    for (zx, zy) in &config.zeros {
                        v *= z - Complex64::new(*zx, *zy);
                    }
                    values[grid.idx(i, j)] = v;
                }
            }
            let mut a = Connection::zero(grid);
            a.degree = config.degree;
            Ok(State::new(grid.clone(), a, Section { values }, config.tau)?)
        }
    }
}

// ── CSV and plots ───────────────────────────────────────────────────

pub fn trace_to_csv(trace: &FlowTrace) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for row in &trace.rows {
        let d = &row.diag;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            row.step,
            row.t,
            d.functional,
            d.energy,
            d.dbar_l2,
            d.f_l2,
            d.f_max,
            d.flux,
            d.min_abs_u,
            d.energy_identity_residual
        );
    }
    out
}

fn plot_script(csv_name: &str, png_name: &str) -> String {
    format!(
        "#!/usr/bin/env python3\n\
         \"\"\"Plot functional and residual norms from a flow trace.\"\"\"\n\
         import csv\n\
         import matplotlib\n\
         matplotlib.use(\"Agg\")\n\
         import matplotlib.pyplot as plt\n\
         \n\
         ts, functional, f_l2, energy = [], [], [], []\n\
         with open(\"{csv_name}\") as fh:\n\
         \x20   for row in csv.DictReader(fh):\n\
         \x20       ts.append(float(row[\"t\"]))\n\
         \x20       functional.append(float(row[\"functional\"]))\n\
         \x20       f_l2.append(float(row[\"f_l2\"]))\n\
         \x20       energy.append(float(row[\"energy\"]))\n\
         \n\
         fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))\n\
         ax1.semilogy(ts, functional, label=\"functional\")\n\
         ax1.semilogy(ts, f_l2, label=\"|f|_L2\")\n\
         ax1.set_xlabel(\"t\")\n\
         ax1.legend()\n\
         ax2.plot(ts, energy, label=\"energy\")\n\
         ax2.set_xlabel(\"t\")\n\
         ax2.legend()\n\
         fig.tight_layout()\n\
         fig.savefig(\"{png_name}\", dpi=150)\n\
         print(\"wrote {png_name}\")\n"
    )
}

// ── verification suite ──────────────────────────────────────────────

pub struct CheckResult {
    pub name: &'static str,
    pub outcome: Result<(), String>,
}

fn small_rect() -> Arc<Grid> {
    Arc::new(build_grid(GridSpec::new(Topology::Rectangle, 12, 12, 1.0, 1.0)).unwrap())
}

fn small_torus() -> Arc<Grid> {
    Arc::new(build_grid(GridSpec::new(Topology::Torus, 12, 12, 1.0, 1.0)).unwrap())
}

fn smooth_field(grid: &Grid, lcg: &mut Lcg, amplitude: f64) -> Vec<f64> {
    use std::f64::consts::PI;
    let mut coeffs = Vec::new();
    for _ in 0..3 {
        coeffs.push((
            lcg.range(-amplitude, amplitude),
            lcg.range(0.0, 2.0 * PI),
            lcg.range(0.0, 2.0 * PI),
        ));
    }
    let mut f = vec![0.0; grid.node_count];
    for j in 0..grid.nrows {
        for i in 0..grid.ncols {
            let (x, y) = grid.coord(i, j);
            let mut v = 0.0;
            for (m, (c, px, py)) in coeffs.iter().enumerate() {
                let kf = (m + 1) as f64;
                v += c
                    * (2.0 * PI * kf * x / grid.spec.lx + px).sin()
                    * (2.0 * PI * kf * y / grid.spec.ly + py).cos();
            }
            f[grid.idx(i, j)] = v;
        }
    }
    f
}

fn random_torus_state(grid: &Arc<Grid>, lcg: &mut Lcg) -> State {
    let ax = smooth_field(grid, lcg, 0.4);
    let ay = smooth_field(grid, lcg, 0.4);
    let re = smooth_field(grid, lcg, 0.5);
    let im = smooth_field(grid, lcg, 0.5);
    let values = (0..grid.node_count)
        .map(|k| Complex64::new(0.7 + re[k], im[k]))
        .collect();
    State::new(grid.clone(), Connection { ax, ay, degree: 0 }, Section { values }, 1.0)
        .expect("finite by construction")
}

/// Descent check parameterized by the gradient routine so the suite can be
/// shown to fail on a sign-flipped build. Two probe states isolate the two
/// channels: a constant section (pure `u̇ = f·u`, no `A` dissipation to mask
/// a flipped sign) and a zero section with a random connection (pure
/// `Ȧ = *df`).
pub fn check_descent_with(
    gradient: &dyn Fn(&State) -> (Vec<f64>, Vec<f64>, Vec<Complex64>),
    seed: u64,
) -> Result<(), String> {
    let grid = small_torus();
    let mut lcg = Lcg::new(seed);

    let u_channel = State::new(
        grid.clone(),
        Connection::zero(&grid),
        Section::constant(&grid, Complex64::new(0.6, 0.1)),
        1.0,
    )
    .expect("valid state");
    let a_channel = {
        let ax = smooth_field(&grid, &mut lcg, 0.5);
        let ay = smooth_field(&grid, &mut lcg, 0.5);
        State::new(
            grid.clone(),
            Connection { ax, ay, degree: 0 },
            Section::constant(&grid, Complex64::new(0.0, 0.0)),
            1.0,
        )
        .expect("valid state")
    };
    for (name, st) in [("section channel", &u_channel), ("connection channel", &a_channel)] {
        let f0 = crate::moment::functional_value(st);
        let (ax, ay, udot) = gradient(st);
        let dt = grid.h * grid.h / 16.0;
        let mut next = st.clone();
        for k in 0..grid.node_count {
            next.a.ax[k] += dt * ax[k];
            next.a.ay[k] += dt * ay[k];
            next.u.values[k] += udot[k] * dt;
        }
        let f1 = crate::moment::functional_value(&next);
        if f1 > f0 * (1.0 + 1e-10) {
            return Err(format!(
                "gradient step increased the functional on the {name}: {f0} -> {f1}"
            ));
        }
    }
    Ok(())
}

pub fn verify_suite(seed: u64) -> Vec<CheckResult> {
    let mut results = Vec::new();
    let mut push = |name: &'static str, outcome: Result<(), String>| {
        results.push(CheckResult { name, outcome });
    };

    push("grid.quadrature_total_area", {
        let g = small_rect();
        let total: f64 = g.area_weight.iter().sum();
        if (total - 1.0).abs() < 1e-12 {
            Ok(())
        } else {
            Err(format!("weights sum to {total}"))
        }
    });

    push("fields.gauge_invariance_exact", {
        let grid = small_torus();
        let mut lcg = Lcg::new(seed);
        let st = random_torus_state(&grid, &mut lcg);
        let theta = smooth_field(&grid, &mut lcg, 0.9);
        let gauged =
            crate::fields::apply_unitary_gauge(&st, &crate::fields::UnitaryGauge { theta });
        let f0 = crate::moment::moment_density(&st);
        let f1 = crate::moment::moment_density(&gauged);
        let worst = f0
            .iter()
            .zip(f1.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if worst < 1e-10 {
            Ok(())
        } else {
            Err(format!("moment density moved by {worst}"))
        }
    });

    push("moment.descent_direction", check_descent_with(&crate::moment::flow_gradient, seed));

    push("spectral.semigroup_and_duhamel", (|| -> Result<(), String> {
        let grid = small_rect();
        let basis = build_basis(grid.clone(), BoundaryKind::Dirichlet)
            .map_err(|e| e.to_string())?;
        let e = basis.eigenvector(3);
        let lam = basis.eigenvalues()[3];
        let t = 0.21;
        let evolved = basis.heat_evolve(&e, t).map_err(|e| e.to_string())?;
        let factor = (-lam * t).exp();
        let worst = evolved
            .iter()
            .zip(e.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - factor * b).abs()));
        if worst > 1e-12 {
            return Err(format!("eigenmode decay defect {worst}"));
        }
        let forcing: Vec<Vec<f64>> = (0..=20).map(|_| e.clone()).collect();
        let traj = basis.duhamel(&forcing, 0.01).map_err(|e| e.to_string())?;
        let amp = (1.0 - (-lam * 0.2).exp()) / lam;
        let last = traj.last().unwrap();
        let worst = last
            .iter()
            .zip(e.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - amp * b).abs()));
        if worst > 1e-10 {
            return Err(format!("duhamel closed form defect {worst}"));
        }
        Ok(())
    })());

    push("flow.monotone_imex_rectangle", {
        let grid = Arc::new(
            build_grid(GridSpec::new(Topology::Rectangle, 16, 16, 1.0, 1.0)).unwrap(),
        );
        let mut values = vec![Complex64::new(0.0, 0.0); grid.node_count];
        for j in 0..grid.nrows {
            for i in 0..grid.ncols {
                let (x, y) = grid.coord(i, j);
                values[grid.idx(i, j)] =
                    (Complex64::new(x, y) - Complex64::new(0.5, 0.5)) * 4.0;
            }
        }
        match State::new(grid.clone(), Connection::zero(&grid), Section { values }, 1.0) {
            Ok(st) => {
                let mut cfg =
                    FlowConfig::new(Integrator::Imex, 2.0 * grid.h * grid.h, 10.0, 1e-3);
                cfg.output_every = 20;
                match run_flow(&st, &cfg) {
                    Ok(trace) => {
                        let monotone = trace.rows.windows(2).all(|w| {
                            w[1].diag.functional
                                <= w[0].diag.functional * (1.0 + 1e-10) + 1e-10
                        });
                        if monotone {
                            Ok(())
                        } else {
                            Err("functional increased along IMEX flow".into())
                        }
                    }
                    Err(e) => Err(e.to_string()),
                }
            }
            Err(e) => Err(e.to_string()),
        }
    });

    push("newton.contraction_scalar", {
        let problem = crate::newton::ContractionProblem {
            apply_f1_inverse: Box::new(|y: &[f64]| vec![y[0] / 2.0]),
            apply_f2: Box::new(|x: &[f64]| vec![0.25 * x[0].sin()]),
            delta: 4.0,
            c: 0.5,
            max_iters: 60,
            tol: 1e-13,
            norm: Box::new(|v: &[f64]| v[0].abs()),
            lipschitz_f2: Some(0.25),
        };
        match crate::newton::contraction_solve(&problem, &[1.0]) {
            Ok(r) if r.status == crate::newton::SolveStatus::Converged => {
                let x = r.solution[0];
                let res = 2.0 * x + 0.25 * x.sin() - 1.0;
                if res.abs() < 1e-10 {
                    Ok(())
                } else {
                    Err(format!("root residual {res}"))
                }
            }
            Ok(r) => Err(format!("status {:?}", r.status)),
            Err(e) => Err(e.to_string()),
        }
    });

    push("gauge_ops.projection_small_rectangle", {
        let grid = small_rect();
        let st = State::new(
            grid.clone(),
            Connection::zero(&grid),
            Section::constant(&grid, Complex64::new(1.2, 0.0)),
            1.0,
        )
        .expect("valid");
        match project_to_vortex(&st, 1e-10) {
            Ok(out) if out.report.final_residual < 1e-10 => Ok(()),
            Ok(out) => Err(format!("projection residual {}", out.report.final_residual)),
            Err(e) => Err(e.to_string()),
        }
    });

    push("oracle.sign_lock_against_field_theory", {
        // one explicit step of the scalar model against one euler step of a
        // spatially constant field state
        let tau = 1.0;
        let c = 0.6;
        let dt = 1e-3;
        let model = FinDimModel::scalar(tau);
        let x = Complex64::new(c, 0.0);
        let phi = crate::oracle::findim_moment(&model, &[x]).unwrap()[0];
        let oracle_next = x * (1.0 + dt * phi);

        let grid = small_torus();
        let st = State::new(
            grid.clone(),
            Connection::zero(&grid),
            Section::constant(&grid, Complex64::new(c, 0.0)),
            tau,
        )
        .expect("valid");
        match crate::flow::euler_step(&st, dt) {
            Ok(next) => {
                let field_next = next.u.values[0];
                if (field_next - oracle_next).norm() < 1e-14 {
                    Ok(())
                } else {
                    Err(format!(
                        "sign mismatch: oracle {oracle_next}, field {field_next}"
                    ))
                }
            }
            Err(e) => Err(e.to_string()),
        }
    });

    push("oracle.kempf_ness_monotone", {
        let model = FinDimModel::scalar(1.0);
        let mut lcg = Lcg::new(seed ^ 0x9e3779b97f4a7c15);
        let mut ok = true;
        for _ in 0..10 {
            let x = [Complex64::new(lcg.range(0.1, 2.0), lcg.range(-1.0, 1.0))];
            let s = [if lcg.uniform() < 0.5 { 1.0 } else { lcg.range(0.2, 2.0) }];
            let r = crate::oracle::kempf_ness_check(&model, &x, &s, 40).unwrap();
            ok &= r.monotone;
        }
        if ok {
            Ok(())
        } else {
            Err("pairing derivative went negative".into())
        }
    });

    results
}

// ── dispatch ────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subcommand {
    Flow,
    Hflow,
    Project,
    Picard,
    Oracle,
    Verify,
}

/// Execute a subcommand, writing outputs next to `config.out_dir/prefix`.
/// Returns the process exit code.
pub fn run(subcommand: Subcommand, config: &RunConfig) -> i32 {
    match run_inner(subcommand, config) {
        Ok(code) => code,
        Err(CliError::Io { .. } | CliError::Parse { .. } | CliError::Invalid(_)) => 1,
        Err(_) => 2,
    }
}

fn out_path(config: &RunConfig, suffix: &str) -> PathBuf {
    config.out_dir.join(format!("{}_{suffix}", config.prefix))
}

fn write_outputs(config: &RunConfig, trace: &FlowTrace) -> Result<(), CliError> {
    std::fs::create_dir_all(&config.out_dir).map_err(|source| CliError::Io {
        path: config.out_dir.display().to_string(),
        source,
    })?;
    atomic_write(&out_path(config, "trace.csv"), trace_to_csv(trace).as_bytes())?;
    save_state(&trace.final_state, &out_path(config, "final.json"))?;
    if config.emit_plots {
        let csv_name = format!("{}_trace.csv", config.prefix);
        let png_name = format!("{}_plot.png", config.prefix);
        atomic_write(
            &out_path(config, "plot.py"),
            plot_script(&csv_name, &png_name).as_bytes(),
        )?;
    }
    Ok(())
}

/// Run the verification suite, print one line per check, return the exit code.
pub fn run_verify(seed: u64) -> i32 {
    let results = verify_suite(seed);
    let mut failed = 0;
    for r in &results {
        match &r.outcome {
            Ok(()) => println!("PASS {}", r.name),
            Err(msg) => {
                failed += 1;
                println!("FAIL {} — {msg}", r.name);
            }
        }
    }
    if failed == 0 {
        println!("verify: {} checks passed", results.len());
        0
    } else {
        println!("verify: {failed} of {} checks failed", results.len());
        3
    }
}

fn run_inner(subcommand: Subcommand, config: &RunConfig) -> Result<i32, CliError> {
    match subcommand {
        Subcommand::Verify => Ok(run_verify(config.seed)),
        Subcommand::Oracle => {
            std::fs::create_dir_all(&config.out_dir).map_err(|source| CliError::Io {
                path: config.out_dir.display().to_string(),
                source,
            })?;
            let oc = &config.oracle;
            match findim_flow(&oc.model, &oc.x0, oc.dt, oc.t_end) {
                Ok(traj) => {
                    let mut csv = String::from("t");
                    for i in 0..oc.model.n {
                        let _ = write!(csv, ",x{i}_re,x{i}_im");
                    }
                    csv.push_str(",phi_sq\n");
                    for s in &traj {
                        let _ = write!(csv, "{}", s.t);
                        for i in 0..oc.model.n {
                            let _ = write!(csv, ",{},{}", s.x_re[i], s.x_im[i]);
                        }
                        let _ = writeln!(csv, ",{}", s.phi_sq);
                    }
                    atomic_write(&out_path(config, "trace.csv"), csv.as_bytes())?;
                    let last = serde_json::to_string(traj.last().unwrap())
                        .map_err(|e| CliError::StateFile(e.to_string()))?;
                    atomic_write(&out_path(config, "final.json"), last.as_bytes())?;
                    Ok(0)
                }
                Err(e) => {
                    eprintln!("oracle flow failed: {e}");
                    Ok(2)
                }
            }
        }
        Subcommand::Flow | Subcommand::Picard => {
            let grid = Arc::new(build_grid(config.grid_spec)?);
            let state = make_initial(config, &grid)?;
            let mut flow_config = config.flow.clone();
            if subcommand == Subcommand::Picard {
                flow_config.integrator = Integrator::Picard;
            } else if config.method == Method::Hflow {
                return Err(CliError::Invalid(
                    "flow.method = \"hflow\" belongs to the hflow subcommand".into(),
                ));
            }
            match run_flow(&state, &flow_config) {
                Ok(trace) => {
                    write_outputs(config, &trace)?;
                    match trace.status {
                        FlowStatus::Converged | FlowStatus::ReachedTEnd | FlowStatus::Stationary => {
                            Ok(0)
                        }
                    }
                }
                Err(e) => {
                    eprintln!("flow failed: {e}");
                    Ok(2)
                }
            }
        }
        Subcommand::Hflow => {
            let grid = Arc::new(build_grid(config.grid_spec)?);
            let state = make_initial(config, &grid)?;
            let kind = if grid.is_torus() {
                BoundaryKind::Periodic
            } else {
                BoundaryKind::Dirichlet
            };
            let basis = build_basis(grid.clone(), kind)
                .map_err(|e| CliError::Invalid(e.to_string()))?;
            match hflow_run(
                &state,
                &basis,
                config.flow.dt,
                config.flow.t_end,
                config.flow.tolerance,
                config.flow.output_every,
            ) {
                Ok(traj) => {
                    // diagnostics along the reconstructed trajectory
                    let rows: Vec<crate::flow::TraceRow> = traj
                        .times
                        .iter()
                        .zip(traj.sigmas.iter())
                        .enumerate()
                        .map(|(step, (t, sigma))| crate::flow::TraceRow {
                            step,
                            t: *t,
                            diag: diagnostics(&reconstruct_state(&state, sigma)),
                        })
                        .collect();
                    let final_state =
                        reconstruct_state(&state, traj.sigmas.last().expect("samples"));
                    let trace = FlowTrace {
                        rows,
                        final_state,
                        status: if traj.converged {
                            FlowStatus::Converged
                        } else {
                            FlowStatus::ReachedTEnd
                        },
                        dt_final: config.flow.dt,
                        halvings: 0,
                        max_triple_defect: 0.0,
                    };
                    write_outputs(config, &trace)?;
                    let sigma_json = serde_json::to_string(&traj)
                        .map_err(|e| CliError::StateFile(e.to_string()))?;
                    atomic_write(&out_path(config, "sigma.json"), sigma_json.as_bytes())?;
                    Ok(0)
                }
                Err(e) => {
                    eprintln!("hflow failed: {e}");
                    Ok(2)
                }
            }
        }
        Subcommand::Project => {
            let grid = Arc::new(build_grid(config.grid_spec)?);
            let state = make_initial(config, &grid)?;
            match project_to_vortex(&state, config.flow.tolerance.min(1e-10)) {
                Ok(out) => {
                    std::fs::create_dir_all(&config.out_dir).map_err(|source| CliError::Io {
                        path: config.out_dir.display().to_string(),
                        source,
                    })?;
                    let before = crate::flow::TraceRow { step: 0, t: 0.0, diag: diagnostics(&state) };
                    let after =
                        crate::flow::TraceRow { step: 1, t: 0.0, diag: diagnostics(&out.vortex) };
                    let trace = FlowTrace {
                        rows: vec![before, after],
                        final_state: out.vortex.clone(),
                        status: FlowStatus::Converged,
                        dt_final: 0.0,
                        halvings: 0,
                        max_triple_defect: 0.0,
                    };
                    write_outputs(config, &trace)?;
                    #[derive(Serialize)]
                    struct ProjectReport<'a> {
                        report: &'a crate::newton::SolveReport,
                        c_est: f64,
                        bound_ok: bool,
                        sigma_l2: f64,
                        f0_l2: f64,
                        invariants: crate::gauge_ops::GaugeInvariantRecord,
                    }
                    let rep = ProjectReport {
                        report: &out.report,
                        c_est: out.c_est,
                        bound_ok: out.bound_ok,
                        sigma_l2: out.sigma_l2,
                        f0_l2: out.f0_l2,
                        invariants: gauge_invariants(&out.vortex),
                    };
                    let json = serde_json::to_string(&rep)
                        .map_err(|e| CliError::StateFile(e.to_string()))?;
                    atomic_write(&out_path(config, "report.json"), json.as_bytes())?;
                    if !out.bound_ok {
                        eprintln!(
                            "warning: ‖σ‖ = {} exceeds 8·C_est·‖f₀‖ = {}",
                            out.sigma_l2,
                            8.0 * out.c_est * out.f0_l2
                        );
                    }
                    Ok(0)
                }
                Err(e) => {
                    eprintln!("projection failed: {e}");
                    Ok(2)
                }
            }
        }
    }
}

/// Worker-parallelism cap from `VORTEXFLOW_THREADS`; all computation in this
/// crate is deterministic and single-threaded, which always respects the cap.
pub fn thread_cap() -> usize {
    std::env::var("VORTEXFLOW_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|v| *v >= 1)
        .unwrap_or(1)
}
