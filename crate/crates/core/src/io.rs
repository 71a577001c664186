//! The four commands of the `metastat` tool and their file outputs.
//!
//! Each command reads a [`RunConfig`], writes CSV series and a JSON summary
//! into an output directory and returns an [`Outcome`]. Outputs depend only
//! on the configuration and seed.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis;
use crate::boundary::{BoundaryPoint, Side};
use crate::checks::{self, Check};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::growth::{self, GUARD_RADIUS};
use crate::lattice::{CharacteristicLattice, TAU_MAX_RADIUS};
use crate::renewal;
use crate::spectral::{self, SpectralSolution};

/// Result of a command that ran to completion. `passed = false` maps to
/// exit code 1.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub passed: bool,
    pub files: Vec<PathBuf>,
    pub message: String,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

struct Out {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Out {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        for row in rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    fn finish(self, passed: bool, message: String) -> Outcome {
        Outcome {
            passed,
            files: self.files,
            message,
        }
    }
}

/// Boundary seeds evenly spaced in arc length over the configured sides,
/// at the midpoints of `n` equal arcs (never on a corner).
pub fn phase_seeds(cfg: &RunConfig, n: usize) -> Result<Vec<BoundaryPoint>> {
    let params = cfg.growth_params()?;
    let len = params.side_length();
    let sides = &cfg.grid.sides;
    let total = len * sides.len() as f64;
    (0..n)
        .map(|k| {
            let arc = (k as f64 + 0.5) / n as f64 * total;
            let idx = ((arc / len) as usize).min(sides.len() - 1);
            let s = (arc - idx as f64 * len).clamp(1e-9 * len, len * (1.0 - 1e-9));
            BoundaryPoint::new(sides[idx], s, &params)
        })
        .collect()
}

#[derive(Serialize)]
struct PhaseRow {
    seed_id: usize,
    t: f64,
    x: f64,
    theta: f64,
}

#[derive(Serialize)]
struct PhaseSummary {
    b: f64,
    t_end: f64,
    trajectories: usize,
    samples: usize,
    max_final_distance: f64,
    threshold: f64,
    passed: bool,
}

/// Phase-plane trajectories from evenly spaced boundary seeds: `phase.csv`
/// `(seed_id, t, x, theta)` and `phase.json`.
pub fn cmd_phase(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let params = cfg.growth_params()?;
    let tol = cfg.tolerances.ode;
    let seeds = phase_seeds(cfg, cfg.phase.trajectories)?;
    let threshold = TAU_MAX_RADIUS * params.side_length();
    let t_end = match cfg.phase.t_end {
        Some(t) => t,
        None => {
            let mut slowest: f64 = 0.0;
            for s in &seeds {
                slowest = slowest.max(growth::convergence_time(s, threshold, &params, tol)?);
            }
            2.0 * slowest
        }
    };
    let n = cfg.phase.samples;
    let times: Vec<f64> = (0..n).map(|k| t_end * k as f64 / (n - 1) as f64).collect();
    let mut rows = Vec::with_capacity(seeds.len() * n);
    let mut worst: f64 = 0.0;
    let star = params.equilibrium();
    for (id, seed) in seeds.iter().enumerate() {
        let traj = growth::flow_samples(seed, &times, &params, tol)?;
        worst = worst.max(traj[n - 1].position.distance(&star));
        rows.extend(traj.iter().zip(&times).map(|(r, t)| PhaseRow {
            seed_id: id,
            t: *t,
            x: r.position.x,
            theta: r.position.theta,
        }));
    }
    let passed = worst <= threshold;
    let mut o = Out::new(out)?;
    o.csv("phase.csv", rows)?;
    o.json(
        "phase.json",
        &PhaseSummary {
            b: params.b(),
            t_end,
            trajectories: seeds.len(),
            samples: n,
            max_final_distance: worst,
            threshold,
            passed,
        },
    )?;
    let msg = format!("phase: {} trajectories to t = {t_end}, max final distance {worst:e}", seeds.len());
    Ok(o.finish(passed, msg))
}

#[derive(Serialize)]
struct ScanRow {
    lambda: f64,
    #[serde(rename = "F")]
    f: f64,
}

#[derive(Serialize)]
struct EigenRow {
    side: Side,
    s: f64,
    tau: f64,
    x: f64,
    theta: f64,
    beta: f64,
    psi: f64,
    v_tilde: f64,
}

#[derive(Serialize)]
struct SpectralSummary<'a> {
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    solution: Option<&'a SpectralSolution>,
    scan_decreasing: bool,
    passed: bool,
}

fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let r = (hi / lo).ln();
    (0..n).map(|k| lo * (r * k as f64 / (n - 1) as f64).exp()).collect()
}

/// Malthus parameter and eigenelements: `spectral_scan.csv (lambda, F)`,
/// `spectral.json` and, when supercritical, `eigenvectors.csv`.
pub fn cmd_spectral(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let lattice = cfg.build_lattice()?;
    let tol = &cfg.tolerances;
    let solved = match SpectralSolution::solve(&lattice, tol.root, tol.quad) {
        Ok(sol) => Ok(sol),
        Err(e @ (Error::Subcritical { .. } | Error::Diagnostic(_))) => Err(e),
        Err(e) => return Err(e),
    };
    let probe = spectral::probe_lambda(&lattice);
    let (lo, hi) = match &solved {
        Ok(sol) => (sol.lambda0 / 10.0, sol.lambda0 * 10.0),
        Err(_) => (probe, 100.0 * probe),
    };
    let lo = cfg.spectral.lambda_min.unwrap_or(lo);
    let hi = cfg.spectral.lambda_max.unwrap_or(hi).max(lo * (1.0 + 1e-12));
    let mut lambdas = geometric(lo, hi, cfg.spectral.points);
    if let Ok(sol) = &solved {
        if sol.lambda0 > lo && sol.lambda0 < hi {
            lambdas.push(sol.lambda0);
            lambdas.sort_by(f64::total_cmp);
        }
    }
    let kernel = lattice.kernel();
    let scan: Vec<ScanRow> = lambdas
        .iter()
        .map(|&l| ScanRow {
            lambda: l,
            f: spectral::laplace_kernel(l, &kernel, lattice.dtau()).0,
        })
        .collect();
    let decreasing = scan.windows(2).all(|w| w[1].f < w[0].f);

    let mut o = Out::new(out)?;
    o.csv("spectral_scan.csv", &scan)?;
    let (summary, passed, msg) = match &solved {
        Ok(sol) => {
            o.csv("eigenvectors.csv", eigen_rows(&lattice, sol))?;
            let passed = decreasing && sol.residual <= tol.root.max(1e-10) && sol.bounds_check;
            let msg = format!("spectral: lambda0 = {}, |F - 1| = {:e}", sol.lambda0, sol.residual);
            (
                SpectralSummary {
                    status: "ok",
                    message: None,
                    solution: Some(sol),
                    scan_decreasing: decreasing,
                    passed,
                },
                passed,
                msg,
            )
        }
        Err(e) => {
            let status = if matches!(e, Error::Subcritical { .. }) { "subcritical" } else { "diagnostic_failure" };
            (
                SpectralSummary {
                    status,
                    message: Some(e.to_string()),
                    solution: None,
                    scan_decreasing: decreasing,
                    passed: false,
                },
                false,
                format!("spectral: {e}"),
            )
        }
    };
    o.json("spectral.json", &summary)?;
    Ok(o.finish(passed, msg))
}

fn eigen_rows<'a>(lattice: &'a CharacteristicLattice, sol: &'a SpectralSolution) -> impl Iterator<Item = EigenRow> + 'a {
    let cols = lattice.cols();
    (0..lattice.rows()).flat_map(move |i| {
        (0..cols).map(move |j| {
            let k = i * cols + j;
            let sigma = &lattice.sigma_nodes()[j];
            let p = lattice.positions()[k];
            EigenRow {
                side: sigma.side,
                s: sigma.s,
                tau: lattice.tau(i),
                x: p.x,
                theta: p.theta,
                beta: lattice.beta_vals()[k],
                psi: sol.psi[k],
                v_tilde: sol.v_tilde[k],
            }
        })
    })
}

#[derive(Serialize)]
struct SnapshotRow {
    t: f64,
    side: Side,
    s: f64,
    tau: f64,
    x: f64,
    theta: f64,
    rho_tilde: f64,
    jacobian: f64,
    rho_physical: f64,
}

#[derive(Serialize)]
struct BirthRow {
    t: f64,
    birth_rate: f64,
}

#[derive(Serialize)]
struct MassRow {
    t: f64,
    mass: f64,
    truncated_mass: f64,
}

#[derive(Serialize)]
struct SimulateSummary {
    steps: usize,
    dt: f64,
    tau_max: f64,
    rows: usize,
    cols: usize,
    snapshots: Vec<String>,
    initial_mass: f64,
    final_mass: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_mean_value_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    spectral_status: Option<String>,
}

/// Grid step nearest to `t`, capped at `steps`.
pub fn snapshot_step(t: f64, dt: f64, steps: usize) -> usize {
    ((t / dt).round() as usize).min(steps)
}

pub fn snapshot_name(n: usize) -> String {
    format!("snapshot_{n:06}.csv")
}

/// Runs the model: density snapshots, `birth_rate.csv`, `mass.csv` and,
/// when the spectral problem is solvable, `diagnostics.csv` and
/// `convergence.json`. Summary in `simulate.json`.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let lattice = cfg.build_lattice()?;
    let steps = cfg.time_steps(&lattice);
    let rho0 = cfg.initial_data(&lattice)?;
    let source = cfg.source_samples(&lattice, steps)?;
    info!(
        "simulate: {} x {} lattice, tau_max = {}, {steps} steps",
        lattice.rows(),
        lattice.cols(),
        lattice.tau_max()
    );
    let field = renewal::simulate(&lattice, &rho0, &source)?;
    let dt = field.dt();

    let mut o = Out::new(out)?;
    let mut snaps: Vec<usize> = cfg.grid.snapshot_times.iter().map(|t| snapshot_step(*t, dt, steps)).collect();
    snaps.sort_unstable();
    snaps.dedup();
    let star = lattice.params().equilibrium();
    let guard = GUARD_RADIUS * lattice.params().b();
    let cols = lattice.cols();
    let mut names = Vec::new();
    for &n in &snaps {
        let slice = field.slice(n);
        let t = field.time(n);
        let rows = (0..lattice.rows()).flat_map(|i| {
            let slice = &slice;
            let lattice = &lattice;
            (0..cols).map(move |j| {
                let k = i * cols + j;
                let sigma = &lattice.sigma_nodes()[j];
                let p = lattice.positions()[k];
                let jac = lattice.jacobians()[k];
                let rho = slice[k];
                SnapshotRow {
                    t,
                    side: sigma.side,
                    s: sigma.s,
                    tau: lattice.tau(i),
                    x: p.x,
                    theta: p.theta,
                    rho_tilde: rho,
                    jacobian: jac,
                    rho_physical: if p.distance(&star) < guard { f64::NAN } else { rho / jac },
                }
            })
        });
        let name = snapshot_name(n);
        o.csv(&name, rows)?;
        names.push(name);
    }
    o.csv(
        "birth_rate.csv",
        field.birth_rate().iter().enumerate().map(|(n, b)| BirthRow {
            t: field.time(n),
            birth_rate: *b,
        }),
    )?;
    o.csv(
        "mass.csv",
        (0..=steps).map(|n| MassRow {
            t: field.time(n),
            mass: field.mass(&lattice, n),
            truncated_mass: field.truncated_mass(&lattice, n),
        }),
    )?;

    let tol = &cfg.tolerances;
    let (lambda0, mv, status) = match SpectralSolution::solve(&lattice, tol.root, tol.quad) {
        Ok(sol) => {
            let report = analysis::convergence_report(&field, &lattice, &sol, cfg.analysis.fit_window)?;
            o.csv("diagnostics.csv", analysis::diagnostics(&field, &lattice, &sol, &report))?;
            o.json("convergence.json", &report)?;
            let mv = report.mean_value_error.iter().copied().fold(0.0, f64::max);
            (Some(sol.lambda0), Some(mv), None)
        }
        Err(e @ (Error::Subcritical { .. } | Error::Diagnostic(_))) => {
            warn!("analysis diagnostics skipped: {e}");
            (None, None, Some(e.to_string()))
        }
        Err(e) => return Err(e),
    };
    o.json(
        "simulate.json",
        &SimulateSummary {
            steps,
            dt,
            tau_max: lattice.tau_max(),
            rows: lattice.rows(),
            cols,
            snapshots: names,
            initial_mass: field.mass(&lattice, 0),
            final_mass: field.mass(&lattice, steps),
            lambda0,
            max_mean_value_error: mv,
            spectral_status: status,
        },
    )?;
    let msg = format!("simulate: {steps} steps of {dt}, final mass {}", field.mass(&lattice, steps));
    Ok(o.finish(true, msg))
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub seed: u64,
    pub failed: Vec<String>,
    pub checks: Vec<Check>,
}

/// τ range of the Jacobian finite-difference check. Past it the flow has
/// collapsed onto X* and the determinant is below finite-difference noise.
pub const JACOBIAN_TAU_RANGE: f64 = 4.0;

/// The full invariant battery on the configured run.
pub fn run_validation(cfg: &RunConfig, seed: u64) -> Result<ValidationReport> {
    let params = cfg.growth_params()?;
    let tol = &cfg.tolerances;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![
        checks::inverse_flow_roundtrip(&params, cfg.analysis.roundtrip_points, tol.ode, &mut rng)?,
        checks::jacobian_finite_difference(&params, 100, JACOBIAN_TAU_RANGE, &mut rng)?,
        checks::volterra_order(0.7, 1.0, 5.0, 50, 3)?.0,
    ];

    let lattice = cfg.build_lattice()?;
    let steps = cfg.time_steps(&lattice);
    let rho0 = cfg.initial_data(&lattice)?;
    let source = cfg.source_samples(&lattice, steps)?;
    let field = renewal::simulate(&lattice, &rho0, &source)?;
    let homogeneous = source.is_zero();
    let nonneg = rho0.iter().all(|v| *v >= 0.0);

    out.push(checks::balance(&field, &lattice));
    if homogeneous && nonneg {
        out.push(checks::semigroup_bound(&field, &lattice));
    } else {
        out.push(Check::skipped("semigroup_bound", "needs f = 0 and non-negative initial data"));
    }
    out.push(checks::comparison(&lattice, &source, cfg.analysis.comparison_trials, &mut rng)?);

    let dependent = ["mean_value", "contraction", "convergence", "eigen_steadiness"];
    match SpectralSolution::solve(&lattice, tol.root, tol.quad) {
        Ok(sol) => {
            out.extend(checks::spectral(&sol, &lattice, tol.root));
            out.push(checks::mean_value(&field, &lattice, &sol, tol.mean_value)?);
            out.push(checks::contraction(&field, &lattice, &sol, tol.mean_value)?);
            let report = analysis::convergence_report(&field, &lattice, &sol, cfg.analysis.fit_window)?;
            out.extend(checks::convergence(&report, homogeneous, sol.lambda0));
            out.push(checks::eigen_steadiness(&lattice, &sol, steps)?);
        }
        Err(e) => {
            let why = e.to_string();
            out.push(checks::spectral_failure(e)?);
            for name in dependent {
                out.push(Check::skipped(name, format!("no spectral solution: {why}")));
            }
        }
    }
    let failed: Vec<String> = out.iter().filter(|c| !c.passed()).map(|c| c.name.clone()).collect();
    Ok(ValidationReport {
        passed: failed.is_empty(),
        seed,
        failed,
        checks: out,
    })
}

/// Runs [`run_validation`] and writes `validate.json`.
pub fn cmd_validate(cfg: &RunConfig, out: &Path, seed: u64) -> Result<Outcome> {
    let report = run_validation(cfg, seed)?;
    let mut o = Out::new(out)?;
    o.json("validate.json", &report)?;
    let msg = if report.passed {
        format!("validate: all {} checks passed", report.checks.len())
    } else {
        format!("validate: failed {}", report.failed.join(", "))
    };
    Ok(o.finish(report.passed, msg))
}

/// Writes the effective configuration next to the outputs.
pub fn write_config(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let mut o = Out::new(out)?;
    o.text("run_config.toml", &cfg.to_toml_string()?)?;
    Ok(o.files.remove(0))
}
