//! Invariant battery behind `metastat validate`.
//!
//! Every check returns a [`Check`] instead of failing, so a coarse or
//! subcritical configuration produces a report rather than an error. Only
//! genuine numerical breakdowns propagate as `Err`.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis;
use crate::boundary::{BoundaryPoint, Side};
use crate::error::{Error, Result};
use crate::growth::{self, GrowthParams, PhasePoint, GUARD_RADIUS};
use crate::lattice::CharacteristicLattice;
use crate::renewal::{self, DensityField, SourceSamples};
use crate::spectral::SpectralSolution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
    /// Reported for information, never fails.
    Info,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub detail: String,
}

impl Check {
    pub fn measured(name: &str, value: f64, threshold: f64, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: if passed { Status::Pass } else { Status::Fail },
            value: Some(value),
            threshold: Some(threshold),
            detail: detail.into(),
        }
    }

    /// `value <= threshold`; NaN fails.
    pub fn at_most(name: &str, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self::measured(name, value, threshold, value <= threshold, detail)
    }

    pub fn at_least(name: &str, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self::measured(name, value, threshold, value >= threshold, detail)
    }

    pub fn skipped(name: &str, why: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: Status::Skipped,
            value: None,
            threshold: None,
            detail: why.into(),
        }
    }

    pub fn failed(name: &str, why: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: Status::Fail,
            value: None,
            threshold: None,
            detail: why.into(),
        }
    }

    pub fn info(name: &str, value: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: Status::Info,
            value: Some(value),
            threshold: None,
            detail: detail.into(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

/// Random interior points outside the equilibrium guard, pushed back and
/// forward again: `max ‖Φ(τ(X), σ(X)) − X‖ / (b − 1)`.
pub fn inverse_flow_roundtrip(params: &GrowthParams, points: usize, tol: f64, rng: &mut impl Rng) -> Result<Check> {
    let b = params.b();
    let len = params.side_length();
    let star = params.equilibrium();
    let guard = GUARD_RADIUS * b;
    let mut pts = Vec::with_capacity(points);
    while pts.len() < points {
        let p = PhasePoint::new(rng.random_range(1.0..b), rng.random_range(1.0..b));
        if p.x > 1.0 && p.theta > 1.0 && p.distance(&star) >= guard {
            pts.push(p);
        }
    }
    let errs: Vec<f64> = pts
        .par_iter()
        .map(|p| {
            let (tau, sigma) = growth::inverse_flow(p, params, tol)?;
            let q = growth::flow(&sigma, tau, params, tol)?.position;
            Ok(q.distance(p) / len)
        })
        .collect::<Result<_>>()?;
    let worst = errs.iter().copied().fold(0.0, f64::max);
    Ok(Check::at_most(
        "inverse_flow_roundtrip",
        worst,
        1e-6,
        format!("{points} random interior points, relative to b - 1"),
    ))
}

/// Integrated Jacobian against the central-difference determinant of the
/// flow map at random `(τ, σ)`, `τ ∈ [0, tau_max]`.
pub fn jacobian_finite_difference(
    params: &GrowthParams,
    samples: usize,
    tau_max: f64,
    rng: &mut impl Rng,
) -> Result<Check> {
    let len = params.side_length();
    let draws: Vec<(Side, f64, f64)> = (0..samples)
        .map(|_| {
            let side = Side::ALL[rng.random_range(0..4)];
            (side, rng.random_range(0.02 * len..0.98 * len), rng.random_range(0.0..tau_max))
        })
        .collect();
    let tol = 1e-12;
    let errs: Vec<f64> = draws
        .par_iter()
        .map(|&(side, s, tau)| {
            let at = |s: f64, t: f64| -> Result<PhasePoint> {
                Ok(growth::flow(&BoundaryPoint::new(side, s, params)?, t, params, tol)?.position)
            };
            let h = 1e-5 * len;
            let ht = 1e-5;
            // One-sided in τ at the boundary keeps the flow time non-negative.
            let (t_lo, t_hi) = if tau < ht { (tau, tau + 2.0 * ht) } else { (tau - ht, tau + ht) };
            let (p_lo, p_hi) = (at(s, t_lo)?, at(s, t_hi)?);
            let (q_lo, q_hi) = (at(s - h, tau)?, at(s + h, tau)?);
            let dt = ((p_hi.x - p_lo.x) / (t_hi - t_lo), (p_hi.theta - p_lo.theta) / (t_hi - t_lo));
            let ds = ((q_hi.x - q_lo.x) / (2.0 * h), (q_hi.theta - q_lo.theta) / (2.0 * h));
            let det = (dt.0 * ds.1 - dt.1 * ds.0).abs();
            let jac = growth::flow(&BoundaryPoint::new(side, s, params)?, tau, params, tol)?.jacobian;
            Ok((det - jac).abs() / jac)
        })
        .collect::<Result<_>>()?;
    let worst = errs.iter().copied().fold(0.0, f64::max);
    Ok(Check::at_most(
        "jacobian_finite_difference",
        worst,
        1e-4,
        format!("{samples} random (tau, sigma) with tau in [0, {tau_max}]"),
    ))
}

/// `B = g + K ∫₀^t B` with constant `K` has `B = g e^{Kt}`; observed orders
/// over `halvings` refinements of `base_steps` must lie in `2 ± 0.3`.
pub fn volterra_order(k: f64, g: f64, t_end: f64, base_steps: usize, halvings: usize) -> Result<(Check, Vec<f64>)> {
    let mut errs = Vec::with_capacity(halvings + 1);
    for r in 0..=halvings {
        let steps = base_steps << r;
        let h = t_end / steps as f64;
        let b = renewal::solve_birth_rate(&vec![k; steps + 1], &vec![g; steps + 1], h)?;
        let err = b
            .iter()
            .enumerate()
            .map(|(n, v)| (v - g * (k * n as f64 * h).exp()).abs())
            .fold(0.0, f64::max);
        errs.push(err);
    }
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let worst = orders.iter().map(|o| (o - 2.0).abs()).fold(0.0, f64::max);
    let check = Check::at_most(
        "volterra_order",
        worst,
        0.3,
        format!("|order - 2| over {halvings} halvings, orders {orders:?}"),
    );
    Ok((check, orders))
}

/// `|F(λ0) − 1|` and both sets of adjoint bounds: the lattice range of β̃
/// and the global `m/λ0 ≤ Ψ ≤ m b^α/λ0`.
pub fn spectral(sol: &SpectralSolution, lattice: &CharacteristicLattice, root_tol: f64) -> Vec<Check> {
    let birth = lattice.birth();
    let b = lattice.params().b();
    let edge = birth.m * b.powf(birth.alpha);
    let lo = birth.m.min(edge) / sol.lambda0;
    let hi = birth.m.max(edge) / sol.lambda0;
    let slack = 1e-12 * hi;
    let global = sol.psi_min >= lo - slack && sol.psi_max <= hi + slack;
    vec![
        Check::at_most(
            "spectral_residual",
            sol.residual,
            root_tol.max(1e-10),
            format!("|F(lambda0) - 1| at lambda0 = {}", sol.lambda0),
        ),
        Check::measured(
            "adjoint_bounds",
            sol.psi_min,
            lo,
            sol.bounds_check && global,
            format!(
                "psi in [{}, {}]; lattice bounds [{}, {}]; global bounds [{lo}, {hi}]",
                sol.psi_min, sol.psi_max, sol.psi_lower_bound, sol.psi_upper_bound
            ),
        ),
    ]
}

pub fn mean_value(field: &DensityField, lattice: &CharacteristicLattice, sol: &SpectralSolution, tol: f64) -> Result<Check> {
    let errs = analysis::check_mean_value(field, lattice, sol)?;
    let worst = errs.iter().copied().fold(0.0, f64::max);
    Ok(Check::at_most(
        "mean_value",
        worst,
        tol,
        "max relative error of the psi-weighted mass against the closed form",
    ))
}

pub fn contraction(field: &DensityField, lattice: &CharacteristicLattice, sol: &SpectralSolution, tol: f64) -> Result<Check> {
    let c = analysis::check_contraction(field, lattice, sol, tol)?;
    let worst = c
        .margins
        .iter()
        .zip(&c.rhs)
        .map(|(m, r)| if *r > 0.0 { -m / r } else { -m })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(Check::measured(
        "contraction",
        worst,
        tol,
        c.holds,
        "largest relative shortfall of the bound (negative means slack)",
    ))
}

/// Random ordered pair `0 ≤ ρ⁰_a ≤ ρ⁰_b` on the lattice: a sum of τ-bumps on
/// random columns, and a nodewise random fraction of it.
pub fn random_ordered_pair(lattice: &CharacteristicLattice, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let cols = lattice.cols();
    let tau_max = lattice.tau_max();
    let mut upper = vec![0.0; lattice.rows() * cols];
    for _ in 0..rng.random_range(1..4) {
        let center = rng.random_range(0.0..0.5 * tau_max);
        let width = rng.random_range(0.3..2.0);
        let amp = rng.random_range(0.1..2.0);
        let weights: Vec<f64> = (0..cols).map(|_| rng.random::<f64>()).collect();
        for i in 0..lattice.rows() {
            let t = amp * (-((lattice.tau(i) - center) / width).powi(2)).exp();
            for j in 0..cols {
                upper[i * cols + j] += t * weights[j];
            }
        }
    }
    let lower = upper.iter().map(|v| v * rng.random::<f64>()).collect();
    (lower, upper)
}

/// `trials` random ordered pairs run with the same non-negative source.
pub fn comparison(
    lattice: &CharacteristicLattice,
    source: &SourceSamples,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<Check> {
    let pairs: Vec<_> = (0..trials).map(|_| random_ordered_pair(lattice, rng)).collect();
    let reports: Vec<_> = pairs
        .par_iter()
        .map(|(a, b)| analysis::check_comparison(lattice, a, b, source))
        .collect::<Result<_>>()?;
    let failures: Vec<_> = reports.iter().enumerate().filter(|(_, r)| !r.ordered).collect();
    let detail = match failures.first() {
        None => format!("{trials} random ordered pairs, {} steps", source.steps()),
        Some((k, r)) => format!("trial {k} first violation {:?}", r.first_violation),
    };
    Ok(Check::measured(
        "comparison",
        failures.len() as f64,
        0.0,
        failures.is_empty(),
        detail,
    ))
}

/// Deviation from the stable profile. Homogeneous runs: non-increasing
/// within `1e-10` per step and decaying at least at `0.5 · mu_bound`. With a
/// source: the a priori bound dominates the deviation.
pub fn convergence(report: &analysis::ConvergenceReport, homogeneous: bool, lambda0: f64) -> Vec<Check> {
    let dev = &report.deviation;
    if homogeneous {
        let worst_rise = dev.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
        let monotone = Check::at_most(
            "deviation_monotone",
            worst_rise.max(0.0),
            1e-10,
            "largest increase of the deviation between consecutive times",
        );
        let floor = 0.5 * report.mu_bound;
        let rate = match report.fitted_rate {
            Some(r) => Check::at_least("convergence_rate", r, floor, "fitted decay rate against 0.5 * mu_bound"),
            None if report.converged => Check::info("convergence_rate", 0.0, "deviation reached the noise floor; fit skipped"),
            None => Check::failed("convergence_rate", "too few points in the fit window"),
        };
        vec![monotone, rate]
    } else if report.mu_bound < lambda0 {
        let worst = dev
            .iter()
            .zip(&report.bound_rhs)
            .map(|(d, r)| d - r * (1.0 + 1e-9))
            .fold(f64::NEG_INFINITY, f64::max);
        vec![Check::at_most(
            "convergence_bound",
            worst,
            0.0,
            "max of deviation minus the a priori bound",
        )]
    } else {
        vec![Check::skipped("convergence_bound", "mu_bound >= lambda0")]
    }
}

/// Starting from the lattice eigenvector the rescaled run stays on it.
pub fn eigen_steadiness(lattice: &CharacteristicLattice, sol: &SpectralSolution, steps: usize) -> Result<Check> {
    let field = renewal::simulate(lattice, &sol.v_tilde, &SourceSamples::zero(lattice.cols(), steps))?;
    let rep = analysis::convergence_report(&field, lattice, sol, 0.5)?;
    let scale = field.mass(lattice, 0);
    let base = rep.deviation[0].max(1e-12 * scale);
    let worst = rep.deviation.iter().copied().fold(0.0, f64::max);
    Ok(Check::at_most(
        "eigen_steadiness",
        worst / base,
        10.0,
        format!("max deviation / initial deviation (initial {})", rep.deviation[0]),
    ))
}

/// Homogeneous runs: `mass(t) ≤ mass₀ e^{t sup β} (1 + 1e-6)`.
pub fn semigroup_bound(field: &DensityField, lattice: &CharacteristicLattice) -> Check {
    let birth = lattice.birth();
    let sup = birth.m.max(birth.m * lattice.params().b().powf(birth.alpha));
    let m0 = field.mass(lattice, 0);
    let worst = (0..=field.steps())
        .map(|n| field.mass(lattice, n) / (m0 * (sup * field.time(n)).exp()))
        .fold(f64::NEG_INFINITY, f64::max);
    Check::at_most(
        "semigroup_bound",
        worst,
        1.0 + 1e-6,
        "max of mass(t) / (mass0 exp(t sup beta))",
    )
}

pub fn balance(field: &DensityField, lattice: &CharacteristicLattice) -> Check {
    let r = analysis::balance_residual(field, lattice);
    Check::info(
        "balance_residual",
        r.iter().copied().fold(0.0, f64::max),
        "max |d/dt mass - (B + boundary source - outflow)|",
    )
}

/// Maps an error from a spectral solve to a skipped or failed check, or
/// passes it through when it is a genuine breakdown.
pub fn spectral_failure(err: Error) -> Result<Check> {
    match err {
        Error::Subcritical { .. } => Ok(Check::skipped("spectral", err.to_string())),
        Error::Diagnostic(_) => Ok(Check::failed("spectral", err.to_string())),
        other => Err(other),
    }
}
