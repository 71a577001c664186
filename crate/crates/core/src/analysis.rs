//! Ψ-weighted observables and checks of the dynamical identities.
//!
//! All integrals over Ω are taken in lattice coordinates with the split
//! trapezoid of [`DensityField::split_sum`], so the Jacobian never appears.

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::CharacteristicLattice;
use crate::quadrature::trap_weight;
use crate::renewal::{self, DensityField, SourceSamples};
use crate::spectral::SpectralSolution;

fn check_shapes(field: &DensityField, lattice: &CharacteristicLattice, spectral: &SpectralSolution) -> Result<()> {
    let n = lattice.rows() * lattice.cols();
    if field.rows() != lattice.rows() || field.cols() != lattice.cols() || spectral.psi.len() != n {
        return Err(Error::Shape("field, lattice and spectral solution disagree in size".into()));
    }
    Ok(())
}

/// `‖ρ(t_n)‖_{L¹_Ψ} = ∬ |ρ̃| Ψ`.
pub fn psi_norm(field: &DensityField, lattice: &CharacteristicLattice, n: usize, spectral: &SpectralSolution) -> f64 {
    field.split_sum(lattice, n, |_, _, v| v.abs(), &spectral.psi)
}

/// `∫ ρ(t_n) Ψ` (signed).
pub fn psi_mass(field: &DensityField, lattice: &CharacteristicLattice, n: usize, spectral: &SpectralSolution) -> f64 {
    field.weighted_sum(lattice, n, &spectral.psi)
}

/// `∫ ρ⁰Ψ + ∫₀^{t_n} e^{−λ0 s} ∫_Γ Ψ f(s)` on the time grid, trapezoid in `s`.
///
/// `map` is applied to the data first, e.g. `f64::abs` for the contraction bound.
fn rescaled_mean_series(
    lattice: &CharacteristicLattice,
    rho0: &[f64],
    source: &SourceSamples,
    spectral: &SpectralSolution,
    map: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let cols = lattice.cols();
    let h = lattice.dtau();
    let sw = lattice.sigma_weights();
    let mut initial = 0.0;
    let big_i = lattice.tau_steps();
    for i in 0..=big_i {
        let row: f64 = (0..cols)
            .map(|j| sw[j] * map(rho0[i * cols + j]) * spectral.psi[i * cols + j])
            .sum();
        initial += trap_weight(i, big_i) * row;
    }
    initial *= h;
    let flux: Vec<f64> = (0..=source.steps())
        .map(|k| {
            let f = source.row(k);
            let s: f64 = (0..cols).map(|j| sw[j] * spectral.psi_boundary[j] * map(f[j])).sum();
            (-spectral.lambda0 * k as f64 * h).exp() * s
        })
        .collect();
    let mut out = Vec::with_capacity(flux.len());
    let mut acc = 0.0;
    out.push(initial);
    for k in 1..flux.len() {
        acc += 0.5 * h * (flux[k - 1] + flux[k]);
        out.push(initial + acc);
    }
    out
}

/// Closed-form mean value `m(t) = e^{λ0 t}{∫ρ⁰Ψ + ∫₀^t e^{−λ0 s}∫_Γ Ψ f}`.
///
/// Off-grid times interpolate the `s` integral linearly; the flag reports it.
pub fn mean_value_closed_form(
    t: f64,
    lattice: &CharacteristicLattice,
    rho0: &[f64],
    source: &SourceSamples,
    spectral: &SpectralSolution,
) -> Result<(f64, bool)> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("time must be finite and >= 0 (got {t})")));
    }
    let series = rescaled_mean_series(lattice, rho0, source, spectral, |v| v);
    let u = t / lattice.dtau();
    let k = u.floor() as usize;
    let on_grid = (u - u.round()).abs() < 1e-9;
    let value = if on_grid {
        let k = u.round() as usize;
        *series.get(k).ok_or_else(|| Error::Domain(format!("t = {t} is past the source horizon")))?
    } else {
        if k + 1 >= series.len() {
            return Err(Error::Domain(format!("t = {t} is past the source horizon")));
        }
        warn!("mean value at off-grid time {t}: interpolating the source integral");
        let w = u - k as f64;
        (1.0 - w) * series[k] + w * series[k + 1]
    };
    Ok(((spectral.lambda0 * t).exp() * value, !on_grid))
}

/// `m(t_n)` on the whole time grid of `field`.
pub fn mean_value_series(field: &DensityField, lattice: &CharacteristicLattice, spectral: &SpectralSolution) -> Vec<f64> {
    rescaled_mean_series(lattice, field.initial(), field.source(), spectral, |v| v)
        .iter()
        .enumerate()
        .map(|(n, r)| (spectral.lambda0 * field.time(n)).exp() * r)
        .collect()
}

fn relative(err: f64, denom: f64, scale: f64) -> f64 {
    let d = denom.abs().max(1e-12 * scale);
    if d == 0.0 {
        if err == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        err / d
    }
}

/// Relative error between the simulated `∫ρΨ` and the closed form, per grid time.
pub fn check_mean_value(
    field: &DensityField,
    lattice: &CharacteristicLattice,
    spectral: &SpectralSolution,
) -> Result<Vec<f64>> {
    check_shapes(field, lattice, spectral)?;
    let m = mean_value_series(field, lattice, spectral);
    let sim: Vec<f64> = (0..=field.steps()).map(|n| psi_mass(field, lattice, n, spectral)).collect();
    let scale = if sim[0].abs() > 0.0 {
        sim[0].abs()
    } else {
        m.iter().fold(0.0, |a: f64, b| a.max(b.abs()))
    };
    Ok(sim.iter().zip(&m).map(|(s, c)| relative((s - c).abs(), *c, scale)).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionReport {
    pub holds: bool,
    /// `rhs − ‖ρ(t_n)‖_{L¹_Ψ}` per grid time.
    pub margins: Vec<f64>,
    pub rhs: Vec<f64>,
}

/// `‖ρ(t)‖_{L¹_Ψ} ≤ e^{λ0 t}{∫|ρ⁰|Ψ + ∫₀^t e^{−λ0 s}∫_Γ Ψ|f|}` within relative `tol`.
pub fn check_contraction(
    field: &DensityField,
    lattice: &CharacteristicLattice,
    spectral: &SpectralSolution,
    tol: f64,
) -> Result<ContractionReport> {
    check_shapes(field, lattice, spectral)?;
    let rhs: Vec<f64> = rescaled_mean_series(lattice, field.initial(), field.source(), spectral, f64::abs)
        .iter()
        .enumerate()
        .map(|(n, r)| (spectral.lambda0 * field.time(n)).exp() * r)
        .collect();
    let margins: Vec<f64> = rhs
        .iter()
        .enumerate()
        .map(|(n, r)| r - psi_norm(field, lattice, n, spectral))
        .collect();
    let holds = margins.iter().zip(&rhs).all(|(m, r)| *m >= -tol * r.abs());
    Ok(ContractionReport { holds, margins, rhs })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub step: usize,
    pub row: usize,
    pub col: usize,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub ordered: bool,
    pub first_violation: Option<Violation>,
}

/// Runs `rho0_a ≤ rho0_b` with the same non-negative source and checks the
/// solutions stay ordered at every node and time.
pub fn check_comparison(
    lattice: &CharacteristicLattice,
    rho0_a: &[f64],
    rho0_b: &[f64],
    source: &SourceSamples,
) -> Result<ComparisonReport> {
    if rho0_a.len() != rho0_b.len() {
        return Err(Error::Shape("initial data of different sizes".into()));
    }
    if let Some(k) = rho0_a.iter().zip(rho0_b).position(|(a, b)| a > b) {
        return Err(Error::Domain(format!("initial data not ordered at node {k}")));
    }
    if source.values().iter().any(|f| *f < 0.0) {
        return Err(Error::Domain("comparison needs a non-negative source".into()));
    }
    let fa = renewal::simulate(lattice, rho0_a, source)?;
    let fb = renewal::simulate(lattice, rho0_b, source)?;
    for n in 0..=fa.steps() {
        for i in 0..lattice.rows() {
            for j in 0..lattice.cols() {
                let (a, b) = (fa.value(n, i, j), fb.value(n, i, j));
                if a > b {
                    return Ok(ComparisonReport {
                        ordered: false,
                        first_violation: Some(Violation {
                            step: n,
                            row: i,
                            col: j,
                            lower: a,
                            upper: b,
                        }),
                    });
                }
            }
        }
    }
    Ok(ComparisonReport {
        ordered: true,
        first_violation: None,
    })
}

/// `|dM/dt − (B + ∫_Γ f − outflow at τ_max)|` at interior grid times, with
/// the centered difference of the total mass `M`.
///
/// The outflow term is the density leaving the truncated lattice.
pub fn balance_residual(field: &DensityField, lattice: &CharacteristicLattice) -> Vec<f64> {
    let steps = field.steps();
    if steps < 2 {
        return Vec::new();
    }
    let h = field.dt();
    let sw = lattice.sigma_weights();
    let big_i = lattice.tau_steps();
    let mass: Vec<f64> = (0..=steps).map(|n| field.mass(lattice, n)).collect();
    (1..steps)
        .map(|n| {
            let dm = (mass[n + 1] - mass[n - 1]) / (2.0 * h);
            let inflow: f64 = field.source().row(n).iter().zip(sw).map(|(f, w)| f * w).sum();
            let outflow: f64 = (0..lattice.cols()).map(|j| sw[j] * field.value(n, big_i, j)).sum();
            (dm - (field.birth_rate()[n] + inflow - outflow)).abs()
        })
        .collect()
}

/// `min β̃/Ψ` over the lattice: the sharpest μ with `β − μΨ ≥ 0`.
pub fn mu_bound(lattice: &CharacteristicLattice, spectral: &SpectralSolution) -> f64 {
    lattice
        .beta_vals()
        .iter()
        .zip(&spectral.psi)
        .map(|(b, p)| b / p)
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub times: Vec<f64>,
    /// `‖ρ̃ e^{−λ0 t} − m(t) Ṽ‖_{L¹_Ψ}` with the rescaled mean value.
    pub deviation: Vec<f64>,
    /// Decay rate of the deviation fitted over the window, if above the noise floor.
    pub fitted_rate: Option<f64>,
    pub converged: bool,
    pub mu_bound: f64,
    pub mean_value_error: Vec<f64>,
    /// Right-hand side of the asymptotic estimate with `μ = mu_bound`.
    pub bound_rhs: Vec<f64>,
    pub fit_window_start: f64,
}

/// Deviation from the stable profile, its fitted decay rate and the a priori bound.
///
/// `window` is the fraction of the horizon skipped before the fit (0.5 fits
/// the second half).
pub fn convergence_report(
    field: &DensityField,
    lattice: &CharacteristicLattice,
    spectral: &SpectralSolution,
    window: f64,
) -> Result<ConvergenceReport> {
    check_shapes(field, lattice, spectral)?;
    if !(0.0..1.0).contains(&window) {
        return Err(Error::Config(format!("fit window must be in [0, 1) (got {window})")));
    }
    let lambda0 = spectral.lambda0;
    let h = field.dt();
    let steps = field.steps();
    let rescaled = rescaled_mean_series(lattice, field.initial(), field.source(), spectral, |v| v);
    let v = &spectral.v_tilde;
    let cols = lattice.cols();
    let times: Vec<f64> = (0..=steps).map(|n| field.time(n)).collect();
    let deviation: Vec<f64> = (0..=steps)
        .map(|n| {
            let e = (-lambda0 * times[n]).exp();
            let m = rescaled[n];
            field.split_sum(lattice, n, |i, j, val| (val * e - m * v[i * cols + j]).abs(), &spectral.psi)
        })
        .collect();
    let mu = mu_bound(lattice, spectral);
    let sw = lattice.sigma_weights();
    let mut bound_rhs = Vec::with_capacity(steps + 1);
    let mut acc = 0.0;
    let mut prev = 0.0;
    for n in 0..=steps {
        let f = field.source().row(n);
        let flux: f64 = (0..cols).map(|j| sw[j] * f[j].abs() * spectral.psi_boundary[j]).sum();
        let cur = (-(lambda0 - mu) * times[n]).exp() * flux;
        if n > 0 {
            acc += 0.5 * h * (prev + cur);
        }
        prev = cur;
        bound_rhs.push((-mu * times[n]).exp() * (deviation[0] + 2.0 * acc));
    }

    let start = ((window * steps as f64).ceil() as usize).min(steps);
    let floor = 1e-13 * deviation[0].max(f64::MIN_POSITIVE);
    let fit: Vec<(f64, f64)> = (start..=steps).map(|n| (times[n], deviation[n])).collect();
    let below_floor = fit.iter().any(|(_, d)| *d <= floor);
    let fitted_rate = if below_floor || fit.len() < 2 {
        None
    } else {
        let pts: Vec<(f64, f64)> = fit.iter().map(|(t, d)| (*t, d.ln())).collect();
        let k = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
        Some(-sxy / sxx)
    };
    Ok(ConvergenceReport {
        times,
        deviation,
        converged: below_floor,
        fitted_rate,
        mu_bound: mu,
        mean_value_error: check_mean_value(field, lattice, spectral)?,
        bound_rhs,
        fit_window_start: start as f64 * h,
    })
}

/// One row of the per-time diagnostics table.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticRow {
    pub t: f64,
    pub mass: f64,
    pub psi_mass: f64,
    pub m_closed_form: f64,
    pub deviation: f64,
    pub bound_rhs: f64,
}

pub fn diagnostics(
    field: &DensityField,
    lattice: &CharacteristicLattice,
    spectral: &SpectralSolution,
    report: &ConvergenceReport,
) -> Vec<DiagnosticRow> {
    let m = mean_value_series(field, lattice, spectral);
    (0..=field.steps())
        .map(|n| DiagnosticRow {
            t: field.time(n),
            mass: field.mass(lattice, n),
            psi_mass: psi_mass(field, lattice, n, spectral),
            m_closed_form: m[n],
            deviation: report.deviation[n],
            bound_rhs: report.bound_rhs[n],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::EmissionProfile;
    use crate::growth::GrowthParams;
    use crate::lattice::{BirthRate, LatticeSpec};

    fn setup(birth: BirthRate, spec: LatticeSpec) -> (CharacteristicLattice, SpectralSolution) {
        let p = GrowthParams::new(0.5, 2.0, 1.0).unwrap();
        let lat = CharacteristicLattice::build(&p, &EmissionProfile::default_hat(&p), &birth, &spec).unwrap();
        let sol = SpectralSolution::solve(&lat, 1e-12, 1e-8).unwrap();
        (lat, sol)
    }

    fn bump(lat: &CharacteristicLattice) -> Vec<f64> {
        lat.separable(|t| (-((t - 2.0) / 0.6f64).powi(2)).exp(), |j| lat.emission()[j])
    }

    fn steps_for(lat: &CharacteristicLattice, t: f64) -> usize {
        (t / lat.dtau()).round() as usize
    }

    #[test]
    fn zero_run_observables() {
        let (lat, sol) = setup(BirthRate::new(0.1, 2.0 / 3.0).unwrap(), LatticeSpec::new(64, 16));
        let rho0 = vec![0.0; lat.rows() * lat.cols()];
        let src = SourceSamples::zero(lat.cols(), 10);
        let field = renewal::simulate(&lat, &rho0, &src).unwrap();
        assert_eq!(psi_norm(&field, &lat, 5, &sol), 0.0);
        assert_eq!(mean_value_closed_form(1.0, &lat, &rho0, &src, &sol).unwrap().0, 0.0);
        assert!(check_mean_value(&field, &lat, &sol).unwrap().iter().all(|e| *e == 0.0));
        let c = check_contraction(&field, &lat, &sol, 0.0).unwrap();
        assert!(c.holds && c.margins.iter().all(|m| *m == 0.0));
        assert!(balance_residual(&field, &lat).iter().all(|r| *r == 0.0));
    }

    #[test]
    fn constant_rate_psi_norm_is_mass() {
        let beta = 0.7;
        let (lat, sol) = setup(BirthRate::constant(beta).unwrap(), LatticeSpec::new(128, 8).with_tau_max(10.0));
        let rho0 = bump(&lat);
        let steps = steps_for(&lat, 5.0);
        let field = renewal::simulate(&lat, &rho0, &SourceSamples::zero(lat.cols(), steps)).unwrap();
        let m0 = field.mass(&lat, 0);
        for n in 0..=steps {
            let mass = field.mass(&lat, n);
            assert!((psi_norm(&field, &lat, n, &sol) - mass).abs() < 1e-6 * mass);
            let exact = m0 * (beta * field.time(n)).exp();
            let (m, off) = mean_value_closed_form(field.time(n), &lat, &rho0, field.source(), &sol).unwrap();
            assert!(!off);
            assert!((m - exact).abs() < 1e-6 * exact);
        }
    }

    #[test]
    fn mean_value_is_second_order() {
        let birth = BirthRate::new(0.1, 2.0 / 3.0).unwrap();
        let mut errs = Vec::new();
        for steps in [128usize, 256] {
            let (lat, sol) = setup(birth, LatticeSpec::new(steps, 16).with_tau_max(25.0));
            let n = steps_for(&lat, 10.0);
            let field = renewal::simulate(&lat, &bump(&lat), &SourceSamples::zero(lat.cols(), n)).unwrap();
            let e = check_mean_value(&field, &lat, &sol).unwrap();
            assert_eq!(e[0], 0.0);
            errs.push(e.iter().cloned().fold(0.0, f64::max));
        }
        let ratio = errs[0] / errs[1];
        assert!((3.0..5.0).contains(&ratio), "{errs:?}");
    }

    #[test]
    fn contraction_with_mixed_signs_is_strict() {
        let (lat, sol) = setup(BirthRate::new(0.1, 2.0 / 3.0).unwrap(), LatticeSpec::new(256, 16));
        let plus = bump(&lat);
        let minus = lat.separable(|t| (-((t - 5.0) / 0.8f64).powi(2)).exp(), |j| 0.8 * lat.emission()[j]);
        let mixed: Vec<f64> = plus.iter().zip(&minus).map(|(a, b)| a - b).collect();
        let steps = 160;
        let src = SourceSamples::zero(lat.cols(), steps);
        let field = renewal::simulate(&lat, &mixed, &src).unwrap();
        let c = check_contraction(&field, &lat, &sol, 1e-3).unwrap();
        assert!(c.holds, "{:?} {:?}", c.margins, c.rhs);
        // Equality at t = 0; strict once births from both signs mix.
        assert!(c.margins[0].abs() < 1e-9 * c.rhs[0]);
        assert!(c.margins.iter().zip(&c.rhs).any(|(m, r)| *m > 0.1 * r), "{:?}", c.margins);
        // Nonnegative data: equality up to discretization.
        let field = renewal::simulate(&lat, &plus, &src).unwrap();
        let c = check_contraction(&field, &lat, &sol, 1e-3).unwrap();
        let rel: Vec<f64> = c.margins.iter().zip(&c.rhs).map(|(m, r)| m / r).collect();
        assert!(c.holds, "{rel:?} tau_max {}", lat.tau_max());
        assert!(c.margins.iter().zip(&c.rhs).all(|(m, r)| m.abs() < 1e-3 * r));
        for n in 0..=steps {
            assert_eq!(psi_norm(&field, &lat, n, &sol), psi_mass(&field, &lat, n, &sol));
        }
    }

    #[test]
    fn comparison_examples() {
        let (lat, _) = setup(BirthRate::new(0.1, 2.0 / 3.0).unwrap(), LatticeSpec::new(32, 8).with_tau_max(12.0));
        let b = bump(&lat);
        let zero = vec![0.0; b.len()];
        let half: Vec<f64> = b.iter().map(|v| 0.5 * v).collect();
        let src = SourceSamples::zero(lat.cols(), 30);
        assert!(check_comparison(&lat, &zero, &b, &src).unwrap().ordered);
        assert!(check_comparison(&lat, &half, &b, &src).unwrap().ordered);
        assert!(check_comparison(&lat, &b, &half, &src).is_err());
        let fh = renewal::simulate(&lat, &half, &src).unwrap();
        let fb = renewal::simulate(&lat, &b, &src).unwrap();
        for n in 0..=30 {
            assert!((2.0 * fh.birth_rate()[n] - fb.birth_rate()[n]).abs() <= 1e-14 * fb.birth_rate()[n]);
        }
    }

    #[test]
    fn balance_residual_is_second_order() {
        let beta = 0.7;
        let mut res = Vec::new();
        for steps in [100usize, 200, 400] {
            let (lat, _) = setup(BirthRate::constant(beta).unwrap(), LatticeSpec::new(steps, 8).with_tau_max(10.0));
            let n = steps_for(&lat, 5.0);
            let field = renewal::simulate(&lat, &bump(&lat), &SourceSamples::zero(lat.cols(), n)).unwrap();
            let r = balance_residual(&field, &lat);
            let scale = field.mass(&lat, n);
            res.push(r.iter().cloned().fold(0.0, f64::max) / scale);
        }
        assert!(res[2] < 1e-3, "{res:?}");
        for w in res.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.0..5.0).contains(&ratio), "{res:?}");
        }
    }

    #[test]
    fn mu_bound_is_below_lambda() {
        let (lat, sol) = setup(BirthRate::new(0.1, 2.0 / 3.0).unwrap(), LatticeSpec::new(64, 16));
        let mu = mu_bound(&lat, &sol);
        assert!(mu > 0.0 && mu <= sol.lambda0);
    }

    #[test]
    fn source_run_stays_below_bound() {
        let (lat, sol) = setup(BirthRate::new(0.1, 2.0 / 3.0).unwrap(), LatticeSpec::new(128, 16));
        let n = steps_for(&lat, 20.0);
        let q: Vec<f64> = (0..=n).map(|k| 0.05 * (1.0 - (-(k as f64) * lat.dtau()).exp())).collect();
        let src = SourceSamples::separable(&lat, &q);
        let field = renewal::simulate(&lat, &bump(&lat), &src).unwrap();
        let rep = convergence_report(&field, &lat, &sol, 0.5).unwrap();
        assert!(rep.mu_bound < sol.lambda0);
        for (d, b) in rep.deviation.iter().zip(&rep.bound_rhs) {
            assert!(*d <= *b * (1.0 + 1e-6), "{d} > {b}");
        }
    }

    #[test]
    fn off_grid_mean_value_is_flagged() {
        let (lat, sol) = setup(BirthRate::constant(0.5).unwrap(), LatticeSpec::new(32, 8).with_tau_max(8.0));
        let rho0 = bump(&lat);
        let src = SourceSamples::zero(lat.cols(), 10);
        let (_, off) = mean_value_closed_form(1.5 * lat.dtau(), &lat, &rho0, &src, &sol).unwrap();
        assert!(off);
        assert!(mean_value_closed_form(100.0, &lat, &rho0, &src, &sol).is_err());
    }
}
