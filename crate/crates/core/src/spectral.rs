//! Malthus parameter and eigenvectors.
//!
//! `λ0` is the root of `F(λ) = ∫₀^∞ K(τ) e^{−λτ} dτ = 1`. The direct
//! eigenvector in lattice coordinates is `Ṽ = C N(σ) e^{−λ0 τ}` and the
//! adjoint is `Ψ(Φ_τ(σ)) = ∫₀^∞ β̃(τ + u, σ) e^{−λ0 u} du`.
//!
//! Every `e^{−λτ}`-weighted integral uses the exponential-fitted product
//! trapezoid of [`ExpPanel`], and every tail past τ_max freezes the lattice
//! value at τ_max. With that choice `∫_Γ N Ψ(σ) dσ` and `F(λ0)` are the
//! same finite sum, and a constant rate gives `F = β/λ`, `Ψ ≡ 1`, `C = λ0`
//! up to rounding.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::CharacteristicLattice;
use crate::quadrature::{exp_panel_dlambda, ExpPanel};

/// `F(λ)` and `F'(λ)` from kernel samples on a uniform grid of step `h`.
pub fn laplace_kernel(lambda: f64, kernel: &[f64], h: f64) -> (f64, f64) {
    let big_i = kernel.len() - 1;
    let panel = ExpPanel::new(lambda, h);
    let (dl, dr) = exp_panel_dlambda(lambda, h);
    let (mut f, mut df) = (0.0, 0.0);
    for i in 0..big_i {
        let tau = i as f64 * h;
        let e = (-lambda * tau).exp();
        let lin = h * (panel.left * kernel[i] + panel.right * kernel[i + 1]);
        f += e * lin;
        df += e * (h * h * (dl * kernel[i] + dr * kernel[i + 1]) - tau * lin);
    }
    let tau_m = big_i as f64 * h;
    let tail = kernel[big_i] * (-lambda * tau_m).exp();
    f += tail / lambda;
    df -= tail * (tau_m / lambda + 1.0 / (lambda * lambda));
    (f, df)
}

/// `F(λ)` on the lattice.
pub fn laplace_f(lambda: f64, lattice: &CharacteristicLattice) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(laplace_kernel(lambda, &lattice.kernel(), lattice.dtau()).0)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::Domain(format!("Laplace variable must be finite and > 0 (got {lambda})")));
    }
    Ok(())
}

/// Probe for the spectral condition `F(0⁺) > 1`.
pub fn probe_lambda(lattice: &CharacteristicLattice) -> f64 {
    let p = lattice.params();
    1e-3 * (p.a() + p.c())
}

/// Root of `F(λ) = 1` to `|F(λ0) − 1| ≤ tol`.
pub fn solve_malthus(lattice: &CharacteristicLattice, tol: f64) -> Result<f64> {
    solve_malthus_kernel(&lattice.kernel(), lattice.dtau(), probe_lambda(lattice), tol)
}

pub fn solve_malthus_kernel(kernel: &[f64], h: f64, probe: f64, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("root tolerance must be > 0 (got {tol})")));
    }
    let f = |l: f64| laplace_kernel(l, kernel, h);
    let f_probe = f(probe).0;
    if !(f_probe > 1.0) {
        return Err(Error::Subcritical {
            lambda_probe: probe,
            f_probe,
        });
    }
    let mut lo = probe;
    let k_max = kernel.iter().cloned().fold(0.0, f64::max);
    let mut hi = (2.0 * k_max).max(2.0 * probe);
    let mut guard = 0;
    while f(hi).0 >= 1.0 {
        lo = hi;
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(Error::Numerical("could not bracket the Malthus parameter".into()));
        }
    }
    while hi - lo > 1e-3 * hi {
        let mid = 0.5 * (lo + hi);
        if f(mid).0 > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut lambda = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (fv, dfv) = f(lambda);
        let r = fv - 1.0;
        if r.abs() <= tol {
            return Ok(lambda);
        }
        if r > 0.0 {
            lo = lambda;
        } else {
            hi = lambda;
        }
        let newton = lambda - r / dfv;
        let next = if newton > lo && newton < hi && dfv < 0.0 {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next == lambda {
            break;
        }
        lambda = next;
    }
    let r = f(lambda).0 - 1.0;
    if r.abs() <= tol {
        Ok(lambda)
    } else {
        Err(Error::Numerical(format!(
            "root solve stalled at λ = {lambda} with |F − 1| = {:e} > {tol:e}",
            r.abs()
        )))
    }
}

/// `Ψ(Φ_{τ_i}(σ_j))` by the backward recursion over panels, row-major.
pub fn adjoint_eigenvector(lambda0: f64, lattice: &CharacteristicLattice) -> Result<Vec<f64>> {
    check_lambda(lambda0)?;
    let (rows, cols) = (lattice.rows(), lattice.cols());
    let h = lattice.dtau();
    let beta = lattice.beta_vals();
    let panel = ExpPanel::new(lambda0, h);
    let mut psi = vec![0.0; rows * cols];
    let last = rows - 1;
    for j in 0..cols {
        psi[last * cols + j] = beta[last * cols + j] / lambda0;
    }
    for i in (0..last).rev() {
        for j in 0..cols {
            let (a, b) = (i * cols + j, (i + 1) * cols + j);
            psi[a] = panel.decay * psi[b] + h * (panel.left * beta[a] + panel.right * beta[b]);
        }
    }
    Ok(psi)
}

/// `∬ N(σ) e^{−λ0 τ} g(τ, σ)` with the exponential-fitted rule and frozen tail.
fn exp_weighted_pairing(lambda0: f64, lattice: &CharacteristicLattice, g: &[f64]) -> f64 {
    let (rows, cols) = (lattice.rows(), lattice.cols());
    let h = lattice.dtau();
    let panel = ExpPanel::new(lambda0, h);
    let nw: Vec<f64> = lattice
        .emission()
        .iter()
        .zip(lattice.sigma_weights())
        .map(|(n, w)| n * w)
        .collect();
    let row = |i: usize| -> f64 { (0..cols).map(|j| nw[j] * g[i * cols + j]).sum() };
    let mut acc = 0.0;
    let mut prev = row(0);
    for i in 0..rows - 1 {
        let next = row(i + 1);
        acc += (-lambda0 * lattice.tau(i)).exp() * h * (panel.left * prev + panel.right * next);
        prev = next;
    }
    acc + prev * (-lambda0 * lattice.tau_max()).exp() / lambda0
}

/// `C = 1 / ∬ N e^{−λ0 τ} Ψ`. Fails if `∫_Γ N Ψ` is off by more than `10·quad_tol`.
pub fn normalize(lambda0: f64, lattice: &CharacteristicLattice, psi: &[f64], quad_tol: f64) -> Result<f64> {
    if psi.len() != lattice.rows() * lattice.cols() {
        return Err(Error::Shape(format!(
            "Ψ has {} values, lattice has {}",
            psi.len(),
            lattice.rows() * lattice.cols()
        )));
    }
    let boundary = boundary_pairing(lattice, psi);
    if (boundary - 1.0).abs() > 10.0 * quad_tol {
        return Err(Error::Diagnostic(format!(
            "∫_Γ N Ψ = {boundary} differs from 1 by more than {:e}; refine the lattice",
            10.0 * quad_tol
        )));
    }
    let pairing = exp_weighted_pairing(lambda0, lattice, psi);
    if !(pairing > 0.0 && pairing.is_finite()) {
        return Err(Error::Numerical(format!("normalization integral is {pairing}")));
    }
    Ok(1.0 / pairing)
}

/// `∫_Γ N Ψ(σ) dσ` over the first lattice row.
pub fn boundary_pairing(lattice: &CharacteristicLattice, psi: &[f64]) -> f64 {
    lattice
        .emission()
        .iter()
        .zip(lattice.sigma_weights())
        .zip(psi)
        .map(|((n, w), p)| n * w * p)
        .sum()
}

/// `Ṽ_ij = C N_j e^{−λ0 τ_i}`.
pub fn direct_eigenvector(lambda0: f64, c: f64, lattice: &CharacteristicLattice) -> Vec<f64> {
    lattice.separable(|t| c * (-lambda0 * t).exp(), |j| lattice.emission()[j])
}

/// Max over interior nodes of `|∂_τ Ψ − (λ0 Ψ − β̃ ∫_Γ N Ψ)|`, centered differences.
pub fn adjoint_residual(psi: &[f64], lambda0: f64, lattice: &CharacteristicLattice) -> f64 {
    let (rows, cols) = (lattice.rows(), lattice.cols());
    let h = lattice.dtau();
    let beta = lattice.beta_vals();
    let gamma = boundary_pairing(lattice, psi);
    let mut worst: f64 = 0.0;
    for i in 1..rows - 1 {
        for j in 0..cols {
            let k = i * cols + j;
            let d = (psi[k + cols] - psi[k - cols]) / (2.0 * h);
            worst = worst.max((d - (lambda0 * psi[k] - beta[k] * gamma)).abs());
        }
    }
    worst
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralSolution {
    pub lambda0: f64,
    #[serde(rename = "C")]
    pub c: f64,
    /// `|F(λ0) − 1|`.
    pub residual: f64,
    pub psi_min: f64,
    pub psi_max: f64,
    /// `min β̃ / λ0` and `max β̃ / λ0` over the lattice.
    pub psi_lower_bound: f64,
    pub psi_upper_bound: f64,
    pub bounds_check: bool,
    /// `∫_Γ N Ψ dσ`.
    pub boundary_normalization: f64,
    /// `∬ Ṽ Ψ` with the exponential-fitted rule.
    pub pair_normalization: f64,
    pub adjoint_residual: f64,
    /// `max_j |β̃(τ_max, σ_j) − β(X*)| / λ0 · e^{−λ0 τ_max}`.
    pub tail_error_bound: f64,
    pub tau_max: f64,
    pub dtau: f64,
    #[serde(skip)]
    pub kernel: Vec<f64>,
    #[serde(skip)]
    pub v_tilde: Vec<f64>,
    #[serde(skip)]
    pub psi: Vec<f64>,
    #[serde(skip)]
    pub psi_boundary: Vec<f64>,
}

impl SpectralSolution {
    pub fn solve(lattice: &CharacteristicLattice, root_tol: f64, quad_tol: f64) -> Result<Self> {
        let kernel = lattice.kernel();
        let h = lattice.dtau();
        let lambda0 = solve_malthus_kernel(&kernel, h, probe_lambda(lattice), root_tol)?;
        let residual = (laplace_kernel(lambda0, &kernel, h).0 - 1.0).abs();
        let psi = adjoint_eigenvector(lambda0, lattice)?;
        let c = normalize(lambda0, lattice, &psi, quad_tol)?;
        let v_tilde = direct_eigenvector(lambda0, c, lattice);
        let beta = lattice.beta_vals();
        let (b_min, b_max) = min_max(beta);
        let (psi_min, psi_max) = min_max(&psi);
        let lower = b_min / lambda0;
        let upper = b_max / lambda0;
        let slack = 1e-12 * upper;
        let bounds_check = psi.iter().all(|p| *p >= lower - slack && *p <= upper + slack);
        let last = lattice.rows() - 1;
        let cols = lattice.cols();
        let tail_var = (0..cols)
            .map(|j| (beta[last * cols + j] - lattice.beta_star()).abs())
            .fold(0.0, f64::max);
        Ok(Self {
            lambda0,
            c,
            residual,
            psi_min,
            psi_max,
            psi_lower_bound: lower,
            psi_upper_bound: upper,
            bounds_check,
            boundary_normalization: boundary_pairing(lattice, &psi),
            pair_normalization: c * exp_weighted_pairing(lambda0, lattice, &psi),
            adjoint_residual: adjoint_residual(&psi, lambda0, lattice),
            tail_error_bound: tail_var / lambda0 * (-lambda0 * lattice.tau_max()).exp(),
            tau_max: lattice.tau_max(),
            dtau: h,
            psi_boundary: psi[..cols].to_vec(),
            kernel,
            v_tilde,
            psi,
        })
    }

    /// `F(λ)` with the kernel of this solution.
    pub fn laplace(&self, lambda: f64) -> Result<f64> {
        check_lambda(lambda)?;
        Ok(laplace_kernel(lambda, &self.kernel, self.dtau).0)
    }

    /// `−G·ν V(σ)` minus `N(σ) ∬ β̃ Ṽ`, max over boundary nodes.
    pub fn boundary_identity_residual(&self, lattice: &CharacteristicLattice) -> f64 {
        let cols = lattice.cols();
        let beta = lattice.beta_vals();
        let integrand: Vec<f64> = (0..beta.len()).map(|k| self.c * beta[k]).collect();
        // ∬ β̃ Ṽ = C ∬ N β̃ e^{−λ0 τ}.
        let birth = exp_weighted_pairing(self.lambda0, lattice, &integrand);
        (0..cols)
            .map(|j| {
                let sigma = &lattice.sigma_nodes()[j];
                let v_phys = self.v_tilde[j] / lattice.jacobians()[j];
                (-sigma.g_dot_nu * v_phys - lattice.emission()[j] * birth).abs()
            })
            .fold(0.0, f64::max)
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)))
}
