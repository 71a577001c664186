//! Renewal problem on the characteristic lattice.
//!
//! Along characteristics the density is a pure shift:
//!
//! ```text
//! ρ̃(t, τ, σ) = H(t − τ, σ)   for τ < t,   H(s, σ) = N(σ) B(s) + f(s, σ)
//! ρ̃(t, τ, σ) = ρ̃⁰(τ − t, σ)  for τ > t
//! ```
//!
//! so the only unknown is the total birth rate `B(t) = ∫ β ρ(t)`, which
//! solves a Volterra equation of the second kind. With Δt = Δτ the shift is
//! an index offset and no interpolation happens.
//!
//! Entry times beyond τ_max are truncated: the kernel vanishes there and
//! density that ages past τ_max leaves the lattice.

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::growth::{self, PhasePoint};
use crate::lattice::CharacteristicLattice;
use crate::quadrature::trap_weight;

/// Primary-tumor emission feeding the boundary.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceTerm {
    None,
    /// `f(t, σ) = N(σ) β(X_p(t))` with `X_p` the growth trajectory from `x0`.
    PrimaryTumor { x0: PhasePoint },
    /// `f(t, σ) = N(σ) q(t)` with `q` linearly interpolated from `(t, q)` samples
    /// and held at its last value afterwards.
    Table { samples: Vec<(f64, f64)> },
}

/// `f(t_n, σ_j)` realized on the lattice time grid, row-major `[n * cols + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSamples {
    cols: usize,
    values: Vec<f64>,
}

impl SourceSamples {
    pub fn zero(cols: usize, n_steps: usize) -> Self {
        Self {
            cols,
            values: vec![0.0; cols * (n_steps + 1)],
        }
    }

    pub fn from_values(cols: usize, values: Vec<f64>) -> Result<Self> {
        if cols == 0 || !values.len().is_multiple_of(cols) {
            return Err(Error::Shape(format!(
                "source samples of length {} do not split into columns of {cols}",
                values.len()
            )));
        }
        Ok(Self { cols, values })
    }

    /// `f(t_n, σ_j) = N_j q_n`.
    pub fn separable(lattice: &CharacteristicLattice, q: &[f64]) -> Self {
        let n = lattice.emission();
        let mut values = Vec::with_capacity(q.len() * n.len());
        for &qn in q {
            values.extend(n.iter().map(|nj| nj * qn));
        }
        Self { cols: n.len(), values }
    }

    pub fn steps(&self) -> usize {
        self.values.len() / self.cols - 1
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.cols..(n + 1) * self.cols]
    }
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
    /// `f(0, ·) = 0`, needed for regular (not only weak) solutions.
    pub fn is_compatible(&self) -> bool {
        self.row(0).iter().all(|v| *v == 0.0)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            cols: self.cols,
            values: self.values.iter().map(|v| v * k).collect(),
        }
    }
}

impl SourceTerm {
    /// Samples the source on `t_n = n Δτ`, `n = 0..=n_steps`.
    pub fn realize(&self, lattice: &CharacteristicLattice, n_steps: usize, tol: f64) -> Result<SourceSamples> {
        let h = lattice.dtau();
        let times: Vec<f64> = (0..=n_steps).map(|n| n as f64 * h).collect();
        let q: Vec<f64> = match self {
            SourceTerm::None => return Ok(SourceSamples::zero(lattice.cols(), n_steps)),
            SourceTerm::PrimaryTumor { x0 } => {
                let traj = growth::primary_tumor(x0, &times, lattice.params(), tol)?;
                traj.iter().map(|p| lattice.birth().eval(p)).collect()
            }
            SourceTerm::Table { samples } => {
                validate_table(samples)?;
                times.iter().map(|t| interpolate_table(samples, *t)).collect()
            }
        };
        Ok(SourceSamples::separable(lattice, &q))
    }
}

fn validate_table(samples: &[(f64, f64)]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Config("source table is empty".into()));
    }
    if samples.iter().any(|(t, q)| !t.is_finite() || !q.is_finite()) {
        return Err(Error::Config("source table has non-finite entries".into()));
    }
    if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::Config("source table times must be strictly increasing".into()));
    }
    Ok(())
}

fn interpolate_table(samples: &[(f64, f64)], t: f64) -> f64 {
    let k = samples.partition_point(|s| s.0 <= t);
    if k == 0 {
        return samples[0].1;
    }
    if k == samples.len() {
        return samples[k - 1].1;
    }
    let (t0, q0) = samples[k - 1];
    let (t1, q1) = samples[k];
    q0 + (q1 - q0) * (t - t0) / (t1 - t0)
}

fn check_initial(lattice: &CharacteristicLattice, rho0: &[f64]) -> Result<()> {
    let expected = lattice.rows() * lattice.cols();
    if rho0.len() != expected {
        return Err(Error::Shape(format!(
            "initial data has {} values, lattice has {} ({} x {})",
            rho0.len(),
            expected,
            lattice.rows(),
            lattice.cols()
        )));
    }
    Ok(())
}

/// `w_j β̃_ij`, the weight every birth integral applies to node (i, j).
fn weighted_beta(lattice: &CharacteristicLattice) -> Vec<f64> {
    let cols = lattice.cols();
    let w = lattice.sigma_weights();
    lattice
        .beta_vals()
        .iter()
        .enumerate()
        .map(|(k, b)| b * w[k % cols])
        .collect()
}

/// `g₀(t_n) = ∫_{t_n}^{τ_max} ∫_Γ β̃(τ, σ) ρ̃⁰(τ − t_n, σ)`, trapezoid on the shifted lattice.
pub fn initial_tail(lattice: &CharacteristicLattice, rho0: &[f64], n: usize) -> Result<f64> {
    check_initial(lattice, rho0)?;
    Ok(initial_tail_with(lattice, &weighted_beta(lattice), rho0, n))
}

fn initial_tail_with(lattice: &CharacteristicLattice, wb: &[f64], rho0: &[f64], n: usize) -> f64 {
    let big_i = lattice.tau_steps();
    if n > big_i {
        return 0.0;
    }
    let cols = lattice.cols();
    let span = big_i - n;
    let mut acc = 0.0;
    for i in n..=big_i {
        let wt = trap_weight(i - n, span);
        if wt == 0.0 {
            continue;
        }
        let row_b = &wb[i * cols..(i + 1) * cols];
        let row_r = &rho0[(i - n) * cols..(i - n + 1) * cols];
        let s: f64 = row_b.iter().zip(row_r).map(|(b, r)| b * r).sum();
        acc += wt * s;
    }
    acc * lattice.dtau()
}

/// Total forcing `G_f(t_n) = g₀(t_n) + ∫₀^{min(t_n, τ_max)} ∫_Γ β̃(τ, σ) f(t_n − τ, σ)`.
pub fn forcing(lattice: &CharacteristicLattice, rho0: &[f64], source: &SourceSamples) -> Result<Vec<f64>> {
    check_initial(lattice, rho0)?;
    if source.cols() != lattice.cols() {
        return Err(Error::Shape(format!(
            "source has {} columns, lattice has {}",
            source.cols(),
            lattice.cols()
        )));
    }
    let n_steps = source.steps();
    if n_steps > lattice.tau_steps() && rho0.iter().any(|v| *v != 0.0) {
        warn!(
            "horizon t = {:.4} exceeds tau_max = {:.4}: initial data past the lattice is truncated",
            n_steps as f64 * lattice.dtau(),
            lattice.tau_max()
        );
    }
    let wb = weighted_beta(lattice);
    let cols = lattice.cols();
    let big_i = lattice.tau_steps();
    let h = lattice.dtau();
    let has_source = !source.is_zero();
    Ok((0..=n_steps)
        .into_par_iter()
        .map(|n| {
            let mut g = initial_tail_with(lattice, &wb, rho0, n);
            if has_source && n > 0 {
                let top = n.min(big_i);
                let mut acc = 0.0;
                for i in 0..=top {
                    let row_b = &wb[i * cols..(i + 1) * cols];
                    let s: f64 = row_b.iter().zip(source.row(n - i)).map(|(b, f)| b * f).sum();
                    acc += trap_weight(i, top) * s;
                }
                g += h * acc;
            }
            g
        })
        .collect())
}

/// Product-trapezoid march for `B(t) = ∫₀^t K(τ) B(t − τ) dτ + G(t)`.
///
/// `kernel` holds `K(τ_i)` for `i = 0..=I`; the kernel vanishes past τ_I.
pub fn solve_birth_rate(kernel: &[f64], forcing: &[f64], h: f64) -> Result<Vec<f64>> {
    if kernel.is_empty() {
        return Err(Error::Shape("empty kernel".into()));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Domain(format!("step must be finite and > 0 (got {h})")));
    }
    let diag = 0.5 * h * kernel[0];
    if diag >= 1.0 {
        return Err(Error::StepSize { value: diag });
    }
    let big_i = kernel.len() - 1;
    let mut b = Vec::with_capacity(forcing.len());
    for (n, g) in forcing.iter().enumerate() {
        if n == 0 {
            b.push(*g);
            continue;
        }
        let top = n.min(big_i);
        let mut acc = 0.0;
        for (k, kk) in kernel.iter().enumerate().take(top + 1).skip(1) {
            acc += trap_weight(k, top) * kk * b[n - k];
        }
        let bn = (h * acc + g) / (1.0 - diag);
        if !bn.is_finite() {
            return Err(Error::Numerical(format!("birth rate overflowed at step {n}")));
        }
        b.push(bn);
    }
    Ok(b)
}

/// Solution of the full problem on the lattice, stored compactly as the
/// boundary history `H(t_n, σ_j)` plus the initial data.
#[derive(Debug, Clone)]
pub struct DensityField {
    rows: usize,
    cols: usize,
    dt: f64,
    rho0: Vec<f64>,
    history: Vec<f64>,
    birth: Vec<f64>,
    source: SourceSamples,
}

/// Builds the field from a solved birth rate.
pub fn reconstruct(
    lattice: &CharacteristicLattice,
    birth: &[f64],
    source: &SourceSamples,
    rho0: &[f64],
) -> Result<DensityField> {
    check_initial(lattice, rho0)?;
    if birth.len() != source.steps() + 1 || source.cols() != lattice.cols() {
        return Err(Error::Shape(format!(
            "birth rate has {} samples, source has {} steps and {} columns (lattice {})",
            birth.len(),
            source.steps() + 1,
            source.cols(),
            lattice.cols()
        )));
    }
    let cols = lattice.cols();
    let n = lattice.emission();
    let mut history = Vec::with_capacity(birth.len() * cols);
    for (k, bk) in birth.iter().enumerate() {
        history.extend(n.iter().zip(source.row(k)).map(|(nj, f)| nj * bk + f));
    }
    Ok(DensityField {
        rows: lattice.rows(),
        cols,
        dt: lattice.dtau(),
        rho0: rho0.to_vec(),
        history,
        birth: birth.to_vec(),
        source: source.clone(),
    })
}

/// Runs the whole pipeline: forcing, Volterra march and reconstruction.
pub fn simulate(lattice: &CharacteristicLattice, rho0: &[f64], source: &SourceSamples) -> Result<DensityField> {
    let g = forcing(lattice, rho0, source)?;
    let b = solve_birth_rate(&lattice.kernel(), &g, lattice.dtau())?;
    reconstruct(lattice, &b, source, rho0)
}

impl DensityField {
    /// Index of the last time step.
    pub fn steps(&self) -> usize {
        self.birth.len() - 1
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    /// `B(t_n)`.
    pub fn birth_rate(&self) -> &[f64] {
        &self.birth
    }
    pub fn source(&self) -> &SourceSamples {
        &self.source
    }
    pub fn initial(&self) -> &[f64] {
        &self.rho0
    }
    /// Entering flux `H(t_n, σ_j) = N_j B(t_n) + f(t_n, σ_j)`.
    pub fn history(&self, n: usize) -> &[f64] {
        &self.history[n * self.cols..(n + 1) * self.cols]
    }

    /// `ρ̃(t_n, τ_i, σ_j)`. At `τ = t > 0` the entering (boundary) value is used.
    #[inline]
    pub fn value(&self, n: usize, i: usize, j: usize) -> f64 {
        if n > 0 && i <= n {
            self.history[(n - i) * self.cols + j]
        } else if i - n < self.rows {
            self.rho0[(i - n) * self.cols + j]
        } else {
            0.0
        }
    }

    /// The full slice `ρ̃(t_n, ·, ·)`, row-major.
    pub fn slice(&self, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.push(self.value(n, i, j));
            }
        }
        out
    }

    /// `∬ ρ̃(t_n) w` with lattice weights `w_ij`, split at `τ = t_n` so the
    /// discontinuity between entering flux and initial data sits on a panel edge.
    pub fn weighted_sum(&self, lattice: &CharacteristicLattice, n: usize, weight: &[f64]) -> f64 {
        self.split_sum(lattice, n, |_, _, v| v, weight)
    }

    /// Like [`weighted_sum`](Self::weighted_sum) with `v ↦ map(i, j, v)` applied first.
    pub fn split_sum(
        &self,
        lattice: &CharacteristicLattice,
        n: usize,
        map: impl Fn(usize, usize, f64) -> f64,
        weight: &[f64],
    ) -> f64 {
        let big_i = self.rows - 1;
        let cols = self.cols;
        let sw = lattice.sigma_weights();
        let row = |i: usize, pick: &dyn Fn(usize) -> f64| -> f64 {
            (0..cols).map(|j| sw[j] * weight[i * cols + j] * map(i, j, pick(j))).sum()
        };
        let mut acc = 0.0;
        // Entering part over τ ∈ [0, min(t_n, τ_max)].
        if n > 0 {
            let top = n.min(big_i);
            for i in 0..=top {
                let h = &self.history[(n - i) * cols..(n - i + 1) * cols];
                acc += trap_weight(i, top) * row(i, &|j| h[j]);
            }
        }
        // Initial part over τ ∈ [t_n, τ_max].
        if n < big_i {
            let span = big_i - n;
            for i in n..=big_i {
                let r = &self.rho0[(i - n) * cols..(i - n + 1) * cols];
                acc += trap_weight(i - n, span) * row(i, &|j| r[j]);
            }
        }
        acc * self.dt
    }

    /// Total number of metastases `∬ ρ̃(t_n)`.
    pub fn mass(&self, lattice: &CharacteristicLattice, n: usize) -> f64 {
        self.split_sum(lattice, n, |_, _, v| v, &vec![1.0; self.rows * self.cols])
    }

    /// `∫_Ω ρ(t_n) w` for a weight given as a function on Ω.
    pub fn weighted_mass(&self, lattice: &CharacteristicLattice, n: usize, w: impl Fn(&PhasePoint) -> f64) -> f64 {
        let weight: Vec<f64> = lattice.positions().iter().map(w).collect();
        self.weighted_sum(lattice, n, &weight)
    }

    /// Physical density at `p`: bilinear interpolation of ρ̃ in (τ, s) divided by `|J_Φ|`.
    pub fn to_physical(&self, lattice: &CharacteristicLattice, n: usize, p: &PhasePoint, tol: f64) -> Result<f64> {
        let params = lattice.params();
        let (tau, sigma) = growth::inverse_flow(p, params, tol)?;
        let cols = lattice.side_columns(sigma.side);
        if cols.is_empty() {
            return Err(Error::Domain(format!(
                "point ({}, {}) enters through {} which is not on the lattice",
                p.x, p.theta, sigma.side
            )));
        }
        if tau > lattice.tau_max() {
            return Ok(0.0);
        }
        let nodes = lattice.sigma_nodes();
        let s_of = |k: usize| nodes[cols[k]].s;
        // Columns of a side are equally spaced; clamp outside the first/last node.
        let (k0, k1, ws) = if sigma.s <= s_of(0) {
            (0, 0, 0.0)
        } else if sigma.s >= s_of(cols.len() - 1) {
            let last = cols.len() - 1;
            (last, last, 0.0)
        } else {
            let k = (0..cols.len() - 1).find(|&k| sigma.s < s_of(k + 1)).unwrap_or(0);
            (k, k + 1, (sigma.s - s_of(k)) / (s_of(k + 1) - s_of(k)))
        };
        let u = tau / lattice.dtau();
        let i0 = (u.floor() as usize).min(lattice.tau_steps() - 1);
        let wt = u - i0 as f64;
        let v = |i: usize, k: usize| self.value(n, i, cols[k]);
        let rho_tilde = (1.0 - wt) * ((1.0 - ws) * v(i0, k0) + ws * v(i0, k1))
            + wt * ((1.0 - ws) * v(i0 + 1, k0) + ws * v(i0 + 1, k1));
        if rho_tilde == 0.0 {
            return Ok(0.0);
        }
        let jac = growth::flow(&sigma, tau, params, tol)?.jacobian;
        Ok(rho_tilde / jac)
    }

    /// Density carried past τ_max by time `t_n` (truncated mass).
    pub fn truncated_mass(&self, lattice: &CharacteristicLattice, n: usize) -> f64 {
        let big_i = self.rows - 1;
        let sw = lattice.sigma_weights();
        let mut acc = 0.0;
        // Outflow through τ = τ_max is ∫ ∫_Γ ρ̃(s, τ_max, σ) ds.
        for k in 0..=n {
            let flux: f64 = (0..self.cols).map(|j| sw[j] * self.value(k, big_i, j)).sum();
            acc += trap_weight(k, n) * flux;
        }
        acc * self.dt
    }
}
