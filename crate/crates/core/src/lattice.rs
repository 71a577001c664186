//! The characteristic lattice: boundary nodes × entry-time grid.
//!
//! Column `j` is a boundary node σ_j, row `i` the entry time τ_i = i·Δτ.
//! Every per-node quantity is stored row-major as `[i * cols + j]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{BoundaryPoint, EmissionProfile, Side};
use crate::error::{Error, Result};
use crate::growth::{self, GrowthParams, PhasePoint};

/// Birth rate `β(x, θ) = m x^α`. `α = 0` gives a constant rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BirthRate {
    pub m: f64,
    pub alpha: f64,
}

impl BirthRate {
    pub fn new(m: f64, alpha: f64) -> Result<Self> {
        if !(m.is_finite() && m >= 0.0) {
            return Err(Error::Config(format!("emission coefficient m must be finite and >= 0 (got {m})")));
        }
        if !alpha.is_finite() {
            return Err(Error::Config(format!("emission exponent alpha must be finite (got {alpha})")));
        }
        Ok(Self { m, alpha })
    }

    pub fn constant(beta: f64) -> Result<Self> {
        Self::new(beta, 0.0)
    }

    #[inline]
    pub fn eval(&self, p: &PhasePoint) -> f64 {
        if self.alpha == 0.0 {
            self.m
        } else {
            self.m * p.x.powf(self.alpha)
        }
    }
}

/// Resolution and extent of a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSpec {
    /// Number of τ panels I (rows 0..=I).
    pub tau_steps: usize,
    /// Number of arc-length panels per side J (J − 1 interior nodes per side).
    pub sigma_steps: usize,
    /// `None` picks the doubled convergence time of the emitting nodes.
    pub tau_max: Option<f64>,
    pub sides: Vec<Side>,
    pub ode_tol: f64,
}

impl LatticeSpec {
    pub fn new(tau_steps: usize, sigma_steps: usize) -> Self {
        Self {
            tau_steps,
            sigma_steps,
            tau_max: None,
            sides: Side::ALL.to_vec(),
            ode_tol: 1e-10,
        }
    }

    pub fn with_tau_max(mut self, tau_max: f64) -> Self {
        self.tau_max = Some(tau_max);
        self
    }

    pub fn with_sides(mut self, sides: &[Side]) -> Self {
        self.sides = sides.to_vec();
        self
    }

    pub fn with_ode_tol(mut self, tol: f64) -> Self {
        self.ode_tol = tol;
        self
    }
}

/// Relative radius (in units of b − 1) defining convergence for the automatic τ_max.
pub const TAU_MAX_RADIUS: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct CharacteristicLattice {
    params: GrowthParams,
    profile: EmissionProfile,
    birth: BirthRate,
    sigma_nodes: Vec<BoundaryPoint>,
    sigma_weights: Vec<f64>,
    emission: Vec<f64>,
    emission_raw_integral: f64,
    tau_steps: usize,
    dtau: f64,
    positions: Vec<PhasePoint>,
    jacobians: Vec<f64>,
    beta_vals: Vec<f64>,
    beta_star: f64,
}

/// Doubled time for every emitting node in `nodes` to come within
/// `TAU_MAX_RADIUS·(b − 1)` of the equilibrium.
pub fn automatic_tau_max(
    nodes: &[BoundaryPoint],
    profile: &EmissionProfile,
    params: &GrowthParams,
    tol: f64,
) -> Result<f64> {
    let radius = TAU_MAX_RADIUS * params.side_length();
    let times: Vec<f64> = nodes
        .par_iter()
        .filter(|s| profile.value(s.side, s.s) > 0.0)
        .map(|s| growth::convergence_time(s, radius, params, tol))
        .collect::<Result<_>>()?;
    let worst = times.into_iter().fold(0.0, f64::max);
    if worst <= 0.0 {
        return Err(Error::Config("emission profile has no support on the lattice nodes".into()));
    }
    Ok(2.0 * worst)
}

/// Interior nodes `k (b − 1)/J`, `k = 1..J−1`, of each requested side.
pub fn sigma_nodes(params: &GrowthParams, sides: &[Side], per_side: usize) -> Result<Vec<BoundaryPoint>> {
    let ds = params.side_length() / per_side as f64;
    let mut nodes = Vec::with_capacity(sides.len() * per_side.saturating_sub(1));
    for &side in sides {
        for k in 1..per_side {
            nodes.push(BoundaryPoint::new(side, k as f64 * ds, params)?);
        }
    }
    Ok(nodes)
}

impl CharacteristicLattice {
    pub fn build(
        params: &GrowthParams,
        profile: &EmissionProfile,
        birth: &BirthRate,
        spec: &LatticeSpec,
    ) -> Result<Self> {
        if spec.tau_steps < 2 || spec.sigma_steps < 2 {
            return Err(Error::Config(format!(
                "lattice needs at least 2 panels in τ and σ (got I = {}, J = {})",
                spec.tau_steps, spec.sigma_steps
            )));
        }
        if !(spec.ode_tol > 0.0) {
            return Err(Error::Config(format!("ODE tolerance must be > 0 (got {})", spec.ode_tol)));
        }
        let mut sides = spec.sides.clone();
        sides.sort();
        sides.dedup();
        if sides.is_empty() {
            return Err(Error::Config("lattice needs at least one boundary side".into()));
        }
        let nodes = sigma_nodes(params, &sides, spec.sigma_steps)?;
        for side in Side::ALL {
            if !sides.contains(&side) && profile.support(side).is_some() {
                return Err(Error::Config(format!(
                    "emission profile is supported on {side} which is not part of the lattice"
                )));
            }
        }
        let tau_max = match spec.tau_max {
            Some(t) if t.is_finite() && t > 0.0 => t,
            Some(t) => return Err(Error::Config(format!("tau_max must be finite and > 0 (got {t})"))),
            None => automatic_tau_max(&nodes, profile, params, spec.ode_tol)?,
        };
        let ds = params.side_length() / spec.sigma_steps as f64;
        let sigma_weights = vec![ds; nodes.len()];
        let raw: Vec<f64> = nodes.iter().map(|s| profile.value(s.side, s.s)).collect();
        let raw_integral: f64 = raw.iter().zip(&sigma_weights).map(|(n, w)| n * w).sum();
        if !(raw_integral > 0.0) {
            return Err(Error::Config(
                "emission profile vanishes at every lattice node; refine sigma_steps".into(),
            ));
        }
        let emission: Vec<f64> = raw.iter().map(|n| n / raw_integral).collect();

        let rows = spec.tau_steps + 1;
        let dtau = tau_max / spec.tau_steps as f64;
        let taus: Vec<f64> = (0..rows).map(|i| i as f64 * dtau).collect();
        let columns: Vec<Vec<growth::FlowResult>> = nodes
            .par_iter()
            .enumerate()
            .map(|(j, sigma)| {
                growth::flow_samples(sigma, &taus, params, spec.ode_tol).map_err(|e| {
                    Error::Numerical(format!("lattice column {j} ({} s = {}): {e}", sigma.side, sigma.s))
                })
            })
            .collect::<Result<_>>()?;

        let cols = nodes.len();
        let mut positions = vec![PhasePoint::new(0.0, 0.0); rows * cols];
        let mut jacobians = vec![0.0; rows * cols];
        let mut beta_vals = vec![0.0; rows * cols];
        for (j, column) in columns.iter().enumerate() {
            for (i, r) in column.iter().enumerate() {
                positions[i * cols + j] = r.position;
                jacobians[i * cols + j] = r.jacobian;
                beta_vals[i * cols + j] = birth.eval(&r.position);
            }
        }
        Ok(Self {
            params: *params,
            profile: profile.clone(),
            birth: *birth,
            sigma_nodes: nodes,
            sigma_weights,
            emission,
            emission_raw_integral: raw_integral,
            tau_steps: spec.tau_steps,
            dtau,
            positions,
            jacobians,
            beta_vals,
            beta_star: birth.eval(&params.equilibrium()),
        })
    }

    pub fn params(&self) -> &GrowthParams {
        &self.params
    }
    pub fn profile(&self) -> &EmissionProfile {
        &self.profile
    }
    pub fn birth(&self) -> &BirthRate {
        &self.birth
    }
    pub fn sigma_nodes(&self) -> &[BoundaryPoint] {
        &self.sigma_nodes
    }
    /// Boundary quadrature weight of each column.
    pub fn sigma_weights(&self) -> &[f64] {
        &self.sigma_weights
    }
    /// `N(σ_j)`, rescaled so that `Σ_j w_j N_j = 1` exactly.
    pub fn emission(&self) -> &[f64] {
        &self.emission
    }
    /// `Σ_j w_j N(σ_j)` before rescaling.
    pub fn emission_raw_integral(&self) -> f64 {
        self.emission_raw_integral
    }
    /// I, the number of τ panels.
    pub fn tau_steps(&self) -> usize {
        self.tau_steps
    }
    pub fn rows(&self) -> usize {
        self.tau_steps + 1
    }
    pub fn cols(&self) -> usize {
        self.sigma_nodes.len()
    }
    pub fn dtau(&self) -> f64 {
        self.dtau
    }
    pub fn tau_max(&self) -> f64 {
        self.dtau * self.tau_steps as f64
    }
    pub fn tau(&self, i: usize) -> f64 {
        i as f64 * self.dtau
    }
    pub fn positions(&self) -> &[PhasePoint] {
        &self.positions
    }
    pub fn jacobians(&self) -> &[f64] {
        &self.jacobians
    }
    /// β̃ = β(Φ_τ(σ)) on the lattice.
    pub fn beta_vals(&self) -> &[f64] {
        &self.beta_vals
    }
    /// β at the equilibrium.
    pub fn beta_star(&self) -> f64 {
        self.beta_star
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.sigma_nodes.len() + j
    }

    /// `K(τ_i) = Σ_j w_j N_j β̃_ij`.
    pub fn kernel(&self) -> Vec<f64> {
        let cols = self.cols();
        (0..self.rows())
            .map(|i| {
                let row = &self.beta_vals[i * cols..(i + 1) * cols];
                row.iter()
                    .zip(&self.emission)
                    .zip(&self.sigma_weights)
                    .map(|((b, n), w)| b * n * w)
                    .sum()
            })
            .collect()
    }

    /// Columns on `side`, in increasing arc length.
    pub fn side_columns(&self, side: Side) -> Vec<usize> {
        (0..self.cols()).filter(|&j| self.sigma_nodes[j].side == side).collect()
    }

    /// `ρ̃⁰_ij = ρ⁰(Φ_{τ_i}(σ_j))·|J_Φ|` from a physical density.
    pub fn sample_physical(&self, rho0: impl Fn(&PhasePoint) -> f64 + Sync) -> Vec<f64> {
        self.positions
            .par_iter()
            .zip(&self.jacobians)
            .map(|(p, jac)| rho0(p) * jac)
            .collect()
    }

    /// Separable lattice data `shape_τ(τ_i)·profile_σ(j)`.
    pub fn separable(&self, tau_shape: impl Fn(f64) -> f64, column: impl Fn(usize) -> f64) -> Vec<f64> {
        let cols = self.cols();
        let col: Vec<f64> = (0..cols).map(column).collect();
        let mut out = Vec::with_capacity(self.rows() * cols);
        for i in 0..self.rows() {
            let t = tau_shape(self.tau(i));
            out.extend(col.iter().map(|c| t * c));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> GrowthParams {
        GrowthParams::new(0.5, 2.0, 1.0).unwrap()
    }

    fn build(birth: BirthRate, spec: LatticeSpec) -> CharacteristicLattice {
        let p = params();
        CharacteristicLattice::build(&p, &EmissionProfile::default_hat(&p), &birth, &spec).unwrap()
    }

    #[test]
    fn first_row_is_boundary_data() {
        let lat = build(BirthRate::new(0.1, 2.0 / 3.0).unwrap(), LatticeSpec::new(32, 16).with_tau_max(10.0));
        for (j, sigma) in lat.sigma_nodes().iter().enumerate() {
            assert_eq!(lat.jacobians()[lat.idx(0, j)], sigma.g_dot_nu.abs());
            assert_eq!(lat.positions()[lat.idx(0, j)], sigma.position());
        }
        assert_eq!(lat.cols(), 4 * 15);
        assert!(lat.jacobians().iter().all(|j| *j > 0.0));
    }

    #[test]
    fn automatic_tau_max_reaches_equilibrium() {
        let birth = BirthRate::new(0.1, 2.0 / 3.0).unwrap();
        let lat = build(birth, LatticeSpec::new(64, 16));
        let p = params();
        let last = lat.rows() - 1;
        let radius = TAU_MAX_RADIUS * p.side_length();
        for j in 0..lat.cols() {
            if lat.emission()[j] > 0.0 {
                let d = lat.positions()[lat.idx(last, j)].distance(&p.equilibrium());
                assert!(d < radius, "column {j}: {d}");
            }
        }
        let k = lat.kernel();
        let tail = *k.last().unwrap();
        assert!((tail - lat.beta_star()).abs() < 0.01 * lat.beta_star(), "{tail} vs {}", lat.beta_star());
        assert!((lat.beta_star() - 0.1 * p.b().powf(2.0 / 3.0)).abs() < 1e-15);
        // β̃ approaches β(X*) along each emitting column.
        for j in 0..lat.cols() {
            if lat.emission()[j] > 0.0 {
                let b = lat.beta_vals()[lat.idx(last, j)];
                assert!((b - lat.beta_star()).abs() < 1e-3 * lat.beta_star());
            }
        }
    }

    #[test]
    fn constant_rate_gives_constant_kernel() {
        let lat = build(BirthRate::constant(0.7).unwrap(), LatticeSpec::new(16, 8).with_tau_max(5.0));
        for k in lat.kernel() {
            assert!((k - 0.7).abs() < 1e-14);
        }
        let mass: f64 = lat.emission().iter().zip(lat.sigma_weights()).map(|(n, w)| n * w).sum();
        assert!((mass - 1.0).abs() < 1e-14);
    }

    #[test]
    fn kernel_first_row_uses_boundary_rate() {
        let p = params();
        let birth = BirthRate::new(0.3, 1.0).unwrap();
        let lat = build(birth, LatticeSpec::new(16, 8).with_tau_max(5.0));
        // On Γ1, x = 1, so β = m.
        assert!((lat.kernel()[0] - 0.3).abs() < 1e-14);
        let lat2 = CharacteristicLattice::build(
            &p,
            &EmissionProfile::triangular_hat(Side::G2, 0.9, 0.6, &p).unwrap(),
            &birth,
            &LatticeSpec::new(16, 20).with_tau_max(5.0),
        )
        .unwrap();
        let direct: f64 = lat2
            .sigma_nodes()
            .iter()
            .zip(lat2.emission())
            .zip(lat2.sigma_weights())
            .map(|((s, n), w)| n * w * 0.3 * s.x)
            .sum();
        assert!((lat2.kernel()[0] - direct).abs() < 1e-14);
    }

    #[test]
    fn positions_match_fine_reference() {
        let p = params();
        let lat = build(BirthRate::constant(1.0).unwrap(), LatticeSpec::new(20, 8).with_tau_max(8.0).with_ode_tol(1e-12));
        let f = |y: [f64; 2]| {
            let (g1, g2) = p.field(y[0], y[1]);
            [g1, g2]
        };
        for j in [0, 3, 9, 17, 27] {
            let sigma = lat.sigma_nodes()[j];
            let mut y = [sigma.x, sigma.theta];
            let dt = lat.dtau() / 100.0;
            for i in 1..lat.rows() {
                for _ in 0..100 {
                    let k1 = f(y);
                    let k2 = f([y[0] + 0.5 * dt * k1[0], y[1] + 0.5 * dt * k1[1]]);
                    let k3 = f([y[0] + 0.5 * dt * k2[0], y[1] + 0.5 * dt * k2[1]]);
                    let k4 = f([y[0] + dt * k3[0], y[1] + dt * k3[1]]);
                    for c in 0..2 {
                        y[c] += dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
                    }
                }
                let q = lat.positions()[lat.idx(i, j)];
                assert!((q.x - y[0]).abs() < 1e-8 && (q.theta - y[1]).abs() < 1e-8, "j={j} i={i}");
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let p = params();
        let prof = EmissionProfile::default_hat(&p);
        let birth = BirthRate::constant(1.0).unwrap();
        assert!(CharacteristicLattice::build(&p, &prof, &birth, &LatticeSpec::new(1, 8)).is_err());
        assert!(CharacteristicLattice::build(&p, &prof, &birth, &LatticeSpec::new(8, 8).with_tau_max(-1.0)).is_err());
        assert!(CharacteristicLattice::build(&p, &prof, &birth, &LatticeSpec::new(8, 8).with_sides(&[Side::G2])).is_err());
        assert!(BirthRate::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn jacobians_decay_near_equilibrium() {
        let lat = build(BirthRate::constant(1.0).unwrap(), LatticeSpec::new(64, 8).with_tau_max(40.0));
        let cols = lat.cols();
        for j in 0..cols {
            for i in 48..lat.rows() - 1 {
                assert!(lat.jacobians()[lat.idx(i + 1, j)] < lat.jacobians()[lat.idx(i, j)]);
            }
        }
    }
}
