//! Tumor growth under angiogenic control.
//!
//! Each tumor is a point `(x, θ)` (size, angiogenic capacity) moving with the
//! velocity
//!
//! ```text
//! g1(x, θ) = a x ln(θ / x)
//! g2(x, θ) = c x − d θ x^{2/3}
//! ```
//!
//! inside the square `Ω = (1, b)²` with `b = (c/d)^{3/2}`. The flow `Φ_τ(σ)`
//! started from a boundary point σ parametrizes Ω by (entry time, entry
//! point); its Jacobian satisfies `∂_τ log|J| = div G`.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::boundary::{BoundaryPoint, Side};
use crate::error::{Error, Result};
use crate::ode::Dopri5;

/// Relative overshoot (in units of b) that is silently projected back onto the square.
pub const CLAMP_GUARD: f64 = 1e-12;

/// Default guard radius around the equilibrium, in units of b.
pub const GUARD_RADIUS: f64 = 1e-6;

/// Parameters of the growth model. `b` is derived and cached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrowthParams", into = "RawGrowthParams")]
pub struct GrowthParams {
    a: f64,
    c: f64,
    d: f64,
    b: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RawGrowthParams {
    a: f64,
    c: f64,
    d: f64,
}

impl TryFrom<RawGrowthParams> for GrowthParams {
    type Error = Error;
    fn try_from(r: RawGrowthParams) -> Result<Self> {
        GrowthParams::new(r.a, r.c, r.d)
    }
}

impl From<GrowthParams> for RawGrowthParams {
    fn from(p: GrowthParams) -> Self {
        RawGrowthParams {
            a: p.a,
            c: p.c,
            d: p.d,
        }
    }
}

impl GrowthParams {
    pub fn new(a: f64, c: f64, d: f64) -> Result<Self> {
        for (name, v) in [("a", a), ("c", c), ("d", d)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "growth parameter {name} must be finite and > 0 (got {v})"
                )));
            }
        }
        if c <= d {
            return Err(Error::Config(format!(
                "need c > d so that b = (c/d)^(3/2) > 1 (got c = {c}, d = {d}); \
                 otherwise the domain (1, b)^2 is empty"
            )));
        }
        let b = (c / d).powf(1.5);
        Ok(Self { a, c, d, b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn d(&self) -> f64 {
        self.d
    }
    /// Upper edge of the domain, `(c/d)^{3/2}`.
    pub fn b(&self) -> f64 {
        self.b
    }
    /// Side length of the square, `b − 1`.
    pub fn side_length(&self) -> f64 {
        self.b - 1.0
    }
    pub fn equilibrium(&self) -> PhasePoint {
        PhasePoint::new(self.b, self.b)
    }

    #[inline]
    pub(crate) fn field(&self, x: f64, theta: f64) -> (f64, f64) {
        let x23 = x.cbrt().powi(2);
        (
            self.a * x * (theta / x).ln(),
            self.c * x - self.d * theta * x23,
        )
    }

    #[inline]
    pub(crate) fn div(&self, x: f64, theta: f64) -> f64 {
        self.a * ((theta / x).ln() - 1.0) - self.d * x.cbrt().powi(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: f64,
    pub theta: f64,
}

impl PhasePoint {
    pub const fn new(x: f64, theta: f64) -> Self {
        Self { x, theta }
    }

    pub fn distance(&self, other: &PhasePoint) -> f64 {
        (self.x - other.x).hypot(self.theta - other.theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowResult {
    pub position: PhasePoint,
    /// |J_Φ(τ, σ)|.
    pub jacobian: f64,
    /// ∫₀^τ div G(Φ_s(σ)) ds.
    pub div_integral: f64,
}

fn check_positive(p: &PhasePoint) -> Result<()> {
    if !(p.x.is_finite() && p.theta.is_finite()) {
        return Err(Error::Domain(format!("non-finite point ({}, {})", p.x, p.theta)));
    }
    if p.x <= 0.0 || p.theta <= 0.0 {
        return Err(Error::Domain(format!(
            "velocity needs x > 0 and θ > 0 (got ({}, {}))",
            p.x, p.theta
        )));
    }
    Ok(())
}

/// `(g1, g2)` at `p`.
pub fn velocity(p: &PhasePoint, params: &GrowthParams) -> Result<(f64, f64)> {
    check_positive(p)?;
    Ok(params.field(p.x, p.theta))
}

/// `div G = a (ln(θ/x) − 1) − d x^{2/3}`.
pub fn divergence(p: &PhasePoint, params: &GrowthParams) -> Result<f64> {
    check_positive(p)?;
    Ok(params.div(p.x, p.theta))
}

/// Projects tiny overshoots back onto `[1, b]²`; anything larger is an error.
pub(crate) fn guard_square(p: PhasePoint, params: &GrowthParams) -> Result<PhasePoint> {
    let b = params.b();
    let slack = CLAMP_GUARD * b;
    let fix = |v: f64| -> Option<f64> {
        if v < 1.0 - slack || v > b + slack || !v.is_finite() {
            None
        } else {
            Some(v.clamp(1.0, b))
        }
    };
    match (fix(p.x), fix(p.theta)) {
        (Some(x), Some(theta)) => Ok(PhasePoint { x, theta }),
        _ => Err(Error::Numerical(format!(
            "flow left the closed square [1, {b}]^2 at ({}, {})",
            p.x, p.theta
        ))),
    }
}

// Trajectories are integrated in deviations u = b − x, v = b − θ from the
// equilibrium. With a tiny absolute floor the error control is relative in
// (u, v), so the sign of a deviation cannot flip near X* and the overshoot
// past the square stays at rounding level.
fn deviation_solver(tol: f64) -> Dopri5 {
    Dopri5::new(tol).with_atol(tol * DEVIATION_ATOL)
}

const DEVIATION_ATOL: f64 = 1e-6;

fn flow_rhs(params: GrowthParams) -> impl Fn(f64, &[f64; 3]) -> [f64; 3] {
    let b = params.b();
    move |_, y| {
        let (x, theta) = (b - y[0], b - y[1]);
        let (g1, g2) = params.field(x, theta);
        [-g1, -g2, params.div(x, theta)]
    }
}

fn from_deviation(u: f64, v: f64, params: &GrowthParams) -> PhasePoint {
    let b = params.b();
    PhasePoint::new(b - u, b - v)
}

fn to_flow_result(y: [f64; 3], j0: f64, params: &GrowthParams) -> Result<FlowResult> {
    let position = guard_square(from_deviation(y[0], y[1], params), params)?;
    Ok(FlowResult {
        position,
        jacobian: j0 * y[2].exp(),
        div_integral: y[2],
    })
}

/// Φ_τ(σ) together with the Jacobian `|G·ν(σ)| exp(∫₀^τ div G)`.
pub fn flow(sigma: &BoundaryPoint, tau: f64, params: &GrowthParams, tol: f64) -> Result<FlowResult> {
    Ok(flow_samples(sigma, &[tau], params, tol)?.remove(0))
}

/// The flow from σ sampled at increasing times `taus` with one integration.
pub fn flow_samples(
    sigma: &BoundaryPoint,
    taus: &[f64],
    params: &GrowthParams,
    tol: f64,
) -> Result<Vec<FlowResult>> {
    if let Some(&bad) = taus.iter().find(|t| !(**t >= 0.0) || !t.is_finite()) {
        return Err(Error::Domain(format!("flow time must be finite and >= 0 (got {bad})")));
    }
    if taus.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Domain("flow sample times must be non-decreasing".into()));
    }
    let j0 = sigma.g_dot_nu.abs();
    let b = params.b();
    let y0 = [b - sigma.x, b - sigma.theta, 0.0];
    let ys = deviation_solver(tol).sample(flow_rhs(*params), 0.0, y0, taus)?;
    ys.into_iter()
        .map(|y| to_flow_result(y, j0, params))
        .collect()
}

/// First time the forward trajectory from σ enters the ball of radius
/// `radius` around (b, b).
pub fn convergence_time(
    sigma: &BoundaryPoint,
    radius: f64,
    params: &GrowthParams,
    tol: f64,
) -> Result<f64> {
    let b = params.b();
    let dist = |y: &[f64; 3]| y[0].hypot(y[1]) - radius;
    let y0 = [b - sigma.x, b - sigma.theta, 0.0];
    if dist(&y0) <= 0.0 {
        return Ok(0.0);
    }
    let horizon = 1e3 / params.a().min(params.c());
    let mut hit = None;
    deviation_solver(tol).integrate(flow_rhs(*params), 0.0, y0, horizon, |step| {
        if dist(&step.y_end) <= 0.0 {
            hit = Some(bisect_step(step.t_start, step.t_end(), |t| dist(&step.eval(t))));
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })?;
    hit.ok_or_else(|| {
        Error::Numerical(format!(
            "trajectory from ({}, {}) did not reach radius {radius:e} of the equilibrium by t = {horizon}",
            sigma.x, sigma.theta
        ))
    })
}

/// Root of a function that is positive at `lo` and non-positive at `hi`.
fn bisect_step(mut lo: f64, mut hi: f64, g: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Entry time and entry point `(τ(X), σ(X))` of the characteristic through `p`.
pub fn inverse_flow(p: &PhasePoint, params: &GrowthParams, tol: f64) -> Result<(f64, BoundaryPoint)> {
    inverse_flow_with_guard(p, params, tol, GUARD_RADIUS * params.b())
}

pub fn inverse_flow_with_guard(
    p: &PhasePoint,
    params: &GrowthParams,
    tol: f64,
    guard_radius: f64,
) -> Result<(f64, BoundaryPoint)> {
    check_positive(p)?;
    let b = params.b();
    let snap = CLAMP_GUARD * b;
    if p.distance(&params.equilibrium()) < guard_radius {
        return Err(Error::Singularity {
            x: p.x,
            theta: p.theta,
            radius: guard_radius,
        });
    }
    let gap = |x: f64, theta: f64| (x - 1.0).min(theta - 1.0).min(b - x).min(b - theta);
    let g0 = gap(p.x, p.theta);
    if g0 < -snap {
        return Err(Error::Domain(format!(
            "point ({}, {}) lies outside the closed square",
            p.x, p.theta
        )));
    }
    if g0 <= snap {
        return Ok((0.0, BoundaryPoint::unchart(p, params)?));
    }

    // Reversed field in deviation coordinates: u' = g1, v' = g2.
    let reversed = move |_: f64, y: &[f64; 2]| {
        let (g1, g2) = params.field(b - y[0], b - y[1]);
        [g1, g2]
    };
    let gap_dev = |y: &[f64; 2]| gap(b - y[0], b - y[1]);
    let horizon = 1e4 / params.a().min(params.c());
    let mut exit: Option<(f64, [f64; 2])> = None;
    let solver = deviation_solver(tol);
    solver.integrate(reversed, 0.0, [b - p.x, b - p.theta], horizon, |step| {
        if gap_dev(&step.y_end) <= 0.0 {
            let t = bisect_step(step.t_start, step.t_end(), |t| gap_dev(&step.eval(t)));
            let e = step.eval(t);
            exit = Some((t, [b - e[0], b - e[1]]));
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })?;
    let (tau, y) = exit.ok_or_else(|| {
        Error::Numerical(format!(
            "backward trajectory from ({}, {}) did not reach the boundary",
            p.x, p.theta
        ))
    })?;
    // Snap onto the side that was crossed.
    let candidates = [
        (Side::G1, (y[0] - 1.0).abs()),
        (Side::G2, (b - y[1]).abs()),
        (Side::G3, (b - y[0]).abs()),
        (Side::G4, (y[1] - 1.0).abs()),
    ];
    let side = candidates
        .iter()
        .min_by(|l, r| l.1.total_cmp(&r.1))
        .map(|c| c.0)
        .unwrap_or(Side::G1);
    let len = params.side_length();
    let s = match side {
        Side::G1 => y[1] - 1.0,
        Side::G2 => y[0] - 1.0,
        Side::G3 => b - y[1],
        Side::G4 => b - y[0],
    };
    let s = s.clamp(f64::MIN_POSITIVE, len * (1.0 - f64::EPSILON));
    Ok((tau, BoundaryPoint::new(side, s, params)?))
}

/// Trajectory of a tumor started at `x0` at time `t_grid[0]`, sampled on `t_grid`.
pub fn primary_tumor(
    x0: &PhasePoint,
    t_grid: &[f64],
    params: &GrowthParams,
    tol: f64,
) -> Result<Vec<PhasePoint>> {
    let x0 = guard_square(*x0, params)
        .map_err(|_| Error::Domain(format!("initial point ({}, {}) is outside [1, b]^2", x0.x, x0.theta)))?;
    let Some(&t0) = t_grid.first() else {
        return Ok(Vec::new());
    };
    if t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Domain("time grid must be non-decreasing".into()));
    }
    let b = params.b();
    let rhs = move |_: f64, y: &[f64; 2]| {
        let (g1, g2) = params.field(b - y[0], b - y[1]);
        [-g1, -g2]
    };
    let ys = deviation_solver(tol).sample(rhs, t0, [b - x0.x, b - x0.theta], t_grid)?;
    ys.into_iter()
        .map(|y| guard_square(from_deviation(y[0], y[1], params), params))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> GrowthParams {
        GrowthParams::new(0.5, 2.0, 1.0).unwrap()
    }

    #[test]
    fn b_is_derived() {
        let p = params();
        assert_eq!(p.b(), 2f64.powf(1.5));
        assert!(GrowthParams::new(0.5, 1.0, 1.0).is_err());
        assert!(GrowthParams::new(0.5, 1.0, 2.0).is_err());
        assert!(GrowthParams::new(-0.5, 2.0, 1.0).is_err());
        assert!(GrowthParams::new(0.5, 0.0, 1.0).is_err());
        assert!(GrowthParams::new(0.5, 2.0, f64::NAN).is_err());
    }

    #[test]
    fn equilibrium_is_stationary() {
        let p = params();
        let (g1, g2) = velocity(&p.equilibrium(), &p).unwrap();
        assert_eq!(g1, 0.0);
        assert!(g2.abs() <= 1e-12 * p.b(), "g2 = {g2}");
    }

    #[test]
    fn diagonal_has_no_size_growth() {
        let p = params();
        for v in [1.0, 1.5, 2.2, p.b()] {
            let (g1, _) = velocity(&PhasePoint::new(v, v), &p).unwrap();
            assert_eq!(g1, 0.0);
            let div = divergence(&PhasePoint::new(v, v), &p).unwrap();
            let expected = -p.a() - p.d() * v.powf(2.0 / 3.0);
            assert!((div - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn velocity_at_reference_point() {
        let p = params();
        let (g1, g2) = velocity(&PhasePoint::new(1.0, 2.0), &p).unwrap();
        // 0.5 ln 2 and 2 - 2.
        assert!((g1 - 0.346_573_590_279_972_6).abs() < 1e-15);
        assert_eq!(g2, 0.0);
    }

    #[test]
    fn divergence_at_equilibrium() {
        let p = params();
        let div = divergence(&p.equilibrium(), &p).unwrap();
        assert!((div - (-p.a() - p.c())).abs() < 1e-12);
    }

    #[test]
    fn divergence_matches_finite_differences() {
        let p = params();
        let h = 1e-6;
        for &(x, th) in &[(1.0, 2.0), (1.7, 1.2), (2.5, 2.7), (1.1, 2.8)] {
            let pt = PhasePoint::new(x, th);
            let dg1 = (p.field(x + h, th).0 - p.field(x - h, th).0) / (2.0 * h);
            let dg2 = (p.field(x, th + h).1 - p.field(x, th - h).1) / (2.0 * h);
            let fd = dg1 + dg2;
            let div = divergence(&pt, &p).unwrap();
            assert!((div - fd).abs() <= 1e-6 * div.abs(), "{div} vs {fd}");
        }
        let div = divergence(&PhasePoint::new(1.0, 2.0), &p).unwrap();
        assert!((div - (0.5 * (2f64.ln() - 1.0) - 1.0)).abs() < 1e-14);
        assert!((div + 1.153_426_409_720_027).abs() < 1e-12);
    }

    #[test]
    fn velocity_rejects_bad_input() {
        let p = params();
        assert!(velocity(&PhasePoint::new(f64::NAN, 1.0), &p).is_err());
        assert!(velocity(&PhasePoint::new(0.0, 1.0), &p).is_err());
        assert!(divergence(&PhasePoint::new(1.0, f64::INFINITY), &p).is_err());
    }

    #[test]
    fn flow_at_zero_time_is_identity() {
        let p = params();
        let sigma = BoundaryPoint::new(Side::G1, 0.7, &p).unwrap();
        let r = flow(&sigma, 0.0, &p, 1e-10).unwrap();
        assert_eq!(r.position, PhasePoint::new(sigma.x, sigma.theta));
        assert_eq!(r.jacobian, sigma.g_dot_nu.abs());
        assert_eq!(r.div_integral, 0.0);
    }

    #[test]
    fn flow_converges_to_equilibrium() {
        let p = params();
        for side in Side::ALL {
            let sigma = BoundaryPoint::new(side, 0.4 * p.side_length(), &p).unwrap();
            let r = flow(&sigma, 50.0 / p.a(), &p, 1e-10).unwrap();
            assert!(r.position.distance(&p.equilibrium()) < 1e-10, "{side:?}: {:?}", r.position);
        }
    }

    #[test]
    fn flow_rejects_negative_time() {
        let p = params();
        let sigma = BoundaryPoint::new(Side::G1, 0.7, &p).unwrap();
        assert!(matches!(flow(&sigma, -1.0, &p, 1e-10), Err(Error::Domain(_))));
    }

    #[test]
    fn jacobian_log_equals_div_integral() {
        let p = params();
        let sigma = BoundaryPoint::new(Side::G2, 0.9, &p).unwrap();
        let taus: Vec<f64> = (0..20).map(|i| i as f64 * 0.7).collect();
        for r in flow_samples(&sigma, &taus, &p, 1e-10).unwrap() {
            let lhs = r.jacobian.ln() - sigma.g_dot_nu.abs().ln();
            assert!((lhs - r.div_integral).abs() < 1e-12);
            assert!(r.jacobian > 0.0);
        }
    }

    #[test]
    fn inverse_of_boundary_point_is_itself() {
        let p = params();
        let pt = PhasePoint::new(1.0, 2.1);
        let (tau, sigma) = inverse_flow(&pt, &p, 1e-10).unwrap();
        assert_eq!(tau, 0.0);
        assert_eq!(sigma.side, Side::G1);
        assert!((sigma.theta - 2.1).abs() < 1e-15);
    }

    #[test]
    fn inverse_flow_roundtrip() {
        let p = params();
        for (side, s, tau) in [(Side::G1, 0.8, 3.0), (Side::G3, 0.5, 1.2), (Side::G4, 1.3, 2.5)] {
            let sigma = BoundaryPoint::new(side, s, &p).unwrap();
            let pt = flow(&sigma, tau, &p, 1e-12).unwrap().position;
            let (tau_back, sigma_back) = inverse_flow(&pt, &p, 1e-12).unwrap();
            assert_eq!(sigma_back.side, side);
            assert!((tau_back - tau).abs() < 1e-7, "{tau_back} vs {tau}");
            assert!((sigma_back.s - s).abs() < 1e-7, "{} vs {s}", sigma_back.s);
        }
    }

    #[test]
    fn inverse_flow_roundtrip_in_position_near_equilibrium() {
        // Deep in the basin (τ, σ) is badly conditioned, but pushing the
        // recovered pair forward must land back on the point.
        let p = params();
        let sigma = BoundaryPoint::new(Side::G4, 1.3, &p).unwrap();
        let pt = flow(&sigma, 7.5, &p, 1e-12).unwrap().position;
        let (tau_back, sigma_back) = inverse_flow(&pt, &p, 1e-12).unwrap();
        let again = flow(&sigma_back, tau_back, &p, 1e-12).unwrap().position;
        assert!(again.distance(&pt) < 1e-9 * p.side_length(), "{:?} vs {:?}", again, pt);
        assert!((tau_back - 7.5).abs() < 1e-4);
    }

    #[test]
    fn inverse_flow_guard_near_equilibrium() {
        let p = params();
        let radius = GUARD_RADIUS * p.b();
        let inside = PhasePoint::new(p.b() - 0.5 * radius, p.b() - 0.5 * radius);
        assert!(matches!(inverse_flow(&inside, &p, 1e-10), Err(Error::Singularity { .. })));
        assert!(matches!(
            inverse_flow(&p.equilibrium(), &p, 1e-10),
            Err(Error::Singularity { .. })
        ));

        // X* is the corner of the square. Off the slow manifold a backward
        // trajectory from near X* leaves through Γ2 or Γ3 close to the corner,
        // after a time set by the direction of the deviation, not its size.
        // Exit times measured directly with RK4.
        let b = p.b();
        let exit = |q: PhasePoint| {
            let mut y = [q.x, q.theta];
            let dt = 1e-3;
            let mut t = 0.0;
            while (y[0] - 1.0).min(y[1] - 1.0).min(b - y[0]).min(b - y[1]) > 0.0 {
                let f = |y: [f64; 2]| {
                    let (g1, g2) = p.field(y[0], y[1]);
                    [-g1, -g2]
                };
                let k1 = f(y);
                let k2 = f([y[0] + 0.5 * dt * k1[0], y[1] + 0.5 * dt * k1[1]]);
                let k3 = f([y[0] + 0.5 * dt * k2[0], y[1] + 0.5 * dt * k2[1]]);
                let k4 = f([y[0] + dt * k3[0], y[1] + dt * k3[1]]);
                for i in 0..2 {
                    y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                t += dt;
            }
            (t, PhasePoint::new(y[0], y[1]))
        };
        let near = PhasePoint::new(b - 3.0 * radius, b - 1.2 * radius);
        let far = PhasePoint::new(b - 300.0 * radius, b - 120.0 * radius);
        let ((t_near, y_near), (t_far, _)) = (exit(near), exit(far));
        assert!(t_near > 1.0, "direct backward exit time {t_near}");
        assert!((t_near - t_far).abs() < 0.05, "{t_near} vs {t_far}");
        let (tau, sigma) = inverse_flow(&near, &p, 1e-11).unwrap();
        assert!((tau - t_near).abs() < 2e-3, "{tau} vs {t_near}");
        // v/u = 0.4 sits just above the slow direction ratio 0.393, so u
        // closes first: exit through x = b.
        assert_eq!(sigma.side, Side::G3);
        assert!(sigma.position().distance(&y_near) < 1e-6);
        assert!(sigma.position().distance(&p.equilibrium()) < 1e-3);
    }

    #[test]
    fn primary_tumor_at_equilibrium_is_constant() {
        let p = params();
        let grid: Vec<f64> = (0..50).map(|i| i as f64 * 0.3).collect();
        let traj = primary_tumor(&p.equilibrium(), &grid, &p, 1e-10).unwrap();
        for q in traj {
            assert!(q.distance(&p.equilibrium()) <= 1e-12 * p.b());
        }
    }

    #[test]
    fn primary_tumor_on_diagonal_starts_with_zero_size_rate() {
        let p = params();
        let grid = [0.0, 1e-4];
        let traj = primary_tumor(&PhasePoint::new(1.5, 1.5), &grid, &p, 1e-12).unwrap();
        // θ grows first (g2 > 0 on the diagonal below b), x only at second order.
        let dx = traj[1].x - traj[0].x;
        let dth = traj[1].theta - traj[0].theta;
        assert!(dx.abs() < 1e-7 && dth > 1e-5, "dx={dx} dth={dth}");
    }

    #[test]
    fn primary_tumor_matches_fine_rk4() {
        let p = params();
        let x0 = PhasePoint::new(1.0, p.b());
        let grid: Vec<f64> = (0..=40).map(|i| i as f64 * 0.5).collect();
        let traj = primary_tumor(&x0, &grid, &p, 1e-11).unwrap();
        // Reference: classical RK4 at 1/100 of the 0.5 output spacing... and
        // a further factor to keep RK4's own error well below the check.
        let dt = 0.5 / 100.0;
        let mut y = [x0.x, x0.theta];
        let f = |y: [f64; 2]| {
            let (g1, g2) = p.field(y[0], y[1]);
            [g1, g2]
        };
        let mut prev_x = traj[0].x;
        for (k, q) in traj.iter().enumerate().skip(1) {
            for _ in 0..100 {
                let k1 = f(y);
                let k2 = f([y[0] + 0.5 * dt * k1[0], y[1] + 0.5 * dt * k1[1]]);
                let k3 = f([y[0] + 0.5 * dt * k2[0], y[1] + 0.5 * dt * k2[1]]);
                let k4 = f([y[0] + dt * k3[0], y[1] + dt * k3[1]]);
                for i in 0..2 {
                    y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
            assert!((q.x - y[0]).abs() < 1e-8 && (q.theta - y[1]).abs() < 1e-8, "k={k}");
            assert!(q.x >= prev_x, "size must grow monotonically toward b");
            prev_x = q.x;
        }
        assert!(traj.last().unwrap().distance(&p.equilibrium()) < 1e-2);
    }
}
