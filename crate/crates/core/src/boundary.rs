//! The boundary Γ of the square, emission profiles and boundary quadrature.
//!
//! Sides are open segments parametrized by unit-speed arc length
//! `s ∈ (0, b − 1)`:
//!
//! | side | point        | outward normal |
//! |------|--------------|----------------|
//! | Γ1   | (1, 1 + s)   | (−1, 0)        |
//! | Γ2   | (1 + s, b)   | (0, 1)         |
//! | Γ3   | (b, b − s)   | (1, 0)         |
//! | Γ4   | (b − s, 1)   | (0, −1)        |
//!
//! Γ1 starts at (1,1), Γ2 at (1,b), Γ3 at (b,b) and Γ4 at (b,1); the four
//! segments chain into the clockwise loop of length `4(b − 1)`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::growth::{GrowthParams, PhasePoint, CLAMP_GUARD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    G1,
    G2,
    G3,
    G4,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::G1, Side::G2, Side::G3, Side::G4];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Outward unit normal.
    pub fn normal(self) -> (f64, f64) {
        match self {
            Side::G1 => (-1.0, 0.0),
            Side::G2 => (0.0, 1.0),
            Side::G3 => (1.0, 0.0),
            Side::G4 => (0.0, -1.0),
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Side::G1 => "G1",
            Side::G2 => "G2",
            Side::G3 => "G3",
            Side::G4 => "G4",
        };
        f.write_str(name)
    }
}

impl FromStr for Side {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "G1" | "g1" | "1" => Ok(Side::G1),
            "G2" | "g2" | "2" => Ok(Side::G2),
            "G3" | "g3" | "3" => Ok(Side::G3),
            "G4" | "g4" | "4" => Ok(Side::G4),
            other => Err(Error::Config(format!("unknown boundary side {other:?} (expected G1..G4)"))),
        }
    }
}

/// Position of arc length `s` on `side`, without range checks.
fn raw_chart(side: Side, s: f64, b: f64) -> PhasePoint {
    match side {
        Side::G1 => PhasePoint::new(1.0, 1.0 + s),
        Side::G2 => PhasePoint::new(1.0 + s, b),
        Side::G3 => PhasePoint::new(b, b - s),
        Side::G4 => PhasePoint::new(b - s, 1.0),
    }
}

/// Point of the open side at arc length `s`.
pub fn chart(side: Side, s: f64, params: &GrowthParams) -> Result<PhasePoint> {
    let len = params.side_length();
    if !(s > 0.0 && s < len) {
        return Err(Error::Domain(format!(
            "arc length {s} is not inside the open side (0, {len}); corners are excluded"
        )));
    }
    Ok(raw_chart(side, s, params.b()))
}

/// A point σ of Γ with its cached coordinates and inflow `G·ν(σ) < 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub side: Side,
    pub s: f64,
    pub x: f64,
    pub theta: f64,
    pub g_dot_nu: f64,
}

impl BoundaryPoint {
    pub fn new(side: Side, s: f64, params: &GrowthParams) -> Result<Self> {
        let p = chart(side, s, params)?;
        let (g1, g2) = params.field(p.x, p.theta);
        let (n1, n2) = side.normal();
        Ok(Self {
            side,
            s,
            x: p.x,
            theta: p.theta,
            g_dot_nu: g1 * n1 + g2 * n2,
        })
    }

    pub fn position(&self) -> PhasePoint {
        PhasePoint::new(self.x, self.theta)
    }

    /// Outward unit normal ν. The field enters along `−ν`.
    pub fn normal(&self) -> (f64, f64) {
        self.side.normal()
    }

    /// Locates `p` on Γ; `p` may be off the boundary by the snap tolerance.
    pub fn unchart(p: &PhasePoint, params: &GrowthParams) -> Result<Self> {
        let b = params.b();
        let snap = CLAMP_GUARD * b;
        let near = |v: f64, target: f64| (v - target).abs() <= snap;
        let inside = |v: f64| v > 1.0 + snap && v < b - snap;
        let (side, s) = if near(p.x, 1.0) && inside(p.theta) {
            (Side::G1, p.theta - 1.0)
        } else if near(p.theta, b) && inside(p.x) {
            (Side::G2, p.x - 1.0)
        } else if near(p.x, b) && inside(p.theta) {
            (Side::G3, b - p.theta)
        } else if near(p.theta, 1.0) && inside(p.x) {
            (Side::G4, b - p.x)
        } else {
            let corner = (near(p.x, 1.0) || near(p.x, b)) && (near(p.theta, 1.0) || near(p.theta, b));
            let what = if corner { "is a corner" } else { "is not on the boundary" };
            return Err(Error::Domain(format!("point ({}, {}) {what}", p.x, p.theta)));
        };
        BoundaryPoint::new(side, s, params)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Hat { side: Side, center: f64, width: f64 },
    /// Piecewise-linear samples per side, zero outside the sampled range.
    Table { sides: [Vec<(f64, f64)>; 4] },
}

/// Normalized emission profile `N(σ)` with `∫_Γ N dσ = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionProfile {
    shape: Shape,
    scale: f64,
    lipschitz: f64,
}

impl EmissionProfile {
    /// Hat of the given support width centered at arc length `center` on `side`.
    pub fn triangular_hat(side: Side, center: f64, width: f64, params: &GrowthParams) -> Result<Self> {
        let len = params.side_length();
        if !(width.is_finite() && width > 0.0) {
            return Err(Error::Config(format!("hat width must be > 0 (got {width})")));
        }
        let (lo, hi) = (center - 0.5 * width, center + 0.5 * width);
        if !(lo >= 0.0 && hi <= len) {
            return Err(Error::Config(format!(
                "hat support [{lo}, {hi}] must lie within side {side} of length {len}"
            )));
        }
        let scale = 2.0 / width;
        Ok(Self {
            shape: Shape::Hat { side, center, width },
            scale,
            lipschitz: scale / (0.5 * width),
        })
    }

    /// Hat on Γ1 centered at θ = (1 + b)/2 with width (b − 1)/2.
    pub fn default_hat(params: &GrowthParams) -> Self {
        let len = params.side_length();
        Self::triangular_hat(Side::G1, 0.5 * len, 0.5 * len, params)
            .expect("the default hat always fits on its side")
    }

    /// Piecewise-linear profile through `(side, s, value)` samples.
    ///
    /// On each side the samples must be strictly increasing in `s`, lie in
    /// `[0, b − 1]`, be non-negative, and start and end at zero so the
    /// profile is Lipschitz with compact support.
    pub fn from_table(samples: &[(Side, f64, f64)], params: &GrowthParams) -> Result<Self> {
        let len = params.side_length();
        let mut sides: [Vec<(f64, f64)>; 4] = Default::default();
        for &(side, s, v) in samples {
            if !(s.is_finite() && v.is_finite()) {
                return Err(Error::Config(format!("non-finite profile sample ({side}, {s}, {v})")));
            }
            if !(0.0..=len).contains(&s) {
                return Err(Error::Config(format!(
                    "profile sample s = {s} on {side} outside [0, {len}]"
                )));
            }
            if v < 0.0 {
                return Err(Error::Config(format!("profile value must be >= 0 (got {v} at {side}, s = {s})")));
            }
            sides[side.index()].push((s, v));
        }
        let mut total = 0.0;
        let mut slope: f64 = 0.0;
        for (k, pts) in sides.iter().enumerate() {
            if pts.is_empty() {
                continue;
            }
            let side = Side::ALL[k];
            if pts.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(Error::Config(format!("profile samples on {side} must be strictly increasing in s")));
            }
            if pts[0].1 != 0.0 || pts[pts.len() - 1].1 != 0.0 {
                return Err(Error::Config(format!(
                    "profile on {side} must start and end at 0 (compact, Lipschitz support)"
                )));
            }
            for w in pts.windows(2) {
                let (ds, dv) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
                total += 0.5 * ds * (w[0].1 + w[1].1);
                slope = slope.max((dv / ds).abs());
            }
        }
        if !(total > 0.0) {
            return Err(Error::Config("emission profile has zero integral".into()));
        }
        let scale = 1.0 / total;
        Ok(Self {
            shape: Shape::Table { sides },
            scale,
            lipschitz: slope * scale,
        })
    }

    /// Loads a `side,s,value` CSV (with header) and renormalizes it.
    pub fn from_csv(path: &Path, params: &GrowthParams) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            side: String,
            s: f64,
            value: f64,
        }
        let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Config(format!("{}: {other:?}", path.display())),
        })?;
        let mut samples = Vec::new();
        for row in reader.deserialize::<Row>() {
            let row = row.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            samples.push((row.side.parse()?, row.s, row.value));
        }
        Self::from_table(&samples, params)
    }

    /// `N` at arc length `s` of `side` (0 off the support).
    pub fn value(&self, side: Side, s: f64) -> f64 {
        let raw = match &self.shape {
            Shape::Hat { side: hs, center, width } => {
                if side != *hs {
                    return 0.0;
                }
                (1.0 - (s - center).abs() / (0.5 * width)).max(0.0)
            }
            Shape::Table { sides } => interpolate(&sides[side.index()], s),
        };
        raw * self.scale
    }

    /// Upper bound on the slope of `N` along each side.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Closed support `[lo, hi]` on `side`, if any.
    pub fn support(&self, side: Side) -> Option<(f64, f64)> {
        match &self.shape {
            Shape::Hat { side: hs, center, width } => {
                (side == *hs).then(|| (center - 0.5 * width, center + 0.5 * width))
            }
            Shape::Table { sides } => {
                let pts = &sides[side.index()];
                let first = pts.iter().position(|p| p.1 > 0.0)?;
                let last = pts.iter().rposition(|p| p.1 > 0.0)?;
                Some((pts[first.saturating_sub(1)].0, pts[(last + 1).min(pts.len() - 1)].0))
            }
        }
    }
}

fn interpolate(pts: &[(f64, f64)], s: f64) -> f64 {
    if pts.len() < 2 || s <= pts[0].0 || s >= pts[pts.len() - 1].0 {
        return 0.0;
    }
    let k = pts.partition_point(|p| p.0 <= s);
    let (s0, v0) = pts[k - 1];
    let (s1, v1) = pts[k];
    v0 + (v1 - v0) * (s - s0) / (s1 - s0)
}

/// `N(σ)` for the given profile.
pub fn emission_n(sigma: &BoundaryPoint, profile: &EmissionProfile) -> f64 {
    profile.value(sigma.side, sigma.s)
}

/// Composite trapezoid of `f(side, s)` over Γ with `intervals` panels per side.
///
/// The side endpoints are sampled too, so `f` must accept `s = 0` and `s = b − 1`.
pub fn boundary_quadrature(
    f: impl Fn(Side, f64) -> f64,
    intervals: usize,
    params: &GrowthParams,
) -> Result<f64> {
    if intervals < 2 {
        return Err(Error::Domain(format!("need at least 2 panels per side (got {intervals})")));
    }
    let len = params.side_length();
    let h = len / intervals as f64;
    let mut total = 0.0;
    for side in Side::ALL {
        let mut acc = 0.0;
        for k in 0..=intervals {
            let s = if k == intervals { len } else { k as f64 * h };
            let v = f(side, s);
            if !v.is_finite() {
                return Err(Error::Numerical(format!("non-finite integrand {v} at {side}, s = {s}")));
            }
            let w = if k == 0 || k == intervals { 0.5 } else { 1.0 };
            acc += w * v;
        }
        total += acc * h;
    }
    Ok(total)
}
