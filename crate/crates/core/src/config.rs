//! Run configuration (TOML).
//!
//! Every field has a default, so an empty file describes the reference run:
//! `a = 0.5, c = 2, d = 1`, `β = 0.1 x^{2/3}`, hat emission on Γ1, a τ-bump
//! of initial metastases and no primary tumor.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::boundary::{EmissionProfile, Side};
use crate::error::{Error, Result};
use crate::growth::{GrowthParams, PhasePoint};
use crate::lattice::{BirthRate, CharacteristicLattice, LatticeSpec};
use crate::renewal::{SourceSamples, SourceTerm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrowthConfig {
    pub a: f64,
    pub c: f64,
    pub d: f64,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        Self { a: 0.5, c: 2.0, d: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileConfig {
    /// `center` and `width` both default to `(b − 1)/2`.
    TriangularHat {
        #[serde(default = "default_side")]
        side: Side,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        width: Option<f64>,
    },
    /// CSV with columns `side, s, value`.
    Table { path: PathBuf },
}

fn default_side() -> Side {
    Side::G1
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig::TriangularHat {
            side: Side::G1,
            center: None,
            width: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmissionConfig {
    pub m: f64,
    pub alpha: f64,
    pub profile: ProfileConfig,
}

impl Default for EmissionConfig {
    fn default() -> Self {
        Self {
            m: 0.1,
            alpha: 2.0 / 3.0,
            profile: ProfileConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// I, panels in τ.
    pub tau_steps: usize,
    /// J, panels per boundary side.
    pub sigma_steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_max: Option<f64>,
    /// Run horizon T.
    pub horizon: f64,
    pub sides: Vec<Side>,
    /// Times at which `simulate` writes density snapshots (nearest grid time).
    pub snapshot_times: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            tau_steps: 256,
            sigma_steps: 64,
            tau_max: None,
            horizon: 20.0,
            sides: Side::ALL.to_vec(),
            snapshot_times: vec![0.0, 5.0, 10.0, 20.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnProfile {
    /// Columns weighted by the emission profile.
    Emission,
    /// Every column gets the same weight.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialDataConfig {
    Zero,
    /// CSV with columns `side, s, tau, rho_tilde` covering every lattice node
    /// (a `simulate` snapshot can be fed back in).
    LatticeCsv { path: PathBuf },
    /// `ρ̃⁰(τ, σ) = amplitude · exp(−((τ − center)/width)²) · column(σ)`.
    TauBump {
        center: f64,
        width: f64,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "emission_columns")]
        columns: ColumnProfile,
    },
    /// Physical `ρ⁰(x, θ) = amplitude · exp(−|X − X₀|²/width²)`, sampled on the lattice.
    Gaussian {
        x: f64,
        theta: f64,
        width: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn emission_columns() -> ColumnProfile {
    ColumnProfile::Emission
}

impl Default for InitialDataConfig {
    fn default() -> Self {
        InitialDataConfig::TauBump {
            center: 2.0,
            width: 0.6,
            amplitude: 1.0,
            columns: ColumnProfile::Emission,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    #[default]
    None,
    PrimaryTumor {
        #[serde(default = "one")]
        x: f64,
        #[serde(default = "one")]
        theta: f64,
    },
    /// CSV with columns `t, value`: `f(t, σ) = N(σ)·value(t)`.
    Table { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub ode: f64,
    pub root: f64,
    pub quad: f64,
    /// Acceptance threshold of the mean-value check in `validate`.
    pub mean_value: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            ode: 1e-10,
            root: 1e-12,
            quad: 1e-8,
            mean_value: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub trajectories: usize,
    pub samples: usize,
    /// Defaults to the doubled convergence time of the slowest seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            trajectories: 16,
            samples: 200,
            t_end: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    /// Scan range; defaults to `[λ0/10, 10 λ0]` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_max: Option<f64>,
    pub points: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            lambda_min: None,
            lambda_max: None,
            points: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Fraction of the horizon skipped before fitting the decay rate.
    pub fit_window: f64,
    /// Randomized ordered pairs used by the comparison check in `validate`.
    pub comparison_trials: usize,
    /// Random interior points for the inverse-flow roundtrip in `validate`.
    pub roundtrip_points: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            fit_window: 0.5,
            comparison_trials: 20,
            roundtrip_points: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub growth: GrowthConfig,
    pub emission: EmissionConfig,
    pub grid: GridConfig,
    pub initial_data: InitialDataConfig,
    pub source: SourceConfig,
    pub tolerances: Tolerances,
    pub phase: PhaseConfig,
    pub spectral: SpectralConfig,
    pub analysis: AnalysisConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    /// Checks everything that does not need a lattice.
    pub fn validate(&self) -> Result<()> {
        let params = self.growth_params()?;
        self.birth()?;
        let g = &self.grid;
        if g.tau_steps < 8 || g.sigma_steps < 8 {
            return Err(Error::Config(format!(
                "grid.tau_steps and grid.sigma_steps must be >= 8 (got {} and {})",
                g.tau_steps, g.sigma_steps
            )));
        }
        if !(g.horizon.is_finite() && g.horizon > 0.0) {
            return Err(Error::Config(format!("grid.horizon must be > 0 (got {})", g.horizon)));
        }
        if let Some(t) = g.tau_max {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Config(format!("grid.tau_max must be > 0 (got {t})")));
            }
        }
        if g.sides.is_empty() {
            return Err(Error::Config("grid.sides must name at least one side".into()));
        }
        if let Some(t) = g.snapshot_times.iter().find(|t| !(**t >= 0.0 && **t <= g.horizon)) {
            return Err(Error::Config(format!(
                "snapshot time {t} outside [0, horizon = {}]",
                g.horizon
            )));
        }
        let t = &self.tolerances;
        for (name, v) in [("ode", t.ode), ("root", t.root), ("quad", t.quad), ("mean_value", t.mean_value)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("tolerances.{name} must be > 0 (got {v})")));
            }
        }
        if self.phase.trajectories == 0 || self.phase.samples < 2 {
            return Err(Error::Config("phase needs >= 1 trajectory and >= 2 samples".into()));
        }
        if let Some(t) = self.phase.t_end {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Config(format!("phase.t_end must be > 0 (got {t})")));
            }
        }
        let s = &self.spectral;
        if s.points < 2 {
            return Err(Error::Config("spectral.points must be >= 2".into()));
        }
        if let (Some(lo), Some(hi)) = (s.lambda_min, s.lambda_max) {
            if !(lo > 0.0 && hi > lo) {
                return Err(Error::Config(format!("need 0 < lambda_min < lambda_max (got {lo}, {hi})")));
            }
        }
        for v in [s.lambda_min, s.lambda_max].into_iter().flatten() {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("spectral scan bounds must be > 0 (got {v})")));
            }
        }
        if !(0.0..1.0).contains(&self.analysis.fit_window) {
            return Err(Error::Config("analysis.fit_window must be in [0, 1)".into()));
        }
        match &self.initial_data {
            InitialDataConfig::TauBump { width, amplitude, .. } | InitialDataConfig::Gaussian { width, amplitude, .. } => {
                if !(*width > 0.0 && width.is_finite() && amplitude.is_finite()) {
                    return Err(Error::Config("initial data width must be > 0 and amplitude finite".into()));
                }
            }
            _ => {}
        }
        if let SourceConfig::PrimaryTumor { x, theta } = self.source {
            let b = params.b();
            if !((1.0..=b).contains(&x) && (1.0..=b).contains(&theta)) {
                return Err(Error::Config(format!(
                    "primary tumor start ({x}, {theta}) outside [1, {b}]^2"
                )));
            }
        }
        self.profile(&params).map(|_| ())
    }

    pub fn growth_params(&self) -> Result<GrowthParams> {
        GrowthParams::new(self.growth.a, self.growth.c, self.growth.d)
    }

    pub fn birth(&self) -> Result<BirthRate> {
        BirthRate::new(self.emission.m, self.emission.alpha)
    }

    pub fn profile(&self, params: &GrowthParams) -> Result<EmissionProfile> {
        let len = params.side_length();
        match &self.emission.profile {
            ProfileConfig::TriangularHat { side, center, width } => {
                EmissionProfile::triangular_hat(*side, center.unwrap_or(0.5 * len), width.unwrap_or(0.5 * len), params)
            }
            ProfileConfig::Table { path } => EmissionProfile::from_csv(&self.resolve(path), params),
        }
    }

    pub fn lattice_spec(&self) -> LatticeSpec {
        let mut spec = LatticeSpec::new(self.grid.tau_steps, self.grid.sigma_steps)
            .with_sides(&self.grid.sides)
            .with_ode_tol(self.tolerances.ode);
        spec.tau_max = self.grid.tau_max;
        spec
    }

    pub fn build_lattice(&self) -> Result<CharacteristicLattice> {
        let params = self.growth_params()?;
        let profile = self.profile(&params)?;
        CharacteristicLattice::build(&params, &profile, &self.birth()?, &self.lattice_spec())
    }

    /// Number of time steps covering the horizon on the lattice step.
    pub fn time_steps(&self, lattice: &CharacteristicLattice) -> usize {
        (self.grid.horizon / lattice.dtau() - 1e-9).ceil().max(1.0) as usize
    }

    pub fn initial_data(&self, lattice: &CharacteristicLattice) -> Result<Vec<f64>> {
        match &self.initial_data {
            InitialDataConfig::Zero => Ok(vec![0.0; lattice.rows() * lattice.cols()]),
            InitialDataConfig::TauBump {
                center,
                width,
                amplitude,
                columns,
            } => Ok(lattice.separable(
                |t| amplitude * (-((t - center) / width).powi(2)).exp(),
                |j| match columns {
                    ColumnProfile::Emission => lattice.emission()[j],
                    ColumnProfile::Uniform => 1.0,
                },
            )),
            InitialDataConfig::Gaussian {
                x,
                theta,
                width,
                amplitude,
            } => {
                let c = PhasePoint::new(*x, *theta);
                let w2 = width * width;
                Ok(lattice.sample_physical(|p| {
                    let r = p.distance(&c);
                    amplitude * (-(r * r) / w2).exp()
                }))
            }
            InitialDataConfig::LatticeCsv { path } => read_lattice_csv(&self.resolve(path), lattice),
        }
    }

    pub fn source_term(&self) -> Result<SourceTerm> {
        Ok(match &self.source {
            SourceConfig::None => SourceTerm::None,
            SourceConfig::PrimaryTumor { x, theta } => SourceTerm::PrimaryTumor {
                x0: PhasePoint::new(*x, *theta),
            },
            SourceConfig::Table { path } => SourceTerm::Table {
                samples: read_source_table(&self.resolve(path))?,
            },
        })
    }

    pub fn source_samples(&self, lattice: &CharacteristicLattice, steps: usize) -> Result<SourceSamples> {
        self.source_term()?.realize(lattice, steps, self.tolerances.ode)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    }
}

fn read_source_table(path: &Path) -> Result<Vec<(f64, f64)>> {
    #[derive(Deserialize)]
    struct Row {
        t: f64,
        value: f64,
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for row in reader.deserialize::<Row>() {
        let row = row.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if row.value < 0.0 {
            return Err(Error::Config(format!("{}: negative source value at t = {}", path.display(), row.t)));
        }
        out.push((row.t, row.value));
    }
    Ok(out)
}

fn read_lattice_csv(path: &Path, lattice: &CharacteristicLattice) -> Result<Vec<f64>> {
    #[derive(Deserialize)]
    struct Row {
        side: String,
        s: f64,
        tau: f64,
        rho_tilde: f64,
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let cols = lattice.cols();
    let mut out = vec![f64::NAN; lattice.rows() * cols];
    let ds = lattice.sigma_weights().first().copied().unwrap_or(1.0);
    let mut col_of = std::collections::HashMap::new();
    for (j, sigma) in lattice.sigma_nodes().iter().enumerate() {
        col_of.insert((sigma.side, (sigma.s / ds).round() as i64), j);
    }
    for row in reader.deserialize::<Row>() {
        let row = row.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let side: Side = row.side.parse()?;
        let k = row.s / ds;
        let i = row.tau / lattice.dtau();
        let off_node = (k - k.round()).abs() > 1e-6 || (i - i.round()).abs() > 1e-6 || i.round() < 0.0;
        let j = col_of.get(&(side, k.round() as i64)).copied();
        match (off_node, j) {
            (false, Some(j)) if (i.round() as usize) < lattice.rows() => {
                out[i.round() as usize * cols + j] = row.rho_tilde;
            }
            _ => {
                return Err(Error::Config(format!(
                    "{}: ({side}, s = {}, tau = {}) is not a lattice node",
                    path.display(),
                    row.s,
                    row.tau
                )))
            }
        }
    }
    if out.iter().any(|v| v.is_nan()) {
        return Err(Error::Config(format!(
            "{}: does not cover every lattice node ({} x {})",
            path.display(),
            lattice.rows(),
            cols
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::default();
        cfg.grid.tau_max = Some(12.5);
        cfg.source = SourceConfig::PrimaryTumor { x: 1.0, theta: 1.3 };
        cfg.emission.profile = ProfileConfig::TriangularHat {
            side: Side::G4,
            center: Some(0.7),
            width: Some(0.4),
        };
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_invalid_growth() {
        for (a, c, d) in [(0.0, 2.0, 1.0), (0.5, -2.0, 1.0), (0.5, 2.0, 0.0), (0.5, 1.0, 1.0), (0.5, 1.0, 2.0)] {
            let text = format!("[growth]\na = {a}\nc = {c}\nd = {d}\n");
            let err = RunConfig::from_toml_str(&text).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{err}");
            assert_eq!(err.exit_code(), 2);
        }
    }

    #[test]
    fn rejects_bad_grid_and_tolerances() {
        assert!(RunConfig::from_toml_str("[grid]\ntau_steps = 4\n").is_err());
        assert!(RunConfig::from_toml_str("[grid]\nhorizon = 0.0\n").is_err());
        assert!(RunConfig::from_toml_str("[tolerances]\node = 0.0\n").is_err());
        assert!(RunConfig::from_toml_str("[grid]\nbogus = 1\n").is_err());
        assert!(RunConfig::from_toml_str("[grid]\nsnapshot_times = [30.0]\n").is_err());
    }

    #[test]
    fn parses_variants() {
        let text = r#"
seed = 7
[emission]
m = 0.7
alpha = 0.0
[emission.profile]
kind = "triangular_hat"
side = "G1"
[initial_data]
kind = "gaussian"
x = 1.5
theta = 2.0
width = 0.2
[source]
kind = "primary_tumor"
"#;
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.source, SourceConfig::PrimaryTumor { x: 1.0, theta: 1.0 });
        assert!(matches!(cfg.initial_data, InitialDataConfig::Gaussian { amplitude, .. } if amplitude == 1.0));
    }
}
