//! Experiment configuration: schema, parsing and validation.

use serde::{Deserialize, Serialize};

/// Schema understood by this binary.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub suite: SuiteSelection,
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSpec,
    pub model: ModelSpec,
    pub state: StateSpec,
    pub localisation: LocalisationSpec,
    pub delay: DelaySpec,
    pub tolerances: Tolerances,
    #[serde(default)]
    pub scattering: Option<ScatteringSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteSelection {
    Identities,
    #[serde(alias = "summation_formula")]
    Summation,
    #[serde(alias = "mourre_bound")]
    Mourre,
    Delay,
    All,
}

impl SuiteSelection {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "identities" => Some(Self::Identities),
            "summation" | "summation_formula" => Some(Self::Summation),
            "mourre" | "mourre_bound" => Some(Self::Mourre),
            "delay" => Some(Self::Delay),
            "all" => Some(Self::All),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dimension: usize,
    pub points: usize,
    pub spacing: f64,
    /// Fraction of the half-length kept as wrap-around guard; the lattice
    /// backend fixes this at 0.85, so any other value is rejected.
    #[serde(default)]
    pub guard_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Shift,
    Laplacian,
    CoinedWalk,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Per-axis velocity of the shift model.
    #[serde(default)]
    pub velocity: Option<Vec<f64>>,
    /// Coin mixing angle of the coined walk.
    #[serde(default)]
    pub coin_angle: Option<f64>,
    #[serde(default)]
    pub perturbation: Option<PerturbationSpec>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerturbationSpec {
    /// U = e^{−iθ·1_A}·U₀ with A = [region[0], region[1]) on the first axis.
    PhaseDefect { strength: f64, region: [f64; 2] },
    /// U = e^{−iW/2}U₀e^{−iW/2} with W(x) = −depth·exp(−|x|²/width).
    SplitStepWell { depth: f64, width: f64 },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    pub center: Vec<f64>,
    pub window: Vec<[f64; 2]>,
    pub profile_width: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LocalisationSpec {
    pub width: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DelaySpec {
    pub r_list: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Wave-operator Cauchy tolerance.
    pub tol_w: f64,
    /// Fiber-block unitarity tolerance.
    #[serde(default = "default_tol_s")]
    pub tol_s: f64,
    /// Relative tolerance of the delay-vs-spectral verdicts.
    #[serde(default = "default_tol_rel")]
    pub tol_rel: f64,
    /// Velocity floor of the time operator and critical-set analysis.
    pub v_min: f64,
    #[serde(default = "default_transport_tol")]
    pub transport: f64,
    #[serde(default = "default_canonical_tol")]
    pub canonical: f64,
    /// Relative tolerance of the extrapolated summation-formula check.
    #[serde(default = "default_tol_rel")]
    pub summation_rel: f64,
    #[serde(default = "default_mourre_slack")]
    pub mourre_slack: f64,
}

fn default_tol_s() -> f64 {
    1e-6
}
fn default_tol_rel() -> f64 {
    5e-2
}
fn default_transport_tol() -> f64 {
    1e-10
}
fn default_canonical_tol() -> f64 {
    1e-8
}
fn default_mourre_slack() -> f64 {
    1e-9
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScatteringSpec {
    /// Wave-operator horizon n_w.
    pub horizon: i64,
    /// Positive-momentum window of the fiber table; enables the fiber route.
    #[serde(default)]
    pub fiber_window: Option<[f64; 2]>,
    #[serde(default = "default_delta_bins")]
    pub delta_bins: usize,
    /// Launch offset of the fiber probes (defaults to the state's center).
    #[serde(default)]
    pub probe_center: Option<f64>,
}

fn default_delta_bins() -> usize {
    4
}

impl ExperimentConfig {
    /// Parses and validates; every failure here is a configuration error.
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| format!("config parse error: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut errs: Vec<String> = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            errs.push(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let d = self.grid.dimension;
        if !(1..=2).contains(&d) {
            errs.push("grid.dimension must be 1 or 2".into());
        }
        if self.grid.points < 16 || !self.grid.points.is_power_of_two() {
            errs.push("grid.points must be a power of two ≥ 16".into());
        }
        if !(self.grid.spacing > 0.0) {
            errs.push("grid.spacing must be positive".into());
        }
        if let Some(gf) = self.grid.guard_fraction {
            if (gf - 0.85).abs() > 1e-12 {
                errs.push("grid.guard_fraction: only the lattice default 0.85 is supported".into());
            }
        }
        match self.model.kind {
            ModelKind::Shift => match &self.model.velocity {
                None => errs.push("model.velocity is required for the shift model".into()),
                Some(v) if v.len() != d => {
                    errs.push("model.velocity length must equal grid.dimension".into())
                }
                Some(v) if v.iter().all(|x| *x == 0.0) => {
                    errs.push("model.velocity must not vanish".into())
                }
                _ => {}
            },
            ModelKind::Laplacian => {
                if self.model.velocity.is_some() {
                    errs.push("model.velocity is only meaningful for the shift model".into());
                }
            }
            ModelKind::CoinedWalk => {
                if d != 1 {
                    errs.push("the coined walk is a 1D model".into());
                }
                match self.model.coin_angle {
                    None => errs.push("model.coin_angle is required for the coined walk".into()),
                    Some(t) if !t.is_finite() => errs.push("model.coin_angle must be finite".into()),
                    _ => {}
                }
            }
        }
        if let Some(p) = &self.model.perturbation {
            match p {
                PerturbationSpec::PhaseDefect { strength, region } => {
                    if !strength.is_finite() {
                        errs.push("perturbation.strength must be finite".into());
                    }
                    if region[0] >= region[1] {
                        errs.push("perturbation.region must be a nonempty interval".into());
                    }
                }
                PerturbationSpec::SplitStepWell { depth, width } => {
                    if !depth.is_finite() {
                        errs.push("perturbation.depth must be finite".into());
                    }
                    if !(width > &0.0) {
                        errs.push("perturbation.width must be positive".into());
                    }
                }
            }
        }
        if self.state.center.len() != d || self.state.window.len() != d {
            errs.push("state.center and state.window must have one entry per axis".into());
        }
        for w in &self.state.window {
            if w[0] >= w[1] {
                errs.push("state.window entries must be ascending intervals".into());
            }
        }
        if !(self.state.profile_width > 0.0) {
            errs.push("state.profile_width must be positive".into());
        }
        if !(self.localisation.width > 0.0 && self.localisation.width <= 1.0) {
            errs.push("localisation.width must lie in (0, 1]".into());
        }
        if self.delay.r_list.len() < 3 {
            errs.push("delay.r_list needs at least three radii".into());
        }
        if self.delay.r_list.windows(2).any(|w| w[0] >= w[1])
            || self.delay.r_list.first().is_some_and(|r| *r <= 0.0)
        {
            errs.push("delay.r_list must be positive and strictly ascending".into());
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("tol_w", t.tol_w),
            ("tol_s", t.tol_s),
            ("tol_rel", t.tol_rel),
            ("v_min", t.v_min),
            ("transport", t.transport),
            ("canonical", t.canonical),
            ("summation_rel", t.summation_rel),
            ("mourre_slack", t.mourre_slack),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("tolerances.{name} must be positive and finite"));
            }
        }
        let needs_scattering = matches!(self.suite, SuiteSelection::Delay | SuiteSelection::All);
        if needs_scattering {
            match &self.scattering {
                None => errs.push("the delay suite requires a [scattering] section".into()),
                Some(s) => {
                    if s.horizon < 8 {
                        errs.push("scattering.horizon must be at least 8".into());
                    }
                    if s.delta_bins == 0 {
                        errs.push("scattering.delta_bins must be positive".into());
                    }
                    if let Some(w) = s.fiber_window {
                        if !(0.0 < w[0] && w[0] < w[1]) {
                            errs.push(
                                "scattering.fiber_window must be an ascending positive interval"
                                    .into(),
                            );
                        }
                    }
                    if d != 1 {
                        errs.push("the delay suite is implemented for 1D models".into());
                    }
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs.join("; "))
        }
    }
}
