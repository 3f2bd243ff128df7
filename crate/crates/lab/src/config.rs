//! Experiment configuration files.
//!
//! Configs are JSON objects; every field has a default and unknown keys are
//! rejected so a typo never silently falls back to a default.

use std::path::{Path, PathBuf};

use brownot_core::brownian::Stepping;
use brownot_core::interlacement::PathConfig;
use brownot_core::potential::capacity_ball;
use brownot_core::transport::{EntropicOptions, ExactOptions, PivotRule, SolverChoice};
use brownot_core::Domain;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, LabError, LabResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Constant,
    FixedN,
    TorusRate,
    Concentration,
    Subadd,
    Hitting,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Constant => "constant",
            ExperimentKind::FixedN => "fixed-n",
            ExperimentKind::TorusRate => "torus-rate",
            ExperimentKind::Concentration => "concentration",
            ExperimentKind::Subadd => "subadd",
            ExperimentKind::Hitting => "hitting",
        }
    }

    fn is_limit(self) -> bool {
        matches!(
            self,
            ExperimentKind::Constant | ExperimentKind::FixedN | ExperimentKind::TorusRate | ExperimentKind::Concentration
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Ball,
    Cube,
}

/// Euclidean domain centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub shape: ShapeKind,
    /// Radius for balls, side length for cubes.
    pub size: f64,
}

impl Default for DomainSpec {
    fn default() -> Self {
        DomainSpec {
            shape: ShapeKind::Cube,
            size: 1.0,
        }
    }
}

impl DomainSpec {
    pub fn build(&self, d: usize) -> LabResult<Domain> {
        Ok(match self.shape {
            ShapeKind::Ball => Domain::euclidean_ball(d, self.size)?,
            ShapeKind::Cube => Domain::euclidean_cube(d, self.size)?,
        })
    }

    /// Closed-form capacity, available for balls only.
    pub fn capacity(&self, d: usize) -> LabResult<Option<f64>> {
        Ok(match self.shape {
            ShapeKind::Ball => Some(capacity_ball(d, self.size)?.value),
            ShapeKind::Cube => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DtPolicy {
    /// Step inside the domain of interest, and the fixed step on the torus.
    pub dt: f64,
    /// Outside the domain the step grows as `(gap / resolution)²`.
    pub resolution: f64,
    /// Upper bound on adaptive steps; absent means unbounded.
    pub dt_max: Option<f64>,
}

impl Default for DtPolicy {
    fn default() -> Self {
        DtPolicy {
            dt: 1e-3,
            resolution: 4.0,
            dt_max: None,
        }
    }
}

impl DtPolicy {
    pub fn path_config(&self, r_max: Option<f64>) -> PathConfig {
        PathConfig {
            dt_in: self.dt,
            resolution: self.resolution,
            dt_max: self.dt_max.unwrap_or(f64::INFINITY),
            r_max,
            stride: 1,
        }
    }

    pub fn adaptive(&self) -> Stepping {
        Stepping::Adaptive {
            dt_min: self.dt,
            dt_max: self.dt_max.unwrap_or(f64::INFINITY),
            resolution: self.resolution,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKindSpec {
    Exact,
    Entropic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PivotSpec {
    BlockSearch,
    FirstEligible,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub kind: SolverKindSpec,
    /// Largest `n_source · n_target` handed to the exact solver.
    pub cap: usize,
    pub pivot: PivotSpec,
    pub final_ratio: f64,
    pub stages: usize,
    pub max_iter: u64,
    pub tol: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let e = EntropicOptions::default();
        SolverSpec {
            kind: SolverKindSpec::Exact,
            cap: brownot_core::transport::DEFAULT_EXACT_CAP,
            pivot: PivotSpec::BlockSearch,
            final_ratio: e.final_ratio,
            stages: e.stages,
            max_iter: e.max_iter,
            tol: e.tol,
        }
    }
}

impl SolverSpec {
    pub fn choice(&self) -> SolverChoice {
        match self.kind {
            SolverKindSpec::Exact => SolverChoice::Exact(ExactOptions {
                max_entries: self.cap,
                pivot: match self.pivot {
                    PivotSpec::BlockSearch => PivotRule::BlockSearch,
                    PivotSpec::FirstEligible => PivotRule::FirstEligible,
                },
                max_iterations: u64::MAX,
            }),
            SolverKindSpec::Entropic => SolverChoice::Entropic(EntropicOptions {
                final_ratio: self.final_ratio,
                stages: self.stages,
                max_iter: self.max_iter,
                tol: self.tol,
                ..EntropicOptions::default()
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "method")]
pub enum Extrapolation {
    #[default]
    None,
    /// Two-point elimination of a correction term `a·u^{-order}`.
    Richardson { order: f64 },
}

/// Thresholds used by the pass/fail flags in run records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub fixed_n_exponent: f64,
    pub torus_exponent: f64,
    pub plateau_spread: f64,
    pub top_half_cv: f64,
    pub limsup_margin: f64,
    /// Width of the bands, in standard errors, for monotonicity checks.
    pub se_band: f64,
    pub trend_p_value: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            fixed_n_exponent: 0.07,
            torus_exponent: 0.1,
            plateau_spread: 0.25,
            top_half_cv: 0.2,
            limsup_margin: 0.25,
            se_band: 2.0,
            trend_p_value: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubaddSpec {
    /// Side `L` of the small cube.
    pub side: f64,
    /// The large cube has side `m·L`.
    pub m: u32,
    /// Integrability exponent entering `r = d - α - 2 min(p, 1)`.
    pub alpha: f64,
    /// Constant `C` of the slack `C·L^{-r/2}`.
    pub slack_c: f64,
    pub intensity: f64,
}

impl Default for SubaddSpec {
    fn default() -> Self {
        SubaddSpec {
            side: 1.0,
            m: 2,
            alpha: 2.0,
            slack_c: 1.0,
            intensity: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HittingSpec {
    pub l: f64,
    pub rho: f64,
    pub sigma: f64,
    /// Outer radius a path must leave before an entrance counts again.
    pub big_l: f64,
    pub k_max: usize,
    /// Paths for the iterated-hit frequencies; 0 skips them.
    pub iterated_replicas: u64,
}

impl Default for HittingSpec {
    fn default() -> Self {
        HittingSpec {
            l: 0.02,
            rho: 2.0,
            sigma: 0.0,
            big_l: 0.1,
            k_max: 3,
            iterated_replicas: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// When present it must match the subcommand.
    pub experiment: Option<ExperimentKind>,
    pub d: usize,
    pub p: f64,
    pub domain: DomainSpec,
    pub u_grid: Vec<f64>,
    pub n_grid: Vec<u64>,
    pub t_grid: Vec<f64>,
    pub replicas: u64,
    pub dt: DtPolicy,
    pub grid_n: usize,
    /// Source atoms handed to the solver; occupation measures are
    /// subsampled to stay below it.
    pub max_atoms: usize,
    pub solver: SolverSpec,
    pub r_max: Option<f64>,
    pub master_seed: u64,
    pub output: Option<PathBuf>,
    /// Replicas per grid point that are re-solved at half the stride to
    /// estimate the subsampling bias.
    pub control_replicas: u64,
    /// Also run with a deterministic path count `round(u·Cap)`.
    pub depoissonize: bool,
    pub extrapolation: Extrapolation,
    pub tolerances: Tolerances,
    /// Reference constant for the torus comparison.
    pub c_hat: Option<f64>,
    pub subadd: SubaddSpec,
    pub hitting: HittingSpec,
    /// Write atoms and plan CSVs for replica 0 of every grid point.
    pub save_examples: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: None,
            d: 3,
            p: 0.25,
            domain: DomainSpec::default(),
            u_grid: vec![4.0, 8.0, 16.0, 32.0, 64.0],
            n_grid: vec![16, 32, 64, 128, 256],
            t_grid: vec![25.0, 50.0, 100.0, 200.0],
            replicas: 20,
            dt: DtPolicy::default(),
            grid_n: 12,
            max_atoms: 1500,
            solver: SolverSpec::default(),
            r_max: None,
            master_seed: 0,
            output: None,
            control_replicas: 4,
            depoissonize: false,
            extrapolation: Extrapolation::None,
            tolerances: Tolerances::default(),
            c_hat: None,
            subadd: SubaddSpec::default(),
            hitting: HittingSpec::default(),
            save_examples: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> LabResult<Self> {
        serde_json::from_str(text).map_err(LabError::from)
    }

    pub fn load(path: &Path) -> LabResult<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text)
    }

    /// `1 - p/(d-2)`, the growth exponent of the transport cost.
    pub fn rate_exponent(&self) -> f64 {
        1.0 - self.p / (self.d as f64 - 2.0)
    }

    pub fn torus(&self) -> LabResult<Domain> {
        Ok(Domain::torus(self.d)?)
    }

    /// Checks shared by all experiments plus the parameter region each one
    /// needs.
    pub fn validate_for(&self, kind: ExperimentKind) -> LabResult<()> {
        if let Some(k) = self.experiment {
            if k != kind {
                return Err(LabError::Config(format!(
                    "config is for '{}' but the '{}' pipeline was requested",
                    k.name(),
                    kind.name()
                )));
            }
        }
        if self.d < 3 {
            return Err(LabError::Hypothesis(format!("transience needs d >= 3, got d = {}", self.d)));
        }
        if !(self.p > 0.0 && self.p.is_finite()) {
            return Err(LabError::Config("p must be positive".into()));
        }
        if self.replicas < 2 {
            return Err(LabError::Config("at least two replicas are needed for standard errors".into()));
        }
        if !(self.dt.dt > 0.0) || !(self.dt.resolution > 0.0) {
            return Err(LabError::Config("dt and resolution must be positive".into()));
        }
        if self.grid_n == 0 || self.max_atoms == 0 {
            return Err(LabError::Config("grid_n and max_atoms must be positive".into()));
        }
        let d = self.d as f64;
        if kind.is_limit() && self.d <= 4 && self.p >= (d - 2.0) / 2.0 {
            return Err(LabError::Hypothesis(format!(
                "the limit needs p < (d-2)/2 = {} when d is 3 or 4, got p = {}",
                (d - 2.0) / 2.0,
                self.p
            )));
        }
        match kind {
            ExperimentKind::Constant => {
                nonempty_positive("u_grid", &self.u_grid)?;
            }
            ExperimentKind::FixedN => {
                if self.n_grid.is_empty() || self.n_grid.contains(&0) {
                    return Err(LabError::Config("n_grid must be nonempty with positive entries".into()));
                }
            }
            ExperimentKind::TorusRate => {
                nonempty_positive("t_grid", &self.t_grid)?;
            }
            ExperimentKind::Concentration => {
                nonempty_positive("t_grid", &self.t_grid)?;
                if self.p >= (d - 2.0) / 3.0 {
                    return Err(LabError::Hypothesis(format!(
                        "concentration needs p < (d-2)/3 = {}, got p = {}",
                        (d - 2.0) / 3.0,
                        self.p
                    )));
                }
                if self.t_grid.len() < 2 {
                    return Err(LabError::Config("a trend needs at least two horizons in t_grid".into()));
                }
            }
            ExperimentKind::Subadd => {
                let s = &self.subadd;
                let r = self.subadd_r();
                if r <= 0.0 {
                    return Err(LabError::Hypothesis(format!(
                        "subadditivity slack needs r = d - alpha - 2 min(p, 1) > 0, got r = {r}"
                    )));
                }
                if !(1..=3).contains(&s.m) || !(s.side > 0.0) || !(s.intensity > 0.0) {
                    return Err(LabError::Config("subadd needs m in 1..=3, side > 0 and intensity > 0".into()));
                }
            }
            ExperimentKind::Hitting => {
                let h = &self.hitting;
                if !(h.l > 0.0 && h.l < h.big_l && h.big_l < 0.5) {
                    return Err(LabError::Config("hitting needs 0 < l < big_l < 1/2".into()));
                }
                if !(0.0 <= h.sigma && h.sigma <= h.rho) {
                    return Err(LabError::Config("hitting needs 0 <= sigma <= rho".into()));
                }
            }
        }
        Ok(())
    }

    pub fn subadd_r(&self) -> f64 {
        self.d as f64 - self.subadd.alpha - 2.0 * self.p.min(1.0)
    }
}

fn nonempty_positive(name: &str, v: &[f64]) -> LabResult<()> {
    if v.is_empty() || v.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(LabError::Config(format!("{name} must be nonempty with positive finite entries")));
    }
    Ok(())
}
